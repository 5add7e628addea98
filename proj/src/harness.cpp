#include "mraru/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace mraru {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string digest_hex(const std::string& bytes) {
  // FNV-1a 64
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

namespace {

class ConfigErrors {
 public:
  void add(const std::string& msg) { errors_.push_back(msg); }
  void raise_if_any() const {
    if (errors_.empty()) return;
    std::string joined = "invalid experiment config:";
    for (const auto& e : errors_) joined += "\n  - " + e;
    throw std::runtime_error(joined);
  }

 private:
  std::vector<std::string> errors_;
};

// Unknown keys are configuration errors; silent typos corrupt studies.
void check_keys(const ordered_json& obj, const std::set<std::string>& allowed,
                const std::string& where, ConfigErrors& errors) {
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) {
      errors.add(where + ": unknown key \"" + key + "\"");
    }
  }
}

SyntheticSpec parse_synthetic(const ordered_json& j, ConfigErrors& errors) {
  check_keys(j, {"classes", "dim", "per_class", "separation", "sigma", "seed"},
             "dataset.synthetic", errors);
  SyntheticSpec spec;
  spec.num_classes = j.value("classes", 2);
  spec.dim = j.value("dim", 2);
  if (j.contains("per_class")) {
    if (j.at("per_class").is_array()) {
      spec.per_class_counts = j.at("per_class").get<std::vector<int>>();
    } else {
      spec.per_class_counts.assign(spec.num_classes,
                                   j.at("per_class").get<int>());
    }
  }
  spec.class_mean_separation = j.value("separation", 1.0);
  spec.noise_sigma = j.value("sigma", 1.0);
  spec.seed = j.value("seed", std::uint64_t{0});
  if (spec.per_class_counts.empty()) {
    errors.add("dataset.synthetic: per_class is required");
  }
  return spec;
}

StrategyConfig parse_strategy(const ordered_json& j, std::size_t index,
                              ConfigErrors& errors) {
  const std::string where = "strategies[" + std::to_string(index) + "]";
  StrategyConfig cfg;
  check_keys(j, {"strategy", "batch_size", "rejected_policy"}, where, errors);
  try {
    cfg.strategy = strategy_from_name(j.value("strategy", std::string{}));
  } catch (const std::exception& e) {
    errors.add(where + ": " + e.what());
  }
  cfg.batch_size = j.value("batch_size", 25);
  if (cfg.batch_size < 1) errors.add(where + ": batch_size must be >= 1");
  const std::string policy = j.value("rejected_policy", "return_to_pool");
  if (policy == "return_to_pool") {
    cfg.rejected_policy = RejectedPolicy::kReturnToPool;
  } else if (policy == "defer_round") {
    cfg.rejected_policy = RejectedPolicy::kDeferRound;
  } else {
    errors.add(where + ": unknown rejected_policy \"" + policy + "\"");
  }
  return cfg;
}

void parse_student(const ordered_json& j, ExperimentConfig& cfg,
                   ConfigErrors& errors) {
  check_keys(j, {"kind", "logistic", "lda", "forest"}, "student", errors);
  cfg.student_kind = j.value("kind", "logistic");
  if (cfg.student_kind != "logistic" && cfg.student_kind != "lda" &&
      cfg.student_kind != "random_forest") {
    errors.add("student.kind must be logistic, lda, or random_forest");
  }
  if (j.contains("logistic")) {
    const auto& l = j.at("logistic");
    check_keys(l, {"learning_rate", "l2_penalty", "max_epochs",
                   "convergence_tol"},
               "student.logistic", errors);
    cfg.train.logistic.learning_rate = l.value("learning_rate", 0.1);
    cfg.train.logistic.l2_penalty = l.value("l2_penalty", 1e-4);
    cfg.train.logistic.max_epochs = l.value("max_epochs", 500);
    cfg.train.logistic.convergence_tol = l.value("convergence_tol", 1e-6);
    if (cfg.train.logistic.learning_rate <= 0 ||
        cfg.train.logistic.max_epochs <= 0 ||
        cfg.train.logistic.convergence_tol <= 0) {
      errors.add("student.logistic: hyperparameters must be positive");
    }
  }
  if (j.contains("lda")) {
    const auto& l = j.at("lda");
    check_keys(l, {"covariance_ridge"}, "student.lda", errors);
    cfg.train.lda.covariance_ridge = l.value("covariance_ridge", 1e-6);
    if (cfg.train.lda.covariance_ridge <= 0) {
      errors.add("student.lda: covariance_ridge must be positive");
    }
  }
  if (j.contains("forest")) {
    const auto& f = j.at("forest");
    check_keys(f, {"n_trees", "max_depth", "min_leaf", "feature_subsample",
                   "seed"},
               "student.forest", errors);
    cfg.train.forest.n_trees = f.value("n_trees", 100);
    cfg.train.forest.max_depth = f.value("max_depth", 12);
    cfg.train.forest.min_leaf = f.value("min_leaf", 2);
    cfg.train.forest.feature_subsample = f.value("feature_subsample", 0.0);
    cfg.train.forest.seed = f.value("seed", std::uint64_t{0});
    if (cfg.train.forest.n_trees <= 0 || cfg.train.forest.max_depth <= 0 ||
        cfg.train.forest.min_leaf <= 0 ||
        cfg.train.forest.feature_subsample > 1.0) {
      errors.add("student.forest: invalid hyperparameters");
    }
  }
}

void parse_oracle(const ordered_json& j, ExperimentConfig& cfg,
                  ConfigErrors& errors) {
  check_keys(j,
             {"mode", "noise_rate", "endpoint_url", "model_name",
              "prompt_template", "max_retries", "timeout_seconds",
              "temperature", "parallelism", "cache_path"},
             "oracle", errors);
  cfg.oracle.mode = j.value("mode", "replay");
  if (cfg.oracle.mode == "replay") {
    cfg.oracle.noise_rate = j.value("noise_rate", 0.0);
    if (cfg.oracle.noise_rate < 0.0 || cfg.oracle.noise_rate >= 1.0) {
      errors.add("oracle.noise_rate must be in [0,1)");
    }
  } else if (cfg.oracle.mode == "llm") {
    auto& llm = cfg.oracle.llm;
    llm.endpoint_url = j.value("endpoint_url", std::string{});
    llm.model_name = j.value("model_name", std::string{});
    if (j.contains("prompt_template")) {
      llm.prompt_template = j.at("prompt_template").get<std::string>();
    }
    llm.max_retries = j.value("max_retries", 2);
    llm.timeout_seconds = j.value("timeout_seconds", 60);
    llm.temperature = j.value("temperature", 0.0);
    llm.parallelism = j.value("parallelism", 4);
    llm.cache_path = j.value("cache_path", std::string{});
    if (const char* key = std::getenv("MRARU_API_KEY")) llm.api_key = key;
    try {
      llm.validate();
    } catch (const std::exception& e) {
      errors.add(std::string("oracle: ") + e.what());
    }
  } else {
    errors.add("oracle.mode must be replay or llm");
  }
}

}  // namespace

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const std::exception& e) {
    throw std::runtime_error("config parse error: " + std::string(e.what()));
  }

  ConfigErrors errors;
  check_keys(j,
             {"schema_version", "dataset", "eval_fraction", "split_seed",
              "student", "strategies", "oracle", "label_budget", "eval_every",
              "seeds", "thresholds", "threshold_metric", "parallelism"},
             "config", errors);
  if (j.value("schema_version", 0) != 1) {
    errors.add("schema_version must be 1");
  }

  ExperimentConfig cfg;
  if (!j.contains("dataset")) {
    errors.add("dataset is required");
  } else {
    const auto& d = j.at("dataset");
    check_keys(d, {"file", "synthetic"}, "dataset", errors);
    if (d.contains("file") == d.contains("synthetic")) {
      errors.add("dataset must declare exactly one of file / synthetic");
    } else if (d.contains("file")) {
      cfg.dataset.file = d.at("file").get<std::string>();
      if (!fs::exists(cfg.dataset.file)) {
        errors.add("dataset.file does not exist: " + cfg.dataset.file);
      }
    } else {
      cfg.dataset.synthetic = parse_synthetic(d.at("synthetic"), errors);
    }
  }

  cfg.eval_fraction = j.value("eval_fraction", 0.2);
  if (!(cfg.eval_fraction > 0.0 && cfg.eval_fraction < 1.0)) {
    errors.add("eval_fraction must be in (0,1)");
  }
  cfg.split_seed = j.value("split_seed", std::uint64_t{1});

  if (j.contains("student")) parse_student(j.at("student"), cfg, errors);
  if (!j.contains("strategies") || !j.at("strategies").is_array() ||
      j.at("strategies").empty()) {
    errors.add("strategies must be a non-empty array");
  } else {
    for (std::size_t i = 0; i < j.at("strategies").size(); ++i) {
      cfg.strategies.push_back(parse_strategy(j.at("strategies")[i], i, errors));
    }
  }
  if (j.contains("oracle")) parse_oracle(j.at("oracle"), cfg, errors);

  cfg.label_budget = j.value("label_budget", std::int64_t{100});
  if (cfg.label_budget < 2) errors.add("label_budget must be >= 2");
  cfg.eval_every = j.value("eval_every", 1);
  if (cfg.eval_every < 1) errors.add("eval_every must be >= 1");

  if (!j.contains("seeds") || !j.at("seeds").is_array() ||
      j.at("seeds").empty()) {
    errors.add("seeds must be a non-empty array");
  } else {
    cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  }
  if (j.contains("thresholds")) {
    cfg.thresholds = j.at("thresholds").get<std::vector<double>>();
  }
  const std::string metric = j.value("threshold_metric", "accuracy");
  if (metric == "accuracy") {
    cfg.threshold_metric = Metric::kAccuracy;
  } else if (metric == "balanced_accuracy") {
    cfg.threshold_metric = Metric::kBalancedAccuracy;
  } else {
    errors.add("threshold_metric must be accuracy or balanced_accuracy");
  }
  cfg.parallelism = j.value("parallelism", 0);
  if (cfg.parallelism < 0) errors.add("parallelism must be >= 0");

  errors.raise_if_any();
  cfg.digest = digest_hex(j.dump());
  return cfg;
}

namespace {

Pool materialize_pool(const ExperimentConfig& cfg) {
  if (cfg.dataset.synthetic) return generate_synthetic(*cfg.dataset.synthetic);
  return load_pool(cfg.dataset.file);
}

struct Cell {
  StrategyConfig strategy;
  std::uint64_t seed = 0;
  std::string run_id;
  RunLedger ledger;
  std::string error;  // non-empty when the cell aborted
};

void write_ledger_file(const RunLedger& ledger, const std::string& path) {
  ordered_json j;
  j["run_id"] = ledger.run_id;
  j["strategy"] = ledger.strategy;
  j["student"] = ledger.student;
  j["seed"] = ledger.seed;
  j["config_digest"] = ledger.config_digest;
  ordered_json rows = ordered_json::array();
  for (const auto& r : ledger.rows) {
    rows.push_back({{"labels_spent", r.labels_spent},
                    {"candidates_examined", r.candidates_examined},
                    {"student_inferences_selection",
                     r.student_inferences_selection},
                    {"oracle_calls", r.oracle_calls},
                    {"unlabeled_at_start", r.unlabeled_at_start},
                    {"accuracy", r.accuracy},
                    {"balanced_accuracy", r.balanced_accuracy}});
  }
  j["rows"] = std::move(rows);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write ledger file: " + path);
  out << j.dump(2) << "\n";
}

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return digest_hex(ss.str());
}

// Lower median; censored (unreached) runs sort as +infinity.
std::optional<std::int64_t> median_labels(
    std::vector<std::optional<std::int64_t>> values) {
  if (values.empty()) return std::nullopt;
  std::sort(values.begin(), values.end(),
            [](const auto& a, const auto& b) {
              const std::int64_t av = a ? *a : INT64_MAX;
              const std::int64_t bv = b ? *b : INT64_MAX;
              return av < bv;
            });
  return values[(values.size() - 1) / 2];
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const std::string& out_dir) {
  fs::create_directories(out_dir);
  const Pool pool = materialize_pool(cfg);
  const int k = pool.catalog().num_classes();
  if (cfg.label_budget < k) {
    throw std::runtime_error("label_budget " + std::to_string(cfg.label_budget) +
                             " is smaller than the class count " +
                             std::to_string(k));
  }
  if (cfg.oracle.mode == "llm") check_endpoint_reachable(cfg.oracle.llm);

  const DatasetSplit data_split =
      split(pool, cfg.eval_fraction, cfg.split_seed);

  std::vector<Cell> cells;
  for (const auto& strat : cfg.strategies) {
    for (std::uint64_t seed : cfg.seeds) {
      Cell cell;
      cell.strategy = strat;
      cell.seed = seed;
      cell.run_id = digest_hex(cfg.digest + "|" + strategy_name(strat.strategy) +
                               "|" + cfg.student_kind + "|" +
                               std::to_string(seed));
      cells.push_back(std::move(cell));
    }
  }

  auto run_cell = [&](Cell& cell) {
    cell.ledger.run_id = cell.run_id;
    cell.ledger.config_digest = cfg.digest;
    LoopConfig loop;
    loop.strategy = cell.strategy;
    loop.student_kind = cfg.student_kind;
    loop.train = cfg.train;
    loop.label_budget = cfg.label_budget;
    loop.eval_every = cfg.eval_every;
    loop.seed = cell.seed;
    // Per-tree seeds follow the cell seed so forest cells are independent.
    loop.train.forest.seed = cell.seed ^ 0x7261726f66ULL;

    std::unique_ptr<TeacherOracle> oracle;
    if (cfg.oracle.mode == "replay") {
      oracle = std::make_unique<ReplayOracle>(k, cfg.oracle.noise_rate,
                                              cell.seed ^ 0x6f7261636cULL);
    } else {
      oracle = std::make_unique<LlmOracle>(cfg.oracle.llm, pool.catalog());
    }
    try {
      run_active_loop(pool, data_split, loop, *oracle, cell.ledger);
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
    // Ledger rows up to an abort are still persisted.
    cell.ledger.run_id = cell.run_id;
    write_ledger_file(cell.ledger,
                      (fs::path(out_dir) /
                       ("ledger_" + strategy_name(cell.strategy.strategy) +
                        "_seed" + std::to_string(cell.seed) + ".json"))
                          .string());
  };

  // Cells are independent; the shared llm cache serializes writes per
  // oracle instance only, so llm-mode cells run sequentially.
  std::size_t workers = cfg.parallelism > 0
                            ? static_cast<std::size_t>(cfg.parallelism)
                            : std::max(1u, std::thread::hardware_concurrency());
  if (cfg.oracle.mode == "llm") workers = 1;
  workers = std::min(workers, cells.size());
  if (workers <= 1) {
    for (auto& cell : cells) run_cell(cell);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) {
      threads.emplace_back([&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= cells.size()) return;
          run_cell(cells[i]);
        }
      });
    }
    for (auto& t : threads) t.join();
  }

  ExperimentResult result;
  std::vector<std::string> errors;
  for (const auto& cell : cells) {
    result.ledgers.push_back(cell.ledger);
    if (!cell.error.empty()) {
      errors.push_back(strategy_name(cell.strategy.strategy) + "/seed" +
                       std::to_string(cell.seed) + ": " + cell.error);
    }
  }

  result.curve_file = (fs::path(out_dir) / "curves.csv").string();
  emit_curves(result.ledgers, result.curve_file);

  // Labels-to-threshold summary: per (strategy, threshold), the per-seed
  // values and their median.
  result.summary_file = (fs::path(out_dir) / "summary.csv").string();
  {
    std::ofstream out(result.summary_file, std::ios::binary);
    out << "strategy,student,threshold,seed,labels_to_threshold\n";
    for (const auto& strat : cfg.strategies) {
      const std::string sname = strategy_name(strat.strategy);
      for (double threshold : cfg.thresholds) {
        std::vector<std::optional<std::int64_t>> values;
        for (const auto& cell : cells) {
          if (strategy_name(cell.strategy.strategy) != sname) continue;
          const auto v = labels_to_threshold(cell.ledger, threshold,
                                             cfg.threshold_metric);
          values.push_back(v);
          out << sname << ',' << cfg.student_kind << ',' << threshold << ','
              << cell.seed << ',' << (v ? std::to_string(*v) : "not_reached")
              << "\n";
        }
        const auto med = median_labels(values);
        out << sname << ',' << cfg.student_kind << ',' << threshold
            << ",median," << (med ? std::to_string(*med) : "not_reached")
            << "\n";
      }
    }
  }

  result.manifest_file = (fs::path(out_dir) / "manifest.json").string();
  {
    ordered_json manifest;
    manifest["config_digest"] = cfg.digest;
    ordered_json files = ordered_json::array();
    std::vector<std::string> produced;
    for (const auto& entry : fs::directory_iterator(out_dir)) {
      if (entry.path().filename() == "manifest.json") continue;
      produced.push_back(entry.path().filename().string());
    }
    std::sort(produced.begin(), produced.end());
    for (const auto& name : produced) {
      files.push_back(
          {{"file", name},
           {"digest", file_digest((fs::path(out_dir) / name).string())}});
    }
    manifest["files"] = std::move(files);
    if (!errors.empty()) manifest["aborted_cells"] = errors;
    std::ofstream out(result.manifest_file, std::ios::binary);
    out << manifest.dump(2) << "\n";
  }

  if (!errors.empty()) {
    std::string joined = "aborted cells:";
    for (const auto& e : errors) joined += "\n  " + e;
    throw std::runtime_error(joined);
  }
  return result;
}

CompareTable compare_curves(const std::string& curve_path,
                            const std::vector<double>& thresholds,
                            Metric metric) {
  const auto ledgers = read_curves(curve_path);
  CompareTable table;

  std::set<std::string> students;
  for (const auto& l : ledgers) students.insert(l.student);

  std::int64_t max_labels = 0;
  for (const auto& l : ledgers) {
    for (const auto& r : l.rows) max_labels = std::max(max_labels, r.labels_spent);
  }

  for (const auto& student : students) {
    for (double threshold : thresholds) {
      std::map<std::string, std::optional<std::int64_t>> medians;
      std::set<std::string> strategies;
      for (const auto& l : ledgers) {
        if (l.student == student) strategies.insert(l.strategy);
      }
      for (const auto& strat : strategies) {
        std::vector<std::optional<std::int64_t>> values;
        for (const auto& l : ledgers) {
          if (l.student != student || l.strategy != strat) continue;
          values.push_back(labels_to_threshold(l, threshold, metric));
        }
        const auto med = median_labels(values);
        medians[strat] = med;
        CompareCell cell;
        cell.student = student;
        cell.threshold = threshold;
        cell.strategy = strat;
        cell.median_labels = med;
        cell.censor_at = max_labels;
        table.cells.push_back(cell);
      }
      if (medians.count("mraru") && medians.count("random")) {
        CompareTable::Reduction red;
        red.student = student;
        red.threshold = threshold;
        // A censored baseline is compared against the observed budget.
        const bool random_censored = !medians["random"].has_value();
        const double random_v =
            random_censored ? static_cast<double>(max_labels)
                            : static_cast<double>(*medians["random"]);
        red.censored = random_censored || !medians["mraru"].has_value();
        const double mraru_v = medians["mraru"]
                                   ? static_cast<double>(*medians["mraru"])
                                   : static_cast<double>(max_labels);
        red.percent = random_v > 0 ? 100.0 * (1.0 - mraru_v / random_v) : 0.0;
        table.reductions.push_back(red);
      }
    }
  }
  return table;
}

std::string render_compare_table(const CompareTable& table) {
  std::ostringstream out;
  out << "student  threshold  strategy  median_labels\n";
  for (const auto& cell : table.cells) {
    out << cell.student << "  " << cell.threshold << "  " << cell.strategy
        << "  ";
    if (cell.median_labels) {
      out << *cell.median_labels;
    } else {
      out << "not_reached (censored at " << cell.censor_at << ")";
    }
    out << "\n";
  }
  for (const auto& red : table.reductions) {
    out << red.student << "  " << red.threshold
        << "  mraru vs random reduction: ";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f%%", red.percent);
    out << buf << (red.censored ? " [censored]" : "") << "\n";
  }
  return out.str();
}

}  // namespace mraru
