#include "mraru/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mraru/oracle.hpp"

namespace mraru {

using nlohmann::ordered_json;

void ClassCatalog::validate() const {
  if (names.size() < 2) {
    throw std::invalid_argument("class catalog needs at least 2 classes");
  }
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (n.empty()) throw std::invalid_argument("empty class name");
    if (!seen.insert(n).second) {
      throw std::invalid_argument("duplicate class name: " + n);
    }
  }
}

int ClassCatalog::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<int>(i);
  }
  return -1;
}

Pool::Pool(std::vector<EmbeddedItem> items, ClassCatalog catalog,
           std::size_t dim)
    : items_(std::move(items)), catalog_(std::move(catalog)), dim_(dim) {
  catalog_.validate();
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& it = items_[i];
    if (it.features.size() != dim_) {
      throw std::invalid_argument("item " + it.id + " has dimension " +
                                  std::to_string(it.features.size()) +
                                  ", pool declares " + std::to_string(dim_));
    }
    for (double v : it.features) {
      if (!std::isfinite(v)) {
        throw std::invalid_argument("item " + it.id +
                                    " has a non-finite feature");
      }
    }
    if (it.gold_label &&
        (*it.gold_label < 0 || *it.gold_label >= catalog_.num_classes())) {
      throw std::invalid_argument("item " + it.id + " has label out of range");
    }
    if (!index_.emplace(it.id, i).second) {
      throw std::invalid_argument("duplicate item id: " + it.id);
    }
  }
}

const EmbeddedItem& Pool::by_id(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw std::out_of_range("unknown item id: " + id);
  return items_[it->second];
}

PoolState::PoolState(const std::vector<std::string>& ids, ClassCatalog catalog)
    : catalog_(std::move(catalog)) {
  catalog_.validate();
  unlabeled_.reserve(ids.size());
  for (const auto& id : ids) {
    if (!unlabeled_pos_.emplace(id, unlabeled_.size()).second) {
      throw std::invalid_argument("duplicate id in pool state: " + id);
    }
    unlabeled_.push_back(id);
  }
}

void PoolState::assign_label(const std::string& id, int label) {
  auto it = unlabeled_pos_.find(id);
  if (it == unlabeled_pos_.end()) {
    throw std::invalid_argument("id not in unlabeled pool: " + id);
  }
  if (label < 0 || label >= catalog_.num_classes()) {
    throw std::invalid_argument("label out of range for id " + id);
  }
  // swap-pop removal from U
  const std::size_t pos = it->second;
  const std::size_t last = unlabeled_.size() - 1;
  if (pos != last) {
    unlabeled_[pos] = std::move(unlabeled_[last]);
    unlabeled_pos_[unlabeled_[pos]] = pos;
  }
  unlabeled_.pop_back();
  unlabeled_pos_.erase(it);
  labeled_.emplace_back(id, label);
  labeled_by_id_.emplace(id, label);
}

void PoolState::check_invariants() const {
  for (const auto& [id, label] : labeled_) {
    if (unlabeled_pos_.count(id)) {
      throw std::logic_error("id both labeled and unlabeled: " + id);
    }
    if (label < 0 || label >= catalog_.num_classes()) {
      throw std::logic_error("labeled id has out-of-range label: " + id);
    }
  }
  if (labeled_.size() != labeled_by_id_.size()) {
    throw std::logic_error("duplicate id in labeled set");
  }
}

namespace {

std::vector<double> parse_features(const ordered_json& arr,
                                   const std::string& id) {
  std::vector<double> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number()) {
      throw std::runtime_error("non-numeric feature in item " + id);
    }
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace

Pool load_pool(const std::string& path, std::optional<std::size_t> expected_dim) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);

  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("dataset file is empty (no header): " + path);
  }
  ordered_json header;
  try {
    header = ordered_json::parse(line);
  } catch (const std::exception& e) {
    throw std::runtime_error("line 1: malformed header: " +
                             std::string(e.what()));
  }
  if (!header.contains("dim") || !header.contains("classes")) {
    throw std::runtime_error("line 1: header must declare dim and classes");
  }
  const std::size_t dim = header.at("dim").get<std::size_t>();
  if (expected_dim && dim != *expected_dim) {
    throw std::runtime_error("header dim " + std::to_string(dim) +
                             " does not match expected " +
                             std::to_string(*expected_dim));
  }
  ClassCatalog catalog;
  for (const auto& c : header.at("classes")) {
    catalog.names.push_back(c.get<std::string>());
  }
  catalog.validate();

  std::vector<EmbeddedItem> items;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json rec;
    try {
      rec = ordered_json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": malformed record: " + std::string(e.what()));
    }
    if (!rec.contains("id") || !rec.contains("features")) {
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": record needs id and features");
    }
    EmbeddedItem item;
    item.id = rec.at("id").get<std::string>();
    item.features = parse_features(rec.at("features"), item.id);
    if (item.features.size() != dim) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": item " +
                               item.id + " has " +
                               std::to_string(item.features.size()) +
                               " features, expected " + std::to_string(dim));
    }
    if (rec.contains("text") && !rec.at("text").is_null()) {
      item.text = rec.at("text").get<std::string>();
    }
    if (rec.contains("label") && !rec.at("label").is_null()) {
      const std::string name = rec.at("label").get<std::string>();
      const int idx = catalog.index_of(name);
      if (idx < 0) {
        throw std::runtime_error("line " + std::to_string(line_no) +
                                 ": unknown label name: " + name);
      }
      item.gold_label = idx;
    }
    items.push_back(std::move(item));
  }
  return Pool(std::move(items), std::move(catalog), dim);
}

void save_pool(const Pool& pool, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path);

  ordered_json header;
  header["dim"] = pool.dim();
  header["classes"] = pool.catalog().names;
  out << header.dump() << "\n";

  for (const auto& item : pool.items()) {
    ordered_json rec;
    rec["id"] = item.id;
    rec["features"] = item.features;
    if (item.text) rec["text"] = *item.text;
    if (item.gold_label) rec["label"] = pool.catalog().names[*item.gold_label];
    out << rec.dump() << "\n";
  }
}

Pool generate_synthetic(const SyntheticSpec& spec) {
  if (spec.num_classes < 2) throw std::invalid_argument("need K >= 2");
  if (spec.dim < 1) throw std::invalid_argument("need dim >= 1");
  if (spec.noise_sigma <= 0) throw std::invalid_argument("need sigma > 0");
  if (spec.per_class_counts.size() != static_cast<std::size_t>(spec.num_classes)) {
    throw std::invalid_argument("per_class_counts must have K entries");
  }
  for (int c : spec.per_class_counts) {
    if (c < 1) throw std::invalid_argument("per-class counts must be >= 1");
  }

  const int d = spec.dim;
  ClassCatalog catalog;
  for (int k = 0; k < spec.num_classes; ++k) {
    catalog.names.push_back("class_" + std::to_string(k));
  }

  // Class means: canonical axes while they last, then a deterministic
  // pseudo-orthogonal unit direction per extra class.
  std::vector<std::vector<double>> means(spec.num_classes,
                                         std::vector<double>(d, 0.0));
  for (int k = 0; k < spec.num_classes; ++k) {
    if (k < d) {
      means[k][k] = spec.class_mean_separation;
    } else {
      Rng dir_rng(0x5eed0000ULL + static_cast<std::uint64_t>(k));
      double norm2 = 0.0;
      for (int j = 0; j < d; ++j) {
        means[k][j] = dir_rng.normal();
        norm2 += means[k][j] * means[k][j];
      }
      const double scale = spec.class_mean_separation / std::sqrt(norm2);
      for (int j = 0; j < d; ++j) means[k][j] *= scale;
    }
  }

  Rng rng(spec.seed);
  std::vector<EmbeddedItem> items;
  int serial = 0;
  for (int k = 0; k < spec.num_classes; ++k) {
    for (int i = 0; i < spec.per_class_counts[k]; ++i) {
      EmbeddedItem item;
      item.id = "s" + std::to_string(serial++);
      item.features.resize(d);
      for (int j = 0; j < d; ++j) {
        item.features[j] = means[k][j] + spec.noise_sigma * rng.normal();
      }
      item.gold_label = k;
      items.push_back(std::move(item));
    }
  }
  return Pool(std::move(items), std::move(catalog),
              static_cast<std::size_t>(d));
}

std::size_t seed_initial_labels(PoolState& state, const Pool& pool,
                                TeacherOracle& oracle, Rng& rng) {
  const int k = state.catalog().num_classes();
  std::vector<bool> covered(k, false);
  int covered_count = 0;
  std::size_t spent = 0;
  while (covered_count < k) {
    if (state.unlabeled_size() == 0) {
      throw std::runtime_error(
          "pool exhausted before covering all classes (covered " +
          std::to_string(covered_count) + " of " + std::to_string(k) + ")");
    }
    const std::size_t idx = rng.uniform_index(state.unlabeled_size());
    const std::string id = state.unlabeled()[idx];
    const int label = oracle.label(pool.by_id(id));
    state.assign_label(id, label);
    ++spent;
    if (!covered[label]) {
      covered[label] = true;
      ++covered_count;
    }
  }
  state.check_invariants();
  return spent;
}

DatasetSplit split(const Pool& pool, double eval_fraction, std::uint64_t seed) {
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) {
    throw std::invalid_argument("eval_fraction must be in (0,1)");
  }
  // Stratify by gold label; unlabeled items always land in the train pool.
  std::vector<std::vector<std::string>> by_class(pool.catalog().num_classes());
  DatasetSplit out;
  for (const auto& item : pool.items()) {
    if (item.gold_label) {
      by_class[*item.gold_label].push_back(item.id);
    } else {
      out.train_pool.push_back(item.id);
    }
  }
  Rng rng(seed);
  for (auto& ids : by_class) {
    // Fisher-Yates
    for (std::size_t i = ids.size(); i > 1; --i) {
      std::swap(ids[i - 1], ids[rng.uniform_index(i)]);
    }
    const std::size_t n_eval =
        static_cast<std::size_t>(std::llround(eval_fraction * ids.size()));
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i < n_eval) {
        out.eval_set.push_back(ids[i]);
      } else {
        out.train_pool.push_back(ids[i]);
      }
    }
  }
  std::sort(out.train_pool.begin(), out.train_pool.end());
  std::sort(out.eval_set.begin(), out.eval_set.end());
  return out;
}

}  // namespace mraru
