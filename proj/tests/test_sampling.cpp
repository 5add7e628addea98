#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>

#include "mraru/oracle.hpp"
#include "mraru/sampling.hpp"

using namespace mraru;

namespace {

// Student that reports a fixed posterior, or one keyed by feature[0].
class StubStudent final : public StudentModel {
 public:
  StubStudent(int num_classes, std::size_t dim, ProbabilityVector constant)
      : constant_(std::move(constant)) {
    n_classes_ = num_classes;
    dim_ = dim;
    fitted_ = true;
  }

  StubStudent(int num_classes, std::size_t dim,
              std::map<double, ProbabilityVector> by_key)
      : by_key_(std::move(by_key)) {
    n_classes_ = num_classes;
    dim_ = dim;
    fitted_ = true;
  }

  std::string_view kind() const override { return "stub"; }
  void fit(std::span<const LabeledExample>) override {}
  nlohmann::ordered_json to_json() const override { return {}; }

 protected:
  ProbabilityVector score(const std::vector<double>& x) const override {
    if (!by_key_.empty()) return by_key_.at(x[0]);
    return constant_;
  }

 private:
  ProbabilityVector constant_;
  std::map<double, ProbabilityVector> by_key_;
};

Pool make_numbered_pool(int n, int num_classes = 2, int dim = 1) {
  std::vector<EmbeddedItem> items;
  for (int i = 0; i < n; ++i) {
    EmbeddedItem item;
    // zero-padded ids keep lexicographic order equal to numeric order
    char buf[16];
    std::snprintf(buf, sizeof(buf), "p%04d", i);
    item.id = buf;
    item.features.assign(dim, static_cast<double>(i));
    item.gold_label = i % num_classes;
    items.push_back(std::move(item));
  }
  ClassCatalog catalog;
  for (int k = 0; k < num_classes; ++k) {
    catalog.names.push_back("c" + std::to_string(k));
  }
  return Pool(std::move(items), std::move(catalog), dim);
}

PoolState full_state(const Pool& pool) {
  std::vector<std::string> ids;
  for (const auto& item : pool.items()) ids.push_back(item.id);
  return PoolState(ids, pool.catalog());
}

}  // namespace

TEST_CASE("least-confidence uncertainty") {
  CHECK(uncertainty_lc({{0.25, 0.25, 0.25, 0.25}}).value == 0.75);
  CHECK(uncertainty_lc({{1.0, 0.0, 0.0}}).value == 0.0);
  CHECK(uncertainty_lc({{0.6, 0.3, 0.1}}).value == doctest::Approx(0.4));
}

TEST_CASE("accept probability equals least confidence on fuzzed vectors") {
  Rng rng(40);
  for (int trial = 0; trial < 500; ++trial) {
    const int k = 2 + static_cast<int>(rng.uniform_index(9));
    std::vector<double> raw(k);
    double sum = 0.0;
    for (auto& v : raw) {
      v = -std::log(1.0 - rng.uniform());
      sum += v;
    }
    ProbabilityVector pv;
    for (double v : raw) pv.probs.push_back(v / sum);
    const double p = accept_probability(pv);
    CHECK(p == uncertainty_lc(pv).value);
    CHECK(p >= 0.0);
    CHECK(p <= 1.0 - 1.0 / k + 1e-12);
  }
}

TEST_CASE("accept frequency follows the binomial oracle") {
  const ProbabilityVector pv{{0.8, 0.1, 0.1}};
  const double p = accept_probability(pv);
  CHECK(p == doctest::Approx(0.2));
  Rng rng(7);
  const int n = 100000;
  int accepted = 0;
  for (int i = 0; i < n; ++i) {
    if (rng.uniform() < p) ++accepted;
  }
  const double freq = static_cast<double>(accepted) / n;
  const double sigma = std::sqrt(0.2 * 0.8 / n);
  CHECK(std::abs(freq - 0.2) <= 3 * sigma);
}

TEST_CASE("mraru with a fully confident model exhausts its visit budget") {
  const Pool pool = make_numbered_pool(200);
  const PoolState state = full_state(pool);
  StubStudent model(2, 1, ProbabilityVector{{1.0, 0.0}});
  StrategyConfig cfg;
  cfg.batch_size = 25;
  Rng rng(1);
  const auto batch = mraru_select_batch(state, pool, model, cfg, rng);
  CHECK(batch.accepted_ids.empty());
  CHECK(batch.exhausted);
  CHECK(batch.candidates_examined == 50 * 25 * 2);  // the full visit budget
  CHECK(batch.student_inferences == batch.candidates_examined);
}

TEST_CASE("mraru trial counts follow the geometric-trials expectation") {
  const Pool pool = make_numbered_pool(500);
  const PoolState state = full_state(pool);
  StubStudent model(2, 1, ProbabilityVector{{0.5, 0.5}});  // accept rate 0.5
  StrategyConfig cfg;
  cfg.batch_size = 10;
  Rng rng(2);
  double total_examined = 0.0;
  const int reps = 2000;
  for (int r = 0; r < reps; ++r) {
    const auto batch = mraru_select_batch(state, pool, model, cfg, rng);
    CHECK(batch.accepted_ids.size() == 10);
    CHECK(batch.candidates_examined >= 10);
    total_examined += static_cast<double>(batch.candidates_examined);
  }
  const double mean = total_examined / reps;
  CHECK(mean == doctest::Approx(10 / 0.5).epsilon(0.05));
}

TEST_CASE("mraru defer_round consumes the pool instead of the budget") {
  const Pool pool = make_numbered_pool(30);
  const PoolState state = full_state(pool);
  StubStudent model(2, 1, ProbabilityVector{{1.0, 0.0}});
  StrategyConfig cfg;
  cfg.batch_size = 5;
  cfg.rejected_policy = RejectedPolicy::kDeferRound;
  Rng rng(3);
  const auto batch = mraru_select_batch(state, pool, model, cfg, rng);
  CHECK(batch.accepted_ids.empty());
  CHECK(batch.exhausted);
  CHECK(batch.candidates_examined == 30);  // each candidate seen once
}

TEST_CASE("random selection truncates, is seeded, and is uniform") {
  const Pool pool = make_numbered_pool(10);
  const PoolState state = full_state(pool);
  StrategyConfig cfg;

  SUBCASE("truncation") {
    cfg.batch_size = 25;
    Rng rng(4);
    const auto batch = random_select_batch(state, cfg, rng);
    CHECK(batch.accepted_ids.size() == 10);
    CHECK(batch.exhausted);
    auto sorted = batch.accepted_ids;
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::unique(sorted.begin(), sorted.end()) == sorted.end());
  }

  SUBCASE("determinism") {
    cfg.batch_size = 4;
    Rng a(9), b(9);
    CHECK(random_select_batch(state, cfg, a).accepted_ids ==
          random_select_batch(state, cfg, b).accepted_ids);
  }

  SUBCASE("multinomial frequencies") {
    cfg.batch_size = 1;
    Rng rng(10);
    std::map<std::string, int> freq;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      ++freq[random_select_batch(state, cfg, rng).accepted_ids[0]];
    }
    const double expected = n / 10.0;
    const double sigma = std::sqrt(n * 0.1 * 0.9);
    for (const auto& [id, count] : freq) {
      CHECK(std::abs(count - expected) <= 4 * sigma);
    }
  }
}

TEST_CASE("exhaustive selection picks the most uncertain items") {
  const Pool pool = make_numbered_pool(3);
  const PoolState state = full_state(pool);
  std::map<double, ProbabilityVector> posteriors{
      {0.0, {{0.9, 0.1}}}, {1.0, {{0.5, 0.5}}}, {2.0, {{0.7, 0.3}}}};
  StubStudent model(2, 1, posteriors);
  StrategyConfig cfg;

  cfg.batch_size = 1;
  auto batch = exhaustive_lc_select_batch(state, pool, model, cfg);
  CHECK(batch.accepted_ids == std::vector<std::string>{"p0001"});
  CHECK(batch.student_inferences == 3);

  cfg.batch_size = 2;
  batch = exhaustive_lc_select_batch(state, pool, model, cfg);
  CHECK(batch.accepted_ids ==
        std::vector<std::string>{"p0001", "p0002"});
}

TEST_CASE("exhaustive selection matches a brute-force sort oracle") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 20 + static_cast<int>(rng.uniform_index(180));
    const Pool pool = make_numbered_pool(n);
    const PoolState state = full_state(pool);
    std::map<double, ProbabilityVector> posteriors;
    for (int i = 0; i < n; ++i) {
      const double p = 0.5 + 0.5 * rng.uniform();
      posteriors[static_cast<double>(i)] = ProbabilityVector{{p, 1.0 - p}};
    }
    StubStudent model(2, 1, posteriors);
    StrategyConfig cfg;
    cfg.batch_size = 1 + static_cast<int>(rng.uniform_index(10));
    const auto batch = exhaustive_lc_select_batch(state, pool, model, cfg);

    // independent full sort over (uncertainty desc, id asc)
    std::vector<std::pair<double, std::string>> oracle;
    for (const auto& id : state.unlabeled()) {
      const auto& pv = posteriors.at(pool.by_id(id).features[0]);
      oracle.emplace_back(1.0 - std::max(pv.probs[0], pv.probs[1]), id);
    }
    std::sort(oracle.begin(), oracle.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    const std::size_t take =
        std::min<std::size_t>(cfg.batch_size, oracle.size());
    REQUIRE(batch.accepted_ids.size() == take);
    for (std::size_t i = 0; i < take; ++i) {
      CHECK(batch.accepted_ids[i] == oracle[i].second);
    }
  }
}

TEST_CASE("randomized-uncertainty selection") {
  SUBCASE("frequencies proportional to uncertainty") {
    const Pool pool = make_numbered_pool(2);
    const PoolState state = full_state(pool);
    std::map<double, ProbabilityVector> posteriors{
        {0.0, {{0.25, 0.25, 0.25, 0.25}}},  // u = 0.75
        {1.0, {{0.75, 0.25 / 3, 0.25 / 3, 0.25 / 3}}}};  // u = 0.25
    StubStudent model(4, 1, posteriors);
    Rng rng(12);
    const int n = 100000;
    int first = 0;
    for (int i = 0; i < n; ++i) {
      if (randomized_uncertainty_select(state, pool, model, rng) == "p0000") {
        ++first;
      }
    }
    const double sigma = std::sqrt(n * 0.75 * 0.25);
    CHECK(std::abs(first - 0.75 * n) <= 3 * sigma);
  }

  SUBCASE("degenerate single positive-uncertainty item") {
    const Pool pool = make_numbered_pool(3);
    const PoolState state = full_state(pool);
    std::map<double, ProbabilityVector> posteriors{
        {0.0, {{1.0, 0.0}}}, {1.0, {{0.6, 0.4}}}, {2.0, {{1.0, 0.0}}}};
    StubStudent model(2, 1, posteriors);
    Rng rng(13);
    for (int i = 0; i < 20; ++i) {
      CHECK(randomized_uncertainty_select(state, pool, model, rng) == "p0001");
    }
  }

  SUBCASE("all confident is an error") {
    const Pool pool = make_numbered_pool(3);
    const PoolState state = full_state(pool);
    StubStudent model(2, 1, ProbabilityVector{{1.0, 0.0}});
    Rng rng(14);
    CHECK_THROWS_AS(randomized_uncertainty_select(state, pool, model, rng),
                    std::runtime_error);
  }
}

TEST_CASE("active loop with a degenerate budget runs one seeding round") {
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.dim = 2;
  spec.per_class_counts = {30, 30, 30};
  spec.class_mean_separation = 6.0;
  spec.noise_sigma = 0.5;
  spec.seed = 20;
  const Pool pool = generate_synthetic(spec);
  const DatasetSplit s = split(pool, 0.2, 1);
  ReplayOracle oracle(3, 0.0, 0);

  LoopConfig cfg;
  cfg.strategy.strategy = Strategy::kRandom;
  cfg.label_budget = 3;
  cfg.seed = 5;
  const RunLedger ledger = run_active_loop(pool, s, cfg, oracle);
  // seeding may overshoot K slightly; no batch rows follow when the budget
  // is already spent
  if (ledger.rows.size() > 1) {
    CHECK(ledger.rows.front().labels_spent < 3);
  }
  CHECK(ledger.rows.back().labels_spent >= 3);
}

TEST_CASE("random strategy spends the budget exactly") {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.dim = 2;
  spec.per_class_counts = {100, 100};
  spec.class_mean_separation = 4.0;
  spec.noise_sigma = 1.0;
  spec.seed = 21;
  const Pool pool = generate_synthetic(spec);
  const DatasetSplit s = split(pool, 0.2, 1);
  ReplayOracle oracle(2, 0.0, 0);

  LoopConfig cfg;
  cfg.strategy.strategy = Strategy::kRandom;
  cfg.strategy.batch_size = 7;
  cfg.label_budget = 40;
  cfg.seed = 6;
  const RunLedger ledger = run_active_loop(pool, s, cfg, oracle);
  CHECK(ledger.rows.back().labels_spent == 40);
  std::int64_t oracle_calls = 0;
  for (const auto& row : ledger.rows) oracle_calls += row.oracle_calls;
  CHECK(oracle_calls == 40);
  CHECK(oracle.calls_made() == 40);
}

TEST_CASE("both strategies learn a separable pool from few labels") {
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.dim = 4;
  spec.per_class_counts = {400, 400, 400};
  spec.class_mean_separation = 6.0;
  spec.noise_sigma = 1.0;
  spec.seed = 22;
  const Pool pool = generate_synthetic(spec);
  const DatasetSplit s = split(pool, 1.0 / 6.0, 1);
  REQUIRE(s.eval_set.size() + s.train_pool.size() == 1200);
  REQUIRE(s.eval_set.size() >= 198);

  for (Strategy strat : {Strategy::kMraru, Strategy::kRandom}) {
    ReplayOracle oracle(3, 0.0, 0);
    LoopConfig cfg;
    cfg.strategy.strategy = strat;
    cfg.strategy.batch_size = 25;
    cfg.label_budget = 150;
    cfg.eval_every = 2;
    cfg.seed = 30;
    const RunLedger ledger = run_active_loop(pool, s, cfg, oracle);
    CHECK(ledger.rows.back().accuracy >= 0.95);

    // ledger conservation
    std::int64_t prev = 0;
    for (const auto& row : ledger.rows) {
      CHECK(row.labels_spent > prev);
      CHECK(row.candidates_examined >= row.labels_spent - prev);
      CHECK(row.oracle_calls == row.labels_spent - prev);
      prev = row.labels_spent;
    }
    CHECK(ledger.rows.back().labels_spent <= cfg.label_budget);
  }
}

TEST_CASE("uncertainty ranking is preserved under rank-preserving maps") {
  // scaling all class scores before softmax changes probabilities but not
  // the ordering of max posteriors, so the exhaustive top pick is stable
  const Pool pool = make_numbered_pool(5);
  const PoolState state = full_state(pool);
  Rng rng(50);
  std::map<double, ProbabilityVector> base, scaled;
  for (int i = 0; i < 5; ++i) {
    const double s0 = rng.normal();
    const double s1 = rng.normal();
    auto softmax2 = [](double a, double b) {
      const double m = std::max(a, b);
      const double ea = std::exp(a - m), eb = std::exp(b - m);
      return ProbabilityVector{{ea / (ea + eb), eb / (ea + eb)}};
    };
    base[static_cast<double>(i)] = softmax2(s0, s1);
    scaled[static_cast<double>(i)] = softmax2(0.5 * s0, 0.5 * s1);
  }
  StubStudent model_a(2, 1, base);
  StubStudent model_b(2, 1, scaled);
  StrategyConfig cfg;
  cfg.batch_size = 1;
  const auto a = exhaustive_lc_select_batch(state, pool, model_a, cfg);
  const auto b = exhaustive_lc_select_batch(state, pool, model_b, cfg);
  CHECK(a.accepted_ids == b.accepted_ids);
}
