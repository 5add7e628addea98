#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "mraru/dataset.hpp"
#include "mraru/rng.hpp"
#include "mraru/students.hpp"

using namespace mraru;

namespace {

std::vector<LabeledExample> pool_examples(const Pool& pool) {
  std::vector<LabeledExample> data;
  for (const auto& item : pool.items()) {
    data.push_back({item.features, *item.gold_label});
  }
  return data;
}

int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Test-local softmax cross-entropy, independent of the library path. Used
// as the finite-difference oracle for the analytic gradient.
double oracle_loss(const std::vector<double>& w, int k, std::size_t d,
                   const std::vector<LabeledExample>& data, double l2) {
  double loss = 0.0;
  for (const auto& ex : data) {
    std::vector<double> z(k);
    for (int c = 0; c < k; ++c) {
      z[c] = w[c * (d + 1) + d];
      for (std::size_t j = 0; j < d; ++j) z[c] += w[c * (d + 1) + j] * ex.features[j];
    }
    double denom = 0.0;
    for (int c = 0; c < k; ++c) denom += std::exp(z[c]);
    loss += std::log(denom) - z[ex.label];
  }
  loss /= data.size();
  for (double v : w) loss += l2 * v * v;
  return loss;
}

std::vector<LabeledExample> random_instance(Rng& rng, int n, int k,
                                            std::size_t d) {
  std::vector<LabeledExample> data;
  for (int i = 0; i < n; ++i) {
    LabeledExample ex;
    ex.features.resize(d);
    for (auto& f : ex.features) f = rng.normal();
    ex.label = static_cast<int>(rng.uniform_index(k));
    data.push_back(std::move(ex));
  }
  // ensure at least two classes
  if (!data.empty()) data[0].label = 0;
  if (data.size() > 1) data[1].label = 1;
  return data;
}

}  // namespace

TEST_CASE("logistic separates a trivial 1-d pair") {
  std::vector<LabeledExample> data{{{-1.0}, 0}, {{1.0}, 1}};
  auto model = make_student("logistic", 2, TrainConfig{});
  model->fit(data);
  CHECK(model->fitted());
  CHECK(argmax(model->predict_one({-1.0}).probs) == 0);
  CHECK(argmax(model->predict_one({1.0}).probs) == 1);
}

TEST_CASE("training preconditions") {
  auto model = make_student("logistic", 2, TrainConfig{});
  SUBCASE("single class") {
    std::vector<LabeledExample> data{{{1.0}, 0}, {{2.0}, 0}};
    CHECK_THROWS_AS(model->fit(data), std::invalid_argument);
  }
  SUBCASE("empty") {
    std::vector<LabeledExample> data;
    CHECK_THROWS_AS(model->fit(data), std::invalid_argument);
  }
  SUBCASE("NaN features") {
    std::vector<LabeledExample> data{
        {{std::nan("")}, 0}, {{1.0}, 1}};
    CHECK_THROWS_AS(model->fit(data), std::invalid_argument);
  }
  SUBCASE("predict before fit") {
    CHECK_THROWS_AS(model->predict_one({1.0}), std::logic_error);
  }
}

TEST_CASE("LDA near-matches the exact Bayes rule on tight blobs") {
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.dim = 3;  // axis-aligned means for every class
  spec.per_class_counts = {10, 10, 10};
  spec.class_mean_separation = 10.0;
  spec.noise_sigma = 0.1;
  spec.seed = 5;
  const Pool pool = generate_synthetic(spec);
  const auto data = pool_examples(pool);

  auto model = make_student("lda", 3, TrainConfig{});
  model->fit(data);

  // Bayes rule for equal-prior isotropic Gaussians: nearest generating mean.
  int agree = 0;
  for (const auto& ex : data) {
    double best = 1e300;
    int bayes = -1;
    for (int k = 0; k < 3; ++k) {
      double d2 = 0.0;
      for (int j = 0; j < 3; ++j) {
        const double mu = (j == k) ? spec.class_mean_separation : 0.0;
        d2 += (ex.features[j] - mu) * (ex.features[j] - mu);
      }
      if (d2 < best) {
        best = d2;
        bayes = k;
      }
    }
    if (argmax(model->predict_one(ex.features).probs) == bayes) ++agree;
  }
  CHECK(agree >= 29);
}

TEST_CASE("logistic with zero weights is maximally uncertain") {
  TrainConfig cfg;
  cfg.logistic.max_epochs = 0;  // leave the zero initialization in place
  auto model = make_student("logistic", 4, cfg);
  std::vector<LabeledExample> data{{{1.0}, 0}, {{2.0}, 1}, {{3.0}, 2},
                                   {{4.0}, 3}};
  model->fit(data);
  const auto pv = model->predict_one({0.5});
  for (double p : pv.probs) CHECK(p == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("LDA posterior at the midpoint of symmetric Gaussians is 1/2") {
  // mirrored samples give exactly symmetric class statistics
  std::vector<LabeledExample> data;
  for (double delta : {-0.3, -0.1, 0.1, 0.3}) {
    data.push_back({{-1.0 + delta, 0.5 * delta}, 0});
    data.push_back({{1.0 - delta, -0.5 * delta}, 1});
  }
  auto model = make_student("lda", 2, TrainConfig{});
  model->fit(data);
  const auto pv = model->predict_one({0.0, 0.0});
  CHECK(pv.probs[0] == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(pv.probs[1] == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("forest posteriors are exact tree-vote fractions") {
  // hand-built forest: 7 single-leaf trees, 5 voting class 2
  nlohmann::ordered_json j;
  j["format_version"] = 1;
  j["kind"] = "random_forest";
  j["num_classes"] = 3;
  j["dim"] = 1;
  j["config"] = {{"n_trees", 7},  {"max_depth", 12},        {"min_leaf", 2},
                 {"feature_subsample", 0.0}, {"seed", 0}};
  nlohmann::ordered_json trees = nlohmann::ordered_json::array();
  const int votes[7] = {2, 0, 2, 1, 2, 2, 2};
  for (int v : votes) {
    trees.push_back(nlohmann::ordered_json::array(
        {nlohmann::ordered_json::array({-1, 0.0, -1, -1, v})}));
  }
  j["trees"] = trees;
  const auto path =
      (std::filesystem::temp_directory_path() / "forest_hand.json").string();
  {
    std::ofstream out(path);
    out << j.dump();
  }
  auto model = load_student(path);
  const auto pv = model->predict_one({0.0});
  CHECK(pv.probs[2] == 5.0 / 7.0);
  CHECK(pv.probs[0] + pv.probs[1] == doctest::Approx(2.0 / 7.0).epsilon(1e-15));
  CHECK(pv.probs[0] == 1.0 / 7.0);
  CHECK(pv.probs[1] == 1.0 / 7.0);
}

TEST_CASE("analytic gradient matches the finite-difference oracle") {
  Rng rng(21);
  const int k = 3;
  const std::size_t d = 4;
  auto data = random_instance(rng, 5, k, d);
  std::vector<double> w(k * (d + 1));
  for (auto& v : w) v = rng.normal();

  const auto grad = logistic_gradient(w, k, d, data, 1e-3);
  const double step = 1e-5;
  for (std::size_t i = 0; i < w.size(); ++i) {
    auto wp = w, wm = w;
    wp[i] += step;
    wm[i] -= step;
    const double fd =
        (oracle_loss(wp, k, d, data, 1e-3) - oracle_loss(wm, k, d, data, 1e-3)) /
        (2 * step);
    CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("gradient edge cases") {
  const int k = 2;
  const std::size_t d = 2;
  std::vector<double> w{0.3, -0.2, 0.1, -0.4, 0.5, 0.0};

  SUBCASE("empty data leaves the pure regularization gradient") {
    std::vector<LabeledExample> empty;
    const auto grad = logistic_gradient(w, k, d, empty, 0.01);
    for (std::size_t i = 0; i < w.size(); ++i) {
      CHECK(grad[i] == doctest::Approx(2 * 0.01 * w[i]).epsilon(1e-15));
    }
  }

  SUBCASE("gradient norm is small at a trained optimum") {
    std::vector<LabeledExample> data{{{-1.0, 0.0}, 0}, {{1.0, 0.0}, 1},
                                     {{-0.5, 0.2}, 0}, {{0.5, -0.2}, 1}};
    TrainConfig cfg;
    cfg.logistic.learning_rate = 0.5;
    cfg.logistic.max_epochs = 200000;
    cfg.logistic.convergence_tol = 1e-5;
    auto model = make_student("logistic", 2, cfg);
    model->fit(data);
    // recover weights from the serialized form
    const auto j = model->to_json();
    const auto weights = j.at("weights").get<std::vector<double>>();
    const auto grad = logistic_gradient(weights, 2, 2, data,
                                        cfg.logistic.l2_penalty);
    double norm = 0.0;
    for (double g : grad) norm += g * g;
    CHECK(std::sqrt(norm) < cfg.logistic.convergence_tol);
  }
}

TEST_CASE("posterior invariants hold for all students on fuzzed inputs") {
  Rng rng(31);
  TrainConfig cfg;
  cfg.forest.n_trees = 21;
  cfg.forest.seed = 9;
  for (const char* kind : {"logistic", "lda", "random_forest"}) {
    const int k = 2 + static_cast<int>(rng.uniform_index(4));
    const std::size_t d = 1 + rng.uniform_index(6);
    auto data = random_instance(rng, 40, k, d);
    auto model = make_student(kind, k, cfg);
    model->fit(data);
    for (int q = 0; q < 50; ++q) {
      std::vector<double> x(d);
      for (auto& f : x) f = 3.0 * rng.normal();
      const auto pv = model->predict_one(x);
      CHECK_NOTHROW(pv.validate());  // in [0,1], sums to 1 within 1e-9
      if (std::string(kind) == "random_forest") {
        const double scaled = pv.probs[0] * cfg.forest.n_trees;
        CHECK(std::abs(scaled - std::llround(scaled)) < 1e-9);
      }
    }
  }
}

TEST_CASE("students are deterministic given data, config, and seed") {
  Rng rng(77);
  auto data = random_instance(rng, 60, 3, 4);
  TrainConfig cfg;
  cfg.forest.seed = 1234;
  for (const char* kind : {"logistic", "lda", "random_forest"}) {
    auto a = make_student(kind, 3, cfg);
    auto b = make_student(kind, 3, cfg);
    a->fit(data);
    b->fit(data);
    for (int q = 0; q < 10; ++q) {
      std::vector<double> x{rng.normal(), rng.normal(), rng.normal(),
                            rng.normal()};
      CHECK(a->predict_one(x).probs == b->predict_one(x).probs);
    }
  }
}

TEST_CASE("inference counter sums item counts across calls") {
  Rng rng(8);
  auto data = random_instance(rng, 20, 2, 3);
  auto model = make_student("logistic", 2, TrainConfig{});
  model->fit(data);
  CHECK(model->inference_count() == 0);
  std::vector<std::vector<double>> batch1(4, {0.0, 0.0, 0.0});
  std::vector<std::vector<double>> batch2(9, {1.0, 1.0, 1.0});
  model->predict_proba(batch1);
  model->predict_proba(batch2);
  model->predict_one({0.5, 0.5, 0.5});
  CHECK(model->inference_count() == 14);
}

TEST_CASE("model save/load round-trips predictions") {
  Rng rng(55);
  auto data = random_instance(rng, 50, 3, 5);
  TrainConfig cfg;
  cfg.forest.n_trees = 15;
  cfg.forest.seed = 3;
  for (const char* kind : {"logistic", "lda", "random_forest"}) {
    auto model = make_student(kind, 3, cfg);
    model->fit(data);
    const auto path = (std::filesystem::temp_directory_path() /
                       (std::string("model_") + kind + ".json"))
                          .string();
    save_student(*model, path);
    auto reloaded = load_student(path);
    CHECK(reloaded->kind() == model->kind());
    for (int q = 0; q < 10; ++q) {
      std::vector<double> x(5);
      for (auto& f : x) f = rng.normal();
      CHECK(model->predict_one(x).probs == reloaded->predict_one(x).probs);
    }
  }
}

TEST_CASE("dimension mismatch at prediction time is rejected") {
  std::vector<LabeledExample> data{{{-1.0, 0.0}, 0}, {{1.0, 0.0}, 1}};
  auto model = make_student("logistic", 2, TrainConfig{});
  model->fit(data);
  CHECK_THROWS_AS(model->predict_one({1.0}), std::invalid_argument);
}
