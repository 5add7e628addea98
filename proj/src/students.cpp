#include "mraru/students.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include "mraru/rng.hpp"

namespace mraru {

using nlohmann::ordered_json;

double ProbabilityVector::max_entry() const {
  return *std::max_element(probs.begin(), probs.end());
}

void ProbabilityVector::validate() const {
  if (probs.size() < 2) throw std::logic_error("probability vector too short");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw std::logic_error("probability entry outside [0,1]");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::logic_error("probabilities sum to " + std::to_string(sum));
  }
}

void StudentModel::check_training_data(
    std::span<const LabeledExample> data) const {
  if (data.empty()) throw std::invalid_argument("empty training data");
  std::set<int> labels;
  const std::size_t d = data.front().features.size();
  for (const auto& ex : data) {
    if (ex.features.size() != d) {
      throw std::invalid_argument("inconsistent feature dimensions");
    }
    for (double v : ex.features) {
      if (!std::isfinite(v)) throw std::invalid_argument("NaN in features");
    }
    if (ex.label < 0 || ex.label >= n_classes_) {
      throw std::invalid_argument("label out of range");
    }
    labels.insert(ex.label);
  }
  if (labels.size() < 2) {
    throw std::invalid_argument("training data has a single class");
  }
}

std::vector<ProbabilityVector> StudentModel::predict_proba(
    std::span<const std::vector<double>> items) const {
  if (!fitted_) throw std::logic_error("model is not fitted");
  std::vector<ProbabilityVector> out;
  out.reserve(items.size());
  for (const auto& x : items) {
    if (x.size() != dim_) {
      throw std::invalid_argument("query dimension does not match training");
    }
    out.push_back(score(x));
  }
  inferences_.fetch_add(items.size(), std::memory_order_relaxed);
  return out;
}

ProbabilityVector StudentModel::predict_one(const std::vector<double>& x) const {
  return predict_proba(std::span<const std::vector<double>>(&x, 1)).front();
}

namespace {

// Stable softmax into a ProbabilityVector.
ProbabilityVector softmax(const std::vector<double>& scores) {
  const double m = *std::max_element(scores.begin(), scores.end());
  ProbabilityVector pv;
  pv.probs.resize(scores.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    pv.probs[k] = std::exp(scores[k] - m);
    sum += pv.probs[k];
  }
  for (double& p : pv.probs) p /= sum;
  return pv;
}

// ---------------------------------------------------------------------------
// Multinomial logistic regression

class LogisticModel final : public StudentModel {
 public:
  LogisticModel(int num_classes, LogisticConfig cfg) : cfg_(cfg) {
    n_classes_ = num_classes;
  }

  std::string_view kind() const override { return "logistic"; }

  void fit(std::span<const LabeledExample> data) override {
    dim_ = data.empty() ? 0 : data.front().features.size();
    check_training_data(data);
    const std::size_t w = dim_ + 1;
    weights_.assign(static_cast<std::size_t>(n_classes_) * w, 0.0);
    for (int epoch = 0; epoch < cfg_.max_epochs; ++epoch) {
      const auto grad =
          logistic_gradient(weights_, n_classes_, dim_, data, cfg_.l2_penalty);
      double norm2 = 0.0;
      for (double g : grad) norm2 += g * g;
      if (std::sqrt(norm2) < cfg_.convergence_tol) break;
      for (std::size_t i = 0; i < weights_.size(); ++i) {
        weights_[i] -= cfg_.learning_rate * grad[i];
      }
    }
    fitted_ = true;
  }

  ordered_json to_json() const override {
    ordered_json j;
    j["format_version"] = 1;
    j["kind"] = "logistic";
    j["num_classes"] = n_classes_;
    j["dim"] = dim_;
    j["config"] = {{"learning_rate", cfg_.learning_rate},
                   {"l2_penalty", cfg_.l2_penalty},
                   {"max_epochs", cfg_.max_epochs},
                   {"convergence_tol", cfg_.convergence_tol}};
    j["weights"] = weights_;
    return j;
  }

  void restore(const ordered_json& j) {
    dim_ = j.at("dim").get<std::size_t>();
    weights_ = j.at("weights").get<std::vector<double>>();
    fitted_ = true;
  }

 protected:
  ProbabilityVector score(const std::vector<double>& x) const override {
    const std::size_t w = dim_ + 1;
    std::vector<double> scores(n_classes_);
    for (int k = 0; k < n_classes_; ++k) {
      const double* row = weights_.data() + static_cast<std::size_t>(k) * w;
      double s = row[dim_];  // bias
      for (std::size_t j = 0; j < dim_; ++j) s += row[j] * x[j];
      scores[k] = s;
    }
    return softmax(scores);
  }

 private:
  LogisticConfig cfg_;
  std::vector<double> weights_;  // K x (d+1), bias last
};

// ---------------------------------------------------------------------------
// Linear discriminant analysis

// Cholesky factorization of a symmetric positive definite matrix (row
// major). Returns the lower factor L with A = L L^T.
std::vector<double> cholesky(const std::vector<double>& a, std::size_t n) {
  std::vector<double> l(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
      if (i == j) {
        if (s <= 0.0) {
          throw std::runtime_error("covariance not positive definite");
        }
        l[i * n + j] = std::sqrt(s);
      } else {
        l[i * n + j] = s / l[j * n + j];
      }
    }
  }
  return l;
}

// Solves L y = b in place given the lower Cholesky factor.
void forward_solve(const std::vector<double>& l, std::size_t n,
                   std::vector<double>& b) {
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l[i * n + k] * b[k];
    b[i] = s / l[i * n + i];
  }
}

class LdaModel final : public StudentModel {
 public:
  LdaModel(int num_classes, LdaConfig cfg) : cfg_(cfg) {
    n_classes_ = num_classes;
  }

  std::string_view kind() const override { return "lda"; }

  void fit(std::span<const LabeledExample> data) override {
    dim_ = data.empty() ? 0 : data.front().features.size();
    check_training_data(data);
    const std::size_t d = dim_;
    const std::size_t n = data.size();

    means_.assign(static_cast<std::size_t>(n_classes_) * d, 0.0);
    std::vector<std::size_t> counts(n_classes_, 0);
    for (const auto& ex : data) {
      ++counts[ex.label];
      for (std::size_t j = 0; j < d; ++j) {
        means_[static_cast<std::size_t>(ex.label) * d + j] += ex.features[j];
      }
    }
    log_priors_.assign(n_classes_, -1e30);
    for (int k = 0; k < n_classes_; ++k) {
      if (counts[k] == 0) continue;
      for (std::size_t j = 0; j < d; ++j) {
        means_[static_cast<std::size_t>(k) * d + j] /= counts[k];
      }
      log_priors_[k] =
          std::log(static_cast<double>(counts[k]) / static_cast<double>(n));
    }

    // Pooled within-class covariance plus a ridge.
    cov_.assign(d * d, 0.0);
    std::vector<double> centered(d);
    for (const auto& ex : data) {
      const double* mu = means_.data() + static_cast<std::size_t>(ex.label) * d;
      for (std::size_t j = 0; j < d; ++j) centered[j] = ex.features[j] - mu[j];
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
          cov_[i * d + j] += centered[i] * centered[j];
        }
      }
    }
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        cov_[i * d + j] /= static_cast<double>(n);
        cov_[j * d + i] = cov_[i * d + j];
      }
      cov_[i * d + i] += cfg_.covariance_ridge;
    }
    chol_ = cholesky(cov_, d);
    fitted_ = true;
  }

  ordered_json to_json() const override {
    ordered_json j;
    j["format_version"] = 1;
    j["kind"] = "lda";
    j["num_classes"] = n_classes_;
    j["dim"] = dim_;
    j["config"] = {{"covariance_ridge", cfg_.covariance_ridge}};
    j["means"] = means_;
    j["log_priors"] = log_priors_;
    j["covariance"] = cov_;
    return j;
  }

  void restore(const ordered_json& j) {
    dim_ = j.at("dim").get<std::size_t>();
    means_ = j.at("means").get<std::vector<double>>();
    log_priors_ = j.at("log_priors").get<std::vector<double>>();
    cov_ = j.at("covariance").get<std::vector<double>>();
    chol_ = cholesky(cov_, dim_);
    fitted_ = true;
  }

 protected:
  ProbabilityVector score(const std::vector<double>& x) const override {
    const std::size_t d = dim_;
    std::vector<double> scores(n_classes_);
    std::vector<double> diff(d);
    for (int k = 0; k < n_classes_; ++k) {
      if (log_priors_[k] <= -1e29) {
        scores[k] = -1e30;
        continue;
      }
      const double* mu = means_.data() + static_cast<std::size_t>(k) * d;
      for (std::size_t j = 0; j < d; ++j) diff[j] = x[j] - mu[j];
      forward_solve(chol_, d, diff);  // diff <- L^{-1}(x - mu)
      double maha = 0.0;
      for (double v : diff) maha += v * v;
      scores[k] = log_priors_[k] - 0.5 * maha;
    }
    return softmax(scores);
  }

 private:
  LdaConfig cfg_;
  std::vector<double> means_;       // K x d
  std::vector<double> log_priors_;  // K
  std::vector<double> cov_;         // d x d, ridge already added
  std::vector<double> chol_;        // lower factor of cov_
};

// ---------------------------------------------------------------------------
// Random forest

struct TreeNode {
  int feature = -1;       // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int leaf_class = -1;
};

class ForestTree {
 public:
  void build(std::span<const LabeledExample> data,
             std::vector<std::size_t> sample, int num_classes, int max_depth,
             int min_leaf, int n_features_per_split, Rng& rng) {
    num_classes_ = num_classes;
    nodes_.clear();
    grow(data, std::move(sample), 0, max_depth, min_leaf, n_features_per_split,
         rng);
  }

  int vote(const std::vector<double>& x) const {
    int idx = 0;
    while (nodes_[idx].feature >= 0) {
      idx = x[nodes_[idx].feature] <= nodes_[idx].threshold ? nodes_[idx].left
                                                            : nodes_[idx].right;
    }
    return nodes_[idx].leaf_class;
  }

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  void set_nodes(std::vector<TreeNode> nodes, int num_classes) {
    nodes_ = std::move(nodes);
    num_classes_ = num_classes;
  }

 private:
  int majority(std::span<const LabeledExample> data,
               const std::vector<std::size_t>& sample) const {
    std::vector<int> counts(num_classes_, 0);
    for (std::size_t i : sample) ++counts[data[i].label];
    // ties: lowest class index
    return static_cast<int>(
        std::max_element(counts.begin(), counts.end()) - counts.begin());
  }

  static double gini(const std::vector<int>& counts, int total) {
    if (total == 0) return 0.0;
    double g = 1.0;
    for (int c : counts) {
      const double f = static_cast<double>(c) / total;
      g -= f * f;
    }
    return g;
  }

  int grow(std::span<const LabeledExample> data,
           std::vector<std::size_t> sample, int depth, int max_depth,
           int min_leaf, int n_features_per_split, Rng& rng) {
    const int node_idx = static_cast<int>(nodes_.size());
    nodes_.emplace_back();

    bool pure = true;
    for (std::size_t i = 1; i < sample.size(); ++i) {
      if (data[sample[i]].label != data[sample[0]].label) {
        pure = false;
        break;
      }
    }
    if (pure || depth >= max_depth ||
        sample.size() < static_cast<std::size_t>(2 * min_leaf)) {
      nodes_[node_idx].leaf_class = majority(data, sample);
      return node_idx;
    }

    const std::size_t d = data[sample[0]].features.size();
    // feature subsample without replacement
    std::vector<std::size_t> feats(d);
    std::iota(feats.begin(), feats.end(), 0);
    for (int i = 0; i < n_features_per_split && i + 1 < static_cast<int>(d);
         ++i) {
      const std::size_t j = i + rng.uniform_index(d - i);
      std::swap(feats[i], feats[j]);
    }
    feats.resize(std::min<std::size_t>(n_features_per_split, d));

    double best_impurity = 1e300;
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<std::pair<double, int>> vals;
    for (std::size_t f : feats) {
      vals.clear();
      for (std::size_t i : sample) {
        vals.emplace_back(data[i].features[f], data[i].label);
      }
      std::sort(vals.begin(), vals.end());
      std::vector<int> left_counts(num_classes_, 0);
      std::vector<int> right_counts(num_classes_, 0);
      for (const auto& [v, lbl] : vals) ++right_counts[lbl];
      const int n = static_cast<int>(vals.size());
      for (int i = 0; i + 1 < n; ++i) {
        ++left_counts[vals[i].second];
        --right_counts[vals[i].second];
        const int nl = i + 1;
        const int nr = n - nl;
        if (nl < min_leaf || nr < min_leaf) continue;
        if (vals[i].first == vals[i + 1].first) continue;
        const double imp =
            (nl * gini(left_counts, nl) + nr * gini(right_counts, nr)) / n;
        if (imp < best_impurity) {
          best_impurity = imp;
          best_feature = static_cast<int>(f);
          best_threshold = 0.5 * (vals[i].first + vals[i + 1].first);
        }
      }
    }

    if (best_feature < 0) {
      nodes_[node_idx].leaf_class = majority(data, sample);
      return node_idx;
    }

    std::vector<std::size_t> left, right;
    for (std::size_t i : sample) {
      (data[i].features[best_feature] <= best_threshold ? left : right)
          .push_back(i);
    }
    sample.clear();
    sample.shrink_to_fit();
    nodes_[node_idx].feature = best_feature;
    nodes_[node_idx].threshold = best_threshold;
    const int l = grow(data, std::move(left), depth + 1, max_depth, min_leaf,
                       n_features_per_split, rng);
    const int r = grow(data, std::move(right), depth + 1, max_depth, min_leaf,
                       n_features_per_split, rng);
    nodes_[node_idx].left = l;
    nodes_[node_idx].right = r;
    return node_idx;
  }

  int num_classes_ = 0;
  std::vector<TreeNode> nodes_;
};

class RandomForestModel final : public StudentModel {
 public:
  RandomForestModel(int num_classes, ForestConfig cfg) : cfg_(cfg) {
    n_classes_ = num_classes;
  }

  std::string_view kind() const override { return "random_forest"; }

  void fit(std::span<const LabeledExample> data) override {
    dim_ = data.empty() ? 0 : data.front().features.size();
    check_training_data(data);
    const std::size_t d = dim_;
    double frac = cfg_.feature_subsample;
    if (frac <= 0.0) frac = std::sqrt(static_cast<double>(d)) / d;
    if (frac > 1.0) throw std::invalid_argument("feature_subsample > 1");
    const int m = std::max(1, static_cast<int>(std::lround(frac * d)));

    trees_.assign(cfg_.n_trees, ForestTree{});
    Rng root(cfg_.seed);
    for (int t = 0; t < cfg_.n_trees; ++t) {
      Rng tree_rng(root.split());
      std::vector<std::size_t> sample(data.size());
      for (auto& s : sample) s = tree_rng.uniform_index(data.size());
      trees_[t].build(data, std::move(sample), n_classes_, cfg_.max_depth,
                      cfg_.min_leaf, m, tree_rng);
    }
    fitted_ = true;
  }

  ordered_json to_json() const override {
    ordered_json j;
    j["format_version"] = 1;
    j["kind"] = "random_forest";
    j["num_classes"] = n_classes_;
    j["dim"] = dim_;
    j["config"] = {{"n_trees", cfg_.n_trees},
                   {"max_depth", cfg_.max_depth},
                   {"min_leaf", cfg_.min_leaf},
                   {"feature_subsample", cfg_.feature_subsample},
                   {"seed", cfg_.seed}};
    ordered_json trees = ordered_json::array();
    for (const auto& tree : trees_) {
      ordered_json nodes = ordered_json::array();
      for (const auto& n : tree.nodes()) {
        nodes.push_back({n.feature, n.threshold, n.left, n.right, n.leaf_class});
      }
      trees.push_back(std::move(nodes));
    }
    j["trees"] = std::move(trees);
    return j;
  }

  void restore(const ordered_json& j) {
    dim_ = j.at("dim").get<std::size_t>();
    trees_.clear();
    for (const auto& tj : j.at("trees")) {
      std::vector<TreeNode> nodes;
      for (const auto& nj : tj) {
        TreeNode n;
        n.feature = nj.at(0).get<int>();
        n.threshold = nj.at(1).get<double>();
        n.left = nj.at(2).get<int>();
        n.right = nj.at(3).get<int>();
        n.leaf_class = nj.at(4).get<int>();
        nodes.push_back(n);
      }
      ForestTree tree;
      tree.set_nodes(std::move(nodes), n_classes_);
      trees_.push_back(std::move(tree));
    }
    fitted_ = true;
  }

  // test hook: install hand-built trees
  void set_trees(std::vector<std::vector<TreeNode>> trees, std::size_t dim) {
    trees_.clear();
    for (auto& nodes : trees) {
      ForestTree tree;
      tree.set_nodes(std::move(nodes), n_classes_);
      trees_.push_back(std::move(tree));
    }
    dim_ = dim;
    fitted_ = true;
  }

 protected:
  ProbabilityVector score(const std::vector<double>& x) const override {
    std::vector<int> votes(n_classes_, 0);
    for (const auto& tree : trees_) ++votes[tree.vote(x)];
    ProbabilityVector pv;
    pv.probs.resize(n_classes_);
    for (int k = 0; k < n_classes_; ++k) {
      pv.probs[k] = static_cast<double>(votes[k]) / trees_.size();
    }
    return pv;
  }

 private:
  ForestConfig cfg_;
  std::vector<ForestTree> trees_;
};

}  // namespace

// ---------------------------------------------------------------------------

std::vector<double> logistic_gradient(const std::vector<double>& weights,
                                      int num_classes, std::size_t dim,
                                      std::span<const LabeledExample> data,
                                      double l2_penalty) {
  const std::size_t w = dim + 1;
  if (weights.size() != static_cast<std::size_t>(num_classes) * w) {
    throw std::invalid_argument("weight shape mismatch");
  }
  std::vector<double> grad(weights.size(), 0.0);
  std::vector<double> scores(num_classes);
  const double inv_n = data.empty() ? 0.0 : 1.0 / data.size();
  for (const auto& ex : data) {
    if (ex.features.size() != dim) {
      throw std::invalid_argument("feature shape mismatch");
    }
    for (int k = 0; k < num_classes; ++k) {
      const double* row = weights.data() + static_cast<std::size_t>(k) * w;
      double s = row[dim];
      for (std::size_t j = 0; j < dim; ++j) s += row[j] * ex.features[j];
      scores[k] = s;
    }
    const double m = *std::max_element(scores.begin(), scores.end());
    double sum = 0.0;
    for (double& s : scores) {
      s = std::exp(s - m);
      sum += s;
    }
    for (int k = 0; k < num_classes; ++k) {
      const double residual =
          scores[k] / sum - (k == ex.label ? 1.0 : 0.0);
      double* grow = grad.data() + static_cast<std::size_t>(k) * w;
      for (std::size_t j = 0; j < dim; ++j) {
        grow[j] += inv_n * residual * ex.features[j];
      }
      grow[dim] += inv_n * residual;
    }
  }
  for (std::size_t i = 0; i < grad.size(); ++i) {
    grad[i] += 2.0 * l2_penalty * weights[i];
  }
  return grad;
}

double logistic_loss(const std::vector<double>& weights, int num_classes,
                     std::size_t dim, std::span<const LabeledExample> data,
                     double l2_penalty) {
  const std::size_t w = dim + 1;
  std::vector<double> scores(num_classes);
  double loss = 0.0;
  for (const auto& ex : data) {
    for (int k = 0; k < num_classes; ++k) {
      const double* row = weights.data() + static_cast<std::size_t>(k) * w;
      double s = row[dim];
      for (std::size_t j = 0; j < dim; ++j) s += row[j] * ex.features[j];
      scores[k] = s;
    }
    const double m = *std::max_element(scores.begin(), scores.end());
    double sum = 0.0;
    for (double s : scores) sum += std::exp(s - m);
    loss += -(scores[ex.label] - m - std::log(sum));
  }
  if (!data.empty()) loss /= data.size();
  double reg = 0.0;
  for (double v : weights) reg += v * v;
  return loss + l2_penalty * reg;
}

std::unique_ptr<StudentModel> make_student(const std::string& kind,
                                           int num_classes,
                                           const TrainConfig& cfg) {
  if (num_classes < 2) throw std::invalid_argument("need K >= 2");
  if (kind == "logistic") {
    return std::make_unique<LogisticModel>(num_classes, cfg.logistic);
  }
  if (kind == "lda") {
    return std::make_unique<LdaModel>(num_classes, cfg.lda);
  }
  if (kind == "random_forest") {
    return std::make_unique<RandomForestModel>(num_classes, cfg.forest);
  }
  throw std::invalid_argument("unknown student kind: " + kind);
}

void save_student(const StudentModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write model file: " + path);
  out << model.to_json().dump(2) << "\n";
}

std::unique_ptr<StudentModel> load_student(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model file: " + path);
  ordered_json j = ordered_json::parse(in);
  if (j.at("format_version").get<int>() != 1) {
    throw std::runtime_error("unsupported model format version");
  }
  const std::string kind = j.at("kind").get<std::string>();
  const int num_classes = j.at("num_classes").get<int>();
  TrainConfig cfg;
  if (kind == "logistic") {
    const auto& c = j.at("config");
    cfg.logistic = {c.at("learning_rate").get<double>(),
                    c.at("l2_penalty").get<double>(),
                    c.at("max_epochs").get<int>(),
                    c.at("convergence_tol").get<double>()};
    auto model = std::make_unique<LogisticModel>(num_classes, cfg.logistic);
    model->restore(j);
    return model;
  }
  if (kind == "lda") {
    cfg.lda = {j.at("config").at("covariance_ridge").get<double>()};
    auto model = std::make_unique<LdaModel>(num_classes, cfg.lda);
    model->restore(j);
    return model;
  }
  if (kind == "random_forest") {
    const auto& c = j.at("config");
    cfg.forest = {c.at("n_trees").get<int>(), c.at("max_depth").get<int>(),
                  c.at("min_leaf").get<int>(),
                  c.at("feature_subsample").get<double>(),
                  c.at("seed").get<std::uint64_t>()};
    auto model = std::make_unique<RandomForestModel>(num_classes, cfg.forest);
    model->restore(j);
    return model;
  }
  throw std::runtime_error("unknown model kind in file: " + kind);
}

}  // namespace mraru
