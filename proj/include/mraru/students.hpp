#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace mraru {

// Length-K vector of class posteriors. Entries in [0,1], sum 1 within 1e-9.
struct ProbabilityVector {
  std::vector<double> probs;

  int num_classes() const { return static_cast<int>(probs.size()); }
  double max_entry() const;
  void validate() const;
};

struct LabeledExample {
  std::vector<double> features;
  int label = 0;
};

struct LogisticConfig {
  double learning_rate = 0.1;
  double l2_penalty = 1e-4;
  int max_epochs = 500;
  double convergence_tol = 1e-6;
};

struct LdaConfig {
  double covariance_ridge = 1e-6;
};

struct ForestConfig {
  int n_trees = 100;
  int max_depth = 12;
  int min_leaf = 2;
  double feature_subsample = 0.0;  // 0 means sqrt(d)/d
  std::uint64_t seed = 0;
};

struct TrainConfig {
  LogisticConfig logistic;
  LdaConfig lda;
  ForestConfig forest;
};

// A probabilistic multi-class student classifier. Prediction increments an
// inference counter used by the sampling-efficiency accounting.
class StudentModel {
 public:
  virtual ~StudentModel() = default;

  virtual std::string_view kind() const = 0;

  // Trains from scratch. Requires non-empty data with at least 2 distinct
  // labels and consistent finite features.
  virtual void fit(std::span<const LabeledExample> data) = 0;

  // One ProbabilityVector per item. Throws until fitted or on dimension
  // mismatch. Adds items.size() to the inference counter.
  std::vector<ProbabilityVector> predict_proba(
      std::span<const std::vector<double>> items) const;
  ProbabilityVector predict_one(const std::vector<double>& x) const;

  bool fitted() const { return fitted_; }
  std::uint64_t inference_count() const { return inferences_.load(); }
  int num_classes() const { return n_classes_; }

  virtual nlohmann::ordered_json to_json() const = 0;

 protected:
  virtual ProbabilityVector score(const std::vector<double>& x) const = 0;
  void check_training_data(std::span<const LabeledExample> data) const;

  bool fitted_ = false;
  int n_classes_ = 0;
  std::size_t dim_ = 0;
  mutable std::atomic<std::uint64_t> inferences_{0};
};

// kind is one of "logistic", "lda", "random_forest".
std::unique_ptr<StudentModel> make_student(const std::string& kind,
                                           int num_classes,
                                           const TrainConfig& cfg);

void save_student(const StudentModel& model, const std::string& path);
std::unique_ptr<StudentModel> load_student(const std::string& path);

// Multinomial logistic regression internals, exposed for gradient checking.
// Weights are row-major K x (d+1); the last column is the bias. Loss is the
// mean cross-entropy over data plus l2 * ||W||^2, gradient its exact
// analytic derivative.
std::vector<double> logistic_gradient(const std::vector<double>& weights,
                                      int num_classes, std::size_t dim,
                                      std::span<const LabeledExample> data,
                                      double l2_penalty);
double logistic_loss(const std::vector<double>& weights, int num_classes,
                     std::size_t dim, std::span<const LabeledExample> data,
                     double l2_penalty);

}  // namespace mraru
