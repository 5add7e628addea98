#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mraru {

// K x K matrix of counts; entry (i, j) is items of true class i predicted j.
class ConfusionCounts {
 public:
  explicit ConfusionCounts(int num_classes);

  void add(int true_class, int predicted_class, std::int64_t count = 1);
  std::int64_t at(int true_class, int predicted_class) const;
  int num_classes() const { return k_; }
  std::int64_t total() const;

 private:
  int k_;
  std::vector<std::int64_t> counts_;
};

// trace / total. Throws on an empty confusion.
double accuracy(const ConfusionCounts& c);

// Mean per-class recall over classes with support. Classes without true
// instances are excluded from the mean; excluded_classes reports how many.
// Throws when no class has support.
double balanced_accuracy(const ConfusionCounts& c,
                         int* excluded_classes = nullptr);

struct LedgerRow {
  std::int64_t labels_spent = 0;
  std::int64_t candidates_examined = 0;
  std::int64_t student_inferences_selection = 0;
  std::int64_t oracle_calls = 0;
  std::int64_t unlabeled_at_start = 0;  // |U| when the batch began
  double accuracy = 0.0;
  double balanced_accuracy = 0.0;
};

struct RunLedger {
  std::string run_id;
  std::string strategy;
  std::string student;
  std::uint64_t seed = 0;
  std::string config_digest;
  std::vector<LedgerRow> rows;
};

struct EfficiencyReport {
  double acceptance_rate = 0.0;
  std::int64_t mraru_inferences = 0;
  std::int64_t exhaustive_inferences_equivalent = 0;
  double speedup = 0.0;
};

// Acceptance and speedup accounting for an accept/reject run.
// pool_size_per_batch holds |U| at each batch start, one entry per ledger
// row that performed selection.
EfficiencyReport efficiency_report(
    const RunLedger& ledger, const std::vector<std::int64_t>& pool_size_per_batch);

// Smallest labels_spent whose row meets or exceeds target on the chosen
// metric; nullopt when never reached.
enum class Metric { kAccuracy, kBalancedAccuracy };
std::optional<std::int64_t> labels_to_threshold(const RunLedger& ledger,
                                                double target, Metric metric);

// Writes one CSV with a fixed header and one row per (run, batch).
// Reals carry 6 significant digits; emission is deterministic.
void emit_curves(const std::vector<RunLedger>& ledgers,
                 const std::string& path);

std::vector<RunLedger> read_curves(const std::string& path);

}  // namespace mraru
