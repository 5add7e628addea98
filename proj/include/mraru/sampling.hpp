#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mraru/dataset.hpp"
#include "mraru/metrics.hpp"
#include "mraru/rng.hpp"
#include "mraru/students.hpp"

namespace mraru {

class TeacherOracle;

struct UncertaintyScore {
  double value = 0.0;  // 1 - max posterior, in [0, 1 - 1/K]
};

struct SelectionBatch {
  std::vector<std::string> accepted_ids;
  std::int64_t candidates_examined = 0;
  std::int64_t student_inferences = 0;
  bool exhausted = false;  // visit budget ran out before the batch filled
};

enum class Strategy { kMraru, kRandom, kExhaustiveLc, kRandomizedUncertainty };

enum class RejectedPolicy { kReturnToPool, kDeferRound };

struct StrategyConfig {
  Strategy strategy = Strategy::kMraru;
  int batch_size = 25;
  RejectedPolicy rejected_policy = RejectedPolicy::kReturnToPool;
};

Strategy strategy_from_name(const std::string& name);
std::string strategy_name(Strategy s);

// Least-confidence uncertainty, 1 - max_k p_k.
UncertaintyScore uncertainty_lc(const ProbabilityVector& p);

// The accept/reject probability. Identical to uncertainty_lc by
// construction (same code path).
double accept_probability(const ProbabilityVector& p);

// Repeats {draw a uniform candidate from the remaining pool, score it with
// the student (one inference), accept with probability equal to its
// least-confidence score} until the batch fills or the visit budget
// (50 * batch_size * K trials) runs out. Does not mutate the pool state.
SelectionBatch mraru_select_batch(const PoolState& state, const Pool& pool,
                                  const StudentModel& model,
                                  const StrategyConfig& cfg, Rng& rng);

// Uniform without replacement; no student inferences.
SelectionBatch random_select_batch(const PoolState& state,
                                   const StrategyConfig& cfg, Rng& rng);

// Scores all of U (|U| inferences), takes the batch_size most uncertain,
// ties by lowest id.
SelectionBatch exhaustive_lc_select_batch(const PoolState& state,
                                          const Pool& pool,
                                          const StudentModel& model,
                                          const StrategyConfig& cfg);

// Samples one id with probability proportional to its uncertainty over all
// of U. Throws when every item is fully confident.
std::string randomized_uncertainty_select(const PoolState& state,
                                          const Pool& pool,
                                          const StudentModel& model, Rng& rng,
                                          std::int64_t* inferences = nullptr);

struct LoopConfig {
  StrategyConfig strategy;
  std::string student_kind = "logistic";
  TrainConfig train;
  std::int64_t label_budget = 100;
  int eval_every = 1;  // evaluate after every eval_every batches
  std::uint64_t seed = 0;
};

// Algorithm: seed initial labels to cover every class, then loop
// {select batch, label via oracle, retrain the student from scratch on L,
// evaluate on the eval split} until the budget is spent or the pool
// empties. One ledger row per evaluated round.
RunLedger run_active_loop(const Pool& pool, const DatasetSplit& split,
                          const LoopConfig& cfg, TeacherOracle& oracle);

// As above, but fills the ledger incrementally so rows survive an abort
// (e.g. an oracle failure mid-run).
void run_active_loop(const Pool& pool, const DatasetSplit& split,
                     const LoopConfig& cfg, TeacherOracle& oracle,
                     RunLedger& out);

}  // namespace mraru
