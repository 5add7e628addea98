#include "mraru/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mraru/oracle.hpp"

namespace mraru {

Strategy strategy_from_name(const std::string& name) {
  if (name == "mraru") return Strategy::kMraru;
  if (name == "random") return Strategy::kRandom;
  if (name == "exhaustive_lc") return Strategy::kExhaustiveLc;
  if (name == "randomized_uncertainty") return Strategy::kRandomizedUncertainty;
  throw std::invalid_argument("unknown strategy: " + name);
}

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kMraru: return "mraru";
    case Strategy::kRandom: return "random";
    case Strategy::kExhaustiveLc: return "exhaustive_lc";
    case Strategy::kRandomizedUncertainty: return "randomized_uncertainty";
  }
  throw std::logic_error("bad strategy enum");
}

UncertaintyScore uncertainty_lc(const ProbabilityVector& p) {
  p.validate();
  return UncertaintyScore{1.0 - p.max_entry()};
}

double accept_probability(const ProbabilityVector& p) {
  return uncertainty_lc(p).value;
}

SelectionBatch mraru_select_batch(const PoolState& state, const Pool& pool,
                                  const StudentModel& model,
                                  const StrategyConfig& cfg, Rng& rng) {
  if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (state.unlabeled_size() == 0) throw std::invalid_argument("empty pool");
  if (!model.fitted()) throw std::logic_error("model is not fitted");

  const int k = state.catalog().num_classes();
  const std::int64_t visit_budget =
      50LL * cfg.batch_size * static_cast<std::int64_t>(k);
  const std::size_t target =
      std::min<std::size_t>(cfg.batch_size, state.unlabeled_size());

  // Candidate positions into state.unlabeled(); accepted (and, under
  // defer_round, rejected) candidates drop out via swap-pop.
  std::vector<std::uint32_t> candidates(state.unlabeled_size());
  std::iota(candidates.begin(), candidates.end(), 0u);

  SelectionBatch batch;
  while (batch.accepted_ids.size() < target && !candidates.empty() &&
         batch.candidates_examined < visit_budget) {
    const std::size_t pos = rng.uniform_index(candidates.size());
    const std::string& id = state.unlabeled()[candidates[pos]];
    const ProbabilityVector pv = model.predict_one(pool.by_id(id).features);
    ++batch.candidates_examined;
    ++batch.student_inferences;
    const double p = accept_probability(pv);
    const bool accepted = rng.uniform() < p;
    if (accepted) {
      batch.accepted_ids.push_back(id);
    }
    if (accepted || cfg.rejected_policy == RejectedPolicy::kDeferRound) {
      candidates[pos] = candidates.back();
      candidates.pop_back();
    }
  }
  batch.exhausted = batch.accepted_ids.size() < target;
  return batch;
}

SelectionBatch random_select_batch(const PoolState& state,
                                   const StrategyConfig& cfg, Rng& rng) {
  if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (state.unlabeled_size() == 0) throw std::invalid_argument("empty pool");

  const std::size_t take =
      std::min<std::size_t>(cfg.batch_size, state.unlabeled_size());
  std::vector<std::uint32_t> candidates(state.unlabeled_size());
  std::iota(candidates.begin(), candidates.end(), 0u);

  SelectionBatch batch;
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t pos = rng.uniform_index(candidates.size());
    batch.accepted_ids.push_back(state.unlabeled()[candidates[pos]]);
    candidates[pos] = candidates.back();
    candidates.pop_back();
    ++batch.candidates_examined;
  }
  batch.exhausted = take < static_cast<std::size_t>(cfg.batch_size);
  return batch;
}

SelectionBatch exhaustive_lc_select_batch(const PoolState& state,
                                          const Pool& pool,
                                          const StudentModel& model,
                                          const StrategyConfig& cfg) {
  if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (state.unlabeled_size() == 0) throw std::invalid_argument("empty pool");
  if (!model.fitted()) throw std::logic_error("model is not fitted");

  std::vector<std::vector<double>> features;
  features.reserve(state.unlabeled_size());
  for (const auto& id : state.unlabeled()) {
    features.push_back(pool.by_id(id).features);
  }
  const auto posteriors = model.predict_proba(features);

  std::vector<std::pair<double, const std::string*>> scored;
  scored.reserve(posteriors.size());
  for (std::size_t i = 0; i < posteriors.size(); ++i) {
    scored.emplace_back(uncertainty_lc(posteriors[i]).value,
                        &state.unlabeled()[i]);
  }
  const std::size_t take =
      std::min<std::size_t>(cfg.batch_size, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + take, scored.end(),
                    [](const auto& a, const auto& b) {
                      if (a.first != b.first) return a.first > b.first;
                      return *a.second < *b.second;  // ties: lowest id
                    });

  SelectionBatch batch;
  batch.candidates_examined = static_cast<std::int64_t>(scored.size());
  batch.student_inferences = static_cast<std::int64_t>(scored.size());
  for (std::size_t i = 0; i < take; ++i) {
    batch.accepted_ids.push_back(*scored[i].second);
  }
  batch.exhausted = take < static_cast<std::size_t>(cfg.batch_size);
  return batch;
}

std::string randomized_uncertainty_select(const PoolState& state,
                                          const Pool& pool,
                                          const StudentModel& model, Rng& rng,
                                          std::int64_t* inferences) {
  if (state.unlabeled_size() == 0) throw std::invalid_argument("empty pool");
  if (!model.fitted()) throw std::logic_error("model is not fitted");

  std::vector<std::vector<double>> features;
  features.reserve(state.unlabeled_size());
  for (const auto& id : state.unlabeled()) {
    features.push_back(pool.by_id(id).features);
  }
  const auto posteriors = model.predict_proba(features);
  if (inferences) *inferences += static_cast<std::int64_t>(posteriors.size());

  std::vector<double> scores(posteriors.size());
  double total = 0.0;
  for (std::size_t i = 0; i < posteriors.size(); ++i) {
    scores[i] = uncertainty_lc(posteriors[i]).value;
    total += scores[i];
  }
  if (total <= 0.0) {
    throw std::runtime_error(
        "all uncertainties are zero; selection distribution undefined");
  }
  const double draw = rng.uniform() * total;
  double cum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    cum += scores[i];
    if (draw < cum) return state.unlabeled()[i];
  }
  // numeric edge: fall back to the last positive-score item
  for (std::size_t i = scores.size(); i-- > 0;) {
    if (scores[i] > 0.0) return state.unlabeled()[i];
  }
  throw std::logic_error("unreachable");
}

namespace {

struct EvalSet {
  std::vector<std::vector<double>> features;
  std::vector<int> gold;
};

EvalSet build_eval_set(const Pool& pool, const DatasetSplit& split) {
  EvalSet eval;
  for (const auto& id : split.eval_set) {
    const auto& item = pool.by_id(id);
    if (!item.gold_label) {
      throw std::invalid_argument("eval item without gold label: " + id);
    }
    eval.features.push_back(item.features);
    eval.gold.push_back(*item.gold_label);
  }
  return eval;
}

std::vector<LabeledExample> training_set(const Pool& pool,
                                         const PoolState& state) {
  std::vector<LabeledExample> data;
  data.reserve(state.labeled_size());
  for (const auto& [id, label] : state.labeled()) {
    data.push_back({pool.by_id(id).features, label});
  }
  return data;
}

void evaluate(const StudentModel& model, const EvalSet& eval, int num_classes,
              LedgerRow& row) {
  const auto posteriors = model.predict_proba(eval.features);
  ConfusionCounts confusion(num_classes);
  for (std::size_t i = 0; i < posteriors.size(); ++i) {
    const auto& p = posteriors[i].probs;
    const int pred = static_cast<int>(
        std::max_element(p.begin(), p.end()) - p.begin());  // ties: lowest
    confusion.add(eval.gold[i], pred);
  }
  row.accuracy = accuracy(confusion);
  row.balanced_accuracy = balanced_accuracy(confusion);
}

}  // namespace

RunLedger run_active_loop(const Pool& pool, const DatasetSplit& split,
                          const LoopConfig& cfg, TeacherOracle& oracle) {
  RunLedger ledger;
  run_active_loop(pool, split, cfg, oracle, ledger);
  return ledger;
}

void run_active_loop(const Pool& pool, const DatasetSplit& split,
                     const LoopConfig& cfg, TeacherOracle& oracle,
                     RunLedger& ledger) {
  const int k = pool.catalog().num_classes();
  if (cfg.label_budget < k) {
    throw std::invalid_argument("label budget smaller than class count");
  }
  if (cfg.eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");

  const EvalSet eval = build_eval_set(pool, split);
  if (eval.features.empty()) throw std::invalid_argument("empty eval set");

  PoolState state(split.train_pool, pool.catalog());
  Rng root(cfg.seed);
  Rng seeding_rng(root.split());
  Rng selection_rng(root.split());

  ledger.rows.clear();
  ledger.strategy = strategy_name(cfg.strategy.strategy);
  ledger.student = cfg.student_kind;
  ledger.seed = cfg.seed;

  // Class-coverage seeding, then the first student and evaluation.
  const std::size_t initial_unlabeled = state.unlabeled_size();
  const std::size_t seeded =
      seed_initial_labels(state, pool, oracle, seeding_rng);
  auto model = make_student(cfg.student_kind, k, cfg.train);
  model->fit(training_set(pool, state));
  {
    LedgerRow row;
    row.labels_spent = static_cast<std::int64_t>(seeded);
    row.candidates_examined = static_cast<std::int64_t>(seeded);
    row.student_inferences_selection = 0;
    row.oracle_calls = static_cast<std::int64_t>(seeded);
    row.unlabeled_at_start = static_cast<std::int64_t>(initial_unlabeled);
    evaluate(*model, eval, k, row);
    ledger.rows.push_back(row);
  }

  std::int64_t labels_spent = static_cast<std::int64_t>(seeded);
  LedgerRow pending{};  // counts accumulated since the last evaluated row
  int batches_since_eval = 0;

  while (labels_spent < cfg.label_budget && state.unlabeled_size() > 0) {
    StrategyConfig round_cfg = cfg.strategy;
    round_cfg.batch_size = static_cast<int>(std::min<std::int64_t>(
        round_cfg.batch_size, cfg.label_budget - labels_spent));

    const std::int64_t u_at_start =
        static_cast<std::int64_t>(state.unlabeled_size());
    SelectionBatch batch;
    switch (round_cfg.strategy) {
      case Strategy::kMraru:
        batch = mraru_select_batch(state, pool, *model, round_cfg,
                                   selection_rng);
        break;
      case Strategy::kRandom:
        batch = random_select_batch(state, round_cfg, selection_rng);
        break;
      case Strategy::kExhaustiveLc:
        batch = exhaustive_lc_select_batch(state, pool, *model, round_cfg);
        break;
      case Strategy::kRandomizedUncertainty:
        break;  // handled below: each draw rescans U with the current model
    }

    std::vector<std::pair<std::string, int>> labels;
    if (round_cfg.strategy == Strategy::kRandomizedUncertainty) {
      for (int i = 0; i < round_cfg.batch_size && state.unlabeled_size() > 0;
           ++i) {
        std::int64_t inf = 0;
        const std::string id = randomized_uncertainty_select(
            state, pool, *model, selection_rng, &inf);
        batch.candidates_examined += 1;
        batch.student_inferences += inf;
        const int label = oracle.label(pool.by_id(id));
        state.assign_label(id, label);
        labels.emplace_back(id, label);
      }
    } else {
      labels = oracle.label_batch(batch.accepted_ids, pool);
      for (const auto& [id, label] : labels) state.assign_label(id, label);
    }

    pending.candidates_examined += batch.candidates_examined;
    pending.student_inferences_selection += batch.student_inferences;
    pending.oracle_calls += static_cast<std::int64_t>(labels.size());
    pending.unlabeled_at_start += u_at_start;
    labels_spent += static_cast<std::int64_t>(labels.size());
    ++batches_since_eval;

    if (labels.empty()) break;  // confident-everywhere pathology; no progress

    // Retrain from scratch on L, then evaluate on schedule.
    model = make_student(cfg.student_kind, k, cfg.train);
    model->fit(training_set(pool, state));

    const bool done =
        labels_spent >= cfg.label_budget || state.unlabeled_size() == 0;
    if (batches_since_eval >= cfg.eval_every || done) {
      LedgerRow row = pending;
      row.labels_spent = labels_spent;
      evaluate(*model, eval, k, row);
      ledger.rows.push_back(row);
      pending = LedgerRow{};
      batches_since_eval = 0;
    }
  }

  // A trailing partial window (e.g. a zero-acceptance final batch) still
  // gets its counts recorded against the current model.
  if (pending.candidates_examined > 0 || pending.oracle_calls > 0) {
    LedgerRow row = pending;
    row.labels_spent = labels_spent;
    evaluate(*model, eval, k, row);
    if (!ledger.rows.empty() &&
        ledger.rows.back().labels_spent == row.labels_spent) {
      auto& last = ledger.rows.back();
      last.candidates_examined += row.candidates_examined;
      last.student_inferences_selection += row.student_inferences_selection;
      last.oracle_calls += row.oracle_calls;
      last.unlabeled_at_start += row.unlabeled_at_start;
    } else {
      ledger.rows.push_back(row);
    }
  }

  state.check_invariants();
}

}  // namespace mraru
