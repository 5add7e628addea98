#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mraru/dataset.hpp"
#include "mraru/metrics.hpp"
#include "mraru/oracle.hpp"
#include "mraru/sampling.hpp"
#include "mraru/students.hpp"

namespace mraru {

struct DatasetSource {
  std::string file;                      // one of file / synthetic
  std::optional<SyntheticSpec> synthetic;
};

struct OracleConfig {
  std::string mode = "replay";  // replay | llm
  double noise_rate = 0.0;
  LlmOracleConfig llm;
};

struct ExperimentConfig {
  DatasetSource dataset;
  double eval_fraction = 0.2;
  std::uint64_t split_seed = 1;
  std::string student_kind = "logistic";
  TrainConfig train;
  std::vector<StrategyConfig> strategies;
  OracleConfig oracle;
  std::int64_t label_budget = 100;
  int eval_every = 1;
  std::vector<std::uint64_t> seeds;
  std::vector<double> thresholds;
  Metric threshold_metric = Metric::kAccuracy;
  int parallelism = 0;  // 0: hardware concurrency
  std::string digest;   // stable digest of the parsed document
};

// Parses and validates a config document. All validation failures are
// collected and reported together; unknown keys are errors.
ExperimentConfig load_experiment_config(const std::string& path);

struct ExperimentResult {
  std::vector<RunLedger> ledgers;
  std::string curve_file;
  std::string summary_file;
  std::string manifest_file;
};

// Executes every (strategy x seed) cell, writing one ledger file per cell,
// a combined curve CSV, a labels-to-threshold summary, and a manifest of
// produced files with digests, all under out_dir.
ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const std::string& out_dir);

struct CompareCell {
  std::string student;
  double threshold = 0.0;
  std::string strategy;
  std::optional<std::int64_t> median_labels;  // nullopt: not reached
  std::int64_t censor_at = 0;                 // budget used for censored runs
};

struct CompareTable {
  std::vector<CompareCell> cells;
  // Percent reduction of mraru vs random per (student, threshold); the
  // bool marks a censored comparison (random never reached the threshold).
  struct Reduction {
    std::string student;
    double threshold;
    double percent;
    bool censored;
  };
  std::vector<Reduction> reductions;
};

CompareTable compare_curves(const std::string& curve_path,
                            const std::vector<double>& thresholds,
                            Metric metric = Metric::kAccuracy);

std::string render_compare_table(const CompareTable& table);

// FNV-1a 64-bit hex digest, used for run ids and the output manifest.
std::string digest_hex(const std::string& bytes);

}  // namespace mraru
