#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mraru/dataset.hpp"
#include "mraru/harness.hpp"

namespace {

int cmd_generate(const mraru::SyntheticSpec& spec, const std::string& out) {
  const mraru::Pool pool = mraru::generate_synthetic(spec);
  mraru::save_pool(pool, out);
  std::cout << "wrote " << pool.size() << " items (" << pool.dim()
            << "-dimensional, " << pool.catalog().num_classes()
            << " classes) to " << out << "\n";
  return 0;
}

int cmd_run(const std::string& config_path, const std::string& out_dir) {
  const auto cfg = mraru::load_experiment_config(config_path);
  const auto result = mraru::run_experiment(cfg, out_dir);
  std::cout << result.ledgers.size() << " runs complete\n"
            << "curves:   " << result.curve_file << "\n"
            << "summary:  " << result.summary_file << "\n"
            << "manifest: " << result.manifest_file << "\n";
  return 0;
}

int cmd_compare(const std::string& curve_path,
                const std::vector<double>& thresholds,
                const std::string& metric_name) {
  const mraru::Metric metric = metric_name == "balanced_accuracy"
                                   ? mraru::Metric::kBalancedAccuracy
                                   : mraru::Metric::kAccuracy;
  const auto table = mraru::compare_curves(curve_path, thresholds, metric);
  std::cout << mraru::render_compare_table(table);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"active knowledge distillation: M-RARU sampling harness"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "write a synthetic dataset file");
  mraru::SyntheticSpec spec;
  int per_class = 0;
  std::string gen_out = "dataset.jsonl";
  gen->add_option("--classes", spec.num_classes, "number of classes")
      ->check(CLI::Range(2, 1000));
  gen->add_option("--dim", spec.dim, "embedding dimension")
      ->check(CLI::PositiveNumber);
  gen->add_option("--per-class", per_class, "items per class")
      ->required()
      ->check(CLI::PositiveNumber);
  gen->add_option("--sep", spec.class_mean_separation, "class mean separation");
  gen->add_option("--sigma", spec.noise_sigma, "isotropic noise sigma")
      ->check(CLI::PositiveNumber);
  gen->add_option("--seed", spec.seed, "generator seed");
  gen->add_option("--out", gen_out, "output file");

  // run
  auto* run = app.add_subcommand("run", "execute an experiment config");
  std::string config_path;
  std::string out_dir = "out";
  run->add_option("--config", config_path, "experiment config file")
      ->required()
      ->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "output directory");

  // compare
  auto* cmp = app.add_subcommand("compare",
                                 "labels-to-threshold comparison from curves");
  std::string curve_path;
  std::vector<double> thresholds;
  std::string metric_name = "accuracy";
  cmp->add_option("--curves", curve_path, "curve CSV from a run")
      ->required()
      ->check(CLI::ExistingFile);
  cmp->add_option("--threshold", thresholds, "metric thresholds")
      ->required();
  cmp->add_option("--metric", metric_name, "accuracy or balanced_accuracy")
      ->check(CLI::IsMember({"accuracy", "balanced_accuracy"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      spec.per_class_counts.assign(spec.num_classes, per_class);
      return cmd_generate(spec, gen_out);
    }
    if (*run) return cmd_run(config_path, out_dir);
    if (*cmp) return cmd_compare(curve_path, thresholds, metric_name);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
