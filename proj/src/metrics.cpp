#include "mraru/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace mraru {

ConfusionCounts::ConfusionCounts(int num_classes) : k_(num_classes) {
  if (num_classes < 2) throw std::invalid_argument("need K >= 2");
  counts_.assign(static_cast<std::size_t>(k_) * k_, 0);
}

void ConfusionCounts::add(int true_class, int predicted_class,
                          std::int64_t count) {
  if (true_class < 0 || true_class >= k_ || predicted_class < 0 ||
      predicted_class >= k_) {
    throw std::out_of_range("confusion index out of range");
  }
  if (count < 0) throw std::invalid_argument("negative confusion count");
  counts_[static_cast<std::size_t>(true_class) * k_ + predicted_class] += count;
}

std::int64_t ConfusionCounts::at(int true_class, int predicted_class) const {
  if (true_class < 0 || true_class >= k_ || predicted_class < 0 ||
      predicted_class >= k_) {
    throw std::out_of_range("confusion index out of range");
  }
  return counts_[static_cast<std::size_t>(true_class) * k_ + predicted_class];
}

std::int64_t ConfusionCounts::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0});
}

double accuracy(const ConfusionCounts& c) {
  const std::int64_t total = c.total();
  if (total == 0) throw std::invalid_argument("empty confusion matrix");
  std::int64_t correct = 0;
  for (int i = 0; i < c.num_classes(); ++i) correct += c.at(i, i);
  return static_cast<double>(correct) / static_cast<double>(total);
}

double balanced_accuracy(const ConfusionCounts& c, int* excluded_classes) {
  double recall_sum = 0.0;
  int supported = 0;
  for (int i = 0; i < c.num_classes(); ++i) {
    std::int64_t row = 0;
    for (int j = 0; j < c.num_classes(); ++j) row += c.at(i, j);
    if (row == 0) continue;
    recall_sum += static_cast<double>(c.at(i, i)) / static_cast<double>(row);
    ++supported;
  }
  if (supported == 0) throw std::invalid_argument("no class has support");
  if (excluded_classes) *excluded_classes = c.num_classes() - supported;
  return recall_sum / supported;
}

EfficiencyReport efficiency_report(
    const RunLedger& ledger,
    const std::vector<std::int64_t>& pool_size_per_batch) {
  std::int64_t examined = 0;
  std::int64_t accepted = 0;
  std::int64_t prev_labels = 0;
  for (const auto& row : ledger.rows) {
    examined += row.candidates_examined;
    accepted += row.labels_spent - prev_labels;
    prev_labels = row.labels_spent;
  }
  if (examined == 0) throw std::invalid_argument("zero candidates examined");
  EfficiencyReport rep;
  rep.acceptance_rate =
      static_cast<double>(accepted) / static_cast<double>(examined);
  rep.mraru_inferences = examined;
  rep.exhaustive_inferences_equivalent = std::accumulate(
      pool_size_per_batch.begin(), pool_size_per_batch.end(), std::int64_t{0});
  rep.speedup = static_cast<double>(rep.exhaustive_inferences_equivalent) /
                static_cast<double>(rep.mraru_inferences);
  return rep;
}

std::optional<std::int64_t> labels_to_threshold(const RunLedger& ledger,
                                                double target, Metric metric) {
  for (const auto& row : ledger.rows) {
    const double v =
        metric == Metric::kAccuracy ? row.accuracy : row.balanced_accuracy;
    if (v >= target) return row.labels_spent;
  }
  return std::nullopt;
}

namespace {

// 6 significant digits, locale-independent.
std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

const char* kCurveHeader =
    "run_id,strategy,student,seed,labels_spent,accuracy,balanced_accuracy,"
    "candidates_examined,selection_inferences,oracle_calls";

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  return out;
}

}  // namespace

void emit_curves(const std::vector<RunLedger>& ledgers,
                 const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write curve file: " + path);
  out << kCurveHeader << "\n";
  for (const auto& ledger : ledgers) {
    for (const auto& row : ledger.rows) {
      out << ledger.run_id << ',' << ledger.strategy << ',' << ledger.student
          << ',' << ledger.seed << ',' << row.labels_spent << ','
          << format_real(row.accuracy) << ','
          << format_real(row.balanced_accuracy) << ','
          << row.candidates_examined << ',' << row.student_inferences_selection
          << ',' << row.oracle_calls << "\n";
    }
  }
}

std::vector<RunLedger> read_curves(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open curve file: " + path);
  std::string line;
  if (!std::getline(in, line) || line != kCurveHeader) {
    throw std::runtime_error("curve file has an unexpected header: " + path);
  }
  std::map<std::string, RunLedger> by_run;
  std::vector<std::string> run_order;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 10) {
      throw std::runtime_error("curve file line " + std::to_string(line_no) +
                               ": expected 10 fields");
    }
    try {
      auto& ledger = by_run[fields[0]];
      if (ledger.run_id.empty()) {
        ledger.run_id = fields[0];
        ledger.strategy = fields[1];
        ledger.student = fields[2];
        ledger.seed = std::stoull(fields[3]);
        run_order.push_back(fields[0]);
      }
      LedgerRow row;
      row.labels_spent = std::stoll(fields[4]);
      row.accuracy = std::stod(fields[5]);
      row.balanced_accuracy = std::stod(fields[6]);
      row.candidates_examined = std::stoll(fields[7]);
      row.student_inferences_selection = std::stoll(fields[8]);
      row.oracle_calls = std::stoll(fields[9]);
      ledger.rows.push_back(row);
    } catch (const std::invalid_argument&) {
      throw std::runtime_error("curve file line " + std::to_string(line_no) +
                               ": unparseable field");
    }
  }
  std::vector<RunLedger> out;
  out.reserve(run_order.size());
  for (const auto& id : run_order) out.push_back(std::move(by_run[id]));
  return out;
}

}  // namespace mraru
