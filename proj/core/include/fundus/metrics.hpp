#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fundus::train {

// Counts with macular_degeneration as the positive class.
struct ConfusionMatrix {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const noexcept { return tp + tn + fp + fn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

struct ClassScores {
  double precision = 0.0;
  double sensitivity = 0.0;
  double f1 = 0.0;

  bool operator==(const ClassScores&) const = default;
};

struct MetricsReport {
  std::string model;
  double train_ratio = 0.0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  ConfusionMatrix confusion;
  ClassScores healthy;
  ClassScores macular_degeneration;

  bool operator==(const MetricsReport&) const = default;
};

// Scores for a class given its own tp/fp/fn. Zero denominators give 0.
ClassScores class_scores(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn);

// Accuracy = (TP + TN) / (TP + TN + FP + FN); precision, sensitivity and F1 for
// each class taken as positive in turn. Throws on an empty matrix.
MetricsReport metrics_from_confusion(const ConfusionMatrix& cm, std::string model = {}, double train_ratio = 0.0,
                                     std::uint64_t seed = 0);

std::string report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const std::string& text);
std::string reports_to_json(std::span<const MetricsReport> reports);
std::vector<MetricsReport> reports_from_json(const std::string& text);

// One aligned row per report, in input order, scores to three decimals.
std::string render_table(std::span<const MetricsReport> reports);

}  // namespace fundus::train
