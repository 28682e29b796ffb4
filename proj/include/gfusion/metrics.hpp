#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gfusion/data.hpp"

namespace gfusion {

class MetricsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary confusion counts; class 1 (sarcastic) is positive.
struct ConfusionMatrix {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  double accuracy() const;
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
  friend bool operator==(const ClassMetrics&, const ClassMetrics&) = default;
};

struct MetricsReport {
  double precision = 0.0;  // support-weighted
  double recall = 0.0;
  double f1 = 0.0;
  ClassMetrics negative;  // class 0
  ClassMetrics positive;  // class 1
  ConfusionMatrix confusion;
  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

nlohmann::json to_json(const MetricsReport& r);
MetricsReport metrics_report_from_json(const nlohmann::json& j);

ConfusionMatrix confusion(std::span<const int> labels, std::span<const int> preds);

// Per-class P/R/F1 with 0/0 := 0, averaged with class-support weights.
MetricsReport weighted_prf(const ConfusionMatrix& c);

struct Prediction {
  std::string id;
  int pred = 0;
  std::optional<double> score;
};

// Line-delimited {"id":..., "pred":0|1, "score":x?}.
std::vector<Prediction> load_predictions(const std::filesystem::path& path);

struct ScoreResult {
  MetricsReport report;
  std::size_t scored = 0;    // ids joined
  std::size_t expected = 0;  // ids in the split
};

// Joins predictions to the split's labels by id. Errors on split ids missing
// from the predictions (lists up to 10), ids unknown to the manifest, or
// duplicates. Predictions for records of other splits are ignored.
ScoreResult score_predictions(const Manifest& manifest,
                              std::span<const Prediction> predictions, Split split);
ScoreResult score_predictions(const Manifest& manifest,
                              const std::filesystem::path& predictions_path,
                              Split split);

// "78.2" style: value * 100 with one decimal.
std::string percent(double value);

enum class ReportFormat { markdown, csv };

// Rows sorted by experiment tag; columns experiment, P, R, F1.
std::string render_report(std::vector<std::pair<std::string, MetricsReport>> results,
                          ReportFormat format);
void emit_report(const std::vector<std::pair<std::string, MetricsReport>>& results,
                 ReportFormat format, const std::filesystem::path& path);

}  // namespace gfusion
