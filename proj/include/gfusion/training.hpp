#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gfusion/data.hpp"
#include "gfusion/fusion_model.hpp"
#include "gfusion/metrics.hpp"

namespace gfusion {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double dropout = 0.3;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t shared_dim = 1024;
  std::size_t proj_dim = 256;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Strict: unknown keys and out-of-range values are rejected. Missing keys
// keep their defaults.
nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Candidate lists per axis. Enumeration is the cartesian product with the
// first axis outermost: dropout, learning_rate, batch_size, shared_dim,
// proj_dim, max_epochs, patience. Config i gets seed = seed ^ i.
struct HyperGrid {
  std::vector<double> dropout{0.2, 0.3, 0.4};
  std::vector<double> learning_rate{1e-3, 1e-4};
  std::vector<std::size_t> batch_size{32, 64, 128};
  std::vector<std::size_t> shared_dim{1024, 2048, 4096};
  std::vector<std::size_t> proj_dim{256, 1024};
  std::vector<std::size_t> max_epochs{100};
  std::vector<std::size_t> patience{10};
  std::uint64_t seed = 0;

  std::size_t size() const;
  std::vector<TrainConfig> enumerate() const;
};

nlohmann::json to_json(const HyperGrid& g);
HyperGrid hyper_grid_from_json(const nlohmann::json& j);

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  FusionParams first_moment;
  FusionParams second_moment;
  std::uint64_t step = 0;

  static OptimizerState fresh(const ModelShape& shape);
};

// Bias-corrected Adam. Throws TrainError naming the block when a gradient is
// not finite; parameters are untouched in that case.
void adam_step(FusionParams& p, const Gradients& g, OptimizerState& s, double lr,
               const AdamSettings& settings = {});

enum class StopReason { patience, max_epochs };

// Entry e (0-based) describes epoch e + 1. Epoch 0 is the untrained model,
// whose validation F1 is the baseline that the first epoch must beat.
struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> train_accuracy;
  std::vector<double> val_f1;
  double initial_val_f1 = 0.0;
  std::size_t best_epoch = 0;
  double best_val_f1 = 0.0;
  StopReason stop = StopReason::max_epochs;

  std::size_t epochs() const { return val_f1.size(); }
  friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

nlohmann::json to_json(const TrainHistory& h);

struct TrainResult {
  FusionParams params;  // parameters of the best validation epoch
  TrainHistory history;
};

TrainResult train(const Manifest& dataset, const ModalitySet& modalities,
                  const TrainConfig& cfg);

struct SplitPredictions {
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<int> preds;
  std::vector<double> scores;  // probability of class 1
};

SplitPredictions predict(const FusionParams& p, const Manifest& dataset, Split split);
MetricsReport evaluate(const FusionParams& p, const Manifest& dataset, Split split);

struct GridRun {
  std::size_t index = 0;
  TrainConfig config;
  std::optional<TrainHistory> history;  // empty when the run failed
  std::string error;

  bool ok() const { return history.has_value(); }
  double val_f1() const { return history ? history->best_val_f1 : -1.0; }
};

struct GridOptions {
  std::size_t jobs = 1;
  // Called once per finished config, serialised across workers.
  std::function<void(const GridRun&, const FusionParams*)> on_run;
};

struct GridResult {
  std::vector<GridRun> runs;  // by config index
  std::size_t best_index = 0;
  TrainConfig best_config;
  FusionParams best_params;
};

// Best = max validation weighted F1; ties go to the earliest config. Failed
// configs are recorded; throws only if every config fails.
GridResult grid_search(const Manifest& dataset, const ModalitySet& modalities,
                       const HyperGrid& grid, const GridOptions& opts = {});

}  // namespace gfusion
