#include "gfusion/training.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include "gfusion/rng.hpp"

namespace gfusion {

using json = nlohmann::json;

// ---------------------------------------------------------------- config I/O

void TrainConfig::validate() const {
  if (!(dropout >= 0.0 && dropout < 1.0)) throw TrainError("dropout must be in [0, 1)");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw TrainError("learning_rate must be finite and non-negative");
  }
  if (batch_size == 0) throw TrainError("batch_size must be positive");
  if (shared_dim == 0) throw TrainError("shared_dim must be positive");
  if (proj_dim == 0) throw TrainError("proj_dim must be positive");
  if (max_epochs == 0) throw TrainError("max_epochs must be positive");
  if (patience == 0) throw TrainError("patience must be positive");
}

json to_json(const TrainConfig& c) {
  return json{{"dropout", c.dropout},       {"learning_rate", c.learning_rate},
              {"batch_size", c.batch_size}, {"shared_dim", c.shared_dim},
              {"proj_dim", c.proj_dim},     {"max_epochs", c.max_epochs},
              {"patience", c.patience},     {"seed", c.seed}};
}

namespace {

const std::set<std::string>& config_keys() {
  static const std::set<std::string> keys{"dropout",  "learning_rate", "batch_size",
                                          "shared_dim", "proj_dim",    "max_epochs",
                                          "patience", "seed"};
  return keys;
}

void reject_unknown(const json& j, const char* what) {
  if (!j.is_object()) throw TrainError(std::string(what) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!config_keys().count(key)) {
      throw TrainError(std::string(what) + ": unknown key '" + key + "'");
    }
  }
}

double as_real(const json& v, const std::string& key) {
  if (!v.is_number()) throw TrainError("'" + key + "' must be a number");
  return v.get<double>();
}

bool non_negative_integer(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

std::size_t as_count(const json& v, const std::string& key) {
  if (!non_negative_integer(v)) throw TrainError("'" + key + "' must be a non-negative integer");
  return v.get<std::size_t>();
}

std::uint64_t as_seed(const json& v) {
  if (!non_negative_integer(v)) throw TrainError("'seed' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

template <typename T, typename Convert>
std::vector<T> as_list(const json& v, const std::string& key, Convert convert) {
  std::vector<T> out;
  if (v.is_array()) {
    for (const auto& x : v) out.push_back(convert(x, key));
  } else {
    out.push_back(convert(v, key));
  }
  if (out.empty()) throw TrainError("grid axis '" + key + "' is empty");
  return out;
}

}  // namespace

TrainConfig train_config_from_json(const json& j) {
  reject_unknown(j, "config");
  TrainConfig c;
  if (j.contains("dropout")) c.dropout = as_real(j["dropout"], "dropout");
  if (j.contains("learning_rate")) c.learning_rate = as_real(j["learning_rate"], "learning_rate");
  if (j.contains("batch_size")) c.batch_size = as_count(j["batch_size"], "batch_size");
  if (j.contains("shared_dim")) c.shared_dim = as_count(j["shared_dim"], "shared_dim");
  if (j.contains("proj_dim")) c.proj_dim = as_count(j["proj_dim"], "proj_dim");
  if (j.contains("max_epochs")) c.max_epochs = as_count(j["max_epochs"], "max_epochs");
  if (j.contains("patience")) c.patience = as_count(j["patience"], "patience");
  if (j.contains("seed")) c.seed = as_seed(j["seed"]);
  c.validate();
  return c;
}

std::size_t HyperGrid::size() const {
  return dropout.size() * learning_rate.size() * batch_size.size() * shared_dim.size() *
         proj_dim.size() * max_epochs.size() * patience.size();
}

std::vector<TrainConfig> HyperGrid::enumerate() const {
  if (size() == 0) throw TrainError("hyperparameter grid has an empty axis");
  std::vector<TrainConfig> out;
  out.reserve(size());
  for (double d : dropout)
    for (double lr : learning_rate)
      for (std::size_t b : batch_size)
        for (std::size_t s : shared_dim)
          for (std::size_t pd : proj_dim)
            for (std::size_t e : max_epochs)
              for (std::size_t pat : patience) {
                TrainConfig c{d, lr, b, s, pd, e, pat, seed ^ out.size()};
                c.validate();
                out.push_back(c);
              }
  return out;
}

json to_json(const HyperGrid& g) {
  return json{{"dropout", g.dropout},       {"learning_rate", g.learning_rate},
              {"batch_size", g.batch_size}, {"shared_dim", g.shared_dim},
              {"proj_dim", g.proj_dim},     {"max_epochs", g.max_epochs},
              {"patience", g.patience},     {"seed", g.seed}};
}

HyperGrid hyper_grid_from_json(const json& j) {
  reject_unknown(j, "grid");
  HyperGrid g;
  if (j.contains("dropout")) g.dropout = as_list<double>(j["dropout"], "dropout", as_real);
  if (j.contains("learning_rate")) {
    g.learning_rate = as_list<double>(j["learning_rate"], "learning_rate", as_real);
  }
  if (j.contains("batch_size")) {
    g.batch_size = as_list<std::size_t>(j["batch_size"], "batch_size", as_count);
  }
  if (j.contains("shared_dim")) {
    g.shared_dim = as_list<std::size_t>(j["shared_dim"], "shared_dim", as_count);
  }
  if (j.contains("proj_dim")) {
    g.proj_dim = as_list<std::size_t>(j["proj_dim"], "proj_dim", as_count);
  }
  if (j.contains("max_epochs")) {
    g.max_epochs = as_list<std::size_t>(j["max_epochs"], "max_epochs", as_count);
  }
  if (j.contains("patience")) {
    g.patience = as_list<std::size_t>(j["patience"], "patience", as_count);
  }
  if (j.contains("seed")) g.seed = as_seed(j["seed"]);
  g.enumerate();  // validates every combination
  return g;
}

// ----------------------------------------------------------------- optimizer

OptimizerState OptimizerState::fresh(const ModelShape& shape) {
  return {FusionParams::zeros(shape), FusionParams::zeros(shape), 0};
}

void adam_step(FusionParams& p, const Gradients& g, OptimizerState& s, double lr,
               const AdamSettings& settings) {
  if (!(p.shape == g.shape) || !(p.shape == s.first_moment.shape)) {
    throw TrainError("adam_step: parameter, gradient and state shapes differ");
  }
  g.for_each_block([](const std::string& name, std::size_t, std::size_t,
                      std::span<const double> v) {
    if (!all_finite(v)) throw TrainError("non-finite gradient in block " + name);
  });

  ++s.step;
  const double t = static_cast<double>(s.step);
  const double correction1 = 1.0 - std::pow(settings.beta1, t);
  const double correction2 = 1.0 - std::pow(settings.beta2, t);

  std::vector<std::span<const double>> grads;
  g.for_each_block([&](const std::string&, std::size_t, std::size_t,
                       std::span<const double> v) { grads.push_back(v); });
  std::vector<std::span<double>> firsts;
  s.first_moment.for_each_block([&](const std::string&, std::size_t, std::size_t,
                                    std::span<double> v) { firsts.push_back(v); });
  std::vector<std::span<double>> seconds;
  s.second_moment.for_each_block([&](const std::string&, std::size_t, std::size_t,
                                     std::span<double> v) { seconds.push_back(v); });
  std::size_t block = 0;
  p.for_each_block([&](const std::string&, std::size_t, std::size_t,
                       std::span<double> w) {
    const auto gb = grads[block];
    const auto mb = firsts[block];
    const auto vb = seconds[block];
    for (std::size_t i = 0; i < w.size(); ++i) {
      mb[i] = settings.beta1 * mb[i] + (1.0 - settings.beta1) * gb[i];
      vb[i] = settings.beta2 * vb[i] + (1.0 - settings.beta2) * gb[i] * gb[i];
      const double m_hat = mb[i] / correction1;
      const double v_hat = vb[i] / correction2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + settings.epsilon);
    }
    ++block;
  });
}

// ------------------------------------------------------------------ training

json to_json(const TrainHistory& h) {
  return json{{"train_loss", h.train_loss},
              {"train_accuracy", h.train_accuracy},
              {"val_f1", h.val_f1},
              {"initial_val_f1", h.initial_val_f1},
              {"best_epoch", h.best_epoch},
              {"best_val_f1", h.best_val_f1},
              {"epochs", h.epochs()},
              {"stop", h.stop == StopReason::patience ? "patience" : "max_epochs"}};
}

namespace {

// Samples of one split, widened once up front.
struct Examples {
  std::vector<const EmbeddingRecord*> records;
  std::vector<ModalityInputs> inputs;
  std::vector<std::string_view> ids;

  std::size_t size() const { return records.size(); }
};

Examples examples_for(const Manifest& dataset, Split split, const ModelShape& shape) {
  Examples out;
  for (const EmbeddingRecord* r : dataset.split(split)) {
    out.records.push_back(r);
    out.inputs.push_back(inputs_from(*r, shape));
    out.ids.push_back(r->id);
  }
  return out;
}

// eval-mode passes go through the model this many samples at a time
constexpr std::size_t kEvalChunk = 64;

template <typename Fn>
void for_each_output(const FusionParams& p, const Examples& xs, Fn&& fn) {
  for (std::size_t start = 0; start < xs.size(); start += kEvalChunk) {
    const std::size_t n = std::min(kEvalChunk, xs.size() - start);
    const auto caches = forward_batch(std::span(xs.inputs).subspan(start, n), p, {},
                                      std::span(xs.ids).subspan(start, n));
    for (std::size_t b = 0; b < n; ++b) fn(start + b, caches[b]);
  }
}

ConfusionMatrix confusion_of(const FusionParams& p, const Examples& xs) {
  std::vector<int> labels(xs.size());
  std::vector<int> preds(xs.size());
  for_each_output(p, xs, [&](std::size_t i, const ForwardCache& c) {
    labels[i] = xs.records[i]->label;
    preds[i] = c.predicted();
  });
  return confusion(labels, preds);
}

ModelShape checked_shape(const Manifest& dataset, const ModalitySet& modalities,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (modalities.empty()) throw TrainError("no modalities requested");
  for (Modality m : modalities.members()) {
    if (!dataset.schema[index_of(m)]) {
      throw TrainError("dataset '" + dataset.dataset + "' has no " + name_of(m) +
                       " modality");
    }
  }
  const SplitCounts counts = dataset.split_counts();
  if (counts.train == 0) throw TrainError("dataset has no train split");
  if (counts.val == 0) throw TrainError("dataset has no val split");
  return shape_for(dataset, modalities, cfg.shared_dim, cfg.proj_dim);
}

}  // namespace

TrainResult train(const Manifest& dataset, const ModalitySet& modalities,
                  const TrainConfig& cfg) {
  const ModelShape shape = checked_shape(dataset, modalities, cfg);
  const Examples train_set = examples_for(dataset, Split::train, shape);
  const Examples val_set = examples_for(dataset, Split::val, shape);

  FusionParams params = FusionParams::glorot(shape, mix_seed(cfg.seed, 0));
  Rng shuffle_rng(mix_seed(cfg.seed, 1));
  Rng dropout_rng(mix_seed(cfg.seed, 2));
  OptimizerState state = OptimizerState::fresh(shape);
  Gradients grads = FusionParams::zeros(shape);

  TrainResult result;
  TrainHistory& h = result.history;
  h.initial_val_f1 = weighted_prf(confusion_of(params, val_set)).f1;
  h.best_val_f1 = h.initial_val_f1;
  h.best_epoch = 0;
  result.params = params;

  const ForwardOptions train_mode{Mode::train, cfg.dropout, &dropout_rng};
  std::vector<std::size_t> order(train_set.size());
  std::size_t since_best = 0;
  h.stop = StopReason::max_epochs;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }
    double loss_sum = 0.0;
    std::vector<ModalityInputs> batch;
    std::vector<std::string_view> ids;
    std::vector<int> labels;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      ids.clear();
      labels.clear();
      for (std::size_t k = start; k < end; ++k) {
        batch.push_back(train_set.inputs[order[k]]);
        ids.push_back(train_set.ids[order[k]]);
        labels.push_back(train_set.records[order[k]]->label);
      }
      const auto caches = forward_batch(batch, params, train_mode, ids);
      for (std::size_t b = 0; b < caches.size(); ++b) loss_sum += loss(caches[b].probs, labels[b]);
      grads.fill(0.0);
      accumulate_backward_batch(caches, labels, params, grads,
                                1.0 / static_cast<double>(end - start));
      adam_step(params, grads, state, cfg.learning_rate);
    }
    h.train_loss.push_back(loss_sum / static_cast<double>(order.size()));
    h.train_accuracy.push_back(confusion_of(params, train_set).accuracy());
    const double val_f1 = weighted_prf(confusion_of(params, val_set)).f1;
    h.val_f1.push_back(val_f1);
    if (val_f1 > h.best_val_f1) {
      h.best_val_f1 = val_f1;
      h.best_epoch = epoch;
      result.params = params;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      h.stop = StopReason::patience;
      break;
    }
  }
  return result;
}

SplitPredictions predict(const FusionParams& p, const Manifest& dataset, Split split) {
  const Examples xs = examples_for(dataset, split, p.shape);
  SplitPredictions out;
  out.ids.assign(xs.ids.begin(), xs.ids.end());
  out.labels.resize(xs.size());
  out.preds.resize(xs.size());
  out.scores.resize(xs.size());
  for_each_output(p, xs, [&](std::size_t i, const ForwardCache& c) {
    out.labels[i] = xs.records[i]->label;
    out.preds[i] = c.predicted();
    out.scores[i] = c.probs[1];
  });
  return out;
}

MetricsReport evaluate(const FusionParams& p, const Manifest& dataset, Split split) {
  const SplitPredictions sp = predict(p, dataset, split);
  if (sp.ids.empty()) {
    throw TrainError("split " + std::string(split_name(split)) + " is empty");
  }
  return weighted_prf(confusion(sp.labels, sp.preds));
}

// --------------------------------------------------------------- grid search

GridResult grid_search(const Manifest& dataset, const ModalitySet& modalities,
                       const HyperGrid& grid, const GridOptions& opts) {
  const std::vector<TrainConfig> configs = grid.enumerate();
  GridResult result;
  result.runs.resize(configs.size());
  std::optional<std::size_t> best;
  std::mutex mu;
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= configs.size()) return;
      GridRun run;
      run.index = i;
      run.config = configs[i];
      std::optional<FusionParams> params;
      try {
        TrainResult tr = train(dataset, modalities, configs[i]);
        run.history = std::move(tr.history);
        params = std::move(tr.params);
      } catch (const std::exception& e) {
        run.error = e.what();
      }
      std::lock_guard lock(mu);
      if (opts.on_run) opts.on_run(run, params ? &*params : nullptr);
      if (run.ok()) {
        const bool better =
            !best || run.val_f1() > result.runs[*best].val_f1() ||
            (run.val_f1() == result.runs[*best].val_f1() && i < *best);
        if (better) {
          best = i;
          result.best_params = std::move(*params);
        }
      }
      result.runs[i] = std::move(run);
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(opts.jobs, configs.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  if (!best) {
    throw TrainError("every grid configuration failed; first error: " +
                     result.runs.front().error);
  }
  result.best_index = *best;
  result.best_config = configs[*best];
  return result;
}

}  // namespace gfusion
