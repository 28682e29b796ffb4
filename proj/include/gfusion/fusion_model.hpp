#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gfusion/data.hpp"
#include "gfusion/modality.hpp"
#include "gfusion/numerics.hpp"
#include "gfusion/rng.hpp"

namespace gfusion {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Affine layer y = W x + b with W stored out x in, row-major.
struct Dense {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  Dense() = default;
  Dense(std::size_t in_dim, std::size_t out_dim)
      : in(in_dim), out(out_dim), weight(in_dim * out_dim, 0.0), bias(out_dim, 0.0) {}

  std::span<const double> row(std::size_t i) const {
    return {weight.data() + i * in, in};
  }
  Vector apply(std::span<const double> x) const;

  // grad.weight += delta ⊗ x, grad.bias += delta.
  void accumulate(std::span<const double> x, std::span<const double> delta,
                  Dense& grad) const;
  // Wᵀ delta
  Vector transpose_apply(std::span<const double> delta) const;

  // Same arithmetic as the single-vector forms, but each weight row is
  // visited once for the whole batch. Results match sample-by-sample calls
  // bit for bit.
  std::vector<Vector> apply_batch(std::span<const std::span<const double>> xs) const;
  void accumulate_batch(std::span<const std::span<const double>> xs,
                        std::span<const Vector> deltas, Dense& grad) const;
  std::vector<Vector> transpose_apply_batch(std::span<const Vector> deltas) const;

  friend bool operator==(const Dense&, const Dense&) = default;
};

struct ModelShape {
  std::size_t shared_dim = 0;
  std::size_t proj_dim = 0;
  std::array<std::size_t, kModalityCount> raw_dims{};  // 0 = modality inactive

  ModalitySet modalities() const;
  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

// Shape of a model over `mods` with input widths taken from the manifest.
ModelShape shape_for(const Manifest& m, const ModalitySet& mods,
                     std::size_t shared_dim, std::size_t proj_dim);

// All learnable state. The same type holds gradients and optimizer moments.
//
//   projection[m]  raw_dim_m -> shared      (one per active modality)
//   gate_hidden    2*shared  -> shared      rectifier
//   gate_out       shared    -> shared      (one network for every pair)
//   head_hidden    shared    -> proj        rectifier, dropout
//   head_out       proj      -> 2           logits (non-sarcastic, sarcastic)
struct FusionParams {
  ModelShape shape;
  std::array<std::optional<Dense>, kModalityCount> projection;
  Dense gate_hidden;
  Dense gate_out;
  Dense head_hidden;
  Dense head_out;

  static FusionParams zeros(const ModelShape& shape);
  // Weights uniform in ±sqrt(6 / (fan_in + fan_out)), biases zero. Blocks are
  // drawn in canonical block order from one Rng seeded with `seed`.
  static FusionParams glorot(const ModelShape& shape, std::uint64_t seed);

  // Visits every parameter block in canonical order:
  //   proj.t.weight, proj.t.bias, proj.a.*, proj.v.*, gate.hidden.*,
  //   gate.out.*, head.hidden.*, head.out.*
  // with callback(name, rows, cols, span). Biases report rows = out, cols = 1.
  template <typename Fn>
  void for_each_block(Fn&& fn);
  template <typename Fn>
  void for_each_block(Fn&& fn) const;

  std::size_t parameter_count() const;
  Vector flatten() const;
  void assign(std::span<const double> flat);
  void fill(double value);

  friend bool operator==(const FusionParams&, const FusionParams&) = default;
};

using Gradients = FusionParams;

using ModalityInputs = std::array<std::optional<Vector>, kModalityCount>;

// Widens the record's embeddings for the modalities of `shape`. Throws
// ModelError naming the sample id and modality when one is missing.
ModalityInputs inputs_from(const EmbeddingRecord& r, const ModelShape& shape);

enum class Mode { train, eval };

struct ForwardOptions {
  Mode mode = Mode::eval;
  double dropout = 0.0;
  Rng* rng = nullptr;  // required when mode == train and dropout > 0
};

struct PairTrace {
  Modality partner = Modality::text;
  Vector hidden_pre;  // gate_hidden(concat(query, partner))
  Vector output;      // gate_out(relu(hidden_pre))
  friend bool operator==(const PairTrace&, const PairTrace&) = default;
};

struct ModalityTrace {
  Vector raw;
  Vector normalized;
  Vector projected;     // after dropout when active
  Vector dropout_mask;  // empty when dropout inactive; else 0 or 1/(1-rate)
  std::vector<PairTrace> pairs;
  Vector alpha;
  Vector gated;
  friend bool operator==(const ModalityTrace&, const ModalityTrace&) = default;
};

struct ForwardCache {
  std::array<std::optional<ModalityTrace>, kModalityCount> modalities;
  Vector fused;
  Vector head_pre;
  Vector head_mask;  // empty when dropout inactive
  Vector head_hidden;
  Vector logits;
  Vector probs;

  int predicted() const { return probs[1] > probs[0] ? 1 : 0; }
  friend bool operator==(const ForwardCache&, const ForwardCache&) = default;
};

Vector project(std::span<const double> x, Modality m, const FusionParams& p);

Vector pair_gate(std::span<const double> query, std::span<const double> partner,
                 const FusionParams& p);

struct GateResult {
  Vector alpha;
  Vector gated;
};

// gate = sigmoid(sum of pair-gate outputs against each partner, partners
// visited in canonical order). All ones when m has no partner.
GateResult gate_modality(Modality m, const ModalityInputs& projected,
                         const FusionParams& p);

Vector fuse(const ModalityInputs& gated);

struct ClassifierOutput {
  Vector logits;
  Vector probs;
};

ClassifierOutput classify(std::span<const double> fused, const FusionParams& p,
                          const ForwardOptions& opts = {});

// Cross-entropy −ln p[label]; p[label] <= 0 is clamped to 1e-12.
double loss(std::span<const double> probs, int label);
double batch_loss(std::span<const Vector> probs, std::span<const int> labels);

ForwardCache forward(const ModalityInputs& inputs, const FusionParams& p,
                     const ForwardOptions& opts = {}, std::string_view id = {});
ForwardCache forward(const EmbeddingRecord& r, const FusionParams& p,
                     const ForwardOptions& opts = {});

// Bit-identical to calling forward() on each sample in order, including the
// dropout masks drawn from opts.rng. `ids` (optional) label error messages.
std::vector<ForwardCache> forward_batch(std::span<const ModalityInputs> inputs,
                                        const FusionParams& p,
                                        const ForwardOptions& opts = {},
                                        std::span<const std::string_view> ids = {});

// Adds scale * d(loss)/d(params) for one sample into `grads`.
void accumulate_backward(const ForwardCache& cache, int label,
                         const FusionParams& p, Gradients& grads, double scale = 1.0);

// Adds scale * the summed per-sample gradients. Equal to per-sample accumulate_backward up to
// the order of floating-point additions.
void accumulate_backward_batch(std::span<const ForwardCache> caches,
                               std::span<const int> labels, const FusionParams& p,
                               Gradients& grads, double scale = 1.0);

Gradients backward(const ForwardCache& cache, int label, const FusionParams& p);

// ---------------------------------------------------------------------------

namespace detail {
template <typename Params, typename Fn>
void visit_blocks(Params& p, Fn&& fn) {
  auto dense = [&](std::string_view prefix, auto& d) {
    fn(std::string(prefix) + ".weight", d.out, d.in, std::span(d.weight));
    fn(std::string(prefix) + ".bias", d.out, std::size_t{1}, std::span(d.bias));
  };
  for (Modality m : kAllModalities) {
    auto& proj = p.projection[index_of(m)];
    if (proj) dense(std::string("proj.") + tag_of(m), *proj);
  }
  dense("gate.hidden", p.gate_hidden);
  dense("gate.out", p.gate_out);
  dense("head.hidden", p.head_hidden);
  dense("head.out", p.head_out);
}
}  // namespace detail

template <typename Fn>
void FusionParams::for_each_block(Fn&& fn) {
  detail::visit_blocks(*this, fn);
}

template <typename Fn>
void FusionParams::for_each_block(Fn&& fn) const {
  detail::visit_blocks(*this, fn);
}

}  // namespace gfusion
