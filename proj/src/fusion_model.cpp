#include "gfusion/fusion_model.hpp"

#include <algorithm>
#include <cmath>

namespace gfusion {

namespace {

void require_dim(std::size_t actual, std::size_t expected, const std::string& what) {
  if (actual != expected) {
    throw ModelError(what + ": expected dim " + std::to_string(expected) +
                     ", got " + std::to_string(actual));
  }
}

Vector relu(std::span<const double> x) {
  Vector out(x.begin(), x.end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return out;
}

Vector concat(std::span<const double> a, std::span<const double> b) {
  Vector out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

// Inverted dropout mask: 0 or 1/(1-rate), one uniform draw per unit.
Vector draw_mask(std::size_t n, double rate, Rng& rng) {
  Vector mask(n);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& m : mask) m = rng.uniform01() < rate ? 0.0 : keep_scale;
  return mask;
}

void apply_mask(Vector& x, const Vector& mask) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] *= mask[i];
}

bool dropout_active(const ForwardOptions& opts) {
  if (opts.mode != Mode::train || opts.dropout <= 0.0) return false;
  if (opts.dropout >= 1.0) throw ModelError("dropout rate must be in [0, 1)");
  if (!opts.rng) throw ModelError("train-mode dropout requires an Rng");
  return true;
}

Vector gate_pre_hidden(std::span<const double> query, std::span<const double> partner,
                       const FusionParams& p) {
  require_dim(query.size(), p.shape.shared_dim, "pair_gate query");
  require_dim(partner.size(), p.shape.shared_dim, "pair_gate partner");
  return p.gate_hidden.apply(concat(query, partner));
}

}  // namespace

Vector Dense::apply(std::span<const double> x) const {
  require_dim(x.size(), in, "dense input");
  Vector y(out);
  for (std::size_t i = 0; i < out; ++i) y[i] = dot(row(i), x) + bias[i];
  return y;
}

void Dense::accumulate(std::span<const double> x, std::span<const double> delta,
                       Dense& grad) const {
  for (std::size_t i = 0; i < out; ++i) {
    const double d = delta[i];
    grad.bias[i] += d;
    if (d == 0.0) continue;
    double* g = grad.weight.data() + i * in;
    for (std::size_t j = 0; j < in; ++j) g[j] += d * x[j];
  }
}

Vector Dense::transpose_apply(std::span<const double> delta) const {
  Vector r(in, 0.0);
  for (std::size_t i = 0; i < out; ++i) {
    const double d = delta[i];
    if (d == 0.0) continue;
    const double* w = weight.data() + i * in;
    for (std::size_t j = 0; j < in; ++j) r[j] += d * w[j];
  }
  return r;
}

std::vector<Vector> Dense::apply_batch(std::span<const std::span<const double>> xs) const {
  for (const auto& x : xs) require_dim(x.size(), in, "dense input");
  std::vector<Vector> ys(xs.size(), Vector(out));
  for (std::size_t i = 0; i < out; ++i) {
    const auto w = row(i);
    for (std::size_t b = 0; b < xs.size(); ++b) ys[b][i] = dot(w, xs[b]) + bias[i];
  }
  return ys;
}

void Dense::accumulate_batch(std::span<const std::span<const double>> xs,
                             std::span<const Vector> deltas, Dense& grad) const {
  for (std::size_t i = 0; i < out; ++i) {
    double* g = grad.weight.data() + i * in;
    for (std::size_t b = 0; b < xs.size(); ++b) {
      const double d = deltas[b][i];
      grad.bias[i] += d;
      if (d == 0.0) continue;
      const double* x = xs[b].data();
      for (std::size_t j = 0; j < in; ++j) g[j] += d * x[j];
    }
  }
}

std::vector<Vector> Dense::transpose_apply_batch(std::span<const Vector> deltas) const {
  std::vector<Vector> rs(deltas.size(), Vector(in, 0.0));
  for (std::size_t i = 0; i < out; ++i) {
    const double* w = weight.data() + i * in;
    for (std::size_t b = 0; b < deltas.size(); ++b) {
      const double d = deltas[b][i];
      if (d == 0.0) continue;
      double* r = rs[b].data();
      for (std::size_t j = 0; j < in; ++j) r[j] += d * w[j];
    }
  }
  return rs;
}

ModalitySet ModelShape::modalities() const {
  ModalitySet set;
  for (Modality m : kAllModalities) {
    if (raw_dims[index_of(m)] > 0) set.insert(m);
  }
  return set;
}

ModelShape shape_for(const Manifest& manifest, const ModalitySet& mods,
                     std::size_t shared_dim, std::size_t proj_dim) {
  if (mods.empty()) throw ModelError("no modalities requested");
  ModelShape shape;
  shape.shared_dim = shared_dim;
  shape.proj_dim = proj_dim;
  for (Modality m : mods.members()) {
    const auto& s = manifest.schema[index_of(m)];
    if (!s) {
      throw ModelError("manifest '" + manifest.dataset + "' has no " + name_of(m) +
                       " modality");
    }
    shape.raw_dims[index_of(m)] = s->dim;
  }
  return shape;
}

FusionParams FusionParams::zeros(const ModelShape& shape) {
  if (shape.shared_dim == 0 || shape.proj_dim == 0) {
    throw ModelError("shared_dim and proj_dim must be positive");
  }
  if (shape.modalities().empty()) throw ModelError("model needs at least one modality");
  FusionParams p;
  p.shape = shape;
  for (Modality m : kAllModalities) {
    const std::size_t raw = shape.raw_dims[index_of(m)];
    if (raw > 0) p.projection[index_of(m)] = Dense(raw, shape.shared_dim);
  }
  p.gate_hidden = Dense(2 * shape.shared_dim, shape.shared_dim);
  p.gate_out = Dense(shape.shared_dim, shape.shared_dim);
  p.head_hidden = Dense(shape.shared_dim, shape.proj_dim);
  p.head_out = Dense(shape.proj_dim, 2);
  return p;
}

FusionParams FusionParams::glorot(const ModelShape& shape, std::uint64_t seed) {
  FusionParams p = zeros(shape);
  Rng rng(seed);
  p.for_each_block([&](const std::string& name, std::size_t rows, std::size_t cols,
                       std::span<double> values) {
    if (name.ends_with(".bias")) return;
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (double& w : values) w = rng.uniform(-limit, limit);
  });
  return p;
}

std::size_t FusionParams::parameter_count() const {
  std::size_t n = 0;
  for_each_block([&](const std::string&, std::size_t, std::size_t,
                     std::span<const double> v) { n += v.size(); });
  return n;
}

Vector FusionParams::flatten() const {
  Vector flat;
  flat.reserve(parameter_count());
  for_each_block([&](const std::string&, std::size_t, std::size_t,
                     std::span<const double> v) {
    flat.insert(flat.end(), v.begin(), v.end());
  });
  return flat;
}

void FusionParams::assign(std::span<const double> flat) {
  if (flat.size() != parameter_count()) {
    throw ModelError("assign: expected " + std::to_string(parameter_count()) +
                     " values, got " + std::to_string(flat.size()));
  }
  std::size_t offset = 0;
  for_each_block([&](const std::string&, std::size_t, std::size_t,
                     std::span<double> v) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), v.size(), v.begin());
    offset += v.size();
  });
}

void FusionParams::fill(double value) {
  for_each_block([&](const std::string&, std::size_t, std::size_t,
                     std::span<double> v) { std::fill(v.begin(), v.end(), value); });
}

ModalityInputs inputs_from(const EmbeddingRecord& r, const ModelShape& shape) {
  ModalityInputs in;
  for (Modality m : shape.modalities().members()) {
    const ModalityEmbedding* e = r.embedding(m);
    if (!e) {
      throw ModelError("sample " + r.id + ": missing modality " + name_of(m));
    }
    in[index_of(m)] = Vector(e->values.begin(), e->values.end());
  }
  return in;
}

Vector project(std::span<const double> x, Modality m, const FusionParams& p) {
  const auto& proj = p.projection[index_of(m)];
  if (!proj) throw ModelError("model has no " + name_of(m) + " projection");
  if (x.size() != proj->in) {
    throw ModelError(name_of(m) + " input: expected dim " + std::to_string(proj->in) +
                     ", got " + std::to_string(x.size()));
  }
  return proj->apply(l2_normalize(x));
}

Vector pair_gate(std::span<const double> query, std::span<const double> partner,
                 const FusionParams& p) {
  return p.gate_out.apply(relu(gate_pre_hidden(query, partner, p)));
}

GateResult gate_modality(Modality m, const ModalityInputs& projected,
                         const FusionParams& p) {
  const auto& query = projected[index_of(m)];
  if (!query) throw ModelError("gate_modality: " + name_of(m) + " not present");
  Vector logit;
  for (Modality n : kAllModalities) {
    if (n == m || !projected[index_of(n)]) continue;
    const Vector g = pair_gate(*query, *projected[index_of(n)], p);
    if (logit.empty()) {
      logit = g;
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) logit[i] += g[i];
    }
  }
  GateResult r;
  if (logit.empty()) {
    r.alpha.assign(query->size(), 1.0);
    r.gated = *query;
    return r;
  }
  r.alpha = sigmoid(logit);
  r.gated.resize(query->size());
  for (std::size_t i = 0; i < query->size(); ++i) r.gated[i] = r.alpha[i] * (*query)[i];
  return r;
}

Vector fuse(const ModalityInputs& gated) {
  Vector out;
  for (Modality m : kAllModalities) {
    const auto& g = gated[index_of(m)];
    if (!g) continue;
    if (out.empty()) {
      out = *g;
      continue;
    }
    require_dim(g->size(), out.size(), "fuse " + name_of(m));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*g)[i];
  }
  if (out.empty()) throw ModelError("fuse: no modalities");
  return out;
}

namespace {

void run_head(std::span<const double> fused, const FusionParams& p,
              const ForwardOptions& opts, ForwardCache& c) {
  require_dim(fused.size(), p.shape.shared_dim, "classifier input");
  c.head_pre = p.head_hidden.apply(fused);
  c.head_hidden = relu(c.head_pre);
  c.head_mask.clear();
  if (dropout_active(opts)) {
    c.head_mask = draw_mask(c.head_hidden.size(), opts.dropout, *opts.rng);
    apply_mask(c.head_hidden, c.head_mask);
  }
  c.logits = p.head_out.apply(c.head_hidden);
  c.probs = softmax(c.logits);
}

template <typename Field>
std::vector<std::span<const double>> views(std::span<const ForwardCache> cs, Field field) {
  std::vector<std::span<const double>> out;
  out.reserve(cs.size());
  for (const ForwardCache& c : cs) out.emplace_back(field(c));
  return out;
}

}  // namespace

ClassifierOutput classify(std::span<const double> fused, const FusionParams& p,
                          const ForwardOptions& opts) {
  ForwardCache c;
  run_head(fused, p, opts, c);
  return {std::move(c.logits), std::move(c.probs)};
}

double loss(std::span<const double> probs, int label) {
  if (label != 0 && label != 1) throw ModelError("label must be 0 or 1");
  double p = probs[static_cast<std::size_t>(label)];
  if (!(p > 0.0)) p = 1e-12;
  return -std::log(p);
}

double batch_loss(std::span<const Vector> probs, std::span<const int> labels) {
  if (probs.size() != labels.size() || probs.empty()) {
    throw ModelError("batch_loss: probs and labels must be equal-length and non-empty");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) total += loss(probs[i], labels[i]);
  return total / static_cast<double>(probs.size());
}

std::vector<ForwardCache> forward_batch(std::span<const ModalityInputs> inputs,
                                        const FusionParams& p, const ForwardOptions& opts,
                                        std::span<const std::string_view> ids) {
  const bool drop = dropout_active(opts);
  const std::size_t n = inputs.size();
  auto id_of = [&](std::size_t b) {
    return "sample " + std::string(b < ids.size() ? ids[b] : std::string_view{});
  };
  std::vector<ForwardCache> cs(n);
  if (n == 0) return cs;

  // masks come out of the Rng in the order a sample-by-sample pass draws them
  std::vector<std::array<Vector, kModalityCount>> proj_masks(drop ? n : 0);
  std::vector<Vector> head_masks(drop ? n : 0);
  if (drop) {
    for (std::size_t b = 0; b < n; ++b) {
      for (Modality m : kAllModalities) {
        if (!p.projection[index_of(m)]) continue;
        proj_masks[b][index_of(m)] = draw_mask(p.shape.shared_dim, opts.dropout, *opts.rng);
      }
      head_masks[b] = draw_mask(p.shape.proj_dim, opts.dropout, *opts.rng);
    }
  }

  for (Modality m : kAllModalities) {
    if (!p.projection[index_of(m)]) continue;
    const Dense& proj = *p.projection[index_of(m)];
    for (std::size_t b = 0; b < n; ++b) {
      const auto& x = inputs[b][index_of(m)];
      if (!x) throw ModelError(id_of(b) + ": missing modality " + name_of(m));
      if (x->size() != proj.in) {
        throw ModelError(id_of(b) + ": " + name_of(m) + " input: expected dim " +
                         std::to_string(proj.in) + ", got " + std::to_string(x->size()));
      }
      ModalityTrace t;
      t.raw = *x;
      t.normalized = l2_normalize(*x);
      cs[b].modalities[index_of(m)] = std::move(t);
    }
    auto projected = proj.apply_batch(views(cs, [&](const ForwardCache& c) -> const Vector& {
      return c.modalities[index_of(m)]->normalized;
    }));
    for (std::size_t b = 0; b < n; ++b) {
      ModalityTrace& t = *cs[b].modalities[index_of(m)];
      t.projected = std::move(projected[b]);
      if (drop) {
        t.dropout_mask = std::move(proj_masks[b][index_of(m)]);
        apply_mask(t.projected, t.dropout_mask);
      }
    }
  }

  const std::size_t shared = p.shape.shared_dim;
  for (Modality m : kAllModalities) {
    if (!p.projection[index_of(m)]) continue;
    std::vector<Vector> logit(n);
    for (Modality partner : kAllModalities) {
      if (partner == m || !p.projection[index_of(partner)]) continue;
      std::vector<Vector> joined(n);
      for (std::size_t b = 0; b < n; ++b) {
        joined[b] = concat(cs[b].modalities[index_of(m)]->projected,
                           cs[b].modalities[index_of(partner)]->projected);
      }
      std::vector<std::span<const double>> joined_views(joined.begin(), joined.end());
      auto pre = p.gate_hidden.apply_batch(joined_views);
      std::vector<Vector> hidden(n);
      for (std::size_t b = 0; b < n; ++b) hidden[b] = relu(pre[b]);
      std::vector<std::span<const double>> hidden_views(hidden.begin(), hidden.end());
      auto out = p.gate_out.apply_batch(hidden_views);
      for (std::size_t b = 0; b < n; ++b) {
        if (logit[b].empty()) {
          logit[b] = out[b];
        } else {
          for (std::size_t i = 0; i < shared; ++i) logit[b][i] += out[b][i];
        }
        PairTrace pt;
        pt.partner = partner;
        pt.hidden_pre = std::move(pre[b]);
        pt.output = std::move(out[b]);
        cs[b].modalities[index_of(m)]->pairs.push_back(std::move(pt));
      }
    }
    for (std::size_t b = 0; b < n; ++b) {
      ModalityTrace& t = *cs[b].modalities[index_of(m)];
      if (logit[b].empty()) {
        t.alpha.assign(t.projected.size(), 1.0);
        t.gated = t.projected;
      } else {
        t.alpha = sigmoid(logit[b]);
        t.gated.resize(t.projected.size());
        for (std::size_t i = 0; i < t.gated.size(); ++i) t.gated[i] = t.alpha[i] * t.projected[i];
      }
    }
  }

  for (ForwardCache& c : cs) {
    ModalityInputs gated;
    for (Modality m : kAllModalities) {
      if (c.modalities[index_of(m)]) gated[index_of(m)] = c.modalities[index_of(m)]->gated;
    }
    c.fused = fuse(gated);
  }
  auto head_pre = p.head_hidden.apply_batch(
      views(cs, [](const ForwardCache& c) -> const Vector& { return c.fused; }));
  for (std::size_t b = 0; b < n; ++b) {
    cs[b].head_pre = std::move(head_pre[b]);
    cs[b].head_hidden = relu(cs[b].head_pre);
    if (drop) {
      cs[b].head_mask = std::move(head_masks[b]);
      apply_mask(cs[b].head_hidden, cs[b].head_mask);
    }
  }
  auto logits = p.head_out.apply_batch(
      views(cs, [](const ForwardCache& c) -> const Vector& { return c.head_hidden; }));
  for (std::size_t b = 0; b < n; ++b) {
    cs[b].logits = std::move(logits[b]);
    cs[b].probs = softmax(cs[b].logits);
  }
  return cs;
}

ForwardCache forward(const ModalityInputs& inputs, const FusionParams& p,
                     const ForwardOptions& opts, std::string_view id) {
  return std::move(forward_batch(std::span(&inputs, 1), p, opts, std::span(&id, 1)).front());
}

ForwardCache forward(const EmbeddingRecord& r, const FusionParams& p,
                     const ForwardOptions& opts) {
  return forward(inputs_from(r, p.shape), p, opts, r.id);
}

void accumulate_backward_batch(std::span<const ForwardCache> cs, std::span<const int> labels,
                               const FusionParams& p, Gradients& g, double scale) {
  if (!(g.shape == p.shape)) throw ModelError("backward: gradient shape mismatch");
  if (cs.size() != labels.size()) throw ModelError("backward: caches and labels differ in length");
  const std::size_t n = cs.size();
  if (n == 0) return;
  for (std::size_t b = 0; b < n; ++b) {
    if (cs[b].probs.size() != 2) throw ModelError("backward: cache has no output");
    if (labels[b] != 0 && labels[b] != 1) throw ModelError("label must be 0 or 1");
    for (Modality m : kAllModalities) {
      if (cs[b].modalities[index_of(m)].has_value() != p.projection[index_of(m)].has_value()) {
        throw ModelError("backward: cache and parameters disagree on " + name_of(m));
      }
    }
  }

  // softmax cross-entropy
  std::vector<Vector> d_logits(n);
  for (std::size_t b = 0; b < n; ++b) {
    d_logits[b] = cs[b].probs;
    d_logits[b][static_cast<std::size_t>(labels[b])] -= 1.0;
    for (double& d : d_logits[b]) d *= scale;
  }
  p.head_out.accumulate_batch(
      views(cs, [](const ForwardCache& c) -> const Vector& { return c.head_hidden; }),
      d_logits, g.head_out);
  std::vector<Vector> d_hidden = p.head_out.transpose_apply_batch(d_logits);
  for (std::size_t b = 0; b < n; ++b) {
    const ForwardCache& c = cs[b];
    for (std::size_t i = 0; i < d_hidden[b].size(); ++i) {
      if (!c.head_mask.empty()) d_hidden[b][i] *= c.head_mask[i];
      if (!(c.head_pre[i] > 0.0)) d_hidden[b][i] = 0.0;
    }
  }
  p.head_hidden.accumulate_batch(
      views(cs, [](const ForwardCache& c) -> const Vector& { return c.fused; }), d_hidden,
      g.head_hidden);
  const std::vector<Vector> d_fused = p.head_hidden.transpose_apply_batch(d_hidden);

  // gradient w.r.t. each projected (post-dropout) vector, collected from the
  // gated product and from both slots of every pair gate
  std::vector<std::array<Vector, kModalityCount>> d_projected(n);
  for (std::size_t b = 0; b < n; ++b) {
    for (Modality m : kAllModalities) {
      const auto& t = cs[b].modalities[index_of(m)];
      if (!t) continue;
      Vector& dp = d_projected[b][index_of(m)];
      dp.resize(t->projected.size());
      for (std::size_t i = 0; i < dp.size(); ++i) dp[i] = d_fused[b][i] * t->alpha[i];
    }
  }
  const std::size_t shared = p.shape.shared_dim;
  for (Modality m : kAllModalities) {
    const auto& first = cs[0].modalities[index_of(m)];
    if (!first || first->pairs.empty()) continue;
    std::vector<Vector> d_logit(n, Vector(shared));
    for (std::size_t b = 0; b < n; ++b) {
      const ModalityTrace& t = *cs[b].modalities[index_of(m)];
      for (std::size_t i = 0; i < shared; ++i) {
        const double a = t.alpha[i];
        d_logit[b][i] = d_fused[b][i] * t.projected[i] * a * (1.0 - a);
      }
    }
    for (std::size_t k = 0; k < first->pairs.size(); ++k) {
      const Modality partner = first->pairs[k].partner;
      std::vector<Vector> hidden(n), joined(n);
      for (std::size_t b = 0; b < n; ++b) {
        const ModalityTrace& t = *cs[b].modalities[index_of(m)];
        hidden[b] = relu(t.pairs[k].hidden_pre);
        joined[b] = concat(t.projected, cs[b].modalities[index_of(partner)]->projected);
      }
      p.gate_out.accumulate_batch(
          std::vector<std::span<const double>>(hidden.begin(), hidden.end()), d_logit,
          g.gate_out);
      std::vector<Vector> d_pre = p.gate_out.transpose_apply_batch(d_logit);
      for (std::size_t b = 0; b < n; ++b) {
        const PairTrace& pt = cs[b].modalities[index_of(m)]->pairs[k];
        for (std::size_t i = 0; i < shared; ++i) {
          if (!(pt.hidden_pre[i] > 0.0)) d_pre[b][i] = 0.0;
        }
      }
      p.gate_hidden.accumulate_batch(
          std::vector<std::span<const double>>(joined.begin(), joined.end()), d_pre,
          g.gate_hidden);
      const std::vector<Vector> d_input = p.gate_hidden.transpose_apply_batch(d_pre);
      for (std::size_t b = 0; b < n; ++b) {
        Vector& dq = d_projected[b][index_of(m)];
        Vector& dn = d_projected[b][index_of(partner)];
        for (std::size_t i = 0; i < shared; ++i) {
          dq[i] += d_input[b][i];
          dn[i] += d_input[b][shared + i];
        }
      }
    }
  }

  for (Modality m : kAllModalities) {
    if (!p.projection[index_of(m)]) continue;
    if (!g.projection[index_of(m)]) {
      throw ModelError("backward: cache and parameters disagree on " + name_of(m));
    }
    std::vector<Vector> d_pre(n);
    for (std::size_t b = 0; b < n; ++b) {
      const ModalityTrace& t = *cs[b].modalities[index_of(m)];
      d_pre[b] = std::move(d_projected[b][index_of(m)]);
      if (!t.dropout_mask.empty()) apply_mask(d_pre[b], t.dropout_mask);
    }
    p.projection[index_of(m)]->accumulate_batch(
        views(cs, [&](const ForwardCache& c) -> const Vector& {
          return c.modalities[index_of(m)]->normalized;
        }),
        d_pre, *g.projection[index_of(m)]);
  }
}

void accumulate_backward(const ForwardCache& c, int label, const FusionParams& p,
                         Gradients& g, double scale) {
  accumulate_backward_batch(std::span(&c, 1), std::span(&label, 1), p, g, scale);
}

Gradients backward(const ForwardCache& cache, int label, const FusionParams& p) {
  Gradients g = FusionParams::zeros(p.shape);
  accumulate_backward(cache, label, p, g);
  return g;
}

}  // namespace gfusion
