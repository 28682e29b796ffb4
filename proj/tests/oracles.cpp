#include "oracles.hpp"

#include <algorithm>
#include <cmath>

namespace gfusion::oracle {

std::vector<double> matvec(const Dense& d, const std::vector<double>& x) {
  std::vector<double> y(d.out);
  for (std::size_t i = 0; i < d.out; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d.in; ++j) s += d.weight[i * d.in + j] * x[j];
    y[i] = s + d.bias[i];
  }
  return y;
}

namespace {

std::vector<double> unit(const std::vector<double>& x) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  if (ss == 0.0) return x;
  const double n = std::sqrt(ss);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / n;
  return out;
}

std::vector<double> rect(std::vector<double> x) {
  for (double& v : x) v = std::max(0.0, v);
  return x;
}

}  // namespace

NaiveOutput naive_forward(const FusionParams& p, const ModalityInputs& inputs) {
  const std::size_t s = p.shape.shared_dim;
  std::vector<std::vector<double>> h(kModalityCount);
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    if (p.projection[m]) h[m] = matvec(*p.projection[m], unit(*inputs[m]));
  }
  NaiveOutput out;
  out.alpha.resize(kModalityCount);
  out.fused.assign(s, 0.0);
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    if (h[m].empty()) continue;
    std::vector<double> z(s, 0.0);
    bool partnered = false;
    for (std::size_t n = 0; n < kModalityCount; ++n) {
      if (n == m || h[n].empty()) continue;
      partnered = true;
      std::vector<double> cat = h[m];
      cat.insert(cat.end(), h[n].begin(), h[n].end());
      const auto g = matvec(p.gate_out, rect(matvec(p.gate_hidden, cat)));
      for (std::size_t i = 0; i < s; ++i) z[i] += g[i];
    }
    out.alpha[m].resize(s);
    for (std::size_t i = 0; i < s; ++i) {
      out.alpha[m][i] = partnered ? 1.0 / (1.0 + std::exp(-z[i])) : 1.0;
      out.fused[i] += out.alpha[m][i] * h[m][i];
    }
  }
  out.logits = matvec(p.head_out, rect(matvec(p.head_hidden, out.fused)));
  const double e0 = std::exp(out.logits[0]);
  const double e1 = std::exp(out.logits[1]);
  out.probs = {e0 / (e0 + e1), e1 / (e0 + e1)};
  return out;
}

Tally brute_force_tally(const std::vector<int>& labels, const std::vector<int>& preds) {
  Tally t;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1 && preds[i] == 1) ++t.tp;
    if (labels[i] == 0 && preds[i] == 1) ++t.fp;
    if (labels[i] == 0 && preds[i] == 0) ++t.tn;
    if (labels[i] == 1 && preds[i] == 0) ++t.fn;
  }
  return t;
}

Prf brute_force_weighted_prf(const std::vector<int>& labels,
                             const std::vector<int>& preds) {
  Prf w{0.0, 0.0, 0.0};
  const double n = static_cast<double>(labels.size());
  for (int cls = 0; cls <= 1; ++cls) {
    double hit = 0, predicted = 0, actual = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (preds[i] == cls) predicted += 1;
      if (labels[i] == cls) actual += 1;
      if (preds[i] == cls && labels[i] == cls) hit += 1;
    }
    const double p = predicted > 0 ? hit / predicted : 0.0;
    const double r = actual > 0 ? hit / actual : 0.0;
    const double f = (p + r) > 0 ? 2 * p * r / (p + r) : 0.0;
    w.precision += actual / n * p;
    w.recall += actual / n * r;
    w.f1 += actual / n * f;
  }
  return w;
}

std::vector<double> scalar_adam(double w0, const std::vector<double>& grads, double lr) {
  double w = w0, m = 0.0, v = 0.0;
  std::vector<double> trace;
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    const double g = grads[t - 1];
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, static_cast<double>(t)));
    const double vh = v / (1.0 - std::pow(0.999, static_cast<double>(t)));
    w -= lr * mh / (std::sqrt(vh) + 1e-8);
    trace.push_back(w);
  }
  return trace;
}

double logistic_baseline_accuracy(const Manifest& m, Modality modality,
                                  Split eval_split, std::size_t iterations, double lr) {
  const auto train = m.split(Split::train);
  const std::size_t d = m.schema[index_of(modality)]->dim;
  std::vector<double> w(d + 1, 0.0);
  for (std::size_t it = 0; it < iterations; ++it) {
    std::vector<double> g(d + 1, 0.0);
    for (const EmbeddingRecord* r : train) {
      const auto& x = r->embedding(modality)->values;
      double z = w[d];
      for (std::size_t j = 0; j < d; ++j) z += w[j] * x[j];
      const double err = 1.0 / (1.0 + std::exp(-z)) - r->label;
      for (std::size_t j = 0; j < d; ++j) g[j] += err * x[j];
      g[d] += err;
    }
    for (std::size_t j = 0; j <= d; ++j) w[j] -= lr * g[j] / static_cast<double>(train.size());
  }
  const auto eval = m.split(eval_split);
  std::size_t correct = 0;
  for (const EmbeddingRecord* r : eval) {
    const auto& x = r->embedding(modality)->values;
    double z = w[d];
    for (std::size_t j = 0; j < d; ++j) z += w[j] * x[j];
    if ((z > 0 ? 1 : 0) == r->label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(eval.size());
}


ModelShape tiny_shape() {
  ModelShape s;
  s.shared_dim = 8;
  s.proj_dim = 4;
  s.raw_dims = {5, 7, 3};
  return s;
}

GradientCheck check_gradients(std::uint64_t seed, const ModelShape& shape,
                              std::size_t batch, double dropout, double h) {
  Rng data_rng(seed * 7919 + 1);
  FusionParams p = FusionParams::glorot(shape, seed);
  // Non-zero biases so every bias path is exercised.
  p.for_each_block([&](const std::string& name, std::size_t, std::size_t,
                       std::span<double> v) {
    if (name.ends_with(".bias")) {
      for (double& b : v) b = data_rng.uniform(-0.2, 0.2);
    }
  });
  std::vector<ModalityInputs> xs(batch);
  std::vector<int> labels(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t m = 0; m < kModalityCount; ++m) {
      if (shape.raw_dims[m] == 0) continue;
      Vector x(shape.raw_dims[m]);
      for (double& v : x) v = data_rng.gaussian();
      xs[b][m] = x;
    }
    labels[b] = static_cast<int>(data_rng.below(2));
  }
  const std::uint64_t mask_seed = seed + 99;

  auto batch_loss_at = [&](const FusionParams& params) {
    Rng masks(mask_seed);
    ForwardOptions opts{Mode::train, dropout, &masks};
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      total += loss(forward(xs[b], params, opts).probs, labels[b]);
    }
    return total / static_cast<double>(batch);
  };

  // analytic side goes through the batched path that training uses
  Gradients analytic = FusionParams::zeros(shape);
  {
    Rng masks(mask_seed);
    const auto caches = forward_batch(xs, p, {Mode::train, dropout, &masks});
    accumulate_backward_batch(caches, labels, p, analytic, 1.0 / static_cast<double>(batch));
  }
  FusionParams probe = p;
  const Vector theta = p.flatten();
  const Vector numeric = finite_diff_grad(
      [&](std::span<const double> t) {
        probe.assign(t);
        return batch_loss_at(probe);
      },
      theta, h);
  const Vector a = analytic.flatten();

  GradientCheck out;
  out.parameters = a.size();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = std::abs(a[i] - numeric[i]);
    const double scale = std::max({std::abs(a[i]), std::abs(numeric[i]), 1e-6});
    out.max_abs_error = std::max(out.max_abs_error, diff);
    out.max_relative_error = std::max(out.max_relative_error, diff / scale);
  }
  return out;
}

}  // namespace gfusion::oracle
