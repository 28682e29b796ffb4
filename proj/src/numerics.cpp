#include "gfusion/numerics.hpp"

#include <algorithm>
#include <cmath>

namespace gfusion {

Vector mean_pool(const SequenceEmbedding& s) {
  if (s.frames.empty()) throw NumericError("empty sequence");
  const std::size_t dim = s.frames.front().size();
  Vector out(dim, 0.0);
  for (const Vector& frame : s.frames) {
    if (frame.size() != dim) {
      throw NumericError("frame width " + std::to_string(frame.size()) +
                         " differs from first frame width " +
                         std::to_string(dim));
    }
    for (std::size_t j = 0; j < dim; ++j) out[j] += frame[j];
  }
  const double n = static_cast<double>(s.frames.size());
  for (double& x : out) x /= n;
  return out;
}

Vector l2_normalize(std::span<const double> v) {
  const double n = norm2(v);
  Vector out(v.begin(), v.end());
  if (n == 0.0) return out;
  for (double& x : out) x /= n;
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Vector sigmoid(std::span<const double> x) {
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid(x[i]);
  return out;
}

Vector softmax(std::span<const double> logits) {
  Vector out(logits.size());
  if (logits.empty()) return out;
  double peak = logits[0];
  for (double z : logits) peak = std::max(peak, z);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    total += out[i];
  }
  for (double& p : out) p /= total;
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  double s = (s0 + s1) + (s2 + s3);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> v) {
  // Scaled accumulation keeps huge or tiny inputs from overflowing.
  double scale = 0.0;
  for (double x : v) scale = std::max(scale, std::abs(x));
  if (scale == 0.0) return 0.0;
  double sum = 0.0;
  for (double x : v) {
    const double r = x / scale;
    sum += r * r;
  }
  return scale * std::sqrt(sum);
}

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

Vector finite_diff_grad(const ScalarFunction& f, std::span<const double> theta,
                        double h) {
  if (!(h > 0.0)) throw NumericError("finite_diff_grad: step must be positive");
  Vector point(theta.begin(), theta.end());
  Vector grad(theta.size());
  for (std::size_t j = 0; j < theta.size(); ++j) {
    const double saved = point[j];
    point[j] = saved + h;
    const long double plus = f(point);
    point[j] = saved - h;
    const long double minus = f(point);
    point[j] = saved;
    if (!std::isfinite(static_cast<double>(plus)) ||
        !std::isfinite(static_cast<double>(minus))) {
      throw NumericError("finite_diff_grad: non-finite evaluation at coordinate " +
                         std::to_string(j));
    }
    // The actual step taken may differ from h by rounding of saved ± h.
    const long double span = static_cast<long double>(saved + h) -
                             static_cast<long double>(saved - h);
    grad[j] = static_cast<double>((plus - minus) / span);
  }
  return grad;
}

}  // namespace gfusion
