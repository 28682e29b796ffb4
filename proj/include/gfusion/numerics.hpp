#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gfusion {

using Vector = std::vector<double>;

// A run of equal-width frames (tokens, audio steps, or keyframes).
struct SequenceEmbedding {
  std::vector<Vector> frames;

  std::size_t length() const { return frames.size(); }
  std::size_t dim() const { return frames.empty() ? 0 : frames.front().size(); }
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Column-wise arithmetic mean. Frames are accumulated left to right.
Vector mean_pool(const SequenceEmbedding& s);

// Unit Euclidean norm; the zero vector is returned unchanged.
Vector l2_normalize(std::span<const double> v);

double sigmoid(double x);
Vector sigmoid(std::span<const double> x);

// Two-way softmax-style normalisation over an arbitrary-width logit vector.
Vector softmax(std::span<const double> logits);

// Dot product with a fixed accumulation order (four interleaved partial sums
// combined as (s0 + s1) + (s2 + s3), then the tail left to right).
double dot(std::span<const double> a, std::span<const double> b);

double norm2(std::span<const double> v);

bool all_finite(std::span<const double> v);

using ScalarFunction = std::function<double(std::span<const double>)>;

// Central differences (f(x + h e_j) - f(x - h e_j)) / 2h. The difference and
// quotient are formed in long double. Throws NumericError naming the
// coordinate when an evaluation is not finite.
Vector finite_diff_grad(const ScalarFunction& f, std::span<const double> theta,
                        double h);

}  // namespace gfusion
