#pragma once

// Hot loops of the pipeline. `xmodal::kernels` holds the OpenMP versions used by
// the library; `xmodal::reference` keeps plain serial implementations that the
// tests and the benchmark compare against.
//
// Every parallel kernel assigns each output element to exactly one thread and
// accumulates it in a fixed order, so results do not depend on the thread count.

#include <span>
#include <vector>

#include "xmodal/core.hpp"

namespace xmodal {

/// Row-major set of `count` vectors of length `dim`.
struct DescriptorRows {
  std::span<const double> values;
  int dim = 0;

  std::size_t count() const { return dim > 0 ? values.size() / static_cast<std::size_t>(dim) : 0; }
  std::span<const double> row(std::size_t i) const { return values.subspan(i * dim, dim); }
};

namespace kernels {

/// 3x3 convolution, zero padding 1. Weights are laid out [out][in][3][3].
/// Output extent is ((H - 1) / stride + 1, (W - 1) / stride + 1).
void conv3x3_forward(const Tensor& input, std::span<const double> weights, std::span<const double> bias,
                     int out_channels, int stride, Tensor& output);

/// Accumulates (+=) into grad_weights / grad_bias; grad_input is overwritten when non-null.
void conv3x3_backward(const Tensor& input, std::span<const double> weights, int stride, const Tensor& grad_output,
                      Tensor* grad_input, std::span<double> grad_weights, std::span<double> grad_bias);

/// For every row of `from`, index of the row of `to` at smallest squared Euclidean
/// distance (ties -> lowest index), and that distance.
void nearest_neighbors(const DescriptorRows& from, const DescriptorRows& to, std::vector<int>& index,
                       std::vector<double>& sq_distance);

/// flags[i] = 1 iff some target lies within `radius` (inclusive) of query i.
void any_within(std::span<const Point2> queries, std::span<const Point2> targets, double radius,
                std::vector<char>& flags);

}  // namespace kernels

namespace reference {

void conv3x3_forward(const Tensor& input, std::span<const double> weights, std::span<const double> bias,
                     int out_channels, int stride, Tensor& output);
void conv3x3_backward(const Tensor& input, std::span<const double> weights, int stride, const Tensor& grad_output,
                      Tensor* grad_input, std::span<double> grad_weights, std::span<double> grad_bias);
void nearest_neighbors(const DescriptorRows& from, const DescriptorRows& to, std::vector<int>& index,
                       std::vector<double>& sq_distance);
void any_within(std::span<const Point2> queries, std::span<const Point2> targets, double radius,
                std::vector<char>& flags);

}  // namespace reference

/// Squared Euclidean distance, summed in index order.
inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

}  // namespace xmodal
