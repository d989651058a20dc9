#include <cmath>
#include <limits>
#include <stdexcept>

#include "xmodal/kernels.hpp"

namespace xmodal::reference {

namespace {

int out_extent(int n, int stride) { return (n - 1) / stride + 1; }

}  // namespace

void conv3x3_forward(const Tensor& input, std::span<const double> weights, std::span<const double> bias,
                     int out_channels, int stride, Tensor& output) {
  const int cin = input.channels();
  const int oh = out_extent(input.height(), stride);
  const int ow = out_extent(input.width(), stride);
  if (weights.size() != static_cast<std::size_t>(out_channels) * cin * 9 || bias.size() != static_cast<std::size_t>(out_channels))
    throw std::invalid_argument("conv3x3_forward: parameter shape mismatch");
  output = Tensor(out_channels, oh, ow);
  for (int oc = 0; oc < out_channels; ++oc)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double acc = bias[oc];
        for (int ic = 0; ic < cin; ++ic)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * stride + ky - 1;
              const int ix = ox * stride + kx - 1;
              if (iy < 0 || ix < 0 || iy >= input.height() || ix >= input.width()) continue;
              acc += weights[((oc * cin + ic) * 3 + ky) * 3 + kx] * input(ic, iy, ix);
            }
        output(oc, oy, ox) = acc;
      }
}

void conv3x3_backward(const Tensor& input, std::span<const double> weights, int stride, const Tensor& grad_output,
                      Tensor* grad_input, std::span<double> grad_weights, std::span<double> grad_bias) {
  const int cin = input.channels();
  const int cout = grad_output.channels();
  if (grad_input) *grad_input = Tensor(cin, input.height(), input.width());
  for (int oc = 0; oc < cout; ++oc)
    for (int oy = 0; oy < grad_output.height(); ++oy)
      for (int ox = 0; ox < grad_output.width(); ++ox) {
        const double g = grad_output(oc, oy, ox);
        grad_bias[oc] += g;
        for (int ic = 0; ic < cin; ++ic)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * stride + ky - 1;
              const int ix = ox * stride + kx - 1;
              if (iy < 0 || ix < 0 || iy >= input.height() || ix >= input.width()) continue;
              const std::size_t wi = ((oc * cin + ic) * 3 + ky) * 3 + kx;
              grad_weights[wi] += g * input(ic, iy, ix);
              if (grad_input) (*grad_input)(ic, iy, ix) += g * weights[wi];
            }
      }
}

void nearest_neighbors(const DescriptorRows& from, const DescriptorRows& to, std::vector<int>& index,
                       std::vector<double>& sq_distance) {
  const std::size_t n = from.count();
  index.assign(n, -1);
  sq_distance.assign(n, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < to.count(); ++j) {
      const double d = squared_distance(from.row(i), to.row(j));
      if (d < sq_distance[i]) {
        sq_distance[i] = d;
        index[i] = static_cast<int>(j);
      }
    }
}

void any_within(std::span<const Point2> queries, std::span<const Point2> targets, double radius,
                std::vector<char>& flags) {
  flags.assign(queries.size(), 0);
  for (std::size_t i = 0; i < queries.size(); ++i)
    for (const auto& t : targets)
      if ((queries[i].x - t.x) * (queries[i].x - t.x) + (queries[i].y - t.y) * (queries[i].y - t.y) <= radius * radius) {
        flags[i] = 1;
        break;
      }
}

}  // namespace xmodal::reference
