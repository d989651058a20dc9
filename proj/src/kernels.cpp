#include <algorithm>
#include <limits>
#include <stdexcept>

#include "xmodal/kernels.hpp"

namespace xmodal::kernels {

namespace {

int out_extent(int n, int stride) { return (n - 1) / stride + 1; }

// Output indices o in [lo, hi] whose tap i = o * stride + k - 1 lands inside [0, n).
struct TapRange {
  int lo;
  int hi;
};

TapRange tap_range(int k, int stride, int n, int out_n) {
  const int lo = k == 0 ? 1 : 0;
  const int hi = std::min(out_n - 1, (n - k) / stride);
  return {lo, hi};
}

}  // namespace

void conv3x3_forward(const Tensor& input, std::span<const double> weights, std::span<const double> bias,
                     int out_channels, int stride, Tensor& output) {
  const int cin = input.channels();
  const int h = input.height();
  const int w = input.width();
  const int oh = out_extent(h, stride);
  const int ow = out_extent(w, stride);
  if (weights.size() != static_cast<std::size_t>(out_channels) * cin * 9 || bias.size() != static_cast<std::size_t>(out_channels))
    throw std::invalid_argument("conv3x3_forward: parameter shape mismatch");
  output = Tensor(out_channels, oh, ow);

#pragma omp parallel for schedule(static)
  for (int oc = 0; oc < out_channels; ++oc) {
    double* out = output.channel(oc).data();
    std::fill(out, out + output.plane(), bias[oc]);
    for (int ic = 0; ic < cin; ++ic) {
      const double* in = input.channel(ic).data();
      for (int ky = 0; ky < 3; ++ky) {
        const TapRange ry = tap_range(ky, stride, h, oh);
        for (int kx = 0; kx < 3; ++kx) {
          const TapRange rx = tap_range(kx, stride, w, ow);
          const double wt = weights[((oc * cin + ic) * 3 + ky) * 3 + kx];
          for (int oy = ry.lo; oy <= ry.hi; ++oy) {
            const double* row = in + static_cast<std::size_t>(oy * stride + ky - 1) * w;
            double* orow = out + static_cast<std::size_t>(oy) * ow;
            if (stride == 1) {
              const double* src = row + kx - 1;
              for (int ox = rx.lo; ox <= rx.hi; ++ox) orow[ox] += wt * src[ox];
            } else {
              for (int ox = rx.lo; ox <= rx.hi; ++ox) orow[ox] += wt * row[ox * stride + kx - 1];
            }
          }
        }
      }
    }
  }
}

void conv3x3_backward(const Tensor& input, std::span<const double> weights, int stride, const Tensor& grad_output,
                      Tensor* grad_input, std::span<double> grad_weights, std::span<double> grad_bias) {
  const int cin = input.channels();
  const int cout = grad_output.channels();
  const int h = input.height();
  const int w = input.width();
  const int oh = grad_output.height();
  const int ow = grad_output.width();

#pragma omp parallel for schedule(static)
  for (int oc = 0; oc < cout; ++oc) {
    const double* g = grad_output.channel(oc).data();
    double gb = 0.0;
    for (std::size_t k = 0; k < grad_output.plane(); ++k) gb += g[k];
    grad_bias[oc] += gb;
    for (int ic = 0; ic < cin; ++ic) {
      const double* in = input.channel(ic).data();
      for (int ky = 0; ky < 3; ++ky) {
        const TapRange ry = tap_range(ky, stride, h, oh);
        for (int kx = 0; kx < 3; ++kx) {
          const TapRange rx = tap_range(kx, stride, w, ow);
          double acc = 0.0;
          for (int oy = ry.lo; oy <= ry.hi; ++oy) {
            const double* row = in + static_cast<std::size_t>(oy * stride + ky - 1) * w;
            const double* grow = g + static_cast<std::size_t>(oy) * ow;
            for (int ox = rx.lo; ox <= rx.hi; ++ox) acc += grow[ox] * row[ox * stride + kx - 1];
          }
          grad_weights[((oc * cin + ic) * 3 + ky) * 3 + kx] += acc;
        }
      }
    }
  }

  if (!grad_input) return;
  *grad_input = Tensor(cin, h, w);
#pragma omp parallel for schedule(static)
  for (int ic = 0; ic < cin; ++ic) {
    double* gin = grad_input->channel(ic).data();
    for (int oc = 0; oc < cout; ++oc) {
      const double* g = grad_output.channel(oc).data();
      for (int ky = 0; ky < 3; ++ky) {
        const TapRange ry = tap_range(ky, stride, h, oh);
        for (int kx = 0; kx < 3; ++kx) {
          const TapRange rx = tap_range(kx, stride, w, ow);
          const double wt = weights[((oc * cin + ic) * 3 + ky) * 3 + kx];
          for (int oy = ry.lo; oy <= ry.hi; ++oy) {
            double* row = gin + static_cast<std::size_t>(oy * stride + ky - 1) * w;
            const double* grow = g + static_cast<std::size_t>(oy) * ow;
            if (stride == 1) {
              double* dst = row + kx - 1;
              for (int ox = rx.lo; ox <= rx.hi; ++ox) dst[ox] += wt * grow[ox];
            } else {
              for (int ox = rx.lo; ox <= rx.hi; ++ox) row[ox * stride + kx - 1] += wt * grow[ox];
            }
          }
        }
      }
    }
  }
}

void nearest_neighbors(const DescriptorRows& from, const DescriptorRows& to, std::vector<int>& index,
                       std::vector<double>& sq_distance) {
  const auto n = static_cast<long>(from.count());
  const std::size_t m = to.count();
  const auto dim = static_cast<std::size_t>(from.dim);
  if (m > 0 && to.dim != from.dim) throw std::invalid_argument("nearest_neighbors: dimension mismatch");
  index.assign(n, -1);
  sq_distance.assign(n, std::numeric_limits<double>::infinity());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) {
    const double* a = from.values.data() + static_cast<std::size_t>(i) * dim;
    double best = std::numeric_limits<double>::infinity();
    int arg = -1;
    for (std::size_t j = 0; j < m; ++j) {
      const double* b = to.values.data() + j * dim;
      double d = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double t = a[k] - b[k];
        d += t * t;
      }
      if (d < best) {
        best = d;
        arg = static_cast<int>(j);
      }
    }
    index[i] = arg;
    sq_distance[i] = best;
  }
}

void any_within(std::span<const Point2> queries, std::span<const Point2> targets, double radius,
                std::vector<char>& flags) {
  const auto n = static_cast<long>(queries.size());
  const double r2 = radius * radius;
  flags.assign(queries.size(), 0);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) {
    const Point2 q = queries[i];
    for (const auto& t : targets) {
      const double dx = q.x - t.x;
      const double dy = q.y - t.y;
      if (dx * dx + dy * dy <= r2) {
        flags[i] = 1;
        break;
      }
    }
  }
}

}  // namespace xmodal::kernels
