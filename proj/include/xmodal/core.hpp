#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace xmodal {

/// Every stochastic operation takes one of these explicitly; there is no global generator.
using Rng = std::mt19937_64;

/// Bad configuration, bad arguments or missing inputs. The CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Continuous pixel coordinates: pixel (row i, column j) covers [j, j+1) x [i, i+1),
/// so its center sits at (j + 0.5, i + 0.5).
struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

struct ImageSize {
  int height = 0;
  int width = 0;

  bool contains(const Point2& p) const {
    return p.x >= 0.0 && p.y >= 0.0 && p.x < width && p.y < height;
  }
  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

/// Dense channel-major (C, H, W) array of doubles.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int channels, int height, int width, double fill = 0.0)
      : channels_(channels), height_(height), width_(width),
        data_(static_cast<std::size_t>(channels) * height * width, fill) {
    if (channels < 0 || height < 0 || width < 0) throw std::invalid_argument("negative tensor extent");
  }

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  ImageSize size2d() const { return {height_, width_}; }
  std::size_t size() const { return data_.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(height_) * width_; }
  bool empty() const { return data_.empty(); }

  double& operator()(int c, int y, int x) { return data_[(c * plane()) + static_cast<std::size_t>(y) * width_ + x]; }
  double operator()(int c, int y, int x) const {
    return data_[(c * plane()) + static_cast<std::size_t>(y) * width_ + x];
  }
  double& at(int y, int x) { return (*this)(0, y, x); }
  double at(int y, int x) const { return (*this)(0, y, x); }

  std::span<double> channel(int c) { return {data_.data() + c * plane(), plane()}; }
  std::span<const double> channel(int c) const { return {data_.data() + c * plane(), plane()}; }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool same_shape(const Tensor& o) const {
    return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
  }
  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

/// Single-channel intensity image with values in [0, 1].
using Image = Tensor;

inline Image make_image(int height, int width, double fill = 0.0) { return Image(1, height, width, fill); }

// Portable draws on top of the raw engine output, so sampled values do not
// depend on the standard library's distribution implementations.

/// Uniform on [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

/// Uniform index in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  const auto i = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
  return i < n ? i : n - 1;
}

/// Box-Muller; consumes exactly two engine outputs.
double standard_normal(Rng& rng);

}  // namespace xmodal
