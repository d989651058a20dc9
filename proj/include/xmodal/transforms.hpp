#pragma once

// Cascaded geometric + photometric augmentation T = T_s . T_r . T_q . T_n . T_b . T_i,
// and the ground-truth correspondence maps that follow images through it.
//
// The cascade is read right to left: photometric operations (inversion, blur,
// noise) act on pixel values first, then one homography warps the result.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "xmodal/core.hpp"

namespace xmodal {

struct Range {
  double min = 0.0;
  double max = 0.0;

  bool contains(double v) const { return v >= min && v <= max; }
};

/// Sampling ranges for the augmentation. Defaults follow the training recipe:
/// scale [1, 1.2], rotation [-10, 10] deg, projection ratio 0.2, noise variance 0.01,
/// blur sigma 1, inversion with probability 0.5 above a threshold drawn from [0.3, 0.7].
struct TransformConfig {
  Range scale{1.0, 1.2};
  Range rotation_deg{-10.0, 10.0};
  double projection_ratio = 0.2;
  double flip_probability = 0.0;
  bool rot90 = false;

  double noise_std = 0.1;
  double blur_sigma = 1.0;
  double invert_probability = 0.5;
  Range invert_threshold{0.3, 0.7};

  /// Throws ConfigError on inverted or out-of-domain ranges.
  void validate() const;

  /// Every sub-transform collapsed to the identity.
  static TransformConfig identity();
};

struct GeometricParams {
  double scale = 1.0;
  double rotation_deg = 0.0;
  /// Inward displacement of the corners (top-left, top-right, bottom-right,
  /// bottom-left) as fractions of width / height; each component in [0, ratio].
  std::array<Point2, 4> quad_offsets{};
  bool flip = false;
  int rot90 = 0;  // 0, 90, 180 or 270
};

struct PhotometricParams {
  double noise_std = 0.0;
  double blur_sigma = 0.0;
  double invert_threshold = 0.5;
  bool invert_enabled = false;
};

/// 3x3 projective map on continuous pixel coordinates, bottom-right entry 1.
class Homography {
 public:
  Homography() : m_(Eigen::Matrix3d::Identity()) {}
  /// Normalizes and rejects singular matrices (|det| <= 1e-12 after normalization).
  explicit Homography(const Eigen::Matrix3d& m);

  static Homography identity() { return {}; }
  static Homography translation(double dx, double dy);

  const Eigen::Matrix3d& matrix() const { return m_; }
  Homography inverse() const { return Homography(m_.inverse()); }
  /// (*this) after `first`: maps p to this(first(p)).
  Homography after(const Homography& first) const { return Homography(m_ * first.m_); }
  Point2 apply(const Point2& p) const;
  bool is_identity() const { return m_ == Eigen::Matrix3d::Identity(); }

  friend bool operator==(const Homography& a, const Homography& b) { return a.m_ == b.m_; }

 private:
  Eigen::Matrix3d m_;
};

struct TransformSpec {
  GeometricParams geometric;
  PhotometricParams photometric;
  Homography homography;
  /// Seeds the photometric noise field so the whole transform is reproducible.
  std::uint64_t seed = 0;

  /// Plain-text `key=value` record, one per line.
  std::string to_record() const;
};

/// Ground-truth map U from a source image to a target image.
struct CorrespondenceMap {
  enum class Kind { identity, homography, composed };

  Kind kind = Kind::identity;
  Homography forward;
  ImageSize source;
  ImageSize target;

  static CorrespondenceMap identity(ImageSize size) { return {Kind::identity, {}, size, size}; }
  static CorrespondenceMap from_homography(const Homography& h, ImageSize source, ImageSize target) {
    return {Kind::homography, h, source, target};
  }

  Point2 map(const Point2& p) const { return kind == Kind::identity ? p : forward.apply(p); }
  bool valid(const Point2& mapped) const { return target.contains(mapped); }
  CorrespondenceMap inverse() const { return {kind, forward.inverse(), target, source}; }
};

struct MappedPoint {
  Point2 point;
  bool valid = false;
};

/// Individual factors of the geometric stack, each centered on the image center.
Homography scale_about_center(double scale, ImageSize size);
Homography rotation_about_center(double degrees, ImageSize size);
Homography flip_horizontal(ImageSize size);
/// Maps the image corners to the corners displaced inward by `offsets`.
/// Throws std::invalid_argument when the displaced quad is not strictly convex.
Homography quad_projection(const std::array<Point2, 4>& offsets, ImageSize size);
/// Homography taking the four points `from` onto `to`.
Homography homography_from_points(const std::array<Point2, 4>& from, const std::array<Point2, 4>& to);

/// H = H_scale . H_rotate . H_rot90 . H_flip . H_quad; the quad factor acts first.
Homography compose_homography(const GeometricParams& params, ImageSize size);

/// Draws a full spec. Quads that fail the convexity check are redrawn.
TransformSpec sample_transform(Rng& rng, const TransformConfig& config, ImageSize size);

/// Inverse warping with bilinear interpolation; pixels whose source lies outside the
/// source image are 0. Output keeps values in [0, 1].
Image apply_geometric(const Image& image, const Homography& h, ImageSize out_size);

/// Inversion (v > threshold -> 1 - v), Gaussian blur, additive Gaussian noise, clamp.
Image apply_photometric(const Image& image, const PhotometricParams& params, Rng& rng);

/// Normalized 1-D Gaussian taps truncated at 3 sigma. sigma <= 0 gives {1}.
std::vector<double> gaussian_kernel(double sigma);
/// Separable blur with edge replication.
Image gaussian_blur(const Image& image, double sigma);
/// Adds Normal(0, std^2) noise without clamping.
Image add_gaussian_noise(const Image& image, double std, Rng& rng);
Image invert_above(const Image& image, double threshold);

/// Applies the whole spec: photometric ops first (noise drawn from spec.seed), then the warp.
Image apply_transform(const Image& image, const TransformSpec& spec);

std::vector<MappedPoint> map_points(const std::vector<Point2>& points, const CorrespondenceMap& map);

/// H_b . U . H_a^-1: sends a point of T_a(I_a) to its correspondent in T_b(I_b).
CorrespondenceMap chain_correspondence(const CorrespondenceMap& u, const TransformSpec& a, const TransformSpec& b);

}  // namespace xmodal
