#include "xmodal/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace xmodal {

namespace {

Point2 center_of(ImageSize size) { return {size.width / 2.0, size.height / 2.0}; }

Homography about_center(const Eigen::Matrix3d& linear, ImageSize size) {
  const Point2 c = center_of(size);
  Eigen::Matrix3d to_origin = Eigen::Matrix3d::Identity();
  to_origin(0, 2) = -c.x;
  to_origin(1, 2) = -c.y;
  Eigen::Matrix3d back = Eigen::Matrix3d::Identity();
  back(0, 2) = c.x;
  back(1, 2) = c.y;
  return Homography(back * linear * to_origin);
}

bool strictly_convex(const std::array<Point2, 4>& q) {
  int sign = 0;
  for (int i = 0; i < 4; ++i) {
    const Point2& a = q[i];
    const Point2& b = q[(i + 1) % 4];
    const Point2& c = q[(i + 2) % 4];
    const double cross = (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x);
    if (std::abs(cross) < 1e-12) return false;
    const int s = cross > 0 ? 1 : -1;
    if (sign != 0 && s != sign) return false;
    sign = s;
  }
  return true;
}

std::array<Point2, 4> image_corners(ImageSize size) {
  const double w = size.width;
  const double h = size.height;
  return {Point2{0, 0}, Point2{w, 0}, Point2{w, h}, Point2{0, h}};
}

std::array<Point2, 4> displaced_corners(const std::array<Point2, 4>& offsets, ImageSize size) {
  const double w = size.width;
  const double h = size.height;
  auto c = image_corners(size);
  c[0].x += offsets[0].x * w;
  c[0].y += offsets[0].y * h;
  c[1].x -= offsets[1].x * w;
  c[1].y += offsets[1].y * h;
  c[2].x -= offsets[2].x * w;
  c[2].y -= offsets[2].y * h;
  c[3].x += offsets[3].x * w;
  c[3].y -= offsets[3].y * h;
  return c;
}

bool all_zero(const std::array<Point2, 4>& offsets) {
  return std::all_of(offsets.begin(), offsets.end(), [](const Point2& p) { return p.x == 0.0 && p.y == 0.0; });
}

double bilinear_clamped(const Image& img, double u, double v) {
  u = std::clamp(u, 0.0, static_cast<double>(img.width() - 1));
  v = std::clamp(v, 0.0, static_cast<double>(img.height() - 1));
  const int x0 = static_cast<int>(std::floor(u));
  const int y0 = static_cast<int>(std::floor(v));
  const int x1 = std::min(x0 + 1, img.width() - 1);
  const int y1 = std::min(y0 + 1, img.height() - 1);
  const double fx = u - x0;
  const double fy = v - y0;
  return (1 - fy) * ((1 - fx) * img.at(y0, x0) + fx * img.at(y0, x1)) +
         fy * ((1 - fx) * img.at(y1, x0) + fx * img.at(y1, x1));
}

}  // namespace

void TransformConfig::validate() const {
  auto check = [](const Range& r, const char* name) {
    if (!(r.min <= r.max)) throw ConfigError(std::string("transform range '") + name + "' has min > max");
  };
  check(scale, "scale");
  check(rotation_deg, "rotation");
  check(invert_threshold, "invert_threshold");
  if (scale.min <= 0.0) throw ConfigError("transform scale must be positive");
  if (projection_ratio < 0.0 || projection_ratio >= 0.5) throw ConfigError("projection ratio must lie in [0, 0.5)");
  if (flip_probability < 0.0 || flip_probability > 1.0) throw ConfigError("flip probability must lie in [0, 1]");
  if (invert_probability < 0.0 || invert_probability > 1.0) throw ConfigError("invert probability must lie in [0, 1]");
  if (invert_threshold.min < 0.0 || invert_threshold.max > 1.0) throw ConfigError("invert threshold must lie in [0, 1]");
  if (noise_std < 0.0) throw ConfigError("noise std must be >= 0");
  if (blur_sigma < 0.0) throw ConfigError("blur sigma must be >= 0");
}

TransformConfig TransformConfig::identity() {
  TransformConfig c;
  c.scale = {1.0, 1.0};
  c.rotation_deg = {0.0, 0.0};
  c.projection_ratio = 0.0;
  c.flip_probability = 0.0;
  c.rot90 = false;
  c.noise_std = 0.0;
  c.blur_sigma = 0.0;
  c.invert_probability = 0.0;
  return c;
}

Homography::Homography(const Eigen::Matrix3d& m) {
  if (!m.allFinite()) throw std::invalid_argument("homography has non-finite entries");
  if (std::abs(m(2, 2)) < 1e-300) throw std::invalid_argument("homography cannot be normalized (h33 = 0)");
  m_ = m / m(2, 2);
  if (std::abs(m_.determinant()) <= 1e-12) throw std::invalid_argument("homography is not invertible");
}

Homography Homography::translation(double dx, double dy) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(0, 2) = dx;
  m(1, 2) = dy;
  return Homography(m);
}

Point2 Homography::apply(const Point2& p) const {
  const double x = m_(0, 0) * p.x + m_(0, 1) * p.y + m_(0, 2);
  const double y = m_(1, 0) * p.x + m_(1, 1) * p.y + m_(1, 2);
  const double w = m_(2, 0) * p.x + m_(2, 1) * p.y + m_(2, 2);
  return {x / w, y / w};
}

std::string TransformSpec::to_record() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "scale=" << geometric.scale << '\n';
  os << "rotation_deg=" << geometric.rotation_deg << '\n';
  for (int i = 0; i < 4; ++i)
    os << "quad" << i << "=" << geometric.quad_offsets[i].x << ',' << geometric.quad_offsets[i].y << '\n';
  os << "flip=" << (geometric.flip ? 1 : 0) << '\n';
  os << "rot90=" << geometric.rot90 << '\n';
  os << "noise_std=" << photometric.noise_std << '\n';
  os << "blur_sigma=" << photometric.blur_sigma << '\n';
  os << "invert_enabled=" << (photometric.invert_enabled ? 1 : 0) << '\n';
  os << "invert_threshold=" << photometric.invert_threshold << '\n';
  os << "seed=" << seed << '\n';
  const auto& m = homography.matrix();
  os << "homography=";
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) os << m(r, c) << (r == 2 && c == 2 ? '\n' : ',');
  return os.str();
}

Homography scale_about_center(double scale, ImageSize size) {
  Eigen::Matrix3d s = Eigen::Matrix3d::Identity();
  s(0, 0) = scale;
  s(1, 1) = scale;
  return about_center(s, size);
}

Homography rotation_about_center(double degrees, ImageSize size) {
  double c = 0.0;
  double s = 0.0;
  const double quarter = degrees / 90.0;
  if (quarter == std::round(quarter)) {
    // Exact values for right angles so 90-degree turns resample without drift.
    const int q = ((static_cast<int>(std::round(quarter)) % 4) + 4) % 4;
    constexpr int cos_tab[4] = {1, 0, -1, 0};
    constexpr int sin_tab[4] = {0, 1, 0, -1};
    c = cos_tab[q];
    s = sin_tab[q];
  } else {
    const double rad = degrees * std::numbers::pi / 180.0;
    c = std::cos(rad);
    s = std::sin(rad);
  }
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  r(0, 0) = c;
  r(0, 1) = -s;
  r(1, 0) = s;
  r(1, 1) = c;
  return about_center(r, size);
}

Homography flip_horizontal(ImageSize size) {
  Eigen::Matrix3d f = Eigen::Matrix3d::Identity();
  f(0, 0) = -1.0;
  return about_center(f, size);
}

Homography homography_from_points(const std::array<Point2, 4>& from, const std::array<Point2, 4>& to) {
  Eigen::Matrix<double, 8, 8> a;
  Eigen::Matrix<double, 8, 1> b;
  for (int i = 0; i < 4; ++i) {
    const double x = from[i].x, y = from[i].y, u = to[i].x, v = to[i].y;
    a.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    a.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    b(2 * i) = u;
    b(2 * i + 1) = v;
  }
  const Eigen::Matrix<double, 8, 1> h = a.fullPivLu().solve(b);
  Eigen::Matrix3d m;
  m << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
  return Homography(m);
}

Homography quad_projection(const std::array<Point2, 4>& offsets, ImageSize size) {
  if (all_zero(offsets)) return Homography::identity();
  const auto target = displaced_corners(offsets, size);
  if (!strictly_convex(target)) throw std::invalid_argument("degenerate projection quad (corners self-intersect)");
  return homography_from_points(image_corners(size), target);
}

Homography compose_homography(const GeometricParams& p, ImageSize size) {
  Homography h = quad_projection(p.quad_offsets, size);
  if (p.flip) h = flip_horizontal(size).after(h);
  if (p.rot90 != 0) h = rotation_about_center(p.rot90, size).after(h);
  if (p.rotation_deg != 0.0) h = rotation_about_center(p.rotation_deg, size).after(h);
  if (p.scale != 1.0) h = scale_about_center(p.scale, size).after(h);
  return h;
}

TransformSpec sample_transform(Rng& rng, const TransformConfig& config, ImageSize size) {
  config.validate();
  if (size.height < 8 || size.width < 8) throw ConfigError("transform image size must be at least 8x8");
  TransformSpec spec;
  auto& g = spec.geometric;
  g.scale = uniform(rng, config.scale.min, config.scale.max);
  g.rotation_deg = uniform(rng, config.rotation_deg.min, config.rotation_deg.max);
  for (int attempt = 0;; ++attempt) {
    for (auto& o : g.quad_offsets) {
      o.x = uniform(rng, 0.0, config.projection_ratio);
      o.y = uniform(rng, 0.0, config.projection_ratio);
    }
    if (all_zero(g.quad_offsets) || strictly_convex(displaced_corners(g.quad_offsets, size))) break;
    if (attempt > 100) throw std::runtime_error("could not sample a non-degenerate projection quad");
  }
  g.flip = bernoulli(rng, config.flip_probability);
  g.rot90 = config.rot90 ? 90 * static_cast<int>(uniform_index(rng, 4)) : 0;

  auto& ph = spec.photometric;
  ph.noise_std = config.noise_std;
  ph.blur_sigma = config.blur_sigma;
  ph.invert_enabled = bernoulli(rng, config.invert_probability);
  ph.invert_threshold = uniform(rng, config.invert_threshold.min, config.invert_threshold.max);

  spec.seed = rng();
  spec.homography = compose_homography(g, size);
  return spec;
}

Image apply_geometric(const Image& image, const Homography& h, ImageSize out_size) {
  if (image.empty()) throw std::invalid_argument("apply_geometric: empty image");
  const Homography inv = h.inverse();
  const ImageSize src = image.size2d();
  Image out = make_image(out_size.height, out_size.width);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < out_size.height; ++i)
    for (int j = 0; j < out_size.width; ++j) {
      const Point2 s = inv.apply({j + 0.5, i + 0.5});
      if (!src.contains(s)) continue;
      out.at(i, j) = bilinear_clamped(image, s.x - 0.5, s.y - 0.5);
    }
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (sigma <= 0.0) return {1.0};
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += k[i + radius];
  }
  for (auto& v : k) v /= sum;
  return k;
}

Image gaussian_blur(const Image& image, double sigma) {
  if (sigma <= 0.0) return image;
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  const int h = image.height();
  const int w = image.width();
  Image tmp = make_image(h, w);
  Image out = make_image(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int t = -r; t <= r; ++t) acc += k[t + r] * image.at(y, std::clamp(x + t, 0, w - 1));
      tmp.at(y, x) = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int t = -r; t <= r; ++t) acc += k[t + r] * tmp.at(std::clamp(y + t, 0, h - 1), x);
      out.at(y, x) = acc;
    }
  return out;
}

Image add_gaussian_noise(const Image& image, double std, Rng& rng) {
  Image out = image;
  if (std <= 0.0) return out;
  for (auto& v : out.values()) v += std * standard_normal(rng);
  return out;
}

Image invert_above(const Image& image, double threshold) {
  Image out = image;
  for (auto& v : out.values())
    if (v > threshold) v = 1.0 - v;
  return out;
}

Image apply_photometric(const Image& image, const PhotometricParams& params, Rng& rng) {
  if (image.empty()) throw std::invalid_argument("apply_photometric: empty image");
  if (params.noise_std < 0.0 || params.blur_sigma < 0.0 || params.invert_threshold < 0.0 || params.invert_threshold > 1.0)
    throw std::invalid_argument("apply_photometric: parameters out of range");
  Image out = params.invert_enabled ? invert_above(image, params.invert_threshold) : image;
  out = gaussian_blur(out, params.blur_sigma);
  out = add_gaussian_noise(out, params.noise_std, rng);
  for (auto& v : out.values()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

Image apply_transform(const Image& image, const TransformSpec& spec) {
  Rng noise(spec.seed);
  const Image shaded = apply_photometric(image, spec.photometric, noise);
  if (spec.homography.is_identity()) return shaded;
  return apply_geometric(shaded, spec.homography, image.size2d());
}

std::vector<MappedPoint> map_points(const std::vector<Point2>& points, const CorrespondenceMap& map) {
  std::vector<MappedPoint> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    const Point2 q = map.map(p);
    out.push_back({q, std::isfinite(q.x) && std::isfinite(q.y) && map.valid(q)});
  }
  return out;
}

CorrespondenceMap chain_correspondence(const CorrespondenceMap& u, const TransformSpec& a, const TransformSpec& b) {
  const Homography a_inv = a.homography.inverse();
  const Homography middle = u.kind == CorrespondenceMap::Kind::identity ? a_inv : u.forward.after(a_inv);
  const Homography chained = b.homography.after(middle);
  if (chained.is_identity()) return CorrespondenceMap::identity(u.source);
  return {CorrespondenceMap::Kind::composed, chained, u.source, u.target};
}

}  // namespace xmodal
