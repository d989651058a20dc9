#include "testing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace xmodal::testing {

TempDir::TempDir(const std::string& tag) {
  std::random_device rd;
  path_ = std::filesystem::temp_directory_path() / ("xmodal_" + tag + "_" + std::to_string(rd()));
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

Tensor random_tensor(int c, int h, int w, Rng& rng, double lo, double hi) {
  Tensor t(c, h, w);
  for (double& v : t.values()) v = uniform(rng, lo, hi);
  return t;
}

FeatureOutput random_output(int c, int h, int w, Rng& rng, int stride) {
  return detect_and_describe(random_tensor(c, h, w, rng), stride, {h * stride, w * stride});
}

Image smooth_image(int h, int w, Rng& rng) {
  const double fx = uniform(rng, 0.5, 1.5), fy = uniform(rng, 0.5, 1.5), ph = uniform(rng, 0.0, 6.28);
  Image img = make_image(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      img.at(y, x) = 0.5 + 0.4 * std::sin(fx * 2.0 * M_PI * x / w + ph) * std::cos(fy * 2.0 * M_PI * y / h);
  return img;
}

ModelConfig tiny_model(std::uint64_t seed) {
  ModelConfig c;
  c.widths = {4, 4, 4};
  c.descriptor_dim = 4;
  c.seed = seed;
  return c;
}

namespace {

struct Taps {
  int x0, y0, x1, y1;
  double fx, fy;
};

Taps taps(const FeatureOutput& out, Point2 p) {
  const int h = out.features.height(), w = out.features.width();
  double u = p.x / out.stride - 0.5, v = p.y / out.stride - 0.5;
  u = std::min(std::max(u, 0.0), w - 1.0);
  v = std::min(std::max(v, 0.0), h - 1.0);
  Taps t;
  t.x0 = static_cast<int>(u);
  t.y0 = static_cast<int>(v);
  t.x1 = std::min(t.x0 + 1, w - 1);
  t.y1 = std::min(t.y0 + 1, h - 1);
  t.fx = u - t.x0;
  t.fy = v - t.y0;
  return t;
}

double interp(const Tensor& m, int c, const Taps& t) {
  const double top = m(c, t.y0, t.x0) * (1 - t.fx) + m(c, t.y0, t.x1) * t.fx;
  const double bot = m(c, t.y1, t.x0) * (1 - t.fx) + m(c, t.y1, t.x1) * t.fx;
  return top * (1 - t.fy) + bot * t.fy;
}

double dist2(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

double px2(Point2 a, Point2 b) { return (a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y); }

}  // namespace

std::vector<double> oracle_descriptor(const FeatureOutput& out, Point2 p) {
  const Taps t = taps(out, p);
  std::vector<double> d(out.descriptors.channels());
  for (int c = 0; c < static_cast<int>(d.size()); ++c) d[c] = interp(out.descriptors, c, t);
  double n = 0;
  for (double v : d) n += v * v;
  n = std::sqrt(n);
  if (n > 0)
    for (double& v : d) v /= n;
  return d;
}

double oracle_score(const FeatureOutput& out, Point2 p) { return interp(out.scores, 0, taps(out, p)); }

double oracle_df_loss(const FeatureOutput& a, const FeatureOutput& b, const std::vector<Point2>& pa,
                      const std::vector<Point2>& pb, double margin, double safe_radius) {
  const std::size_t n = pa.size();
  std::vector<std::vector<double>> da, db;
  for (std::size_t i = 0; i < n; ++i) {
    da.push_back(oracle_descriptor(a, pa[i]));
    db.push_back(oracle_descriptor(b, pb[i]));
  }
  double num = 0, den = 0, plain = 0;
  int used = 0;
  for (std::size_t c = 0; c < n; ++c) {
    // Enumerate every candidate negative explicitly.
    std::vector<double> candidates;
    for (std::size_t q = 0; q < n; ++q) {
      if (q == c) continue;
      if (std::sqrt(px2(pb[q], pb[c])) > safe_radius) candidates.push_back(dist2(da[c], db[q]));
      if (std::sqrt(px2(pa[q], pa[c])) > safe_radius) candidates.push_back(dist2(da[q], db[c]));
    }
    if (candidates.empty()) continue;
    const double neg = *std::min_element(candidates.begin(), candidates.end());
    const double m = std::max(0.0, margin + dist2(da[c], db[c]) - neg);
    const double w = oracle_score(a, pa[c]) * oracle_score(b, pb[c]);
    num += w * m;
    den += w;
    plain += m;
    ++used;
  }
  if (used == 0) return 0.0;
  return den > 1e-300 ? num / den : plain / used;
}

std::vector<std::pair<std::size_t, std::size_t>> oracle_mutual_nn(const DescriptorSet& a, const DescriptorSet& b) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  auto d = [&](std::size_t i, std::size_t j) {
    double s = 0;
    for (int k = 0; k < a.dim; ++k) s += (a.row(i)[k] - b.row(j)[k]) * (a.row(i)[k] - b.row(j)[k]);
    return s;
  };
  for (std::size_t i = 0; i < a.count(); ++i) {
    std::size_t best_j = 0;
    for (std::size_t j = 1; j < b.count(); ++j)
      if (d(i, j) < d(i, best_j)) best_j = j;
    std::size_t best_i = 0;
    for (std::size_t k = 1; k < a.count(); ++k)
      if (d(k, best_j) < d(best_i, best_j)) best_i = k;
    if (best_i == i) out.emplace_back(i, best_j);
  }
  return out;
}

std::size_t oracle_nc(const std::vector<Point2>& a, const std::vector<Point2>& b, const CorrespondenceMap& u,
                      double eps) {
  std::size_t n = 0;
  for (const auto& p : a) {
    const Point2 q = u.map(p);
    if (!(q.x >= 0 && q.y >= 0 && q.x < u.target.width && q.y < u.target.height)) continue;
    for (const auto& r : b)
      if (std::hypot(q.x - r.x, q.y - r.y) <= eps * (1 + 1e-15)) {
        ++n;
        break;
      }
  }
  return n;
}

std::vector<bool> oracle_ncm_flags(const std::vector<std::pair<std::size_t, std::size_t>>& matches,
                                   const std::vector<Point2>& a, const std::vector<Point2>& b,
                                   const CorrespondenceMap& u, double eps) {
  std::vector<bool> flags;
  for (const auto& [i, j] : matches) {
    const Point2 q = u.map(a[i]);
    const bool inside = q.x >= 0 && q.y >= 0 && q.x < u.target.width && q.y < u.target.height;
    flags.push_back(inside && std::hypot(q.x - b[j].x, q.y - b[j].y) <= eps * (1 + 1e-15));
  }
  return flags;
}

namespace {

Point2 about(Point2 p, ImageSize s, double a, double b, double c, double d) {
  const double cx = s.width / 2.0, cy = s.height / 2.0;
  const double x = p.x - cx, y = p.y - cy;
  return {cx + a * x + b * y, cy + c * x + d * y};
}

}  // namespace

Point2 oracle_sequential_geometry(const GeometricParams& g, ImageSize s, Point2 p) {
  p = quad_projection(g.quad_offsets, s).apply(p);
  if (g.flip) p = about(p, s, -1, 0, 0, 1);
  const double r90 = g.rot90 * M_PI / 180.0;
  p = about(p, s, std::cos(r90), -std::sin(r90), std::sin(r90), std::cos(r90));
  const double r = g.rotation_deg * M_PI / 180.0;
  p = about(p, s, std::cos(r), -std::sin(r), std::sin(r), std::cos(r));
  return about(p, s, g.scale, 0, 0, g.scale);
}

std::vector<Point2> oracle_keypoints(const FeatureOutput& out, std::size_t k, double radius) {
  const int h = out.scores.height(), w = out.scores.width();
  std::vector<std::pair<double, int>> cells;
  for (int i = 0; i < h * w; ++i) cells.emplace_back(-out.scores.values()[i], i);
  std::sort(cells.begin(), cells.end());  // descending score, then ascending index
  std::vector<Point2> taken;
  for (const auto& [neg, idx] : cells) {
    if (taken.size() == k) break;
    const Point2 p{(idx % w + 0.5) * out.stride, (idx / w + 0.5) * out.stride};
    bool ok = true;
    for (const auto& t : taken)
      if (std::hypot(p.x - t.x, p.y - t.y) < radius) ok = false;
    if (ok) taken.push_back(p);
  }
  return taken;
}

Tensor PointwiseNet::features(const Image& image, Tape* tape) const {
  if (tape) tape->activations.clear();
  Tensor f(4, image.height(), image.width());
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) {
      const double v = image.at(y, x);
      f(0, y, x) = std::cos(M_PI * v);
      f(1, y, x) = std::sin(M_PI * v);
      f(2, y, x) = 0.5 + v;
      f(3, y, x) = 1.5 - v;
    }
  return f;
}

double& flat_parameter(ParameterSet& set, std::size_t index) {
  for (auto& p : set.items()) {
    if (index < p.values.size()) return p.values[index];
    index -= p.values.size();
  }
  throw std::out_of_range("flat_parameter");
}

double flat_value(const ParameterSet& set, std::size_t index) {
  return flat_parameter(const_cast<ParameterSet&>(set), index);
}

double central_difference(ConvNet& net, std::size_t index, double h, const std::function<double()>& f) {
  double& v = flat_parameter(net.parameters(), index);
  const double saved = v;
  v = saved + h;
  const double plus = f();
  v = saved - h;
  const double minus = f();
  v = saved;
  return (plus - minus) / (2 * h);
}

double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace xmodal::testing
