#include "xmodal/losses.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "xmodal/kernels.hpp"

namespace xmodal {

namespace {

// One forward pass together with its tape and the dense gradient collected for it.
struct Pass {
  Tape tape;  // declared first: out's initializer writes into it
  FeatureOutput out;
  DenseGrad grad;

  Pass(const Network& net, const Image& image) : out(forward(net, image, &tape)), grad(DenseGrad::zeros_for(out)) {}

  void backpropagate(const Network& net, ParameterSet* grads) const {
    if (grads) backward(net, tape, out, grad, grads);
  }
};

double sq_pixel_distance(const Point2& a, const Point2& b) {
  return (a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y);
}

void add_diff(std::span<double> g, std::span<const double> x, std::span<const double> y, double scale) {
  for (std::size_t k = 0; k < g.size(); ++k) g[k] += 2.0 * (x[k] - y[k]) * scale;
}

std::span<double> row(DescriptorSet& s, std::size_t i) { return {s.values.data() + i * s.dim, static_cast<std::size_t>(s.dim)}; }

LossTerm ssl_term(const Network& net, Pass& base, const Image& image, const TransformConfig& config, Rng& rng,
                  const LossOptions& options, ParameterSet* grads, double grad_scale) {
  const ImageSize size = image.size2d();
  const TransformSpec spec = sample_transform(rng, config, size);
  const Image warped = apply_transform(image, spec);
  Pass moved(net, warped);
  const auto map = CorrespondenceMap::from_homography(spec.homography, size, size);
  const auto batch = sample_correspondences(map, size, size, options.correspondences, rng);
  const bool want_grad = grads != nullptr && grad_scale != 0.0;
  const LossTerm term = options.evaluate(base.out, moved.out, batch, want_grad ? &base.grad : nullptr,
                                         want_grad ? &moved.grad : nullptr, grad_scale);
  if (want_grad) moved.backpropagate(net, grads);
  return term;
}

LossTerm sl_term(Pass& vis, Pass& other, const ImagePair& pair, Rng& rng, const LossOptions& options, bool want_grad,
                 double grad_scale) {
  const auto batch = sample_correspondences(pair.correspondence, pair.visible.size2d(), pair.other.size2d(),
                                            options.correspondences, rng);
  return options.evaluate(vis.out, other.out, batch, want_grad ? &vis.grad : nullptr,
                          want_grad ? &other.grad : nullptr, grad_scale);
}

}  // namespace

std::size_t CorrespondenceBatch::valid_count() const {
  std::size_t n = 0;
  for (char v : valid) n += v ? 1 : 0;
  return n;
}

CorrespondenceBatch sample_correspondences(const CorrespondenceMap& map, ImageSize size_a, ImageSize size_b,
                                           std::size_t n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample_correspondences: n must be >= 1");
  CorrespondenceBatch batch;
  const std::size_t max_attempts = 50 * n;
  for (std::size_t attempt = 0; attempt < max_attempts && batch.size() < n; ++attempt) {
    const Point2 p{static_cast<double>(uniform_index(rng, size_a.width)) + 0.5,
                   static_cast<double>(uniform_index(rng, size_a.height)) + 0.5};
    const Point2 q = map.map(p);
    if (!size_b.contains(q)) continue;
    batch.points_a.push_back(p);
    batch.points_b.push_back(q);
    batch.valid.push_back(1);
  }
  if (batch.size() == 0) {
    bool any = false;
    for (int y = 0; y < size_a.height && !any; ++y)
      for (int x = 0; x < size_a.width && !any; ++x) any = size_b.contains(map.map({x + 0.5, y + 0.5}));
    if (!any) throw std::invalid_argument("correspondence map has an empty valid region");
  }
  batch.short_sample = batch.size() < n;
  return batch;
}

LossTerm reference_df_loss(const FeatureOutput& a, const FeatureOutput& b, const CorrespondenceBatch& batch,
                           double margin, double safe_radius, DenseGrad* grad_a, DenseGrad* grad_b, double grad_scale) {
  std::vector<Point2> pa;
  std::vector<Point2> pb;
  for (std::size_t i = 0; i < batch.size(); ++i)
    if (batch.valid[i]) {
      pa.push_back(batch.points_a[i]);
      pb.push_back(batch.points_b[i]);
    }
  const std::size_t n = pa.size();
  if (n < 2) throw std::invalid_argument("reference_df_loss needs at least two valid correspondences");

  const DescriptorSet da = describe_at(a, pa);
  const DescriptorSet db = describe_at(b, pb);
  const std::vector<double> sa = scores_at(a, pa);
  const std::vector<double> sb = scores_at(b, pb);
  const double r2 = safe_radius * safe_radius;

  enum class Side { none, b, a };
  struct Term {
    double pos = 0.0;
    double neg = std::numeric_limits<double>::infinity();
    Side side = Side::none;
    std::size_t q = 0;
    double hinge = 0.0;
    double weight = 0.0;
  };
  std::vector<Term> terms(n);
  double weight_sum = 0.0;
  double weighted = 0.0;
  double unweighted = 0.0;
  LossTerm result;
  for (std::size_t c = 0; c < n; ++c) {
    Term& t = terms[c];
    t.pos = squared_distance(da.row(c), db.row(c));
    for (std::size_t q = 0; q < n; ++q) {
      if (q == c) continue;
      if (sq_pixel_distance(pb[q], pb[c]) > r2) {
        const double d = squared_distance(da.row(c), db.row(q));
        if (d < t.neg) {
          t.neg = d;
          t.side = Side::b;
          t.q = q;
        }
      }
      if (sq_pixel_distance(pa[q], pa[c]) > r2) {
        const double d = squared_distance(da.row(q), db.row(c));
        if (d < t.neg) {
          t.neg = d;
          t.side = Side::a;
          t.q = q;
        }
      }
    }
    if (t.side == Side::none) continue;
    t.hinge = std::max(0.0, margin + t.pos - t.neg);
    t.weight = sa[c] * sb[c];
    weight_sum += t.weight;
    weighted += t.weight * t.hinge;
    unweighted += t.hinge;
    result.mean_positive_distance += std::sqrt(t.pos);
    ++result.n_used;
  }
  if (result.n_used == 0) return result;
  result.mean_positive_distance /= static_cast<double>(result.n_used);
  // All-zero saliency falls back to the plain mean.
  const bool uniform_weights = !(weight_sum > 1e-300);
  result.value = uniform_weights ? unweighted / static_cast<double>(result.n_used) : weighted / weight_sum;

  if (!grad_a && !grad_b) return result;
  DescriptorSet gda{da.dim, std::vector<double>(da.values.size(), 0.0)};
  DescriptorSet gdb{db.dim, std::vector<double>(db.values.size(), 0.0)};
  std::vector<double> gsa(n, 0.0);
  std::vector<double> gsb(n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    const Term& t = terms[c];
    if (t.side == Side::none) continue;
    double g_hinge = 0.0;
    if (uniform_weights) {
      g_hinge = grad_scale / static_cast<double>(result.n_used);
    } else {
      g_hinge = grad_scale * t.weight / weight_sum;
      const double g_weight = grad_scale * (t.hinge - result.value) / weight_sum;
      gsa[c] += g_weight * sb[c];
      gsb[c] += g_weight * sa[c];
    }
    if (t.hinge <= 0.0) continue;
    add_diff(row(gda, c), da.row(c), db.row(c), g_hinge);
    add_diff(row(gdb, c), db.row(c), da.row(c), g_hinge);
    if (t.side == Side::b) {
      add_diff(row(gda, c), da.row(c), db.row(t.q), -g_hinge);
      add_diff(row(gdb, t.q), db.row(t.q), da.row(c), -g_hinge);
    } else {
      add_diff(row(gda, t.q), da.row(t.q), db.row(c), -g_hinge);
      add_diff(row(gdb, c), db.row(c), da.row(t.q), -g_hinge);
    }
  }
  if (grad_a) {
    describe_at_backward(a, pa, gda, *grad_a);
    scores_at_backward(a, pa, gsa, *grad_a);
  }
  if (grad_b) {
    describe_at_backward(b, pb, gdb, *grad_b);
    scores_at_backward(b, pb, gsb, *grad_b);
  }
  return result;
}

LossTerm LossOptions::evaluate(const FeatureOutput& a, const FeatureOutput& b, const CorrespondenceBatch& batch,
                               DenseGrad* grad_a, DenseGrad* grad_b, double grad_scale) const {
  if (custom) return custom(a, b, batch, grad_a, grad_b, grad_scale);
  return reference_df_loss(a, b, batch, margin, safe_radius, grad_a, grad_b, grad_scale);
}

LossTerm sl_loss(const Network& net, const ImagePair& pair, Rng& rng, const LossOptions& options, ParameterSet* grads,
                 double grad_scale) {
  Pass vis(net, pair.visible);
  Pass other(net, pair.other);
  const LossTerm term = sl_term(vis, other, pair, rng, options, grads != nullptr, grad_scale);
  vis.backpropagate(net, grads);
  other.backpropagate(net, grads);
  return term;
}

LossTerm ssl_loss(const Network& net, const Image& image, const TransformConfig& config, Rng& rng,
                  const LossOptions& options, ParameterSet* grads, double grad_scale) {
  Pass base(net, image);
  const LossTerm term = ssl_term(net, base, image, config, rng, options, grads, grad_scale);
  if (grad_scale != 0.0) base.backpropagate(net, grads);
  return term;
}

LossBreakdown LossBreakdown::combine(double sl, double ssl_vis, double ssl_ir, double lambda) {
  LossBreakdown b;
  b.sl = sl;
  b.ssl_vis = ssl_vis;
  b.ssl_ir = ssl_ir;
  b.lambda = lambda;
  b.total = sl + lambda * (ssl_vis + ssl_ir);
  return b;
}

TermSeeds TermSeeds::draw(Rng& rng) {
  TermSeeds s;
  s.sl = rng();
  s.ssl_vis = rng();
  s.ssl_ir = rng();
  return s;
}

LossBreakdown total_loss(const Network& net, const ImagePair& pair, double lambda, const TransformConfig& config,
                         Rng& rng, const LossOptions& options, ParameterSet* grads) {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  const TermSeeds seeds = TermSeeds::draw(rng);
  Pass vis(net, pair.visible);
  Pass other(net, pair.other);

  Rng sl_rng(seeds.sl);
  const LossTerm sl = sl_term(vis, other, pair, sl_rng, options, grads != nullptr, 1.0);
  Rng vis_rng(seeds.ssl_vis);
  const LossTerm sv = ssl_term(net, vis, pair.visible, config, vis_rng, options, grads, lambda);
  Rng ir_rng(seeds.ssl_ir);
  const LossTerm si = ssl_term(net, other, pair.other, config, ir_rng, options, grads, lambda);

  vis.backpropagate(net, grads);
  other.backpropagate(net, grads);

  LossBreakdown b = LossBreakdown::combine(sl.value, sv.value, si.value, lambda);
  b.n_sl = sl.n_used;
  b.n_ssl_vis = sv.n_used;
  b.n_ssl_ir = si.n_used;
  return b;
}

}  // namespace xmodal
