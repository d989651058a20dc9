#pragma once

// Joint objective L = L_SL + lambda * (L_SSL_vis + L_SSL_ir).
//
// L_SL compares the two modalities of an aligned pair through their ground-truth
// map U. Each SSL term compares one modality image with a randomly transformed
// copy of itself, using the transform's homography as ground truth.
// All terms share one detect-and-describe loss L_f.

#include <functional>
#include <vector>

#include "xmodal/datasets.hpp"
#include "xmodal/model.hpp"
#include "xmodal/transforms.hpp"

namespace xmodal {

struct CorrespondenceBatch {
  std::vector<Point2> points_a;
  std::vector<Point2> points_b;
  std::vector<char> valid;
  /// Set when fewer than the requested number of in-bounds samples were found.
  bool short_sample = false;

  std::size_t size() const { return points_a.size(); }
  std::size_t valid_count() const;
};

/// Pixel centers p drawn uniformly over the region of image a whose image U(p)
/// lies inside image b. Throws std::invalid_argument when that region is empty.
CorrespondenceBatch sample_correspondences(const CorrespondenceMap& map, ImageSize size_a, ImageSize size_b,
                                           std::size_t n, Rng& rng);

struct LossTerm {
  double value = 0.0;
  /// Correspondences that contributed (had at least one admissible negative).
  std::size_t n_used = 0;
  double mean_positive_distance = 0.0;
};

/// Signature shared by every detect-and-describe loss. Gradients with respect to
/// the dense maps are accumulated, multiplied by `grad_scale`, when the
/// corresponding pointer is non-null.
using DetectDescribeLoss = std::function<LossTerm(const FeatureOutput& a, const FeatureOutput& b,
                                                  const CorrespondenceBatch& batch, DenseGrad* grad_a,
                                                  DenseGrad* grad_b, double grad_scale)>;

/// Score-weighted triplet margin ranking loss with in-batch hardest negatives.
///
/// For each valid correspondence c with descriptors d_a(c), d_b(U(c)):
///   p(c) = |d_a(c) - d_b(U(c))|
///   n(c) = min over other batch points q farther than `safe_radius` pixels from the
///          true match (in the respective image) of |d_a(c) - d_b(q)| and |d_a(q) - d_b(U(c))|
///   m(c) = max(0, margin + p(c)^2 - n(c)^2)
///   L    = sum w(c) m(c) / sum w(c),  w(c) = S_a(c) S_b(U(c))
/// Correspondences without any admissible negative are left out; if none remain the loss is 0.
/// Throws std::invalid_argument for fewer than two valid correspondences.
LossTerm reference_df_loss(const FeatureOutput& a, const FeatureOutput& b, const CorrespondenceBatch& batch,
                           double margin, double safe_radius, DenseGrad* grad_a = nullptr,
                           DenseGrad* grad_b = nullptr, double grad_scale = 1.0);

struct LossOptions {
  double margin = 1.0;
  double safe_radius = 8.0;
  std::size_t correspondences = 128;
  /// Replaces the reference loss when set.
  DetectDescribeLoss custom;

  LossTerm evaluate(const FeatureOutput& a, const FeatureOutput& b, const CorrespondenceBatch& batch,
                    DenseGrad* grad_a, DenseGrad* grad_b, double grad_scale) const;
};

/// L_f(I_vis, I_other, U). Parameter gradients (times grad_scale) are accumulated into `grads` when given.
LossTerm sl_loss(const Network& net, const ImagePair& pair, Rng& rng, const LossOptions& options = {},
                 ParameterSet* grads = nullptr, double grad_scale = 1.0);

/// L_f(I, T(I), T) with T drawn from `config`.
LossTerm ssl_loss(const Network& net, const Image& image, const TransformConfig& config, Rng& rng,
                  const LossOptions& options = {}, ParameterSet* grads = nullptr, double grad_scale = 1.0);

struct LossBreakdown {
  double total = 0.0;
  double sl = 0.0;
  double ssl_vis = 0.0;
  double ssl_ir = 0.0;
  double lambda = 0.0;
  std::size_t n_sl = 0;
  std::size_t n_ssl_vis = 0;
  std::size_t n_ssl_ir = 0;

  /// total = sl + lambda * (ssl_vis + ssl_ir).
  static LossBreakdown combine(double sl, double ssl_vis, double ssl_ir, double lambda);
  bool satisfies_identity() const { return total == sl + lambda * (ssl_vis + ssl_ir); }
};

/// Draws three child seeds from `rng` (SL, SSL visible, SSL other, in that order) so
/// each term can be reproduced on its own with sl_loss / ssl_loss.
struct TermSeeds {
  std::uint64_t sl;
  std::uint64_t ssl_vis;
  std::uint64_t ssl_ir;

  static TermSeeds draw(Rng& rng);
};

/// All three terms in one graph; the two modality images are forwarded once.
LossBreakdown total_loss(const Network& net, const ImagePair& pair, double lambda, const TransformConfig& config,
                         Rng& rng, const LossOptions& options = {}, ParameterSet* grads = nullptr);

}  // namespace xmodal
