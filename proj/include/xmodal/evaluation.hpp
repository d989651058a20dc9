#pragma once

// Test-time matching and the NC / NCM / CMR metrics, plus the lambda sweep driver.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xmodal/datasets.hpp"
#include "xmodal/model.hpp"
#include "xmodal/trainer.hpp"
#include "xmodal/transforms.hpp"

namespace xmodal {

struct Match {
  std::size_t a = 0;
  std::size_t b = 0;
  double distance = 0.0;  // Euclidean
  bool correct = false;
};

struct MatchSet {
  std::vector<Match> matches;
  /// Threshold used by the last count_ncm call; 0 before that.
  double epsilon = 0.0;

  std::size_t size() const { return matches.size(); }
};

/// Pairs (i, j) where j is i's nearest descriptor in b and i is j's nearest in a.
/// Ties go to the lowest index. Sorted by i.
MatchSet mutual_nn_match(const DescriptorSet& a, const DescriptorSet& b);

/// Keypoints i of a with U(p_a(i)) inside image b and some p_b(j) within epsilon of it.
std::size_t count_nc(const std::vector<Point2>& kps_a, const std::vector<Point2>& kps_b, const CorrespondenceMap& u,
                     double epsilon);

/// Matches with |U(p_a(i)) - p_b(j)| <= epsilon; sets each match's `correct` flag.
std::size_t count_ncm(MatchSet& matches, const std::vector<Point2>& kps_a, const std::vector<Point2>& kps_b,
                      const CorrespondenceMap& u, double epsilon);

/// 100 * ncm / nc; nullopt when nc = 0. Throws std::invalid_argument if ncm > nc.
std::optional<double> cmr(std::size_t ncm, std::size_t nc);
/// 100 * (value - base) / base. Throws std::invalid_argument if base <= 0.
double relative_improvement(double value, double base);

struct MetricsRow {
  std::string pair_id;
  std::size_t k = 0;
  std::size_t keypoints_a = 0;
  std::size_t keypoints_b = 0;
  std::size_t nc = 0;
  std::size_t ncm = 0;
  std::optional<double> cmr;
};

struct AggregateRow {
  std::size_t k = 0;
  std::size_t pairs = 0;
  double nc = 0.0;
  double ncm = 0.0;
  /// Mean over the pairs whose CMR is defined; nullopt when none is.
  std::optional<double> cmr;
  std::size_t cmr_pairs = 0;
};

struct MetricsReport {
  static constexpr const char* kPerPairMean = "per_pair_mean";

  std::vector<MetricsRow> rows;  // pair order, then K order
  std::vector<AggregateRow> aggregate;
  std::string aggregation = kPerPairMean;
  double epsilon = 3.0;

  const AggregateRow* aggregate_for(std::size_t k) const;

  /// Columns: scope, pair_id, k, keypoints_a, keypoints_b, nc, ncm, cmr.
  /// Aggregate rows use scope "mean" and pair id "*"; an undefined CMR is written "undefined".
  void write_tsv(const std::filesystem::path& path) const;
  void write_json(const std::filesystem::path& path) const;
};

struct EvalOptions {
  std::vector<std::size_t> ks{1024, 2048, 4096};
  double epsilon = 3.0;
  double nms_radius = 4.0;
  /// Worker cap; 0 uses the OpenMP default.
  int jobs = 0;
};

/// Rows for one pair at every K. Each K uses the first K entries of each keypoint set.
std::vector<MetricsRow> evaluate_keypoints(const std::string& pair_id, const KeypointSet& a, const KeypointSet& b,
                                           const CorrespondenceMap& u, const std::vector<std::size_t>& ks,
                                           double epsilon);

/// Per-pair mean of each metric, per K.
std::vector<AggregateRow> aggregate_rows(const std::vector<MetricsRow>& rows, const std::vector<std::size_t>& ks);

MetricsReport evaluate_dataset(const Network& net, const std::vector<ImagePair>& pairs, const EvalOptions& options);
MetricsReport evaluate_dataset(const std::filesystem::path& checkpoint, const DatasetManifest& manifest,
                               const EvalOptions& options);

/// Keypoints computed elsewhere, one file per image of a pair.
struct ExternalPair {
  std::string pair_id;
  KeypointSet a;
  KeypointSet b;
  CorrespondenceMap correspondence;
};
MetricsReport evaluate_external(const std::vector<ExternalPair>& pairs, const EvalOptions& options);

/// Text interchange format. First line:
///   # xmodal-keypoints v1 dim=<C> count=<N>
/// then one line per point, highest score first: x y score d_1 ... d_C
void write_keypoints(const KeypointSet& kps, const std::filesystem::path& path);
KeypointSet read_keypoints(const std::filesystem::path& path);

struct SweepOptions {
  std::vector<double> lambdas;
  std::vector<std::uint64_t> seeds;
  EvalOptions eval;
  /// When set, each run writes its checkpoint and log under <out_dir>/lambda_<l>_seed_<s>/.
  std::optional<std::filesystem::path> out_dir;
};

struct SweepRun {
  double lambda = 0.0;
  std::uint64_t seed = 0;
  MetricsReport report;
};

struct SweepRow {
  double lambda = 0.0;
  std::size_t k = 0;
  std::size_t seeds = 0;
  double mean_nc = 0.0;
  double mean_ncm = 0.0;
  /// Seed mean of the per-run mean CMR; nullopt if no run had a defined CMR.
  std::optional<double> mean_cmr;
};

struct SweepResult {
  std::vector<SweepRow> rows;  // by lambda, then K
  std::vector<SweepRun> runs;

  const SweepRow* find(double lambda, std::size_t k) const;
  /// Columns: lambda, k, seeds, mean_nc, mean_ncm, mean_cmr.
  void write_tsv(const std::filesystem::path& path) const;
  /// Mean NCM against lambda, one line per K.
  void write_plot(const std::filesystem::path& path) const;
};

/// Trains one model per (lambda, seed). For a given seed every lambda starts from the
/// same initialization (model seed = training seed = the sweep seed) and sees the
/// same step seeds. Lambdas are sorted and must be distinct.
SweepResult sweep_lambda(const TrainConfig& base, const ModelConfig& model, const std::vector<ImagePair>& train,
                         const std::vector<ImagePair>& test, const SweepOptions& options);

}  // namespace xmodal
