#include "xmodal/evaluation.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "xmodal/kernels.hpp"
#include "xmodal/keyvalue.hpp"

namespace xmodal {

namespace {

DescriptorRows rows_of(const DescriptorSet& s) { return {s.values, s.dim}; }

KeypointSet prefix(const KeypointSet& kps, std::size_t k) {
  const std::size_t n = std::min(k, kps.size());
  KeypointSet out;
  out.points.assign(kps.points.begin(), kps.points.begin() + n);
  out.scores.assign(kps.scores.begin(), kps.scores.begin() + std::min(n, kps.scores.size()));
  out.descriptors.dim = kps.descriptors.dim;
  out.descriptors.values.assign(kps.descriptors.values.begin(),
                                kps.descriptors.values.begin() + n * kps.descriptors.dim);
  return out;
}

std::string cmr_text(const std::optional<double>& v) { return v ? kv::format(*v) : "undefined"; }

nlohmann::json cmr_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

// Runs body(i) for i in [0, n) on up to `jobs` threads; rethrows the first failure by index.
template <typename Body>
void parallel_for(std::size_t n, int jobs, Body body) {
  std::vector<std::exception_ptr> errors(n);
  const int threads = jobs > 0 ? jobs : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

MatchSet mutual_nn_match(const DescriptorSet& a, const DescriptorSet& b) {
  MatchSet set;
  if (a.count() == 0 || b.count() == 0) return set;
  if (a.dim != b.dim) throw std::invalid_argument("mutual_nn_match: descriptor dimensions differ");
  std::vector<int> ab, ba;
  std::vector<double> dab, dba;
  kernels::nearest_neighbors(rows_of(a), rows_of(b), ab, dab);
  kernels::nearest_neighbors(rows_of(b), rows_of(a), ba, dba);
  for (std::size_t i = 0; i < ab.size(); ++i) {
    const int j = ab[i];
    if (ba[j] == static_cast<int>(i)) set.matches.push_back({i, static_cast<std::size_t>(j), std::sqrt(dab[i]), false});
  }
  return set;
}

std::size_t count_nc(const std::vector<Point2>& kps_a, const std::vector<Point2>& kps_b, const CorrespondenceMap& u,
                     double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("count_nc: epsilon must be > 0");
  std::vector<Point2> mapped;
  mapped.reserve(kps_a.size());
  for (const auto& p : kps_a) {
    const Point2 q = u.map(p);
    if (u.valid(q)) mapped.push_back(q);
  }
  std::vector<char> flags;
  kernels::any_within(mapped, kps_b, epsilon, flags);
  return static_cast<std::size_t>(std::count(flags.begin(), flags.end(), 1));
}

std::size_t count_ncm(MatchSet& matches, const std::vector<Point2>& kps_a, const std::vector<Point2>& kps_b,
                      const CorrespondenceMap& u, double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("count_ncm: epsilon must be > 0");
  std::size_t n = 0;
  for (auto& m : matches.matches) {
    const Point2 q = u.map(kps_a.at(m.a));
    const Point2& p = kps_b.at(m.b);
    const double dx = q.x - p.x;
    const double dy = q.y - p.y;
    m.correct = u.valid(q) && dx * dx + dy * dy <= epsilon * epsilon;
    n += m.correct ? 1 : 0;
  }
  matches.epsilon = epsilon;
  return n;
}

std::optional<double> cmr(std::size_t ncm, std::size_t nc) {
  if (ncm > nc) throw std::invalid_argument("cmr: ncm (" + std::to_string(ncm) + ") exceeds nc (" + std::to_string(nc) + ")");
  if (nc == 0) return std::nullopt;
  return 100.0 * static_cast<double>(ncm) / static_cast<double>(nc);
}

double relative_improvement(double value, double base) {
  if (!(base > 0.0)) throw std::invalid_argument("relative_improvement: base must be > 0");
  return 100.0 * (value - base) / base;
}

const AggregateRow* MetricsReport::aggregate_for(std::size_t k) const {
  for (const auto& r : aggregate)
    if (r.k == k) return &r;
  return nullptr;
}

void MetricsReport::write_tsv(const std::filesystem::path& path) const {
  auto out = open_out(path);
  out << "# aggregation\t" << aggregation << "\n# epsilon\t" << kv::format(epsilon) << '\n';
  out << "scope\tpair_id\tk\tkeypoints_a\tkeypoints_b\tnc\tncm\tcmr\n";
  for (const auto& r : rows)
    out << "pair\t" << r.pair_id << '\t' << r.k << '\t' << r.keypoints_a << '\t' << r.keypoints_b << '\t' << r.nc
        << '\t' << r.ncm << '\t' << cmr_text(r.cmr) << '\n';
  for (const auto& r : aggregate)
    out << "mean\t*\t" << r.k << "\t\t\t" << kv::format(r.nc) << '\t' << kv::format(r.ncm) << '\t' << cmr_text(r.cmr)
        << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void MetricsReport::write_json(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["aggregation"] = aggregation;
  j["epsilon"] = epsilon;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows)
    j["rows"].push_back({{"pair_id", r.pair_id},
                         {"k", r.k},
                         {"keypoints_a", r.keypoints_a},
                         {"keypoints_b", r.keypoints_b},
                         {"nc", r.nc},
                         {"ncm", r.ncm},
                         {"cmr", cmr_json(r.cmr)}});
  j["aggregate"] = nlohmann::json::array();
  for (const auto& r : aggregate)
    j["aggregate"].push_back({{"k", r.k},
                              {"pairs", r.pairs},
                              {"nc", r.nc},
                              {"ncm", r.ncm},
                              {"cmr", cmr_json(r.cmr)},
                              {"cmr_pairs", r.cmr_pairs}});
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<MetricsRow> evaluate_keypoints(const std::string& pair_id, const KeypointSet& a, const KeypointSet& b,
                                           const CorrespondenceMap& u, const std::vector<std::size_t>& ks,
                                           double epsilon) {
  std::vector<MetricsRow> rows;
  for (std::size_t k : ks) {
    const KeypointSet pa = prefix(a, k);
    const KeypointSet pb = prefix(b, k);
    MetricsRow r;
    r.pair_id = pair_id;
    r.k = k;
    r.keypoints_a = pa.size();
    r.keypoints_b = pb.size();
    r.nc = count_nc(pa.points, pb.points, u, epsilon);
    MatchSet m = mutual_nn_match(pa.descriptors, pb.descriptors);
    r.ncm = count_ncm(m, pa.points, pb.points, u, epsilon);
    r.cmr = cmr(r.ncm, r.nc);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<AggregateRow> aggregate_rows(const std::vector<MetricsRow>& rows, const std::vector<std::size_t>& ks) {
  std::vector<AggregateRow> out;
  for (std::size_t k : ks) {
    AggregateRow a;
    a.k = k;
    double cmr_sum = 0.0;
    for (const auto& r : rows) {
      if (r.k != k) continue;
      ++a.pairs;
      a.nc += static_cast<double>(r.nc);
      a.ncm += static_cast<double>(r.ncm);
      if (r.cmr) {
        cmr_sum += *r.cmr;
        ++a.cmr_pairs;
      }
    }
    if (a.pairs > 0) {
      a.nc /= static_cast<double>(a.pairs);
      a.ncm /= static_cast<double>(a.pairs);
    }
    if (a.cmr_pairs > 0) a.cmr = cmr_sum / static_cast<double>(a.cmr_pairs);
    out.push_back(a);
  }
  return out;
}

MetricsReport evaluate_dataset(const Network& net, const std::vector<ImagePair>& pairs, const EvalOptions& options) {
  MetricsReport report;
  report.epsilon = options.epsilon;
  if (options.ks.empty()) return report;
  const std::size_t k_max = *std::max_element(options.ks.begin(), options.ks.end());
  std::vector<std::vector<MetricsRow>> per_pair(pairs.size());
  parallel_for(pairs.size(), options.jobs, [&](std::size_t i) {
    const ImagePair& p = pairs[i];
    // The greedy NMS order does not depend on K, so smaller K are prefixes of k_max.
    const KeypointSet a = extract_keypoints(forward(net, p.visible), k_max, options.nms_radius);
    const KeypointSet b = extract_keypoints(forward(net, p.other), k_max, options.nms_radius);
    per_pair[i] = evaluate_keypoints(p.pair_id, a, b, p.correspondence, options.ks, options.epsilon);
  });
  for (auto& rows : per_pair)
    for (auto& r : rows) report.rows.push_back(std::move(r));
  report.aggregate = aggregate_rows(report.rows, options.ks);
  return report;
}

MetricsReport evaluate_dataset(const std::filesystem::path& checkpoint, const DatasetManifest& manifest,
                               const EvalOptions& options) {
  if (!std::filesystem::exists(checkpoint)) throw ConfigError("checkpoint not found: " + checkpoint.string());
  if (manifest.entries.empty()) throw ConfigError("test manifest is empty");
  const ConvNet net = load_model(checkpoint);
  return evaluate_dataset(net, load_pairs(manifest), options);
}

MetricsReport evaluate_external(const std::vector<ExternalPair>& pairs, const EvalOptions& options) {
  MetricsReport report;
  report.epsilon = options.epsilon;
  std::vector<std::vector<MetricsRow>> per_pair(pairs.size());
  parallel_for(pairs.size(), options.jobs, [&](std::size_t i) {
    const ExternalPair& p = pairs[i];
    per_pair[i] = evaluate_keypoints(p.pair_id, p.a, p.b, p.correspondence, options.ks, options.epsilon);
  });
  for (auto& rows : per_pair)
    for (auto& r : rows) report.rows.push_back(std::move(r));
  report.aggregate = aggregate_rows(report.rows, options.ks);
  return report;
}

void write_keypoints(const KeypointSet& kps, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "# xmodal-keypoints v1 dim=" << kps.descriptors.dim << " count=" << kps.size() << '\n';
  out << std::setprecision(17);
  for (std::size_t i = 0; i < kps.size(); ++i) {
    out << kps.points[i].x << ' ' << kps.points[i].y << ' ' << (i < kps.scores.size() ? kps.scores[i] : 0.0);
    for (double v : kps.descriptors.row(i)) out << ' ' << v;
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

KeypointSet read_keypoints(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open keypoint file " + path.string());
  std::string line;
  std::getline(in, line);
  std::istringstream head(line);
  std::string hash, magic, version, dim_field, count_field;
  head >> hash >> magic >> version >> dim_field >> count_field;
  if (hash != "#" || magic != "xmodal-keypoints" || version != "v1" || dim_field.rfind("dim=", 0) != 0 ||
      count_field.rfind("count=", 0) != 0)
    throw ConfigError(path.string() + ": bad keypoint header");
  KeypointSet kps;
  kps.descriptors.dim = static_cast<int>(kv::to_int("dim", dim_field.substr(4)));
  const std::size_t count = kv::to_size("count", count_field.substr(6));
  if (kps.descriptors.dim < 1) throw ConfigError(path.string() + ": dim must be >= 1");
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw ConfigError(path.string() + ": expected " + std::to_string(count) + " points");
    std::istringstream ls(line);
    Point2 p;
    double s = 0.0;
    ls >> p.x >> p.y >> s;
    std::vector<double> d(kps.descriptors.dim);
    for (double& v : d) ls >> v;
    std::string extra;
    if (!ls || (ls >> extra))
      throw ConfigError(path.string() + ": malformed line " + std::to_string(i + 2));
    kps.points.push_back(p);
    kps.scores.push_back(s);
    kps.descriptors.values.insert(kps.descriptors.values.end(), d.begin(), d.end());
  }
  return kps;
}

const SweepRow* SweepResult::find(double lambda, std::size_t k) const {
  for (const auto& r : rows)
    if (r.lambda == lambda && r.k == k) return &r;
  return nullptr;
}

void SweepResult::write_tsv(const std::filesystem::path& path) const {
  auto out = open_out(path);
  out << "lambda\tk\tseeds\tmean_nc\tmean_ncm\tmean_cmr\n";
  for (const auto& r : rows)
    out << kv::format(r.lambda) << '\t' << r.k << '\t' << r.seeds << '\t' << kv::format(r.mean_nc) << '\t'
        << kv::format(r.mean_ncm) << '\t' << cmr_text(r.mean_cmr) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void SweepResult::write_plot(const std::filesystem::path& path) const {
  const int w = 640, h = 420, left = 70, right = 130, top = 30, bottom = 50;
  cv::Mat img(h, w, CV_8UC3, cv::Scalar(255, 255, 255));
  std::set<double> lambdas;
  std::set<std::size_t> ks;
  double y_max = 0.0;
  for (const auto& r : rows) {
    lambdas.insert(r.lambda);
    ks.insert(r.k);
    y_max = std::max(y_max, r.mean_ncm);
  }
  if (y_max <= 0.0) y_max = 1.0;
  const double l_min = lambdas.empty() ? 0.0 : *lambdas.begin();
  double l_max = lambdas.empty() ? 1.0 : *lambdas.rbegin();
  if (l_max <= l_min) l_max = l_min + 1.0;
  auto px = [&](double l, double v) {
    return cv::Point(left + static_cast<int>((l - l_min) / (l_max - l_min) * (w - left - right)),
                     h - bottom - static_cast<int>(v / (y_max * 1.1) * (h - top - bottom)));
  };
  const cv::Scalar black(0, 0, 0);
  cv::line(img, {left, h - bottom}, {w - right, h - bottom}, black, 1);
  cv::line(img, {left, h - bottom}, {left, top}, black, 1);
  for (double l : lambdas) {
    const cv::Point p = px(l, 0.0);
    cv::line(img, p, p + cv::Point(0, 5), black, 1);
    cv::putText(img, kv::format(l), p + cv::Point(-10, 22), cv::FONT_HERSHEY_SIMPLEX, 0.4, black, 1, cv::LINE_AA);
  }
  for (int t = 0; t <= 4; ++t) {
    const double v = y_max * 1.1 * t / 4.0;
    const cv::Point p = px(l_min, v);
    cv::line(img, p, p - cv::Point(5, 0), black, 1);
    std::ostringstream label;
    label << std::fixed << std::setprecision(1) << v;
    cv::putText(img, label.str(), p - cv::Point(55, -4), cv::FONT_HERSHEY_SIMPLEX, 0.4, black, 1, cv::LINE_AA);
  }
  cv::putText(img, "lambda", {(w - right + left) / 2 - 20, h - 12}, cv::FONT_HERSHEY_SIMPLEX, 0.5, black, 1,
              cv::LINE_AA);
  cv::putText(img, "mean NCM", {8, top - 10}, cv::FONT_HERSHEY_SIMPLEX, 0.5, black, 1, cv::LINE_AA);
  const cv::Scalar palette[] = {{200, 80, 30}, {40, 40, 220}, {40, 160, 40}, {160, 40, 160}, {20, 140, 200}};
  int series = 0;
  for (std::size_t k : ks) {
    const cv::Scalar color = palette[series % 5];
    cv::Point prev;
    bool first = true;
    for (const auto& r : rows) {
      if (r.k != k) continue;
      const cv::Point p = px(r.lambda, r.mean_ncm);
      if (!first) cv::line(img, prev, p, color, 2, cv::LINE_AA);
      cv::circle(img, p, 4, color, cv::FILLED, cv::LINE_AA);
      prev = p;
      first = false;
    }
    const cv::Point key(w - right + 15, top + 20 * series + 10);
    cv::line(img, key, key + cv::Point(20, 0), color, 2);
    cv::putText(img, "K=" + std::to_string(k), key + cv::Point(26, 4), cv::FONT_HERSHEY_SIMPLEX, 0.45, black, 1,
                cv::LINE_AA);
    ++series;
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), img)) throw std::runtime_error("cannot write " + path.string());
}

SweepResult sweep_lambda(const TrainConfig& base, const ModelConfig& model, const std::vector<ImagePair>& train,
                         const std::vector<ImagePair>& test, const SweepOptions& options) {
  if (options.lambdas.empty()) throw ConfigError("sweep needs at least one lambda");
  if (options.seeds.empty()) throw ConfigError("sweep needs at least one seed");
  std::vector<double> lambdas = options.lambdas;
  std::sort(lambdas.begin(), lambdas.end());
  if (std::adjacent_find(lambdas.begin(), lambdas.end()) != lambdas.end())
    throw ConfigError("sweep lambdas must be distinct");

  SweepResult result;
  for (double lambda : lambdas) {
    for (std::uint64_t seed : options.seeds) {
      TrainConfig cfg = base;
      cfg.lambda = lambda;
      cfg.seed = seed;
      ModelConfig mc = model;
      mc.seed = seed;
      Trainer trainer(cfg, mc, train);
      if (options.out_dir) {
        const auto dir = *options.out_dir / ("lambda_" + kv::format(lambda) + "_seed_" + std::to_string(seed));
        std::filesystem::create_directories(dir);
        std::filesystem::remove(dir / "train_log.tsv");
        trainer.set_log_path(dir / "train_log.tsv");
        trainer.set_checkpoint_path(dir / "model.ckpt");
      }
      trainer.run();
      result.runs.push_back({lambda, seed, evaluate_dataset(trainer.model(), test, options.eval)});
    }
    for (std::size_t k : options.eval.ks) {
      SweepRow row;
      row.lambda = lambda;
      row.k = k;
      double cmr_sum = 0.0;
      std::size_t cmr_runs = 0;
      for (const auto& run : result.runs) {
        if (run.lambda != lambda) continue;
        const AggregateRow* a = run.report.aggregate_for(k);
        if (!a) continue;
        ++row.seeds;
        row.mean_nc += a->nc;
        row.mean_ncm += a->ncm;
        if (a->cmr) {
          cmr_sum += *a->cmr;
          ++cmr_runs;
        }
      }
      if (row.seeds > 0) {
        row.mean_nc /= static_cast<double>(row.seeds);
        row.mean_ncm /= static_cast<double>(row.seeds);
      }
      if (cmr_runs > 0) row.mean_cmr = cmr_sum / static_cast<double>(cmr_runs);
      result.rows.push_back(row);
    }
  }
  return result;
}

}  // namespace xmodal
