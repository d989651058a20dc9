// xmodal: train, evaluate, sweep and inspect cross-modality detect-and-describe models.
//
// Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "xmodal/config.hpp"
#include "xmodal/datasets.hpp"
#include "xmodal/evaluation.hpp"
#include "xmodal/keyvalue.hpp"
#include "xmodal/model.hpp"
#include "xmodal/trainer.hpp"

namespace fs = std::filesystem;
using namespace xmodal;

namespace {

constexpr int kUsageError = 2;
constexpr int kRuntimeError = 1;

// Options every config-driven subcommand accepts.
struct Common {
  std::optional<std::string> config_file;
  std::vector<std::string> sets;
  // Flag overrides, appended after the file and --set values.
  std::vector<Assignment> flags;

  RunConfig resolve() const {
    std::vector<Assignment> all;
    if (config_file) all = read_config_file(*config_file);
    for (const auto& s : sets) all.push_back(parse_assignment(s));
    all.insert(all.end(), flags.begin(), flags.end());
    RunConfig c = RunConfig::resolve(all);
    c.validate();
    return c;
  }
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--config", common.config_file, "Config file of `key = value` lines");
  cmd->add_option("--set", common.sets, "Override one key (key=value); repeatable");
}

// Registers a flag that becomes the assignment `key=<value>` when given.
CLI::Option* add_override(CLI::App* cmd, const std::string& name, const std::string& key, Common& common,
                          const std::string& help) {
  return cmd->add_option_function<std::string>(
      name, [&common, key](const std::string& v) { common.flags.emplace_back(key, v); }, help);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

void echo_config(const fs::path& dir, const RunConfig& cfg) { write_text(dir / "config.txt", cfg.to_text()); }

SplitResult load_split(const RunConfig& cfg) {
  if (cfg.data.root.empty()) throw ConfigError("missing --data (or data.root)");
  if (!fs::is_directory(cfg.data.root)) throw ConfigError("dataset directory not found: " + cfg.data.root.string());
  return split_dataset(load_dataset(cfg.data.root, cfg.data.layout), cfg.split_request());
}

cv::Mat to_bgr8(const Image& img) {
  cv::Mat gray(img.height(), img.width(), CV_8U);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      gray.at<unsigned char>(y, x) = cv::saturate_cast<unsigned char>(img.at(y, x) * 255.0);
  cv::Mat bgr;
  cv::cvtColor(gray, bgr, cv::COLOR_GRAY2BGR);
  return bgr;
}

Homography read_homography(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open homography file " + path.string());
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      if (!(in >> m(r, c))) throw ConfigError(path.string() + ": expected 9 numbers");
  return Homography(m);
}

int cmd_train(const Common& common, const std::string& out_dir, const std::optional<std::string>& resume) {
  const RunConfig cfg = common.resolve();
  const SplitResult split = load_split(cfg);
  const fs::path out(out_dir);
  fs::create_directories(out);
  echo_config(out, cfg);
  split.train.save(out / "train_manifest.tsv");
  split.test.save(out / "test_manifest.tsv");

  std::vector<ImagePair> pairs = load_pairs(split.train);
  std::optional<Trainer> trainer;
  if (resume) {
    if (!fs::exists(*resume)) throw ConfigError("checkpoint not found: " + *resume);
    trainer.emplace(Trainer::resume(*resume, cfg.train, std::move(pairs)));
  } else {
    fs::remove(out / "train_log.tsv");
    trainer.emplace(cfg.train, cfg.model, std::move(pairs));
  }
  trainer->set_log_path(out / "train_log.tsv");
  trainer->set_checkpoint_path(out / "model.ckpt");
  trainer->set_extra_meta("run.config", cfg.to_text());
  trainer->run();
  std::cout << "trained " << trainer->steps_done() << " steps; checkpoint " << (out / "model.ckpt").string() << '\n';
  return 0;
}

int cmd_eval(const Common& common, const std::string& checkpoint, const std::optional<std::string>& manifest_path,
             const std::optional<std::string>& kps_dir, const std::string& out_dir) {
  const RunConfig cfg = common.resolve();
  const DatasetManifest manifest = manifest_path ? DatasetManifest::load(*manifest_path) : load_split(cfg).test;
  if (manifest.entries.empty()) throw ConfigError("test set is empty");
  MetricsReport report;
  if (kps_dir) {
    std::vector<ExternalPair> pairs;
    for (const auto& e : manifest.entries) {
      const ImagePair p = load_pair(e);
      pairs.push_back({e.pair_id, read_keypoints(fs::path(*kps_dir) / (e.pair_id + ".visible.kps")),
                       read_keypoints(fs::path(*kps_dir) / (e.pair_id + ".other.kps")), p.correspondence});
    }
    report = evaluate_external(pairs, cfg.eval);
  } else {
    if (checkpoint.empty()) throw ConfigError("missing --checkpoint");
    report = evaluate_dataset(checkpoint, manifest, cfg.eval);
  }
  const fs::path out(out_dir);
  echo_config(out, cfg);
  report.write_tsv(out / "metrics.tsv");
  report.write_json(out / "metrics.json");
  for (const auto& a : report.aggregate)
    std::cout << "K=" << a.k << "\tNC=" << kv::format(a.nc) << "\tNCM=" << kv::format(a.ncm)
              << "\tCMR=" << (a.cmr ? kv::format(*a.cmr) : std::string("undefined")) << '\n';
  return 0;
}

int cmd_sweep(const Common& common, const std::string& out_dir) {
  const RunConfig cfg = common.resolve();
  const SplitResult split = load_split(cfg);
  const fs::path out(out_dir);
  fs::create_directories(out);
  echo_config(out, cfg);
  SweepOptions options;
  options.lambdas = cfg.sweep.lambdas;
  options.seeds = cfg.sweep.seeds;
  options.eval = cfg.eval;
  options.out_dir = out / "runs";
  const SweepResult result =
      sweep_lambda(cfg.train, cfg.model, load_pairs(split.train), load_pairs(split.test), options);
  result.write_tsv(out / "sweep.tsv");
  result.write_plot(out / "sweep.png");
  for (const auto& r : result.rows)
    std::cout << "lambda=" << kv::format(r.lambda) << "\tK=" << r.k << "\tNCM=" << kv::format(r.mean_ncm) << '\n';
  return 0;
}

int cmd_synth(const Common& common, const std::string& out_dir) {
  const RunConfig cfg = common.resolve();
  if (cfg.synth.n == 0) throw ConfigError("--n must be >= 1");
  const DatasetManifest m = make_synthetic_dataset(out_dir, cfg.synth.n, cfg.synth_params(), cfg.synth.seed);
  echo_config(out_dir, cfg);
  std::cout << "wrote " << m.size() << " pairs to " << out_dir << '\n';
  return 0;
}

int cmd_match(const Common& common, const std::string& checkpoint, const std::string& image_a,
              const std::string& image_b, const std::optional<std::string>& homography, bool identity,
              std::size_t k, const std::string& pair_id, const std::string& out_dir) {
  const RunConfig cfg = common.resolve();
  if (!fs::exists(checkpoint)) throw ConfigError("checkpoint not found: " + checkpoint);
  for (const auto& p : {image_a, image_b})
    if (!fs::exists(p)) throw ConfigError("image not found: " + p);
  if (homography && identity) throw ConfigError("--homography and --identity are exclusive");
  const ConvNet net = load_model(checkpoint);
  const Image a = read_image(image_a);
  const Image b = read_image(image_b);
  const KeypointSet ka = extract_keypoints(forward(net, a), k, cfg.eval.nms_radius);
  const KeypointSet kb = extract_keypoints(forward(net, b), k, cfg.eval.nms_radius);
  MatchSet matches = mutual_nn_match(ka.descriptors, kb.descriptors);

  std::optional<CorrespondenceMap> gt;
  if (identity) gt = CorrespondenceMap::identity(b.size2d());
  if (homography) gt = CorrespondenceMap::from_homography(read_homography(*homography), a.size2d(), b.size2d());
  std::size_t ncm = 0;
  if (gt) ncm = count_ncm(matches, ka.points, kb.points, *gt, cfg.eval.epsilon);

  const fs::path out(out_dir);
  fs::create_directories(out);
  echo_config(out, cfg);
  write_keypoints(ka, out / (pair_id + ".visible.kps"));
  write_keypoints(kb, out / (pair_id + ".other.kps"));
  {
    std::ofstream m(out / "matches.tsv");
    m << "a\tb\tdistance\tcorrect\n";
    for (const auto& mt : matches.matches)
      m << mt.a << '\t' << mt.b << '\t' << kv::format(mt.distance) << '\t' << (gt ? (mt.correct ? "1" : "0") : "-")
        << '\n';
  }

  cv::Mat left = to_bgr8(a);
  cv::Mat right = to_bgr8(b);
  cv::Mat canvas(std::max(left.rows, right.rows), left.cols + right.cols, CV_8UC3, cv::Scalar(0, 0, 0));
  left.copyTo(canvas(cv::Rect(0, 0, left.cols, left.rows)));
  right.copyTo(canvas(cv::Rect(left.cols, 0, right.cols, right.rows)));
  for (const auto& mt : matches.matches) {
    const cv::Scalar color = !gt ? cv::Scalar(0, 220, 255) : mt.correct ? cv::Scalar(0, 200, 0) : cv::Scalar(0, 0, 230);
    const cv::Point pa(static_cast<int>(ka.points[mt.a].x), static_cast<int>(ka.points[mt.a].y));
    const cv::Point pb(static_cast<int>(kb.points[mt.b].x) + left.cols, static_cast<int>(kb.points[mt.b].y));
    cv::line(canvas, pa, pb, color, 1, cv::LINE_AA);
    cv::circle(canvas, pa, 2, color, cv::FILLED);
    cv::circle(canvas, pb, 2, color, cv::FILLED);
  }
  if (!cv::imwrite((out / "matches.png").string(), canvas)) throw std::runtime_error("cannot write matches.png");

  std::cout << "keypoints " << ka.size() << " / " << kb.size() << ", mutual matches " << matches.size();
  if (gt) std::cout << ", correct " << ncm;
  std::cout << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modality detect-and-describe training and evaluation"};
  app.require_subcommand(1);

  Common train_c, eval_c, sweep_c, synth_c, match_c;

  std::string train_out = "runs/train";
  std::optional<std::string> resume;
  auto* train = app.add_subcommand("train", "Train a model on the train split");
  add_common(train, train_c);
  add_override(train, "--data", "data.root", train_c, "Dataset root");
  add_override(train, "--layout", "data.layout", train_c, "generic, roadscene or rgbnir");
  add_override(train, "--preset", "trainer.preset", train_c, "d2-style, r2d2-style or custom");
  add_override(train, "--lambda", "trainer.lambda", train_c, "SSL weight");
  train->add_option_function<std::string>(
      "--max-steps",
      [&](const std::string& v) {
        train_c.flags.emplace_back("trainer.epochs", "none");
        train_c.flags.emplace_back("trainer.max_steps", v);
      },
      "Optimization steps");
  add_override(train, "--epochs", "trainer.epochs", train_c, "Epochs (overrides --max-steps)");
  add_override(train, "--seed", "trainer.seed", train_c, "Training seed");
  train->add_option("--resume", resume, "Continue from a checkpoint");
  train->add_option("--out", train_out, "Output directory");

  std::string eval_ckpt, eval_out = "runs/eval";
  std::optional<std::string> eval_manifest, eval_kps;
  auto* eval = app.add_subcommand("eval", "Compute NC / NCM / CMR on the test split");
  add_common(eval, eval_c);
  eval->add_option("--checkpoint", eval_ckpt, "Model checkpoint");
  eval->add_option("--manifest", eval_manifest, "Test manifest (instead of --data)");
  eval->add_option("--keypoints", eval_kps,
                   "Directory of <pair_id>.visible.kps / <pair_id>.other.kps files to evaluate instead of a model");
  add_override(eval, "--data", "data.root", eval_c, "Dataset root; its test split is used");
  add_override(eval, "--layout", "data.layout", eval_c, "generic, roadscene or rgbnir");
  add_override(eval, "--k", "eval.ks", eval_c, "Comma-separated K values");
  add_override(eval, "--epsilon", "eval.epsilon", eval_c, "Correctness threshold (px)");
  add_override(eval, "--nms-radius", "eval.nms_radius", eval_c, "NMS radius (px)");
  add_override(eval, "--jobs", "eval.jobs", eval_c, "Worker cap");
  eval->add_option("--out", eval_out, "Output directory");

  std::string sweep_out = "runs/sweep";
  auto* sweep = app.add_subcommand("sweep-lambda", "Train and evaluate one model per (lambda, seed)");
  add_common(sweep, sweep_c);
  add_override(sweep, "--data", "data.root", sweep_c, "Dataset root");
  add_override(sweep, "--layout", "data.layout", sweep_c, "generic, roadscene or rgbnir");
  add_override(sweep, "--preset", "trainer.preset", sweep_c, "d2-style, r2d2-style or custom");
  add_override(sweep, "--lambdas", "sweep.lambdas", sweep_c, "Comma-separated lambdas");
  add_override(sweep, "--seeds", "sweep.seeds", sweep_c, "Comma-separated seeds");
  sweep->add_option_function<std::string>(
      "--max-steps",
      [&](const std::string& v) {
        sweep_c.flags.emplace_back("trainer.epochs", "none");
        sweep_c.flags.emplace_back("trainer.max_steps", v);
      },
      "Steps per run");
  add_override(sweep, "--k", "eval.ks", sweep_c, "Comma-separated K values");
  add_override(sweep, "--jobs", "eval.jobs", sweep_c, "Worker cap for evaluation");
  sweep->add_option("--out", sweep_out, "Output directory");

  std::string synth_out;
  auto* synth = app.add_subcommand("make-synthetic", "Write a procedural visible / pseudo-IR dataset");
  add_common(synth, synth_c);
  add_override(synth, "--n", "synth.n", synth_c, "Number of pairs");
  add_override(synth, "--size", "synth.size", synth_c, "Image side (px)");
  add_override(synth, "--seed", "synth.seed", synth_c, "Generator seed");
  add_override(synth, "--source", "synth.source", synth_c, "Directory of source images");
  synth->add_option("--out", synth_out, "Output dataset root")->required();

  std::string match_ckpt, match_a, match_b, match_out = "runs/match", match_id = "pair";
  std::optional<std::string> match_h;
  bool match_identity = false;
  std::size_t match_k = 1024;
  auto* match = app.add_subcommand("match", "Match one image pair and draw the result");
  add_common(match, match_c);
  match->add_option("--checkpoint", match_ckpt, "Model checkpoint")->required();
  match->add_option("--a", match_a, "Visible image")->required();
  match->add_option("--b", match_b, "Other-modality image")->required();
  match->add_option("--homography", match_h, "Ground truth: file with a 3x3 matrix mapping a to b");
  match->add_flag("--identity", match_identity, "Ground truth: the images are aligned");
  match->add_option("--k", match_k, "Keypoints per image");
  match->add_option("--pair-id", match_id, "Name used for the keypoint files");
  add_override(match, "--nms-radius", "eval.nms_radius", match_c, "NMS radius (px)");
  add_override(match, "--epsilon", "eval.epsilon", match_c, "Correctness threshold (px)");
  match->add_option("--out", match_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  }

  try {
    if (*train) return cmd_train(train_c, train_out, resume);
    if (*eval) return cmd_eval(eval_c, eval_ckpt, eval_manifest, eval_kps, eval_out);
    if (*sweep) return cmd_sweep(sweep_c, sweep_out);
    if (*synth) return cmd_synth(synth_c, synth_out);
    if (*match)
      return cmd_match(match_c, match_ckpt, match_a, match_b, match_h, match_identity, match_k, match_id, match_out);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kUsageError;
}
