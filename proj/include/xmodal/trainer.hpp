#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xmodal/datasets.hpp"
#include "xmodal/losses.hpp"
#include "xmodal/model.hpp"
#include "xmodal/transforms.hpp"

namespace xmodal {

enum class Preset { d2_style, r2d2_style, custom };
Preset parse_preset(const std::string& name);  // accepts d2_style / d2-style etc.
std::string preset_name(Preset preset);

struct TrainConfig {
  Preset preset = Preset::custom;
  double learning_rate = 1e-4;
  double weight_decay = 1e-5;
  std::size_t batch_size = 1;
  int crop_size = 256;
  std::size_t max_steps = 1000;
  /// When set, max_steps = epochs * |train set| / batch_size.
  std::optional<std::size_t> epochs;
  double lambda = 0.8;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
  TransformConfig transforms;
  double margin = 1.0;
  double safe_radius = 8.0;
  std::size_t correspondences = 128;

  /// D2-style: lr 1e-4, wd 1e-5, batch 1, 256 crops.
  /// R2D2-style: lr 1e-4, wd 5e-4, batch 2, 192 crops, plus flips and 90-degree turns.
  static TrainConfig from_preset(Preset preset);
  /// Applies a preset's values on top of the current config.
  void apply_preset(Preset p);

  void validate() const;
  std::size_t total_steps(std::size_t train_pairs) const;
  LossOptions loss_options() const;

  /// Namespaced `key=value` lines (trainer.*, transforms.*, loss.*).
  std::string to_text() const;
  /// Sets one namespaced key; returns false if the key does not belong here.
  bool set(const std::string& key, const std::string& value);
};

/// Adam with decoupled weight decay: p <- p - lr * wd * p - lr * m_hat / (sqrt(v_hat) + eps).
class AdamW {
 public:
  AdamW(const ParameterSet& layout, double learning_rate, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8);

  void step(ParameterSet& params, const ParameterSet& grads);

  std::size_t steps() const { return t_; }
  ParameterSet& first_moment() { return m_; }
  ParameterSet& second_moment() { return v_; }
  const ParameterSet& first_moment() const { return m_; }
  const ParameterSet& second_moment() const { return v_; }
  void set_steps(std::size_t t) { t_ = t; }

 private:
  double lr_, wd_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  ParameterSet m_, v_;
};

struct TrainLogRow {
  std::size_t step = 0;
  LossBreakdown loss;
  double ms = 0.0;
  /// Seed of the step's private generator.
  std::uint64_t rng_id = 0;

  /// step, total, sl, ssl_vis, ssl_ir, lambda, ms
  std::string to_tsv() const;
};

/// Joint SL + SSL optimization. Single-threaded runs are bit-reproducible per seed.
class Trainer {
 public:
  Trainer(TrainConfig config, const ModelConfig& model_config, std::vector<ImagePair> train_pairs);

  /// Continues from a checkpoint written by save_checkpoint. The network config
  /// and parameter shapes must match the checkpoint.
  static Trainer resume(const std::filesystem::path& checkpoint, TrainConfig config,
                        std::vector<ImagePair> train_pairs);

  /// Runs until the configured total step count. Writes the log (when a log path
  /// is set), periodic checkpoints and a final checkpoint (when an output path is set).
  void run();
  /// One optimization step.
  TrainLogRow step();

  void set_log_path(std::filesystem::path p) { log_path_ = std::move(p); }
  void set_checkpoint_path(std::filesystem::path p) { checkpoint_path_ = std::move(p); }
  /// Extra metadata copied into every checkpoint (e.g. the full run config).
  void set_extra_meta(std::string key, std::string value) { extra_meta_[std::move(key)] = std::move(value); }

  Checkpoint checkpoint() const;
  void save_checkpoint(const std::filesystem::path& path) const;

  const ConvNet& model() const { return net_; }
  const TrainConfig& config() const { return config_; }
  std::size_t steps_done() const { return optimizer_.steps(); }
  std::size_t total_steps() const { return config_.total_steps(pairs_.size()); }
  const std::vector<TrainLogRow>& log() const { return log_; }

 private:
  void append_log(const TrainLogRow& row) const;

  TrainConfig config_;
  ConvNet net_;
  AdamW optimizer_;
  Rng rng_;
  std::vector<ImagePair> pairs_;
  std::vector<TrainLogRow> log_;
  std::optional<std::filesystem::path> log_path_;
  std::optional<std::filesystem::path> checkpoint_path_;
  std::map<std::string, std::string> extra_meta_;
};

}  // namespace xmodal
