#include "xmodal/trainer.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "xmodal/keyvalue.hpp"

namespace xmodal {

namespace {

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng rng_from_state(const std::string& state) {
  Rng rng;
  std::istringstream is(state);
  is >> rng;
  if (!is) throw ConfigError("checkpoint field 'trainer.rng' is malformed");
  return rng;
}

void restore_set(const Checkpoint& ck, const std::string& prefix, ParameterSet& into) {
  for (auto& p : into.items()) {
    const Parameter* stored = ck.find(prefix + p.name);
    if (!stored) throw ConfigError("checkpoint is missing tensor '" + prefix + p.name + "'");
    if (stored->shape != p.shape) throw ConfigError("checkpoint tensor '" + prefix + p.name + "' has the wrong shape");
    p.values = stored->values;
  }
}

}  // namespace

Preset parse_preset(const std::string& name) {
  if (name == "d2_style" || name == "d2-style" || name == "d2") return Preset::d2_style;
  if (name == "r2d2_style" || name == "r2d2-style" || name == "r2d2") return Preset::r2d2_style;
  if (name == "custom") return Preset::custom;
  throw ConfigError("unknown preset '" + name + "' (expected d2_style, r2d2_style or custom)");
}

std::string preset_name(Preset preset) {
  switch (preset) {
    case Preset::d2_style: return "d2_style";
    case Preset::r2d2_style: return "r2d2_style";
    case Preset::custom: return "custom";
  }
  return "custom";
}

TrainConfig TrainConfig::from_preset(Preset preset) {
  TrainConfig c;
  c.apply_preset(preset);
  return c;
}

void TrainConfig::apply_preset(Preset p) {
  preset = p;
  switch (p) {
    case Preset::d2_style:
      learning_rate = 1e-4;
      weight_decay = 1e-5;
      batch_size = 1;
      crop_size = 256;
      break;
    case Preset::r2d2_style:
      learning_rate = 1e-4;
      weight_decay = 5e-4;
      batch_size = 2;
      crop_size = 192;
      transforms.flip_probability = 0.5;
      transforms.rot90 = true;
      break;
    case Preset::custom:
      break;
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("trainer.learning_rate must be > 0");
  if (weight_decay < 0.0) throw ConfigError("trainer.weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("trainer.batch_size must be >= 1");
  if (crop_size < 8) throw ConfigError("trainer.crop_size must be >= 8");
  if (!(lambda >= 0.0)) throw ConfigError("trainer.lambda must be >= 0");
  if (margin < 0.0 || safe_radius < 0.0) throw ConfigError("loss margin and safe radius must be >= 0");
  if (correspondences < 2) throw ConfigError("loss.correspondences must be >= 2");
  transforms.validate();
}

std::size_t TrainConfig::total_steps(std::size_t train_pairs) const {
  if (!epochs) return max_steps;
  return (*epochs * train_pairs + batch_size - 1) / batch_size;
}

LossOptions TrainConfig::loss_options() const {
  LossOptions o;
  o.margin = margin;
  o.safe_radius = safe_radius;
  o.correspondences = correspondences;
  return o;
}

std::string TrainConfig::to_text() const {
  using kv::format;
  std::ostringstream os;
  os << "trainer.preset=" << preset_name(preset) << '\n'
     << "trainer.learning_rate=" << format(learning_rate) << '\n'
     << "trainer.weight_decay=" << format(weight_decay) << '\n'
     << "trainer.batch_size=" << batch_size << '\n'
     << "trainer.crop_size=" << crop_size << '\n'
     << "trainer.max_steps=" << max_steps << '\n'
     << "trainer.epochs=" << (epochs ? std::to_string(*epochs) : std::string("none")) << '\n'
     << "trainer.lambda=" << format(lambda) << '\n'
     << "trainer.seed=" << seed << '\n'
     << "trainer.checkpoint_every=" << checkpoint_every << '\n'
     << "loss.margin=" << format(margin) << '\n'
     << "loss.safe_radius=" << format(safe_radius) << '\n'
     << "loss.correspondences=" << correspondences << '\n'
     << "transforms.scale_min=" << format(transforms.scale.min) << '\n'
     << "transforms.scale_max=" << format(transforms.scale.max) << '\n'
     << "transforms.rotation_min_deg=" << format(transforms.rotation_deg.min) << '\n'
     << "transforms.rotation_max_deg=" << format(transforms.rotation_deg.max) << '\n'
     << "transforms.projection_ratio=" << format(transforms.projection_ratio) << '\n'
     << "transforms.flip_probability=" << format(transforms.flip_probability) << '\n'
     << "transforms.rot90=" << (transforms.rot90 ? "true" : "false") << '\n'
     << "transforms.noise_std=" << format(transforms.noise_std) << '\n'
     << "transforms.blur_sigma=" << format(transforms.blur_sigma) << '\n'
     << "transforms.invert_probability=" << format(transforms.invert_probability) << '\n'
     << "transforms.invert_threshold_min=" << format(transforms.invert_threshold.min) << '\n'
     << "transforms.invert_threshold_max=" << format(transforms.invert_threshold.max) << '\n';
  return os.str();
}

bool TrainConfig::set(const std::string& key, const std::string& v) {
  if (key == "trainer.preset") apply_preset(parse_preset(kv::trim(v)));
  else if (key == "trainer.learning_rate") learning_rate = kv::to_double(key, v);
  else if (key == "trainer.weight_decay") weight_decay = kv::to_double(key, v);
  else if (key == "trainer.batch_size") batch_size = kv::to_size(key, v);
  else if (key == "trainer.crop_size") crop_size = static_cast<int>(kv::to_int(key, v));
  else if (key == "trainer.max_steps") max_steps = kv::to_size(key, v);
  else if (key == "trainer.epochs") epochs = kv::trim(v) == "none" ? std::nullopt : std::optional(kv::to_size(key, v));
  else if (key == "trainer.lambda") lambda = kv::to_double(key, v);
  else if (key == "trainer.seed") seed = kv::to_u64(key, v);
  else if (key == "trainer.checkpoint_every") checkpoint_every = kv::to_size(key, v);
  else if (key == "loss.margin") margin = kv::to_double(key, v);
  else if (key == "loss.safe_radius") safe_radius = kv::to_double(key, v);
  else if (key == "loss.correspondences") correspondences = kv::to_size(key, v);
  else if (key == "transforms.scale_min") transforms.scale.min = kv::to_double(key, v);
  else if (key == "transforms.scale_max") transforms.scale.max = kv::to_double(key, v);
  else if (key == "transforms.rotation_min_deg") transforms.rotation_deg.min = kv::to_double(key, v);
  else if (key == "transforms.rotation_max_deg") transforms.rotation_deg.max = kv::to_double(key, v);
  else if (key == "transforms.projection_ratio") transforms.projection_ratio = kv::to_double(key, v);
  else if (key == "transforms.flip_probability") transforms.flip_probability = kv::to_double(key, v);
  else if (key == "transforms.rot90") transforms.rot90 = kv::to_bool(key, v);
  else if (key == "transforms.noise_std") transforms.noise_std = kv::to_double(key, v);
  else if (key == "transforms.blur_sigma") transforms.blur_sigma = kv::to_double(key, v);
  else if (key == "transforms.invert_probability") transforms.invert_probability = kv::to_double(key, v);
  else if (key == "transforms.invert_threshold_min") transforms.invert_threshold.min = kv::to_double(key, v);
  else if (key == "transforms.invert_threshold_max") transforms.invert_threshold.max = kv::to_double(key, v);
  else return false;
  return true;
}

AdamW::AdamW(const ParameterSet& layout, double learning_rate, double weight_decay, double beta1, double beta2,
             double eps)
    : lr_(learning_rate), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps), m_(layout.zeros_like()),
      v_(layout.zeros_like()) {}

void AdamW::step(ParameterSet& params, const ParameterSet& grads) {
  if (!params.same_layout(grads) || !params.same_layout(m_)) throw std::invalid_argument("AdamW: layout mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].values;
    const auto& g = grads[i].values;
    auto& m = m_[i].values;
    auto& v = v_[i].values;
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      p[k] -= lr_ * wd_ * p[k] + lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
}

std::string TrainLogRow::to_tsv() const {
  std::ostringstream os;
  os << step << '\t' << kv::format(loss.total) << '\t' << kv::format(loss.sl) << '\t' << kv::format(loss.ssl_vis)
     << '\t' << kv::format(loss.ssl_ir) << '\t' << kv::format(loss.lambda) << '\t' << kv::format(ms);
  return os.str();
}

Trainer::Trainer(TrainConfig config, const ModelConfig& model_config, std::vector<ImagePair> train_pairs)
    : config_(std::move(config)), net_(model_config),
      optimizer_(net_.parameters(), config_.learning_rate, config_.weight_decay), rng_(config_.seed),
      pairs_(std::move(train_pairs)) {
  config_.validate();
  if (pairs_.empty()) throw ConfigError("training set is empty");
}

Trainer Trainer::resume(const std::filesystem::path& checkpoint, TrainConfig config,
                        std::vector<ImagePair> train_pairs) {
  const Checkpoint ck = Checkpoint::load(checkpoint);
  ConvNet net = restore_model(ck);
  Trainer t(std::move(config), net.config(), std::move(train_pairs));
  t.net_ = std::move(net);
  restore_set(ck, "adam.m/", t.optimizer_.first_moment());
  restore_set(ck, "adam.v/", t.optimizer_.second_moment());
  const auto step = ck.meta.find("trainer.step");
  const auto rng = ck.meta.find("trainer.rng");
  if (step == ck.meta.end()) throw ConfigError("checkpoint has no field 'trainer.step'");
  if (rng == ck.meta.end()) throw ConfigError("checkpoint has no field 'trainer.rng'");
  t.optimizer_.set_steps(kv::to_size("trainer.step", step->second));
  t.rng_ = rng_from_state(rng->second);
  return t;
}

TrainLogRow Trainer::step() {
  const auto start = std::chrono::steady_clock::now();
  TrainLogRow row;
  row.rng_id = rng_();
  Rng step_rng(row.rng_id);
  const LossOptions options = config_.loss_options();

  ParameterSet grads = net_.parameters().zeros_like();
  double sl = 0.0, sv = 0.0, si = 0.0;
  std::size_t n_sl = 0, n_sv = 0, n_si = 0;
  for (std::size_t b = 0; b < config_.batch_size; ++b) {
    const ImagePair& pair = pairs_[uniform_index(step_rng, pairs_.size())];
    // Crops never exceed the image, and must tile the network stride.
    const int stride = net_.stride();
    auto fit = [&](int extent) { return std::min(config_.crop_size, extent) / stride * stride; };
    const ImageSize crop{fit(std::min(pair.visible.height(), pair.other.height())),
                         fit(std::min(pair.visible.width(), pair.other.width()))};
    const ImagePair cropped = random_crop_pair(pair, crop, step_rng);
    ParameterSet pair_grads = grads.zeros_like();
    const LossBreakdown lb =
        total_loss(net_, cropped, config_.lambda, config_.transforms, step_rng, options, &pair_grads);
    grads.add_scaled(pair_grads, 1.0 / static_cast<double>(config_.batch_size));
    sl += lb.sl;
    sv += lb.ssl_vis;
    si += lb.ssl_ir;
    n_sl += lb.n_sl;
    n_sv += lb.n_ssl_vis;
    n_si += lb.n_ssl_ir;
  }
  const double nb = static_cast<double>(config_.batch_size);
  row.loss = LossBreakdown::combine(sl / nb, sv / nb, si / nb, config_.lambda);
  row.loss.n_sl = n_sl;
  row.loss.n_ssl_vis = n_sv;
  row.loss.n_ssl_ir = n_si;
  row.step = optimizer_.steps() + 1;
  if (!std::isfinite(row.loss.total)) {
    append_log(row);
    throw std::runtime_error("non-finite loss at step " + std::to_string(row.step));
  }
  optimizer_.step(net_.parameters(), grads);
  row.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  log_.push_back(row);
  append_log(row);
  return row;
}

void Trainer::run() {
  const std::size_t total = total_steps();
  while (optimizer_.steps() < total) {
    step();
    if (checkpoint_path_ && config_.checkpoint_every > 0 && optimizer_.steps() % config_.checkpoint_every == 0 &&
        optimizer_.steps() < total)
      save_checkpoint(*checkpoint_path_);
  }
  if (checkpoint_path_) save_checkpoint(*checkpoint_path_);
}

void Trainer::append_log(const TrainLogRow& row) const {
  if (!log_path_) return;
  const bool fresh = !std::filesystem::exists(*log_path_) || std::filesystem::file_size(*log_path_) == 0;
  std::ofstream out(*log_path_, std::ios::app);
  if (!out) throw std::runtime_error("cannot write training log: " + log_path_->string());
  if (fresh) out << "step\ttotal\tsl\tssl_vis\tssl_ir\tlambda\tms\n";
  out << row.to_tsv() << '\n';
  if (!out) throw std::runtime_error("failed writing training log: " + log_path_->string());
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.meta = extra_meta_;
  store_model(net_, ck);
  ck.meta["trainer.config"] = config_.to_text();
  ck.meta["trainer.step"] = std::to_string(optimizer_.steps());
  ck.meta["trainer.rng"] = rng_state(rng_);
  for (const auto& p : optimizer_.first_moment().items()) ck.tensors.push_back({"adam.m/" + p.name, p.shape, p.values});
  for (const auto& p : optimizer_.second_moment().items()) ck.tensors.push_back({"adam.v/" + p.name, p.shape, p.values});
  return ck;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  checkpoint().save(path);
}

}  // namespace xmodal
