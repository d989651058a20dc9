#include "xmodal/config.hpp"

#include <fstream>
#include <sstream>

#include "xmodal/keyvalue.hpp"

namespace xmodal {

namespace {

std::string opt_text(const std::optional<double>& v) { return v ? kv::format(*v) : "none"; }
std::string opt_text(const std::optional<std::size_t>& v) { return v ? std::to_string(*v) : "none"; }

bool is_none(const std::string& v) { return kv::trim(v) == "none"; }

std::vector<int> to_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  for (std::size_t v : kv::to_size_list(key, value)) out.push_back(static_cast<int>(v));
  return out;
}

}  // namespace

Assignment parse_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + text + "'");
  Assignment a{kv::trim(text.substr(0, eq)), kv::trim(text.substr(eq + 1))};
  if (a.first.empty()) throw ConfigError("empty key in '" + text + "'");
  return a;
}

std::vector<Assignment> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::vector<Assignment> out;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (kv::trim(line).empty()) continue;
    try {
      out.push_back(parse_assignment(line));
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

void RunConfig::set(const std::string& key, const std::string& v) {
  if (train.set(key, v)) return;
  if (key == "model.widths") model.widths = to_int_list(key, v);
  else if (key == "model.descriptor_dim") model.descriptor_dim = static_cast<int>(kv::to_int(key, v));
  else if (key == "model.stride") model.stride = static_cast<int>(kv::to_int(key, v));
  else if (key == "model.seed") model.seed = kv::to_u64(key, v);
  else if (key == "data.root") data.root = kv::trim(v);
  else if (key == "data.layout") data.layout = parse_layout(kv::trim(v));
  else if (key == "data.test_fraction") data.test_fraction = is_none(v) ? std::nullopt : std::optional(kv::to_double(key, v));
  else if (key == "data.test_count") data.test_count = is_none(v) ? std::nullopt : std::optional(kv::to_size(key, v));
  else if (key == "data.per_scene_count")
    data.per_scene_count = is_none(v) ? std::nullopt : std::optional(kv::to_size(key, v));
  else if (key == "data.split_seed") data.split_seed = kv::to_u64(key, v);
  else if (key == "eval.ks") eval.ks = kv::to_size_list(key, v);
  else if (key == "eval.epsilon") eval.epsilon = kv::to_double(key, v);
  else if (key == "eval.nms_radius") eval.nms_radius = model.nms_radius = kv::to_double(key, v);
  else if (key == "eval.jobs") eval.jobs = static_cast<int>(kv::to_int(key, v));
  else if (key == "sweep.lambdas") sweep.lambdas = kv::to_double_list(key, v);
  else if (key == "sweep.seeds") sweep.seeds = kv::to_u64_list(key, v);
  else if (key == "synth.n") synth.n = kv::to_size(key, v);
  else if (key == "synth.size") synth.size = static_cast<int>(kv::to_int(key, v));
  else if (key == "synth.seed") synth.seed = kv::to_u64(key, v);
  else if (key == "synth.source") synth.source = is_none(v) ? std::nullopt : std::optional<std::filesystem::path>(kv::trim(v));
  else throw ConfigError("unknown config key '" + key + "'");
}

RunConfig RunConfig::resolve(const std::vector<Assignment>& assignments) {
  RunConfig c;
  for (auto it = assignments.rbegin(); it != assignments.rend(); ++it)
    if (it->first == "trainer.preset") {
      c.set(it->first, it->second);
      break;
    }
  for (const auto& [k, v] : assignments)
    if (k != "trainer.preset") c.set(k, v);
  return c;
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  std::istringstream trainer_lines(train.to_text());
  for (std::string line; std::getline(trainer_lines, line);) {
    const auto eq = line.find('=');
    os << line.substr(0, eq) << " = " << line.substr(eq + 1) << '\n';
  }
  os << "model.widths = " << kv::join(model.widths) << '\n'
     << "model.descriptor_dim = " << model.descriptor_dim << '\n'
     << "model.stride = " << model.stride << '\n'
     << "model.seed = " << model.seed << '\n'
     << "data.root = " << data.root.string() << '\n'
     << "data.layout = " << layout_name(data.layout) << '\n'
     << "data.test_fraction = " << opt_text(data.test_fraction) << '\n'
     << "data.test_count = " << opt_text(data.test_count) << '\n'
     << "data.per_scene_count = " << opt_text(data.per_scene_count) << '\n'
     << "data.split_seed = " << data.split_seed << '\n'
     << "eval.ks = " << kv::join(eval.ks) << '\n'
     << "eval.epsilon = " << kv::format(eval.epsilon) << '\n'
     << "eval.nms_radius = " << kv::format(eval.nms_radius) << '\n'
     << "eval.jobs = " << eval.jobs << '\n'
     << "sweep.lambdas = " << kv::join(sweep.lambdas) << '\n'
     << "sweep.seeds = " << kv::join(sweep.seeds) << '\n'
     << "synth.n = " << synth.n << '\n'
     << "synth.size = " << synth.size << '\n'
     << "synth.seed = " << synth.seed << '\n'
     << "synth.source = " << (synth.source ? synth.source->string() : std::string("none")) << '\n';
  return os.str();
}

SplitRequest RunConfig::split_request() const {
  if (!data.test_fraction && !data.test_count && !data.per_scene_count)
    return default_split(data.layout, data.split_seed);
  SplitRequest r;
  r.test_fraction = data.test_fraction;
  r.test_count = data.test_count;
  r.per_scene_count = data.per_scene_count;
  r.seed = data.split_seed;
  return r;
}

SyntheticParams RunConfig::synth_params() const {
  SyntheticParams p;
  p.size = {synth.size, synth.size};
  p.source_dir = synth.source;
  return p;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (data.test_fraction && !(*data.test_fraction > 0.0 && *data.test_fraction < 1.0))
    throw ConfigError("data.test_fraction must be in (0, 1)");
  for (std::size_t k : eval.ks)
    if (k < 1) throw ConfigError("eval.ks entries must be >= 1");
  if (!(eval.epsilon > 0.0)) throw ConfigError("eval.epsilon must be > 0");
  if (eval.nms_radius < 0.0) throw ConfigError("eval.nms_radius must be >= 0");
  if (eval.jobs < 0) throw ConfigError("eval.jobs must be >= 0");
  if (synth.size < 16) throw ConfigError("synth.size must be >= 16");
}

}  // namespace xmodal
