#include "xmodal/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "xmodal/kernels.hpp"

namespace xmodal {

namespace {

constexpr double kBetaEps = 1e-8;
constexpr double kNormFloor = 1e-12;
// Fixed input centering; without it the shared DC response aligns every descriptor at initialization.
constexpr double kInputMean = 0.5;
constexpr double kInputScale = 0.25;

std::size_t product(const std::vector<int>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

struct Bilinear {
  int x0, y0, x1, y1;
  double w00, w01, w10, w11;
};

// Bilinear taps for an image point on a map of cells of `stride` pixels.
Bilinear bilinear_taps(const FeatureOutput& out, const Point2& p) {
  if (!out.image_size.contains(p)) {
    std::ostringstream os;
    os << "point (" << p.x << ", " << p.y << ") is outside the " << out.image_size.width << "x"
       << out.image_size.height << " image";
    throw std::out_of_range(os.str());
  }
  const int h = out.descriptors.height();
  const int w = out.descriptors.width();
  const double u = std::clamp(p.x / out.stride - 0.5, 0.0, static_cast<double>(w - 1));
  const double v = std::clamp(p.y / out.stride - 0.5, 0.0, static_cast<double>(h - 1));
  Bilinear b;
  b.x0 = static_cast<int>(std::floor(u));
  b.y0 = static_cast<int>(std::floor(v));
  b.x1 = std::min(b.x0 + 1, w - 1);
  b.y1 = std::min(b.y0 + 1, h - 1);
  const double fx = u - b.x0;
  const double fy = v - b.y0;
  b.w00 = (1 - fy) * (1 - fx);
  b.w01 = (1 - fy) * fx;
  b.w10 = fy * (1 - fx);
  b.w11 = fy * fx;
  return b;
}

double sample(const Tensor& t, int c, const Bilinear& b) {
  return b.w00 * t(c, b.y0, b.x0) + b.w01 * t(c, b.y0, b.x1) + b.w10 * t(c, b.y1, b.x0) + b.w11 * t(c, b.y1, b.x1);
}

void scatter(Tensor& t, int c, const Bilinear& b, double g) {
  t(c, b.y0, b.x0) += b.w00 * g;
  t(c, b.y0, b.x1) += b.w01 * g;
  t(c, b.y1, b.x0) += b.w10 * g;
  t(c, b.y1, b.x1) += b.w11 * g;
}

// Per-cell quantities of the soft-detection head, shared by forward and backward.
struct HeadState {
  Tensor rectified;     // F+
  Tensor expv;          // exp(F+ - channel max)
  Tensor neighbourhood; // 3x3 sums of expv
  std::vector<double> channel_max_value;  // max_c F+ per cell
  std::vector<int> channel_argmax;        // argmax_c F+ per cell
  std::vector<int> best_channel;          // argmax_c alpha * beta per cell
  std::vector<double> gamma;
  double gamma_sum = 0.0;
};

HeadState head_state(const Tensor& f) {
  const int c = f.channels();
  const int h = f.height();
  const int w = f.width();
  const std::size_t n = f.plane();
  HeadState s;
  s.rectified = f;
  for (auto& v : s.rectified.values()) v = std::max(v, 0.0);
  s.expv = Tensor(c, h, w);
  s.neighbourhood = Tensor(c, h, w);
  for (int ch = 0; ch < c; ++ch) {
    const auto r = s.rectified.channel(ch);
    const double shift = *std::max_element(r.begin(), r.end());
    auto e = s.expv.channel(ch);
    for (std::size_t k = 0; k < n; ++k) e[k] = std::exp(r[k] - shift);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double z = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy;
            const int xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
            z += s.expv(ch, yy, xx);
          }
        s.neighbourhood(ch, y, x) = z;
      }
  }
  s.channel_max_value.assign(n, 0.0);
  s.channel_argmax.assign(n, 0);
  s.best_channel.assign(n, 0);
  s.gamma.assign(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    double m = -1.0;
    for (int ch = 0; ch < c; ++ch) {
      const double v = s.rectified.values()[ch * n + k];
      if (v > m) {
        m = v;
        s.channel_argmax[k] = ch;
      }
    }
    s.channel_max_value[k] = m;
    double best = -1.0;
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t i = ch * n + k;
      const double alpha = s.expv.values()[i] / s.neighbourhood.values()[i];
      const double beta = s.rectified.values()[i] / (m + kBetaEps);
      if (alpha * beta > best) {
        best = alpha * beta;
        s.best_channel[k] = ch;
      }
    }
    s.gamma[k] = best;
    s.gamma_sum += best;
  }
  return s;
}

bool degenerate_scores(const HeadState& s) { return !(s.gamma_sum > 1e-300); }

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_string(std::string& buf, const std::string& s) {
  put_u32(buf, static_cast<std::uint32_t>(s.size()));
  buf += s;
}

std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  std::uint64_t uint(int bytes) {
    need(bytes);
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += bytes;
    return v;
  }
  std::string string() {
    const auto n = uint(4);
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  double f64() { return std::bit_cast<double>(uint(8)); }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > data_.size() - pos_) throw ConfigError("checkpoint is truncated");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.values.size();
  return n;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet z = *this;
  for (auto& p : z.params_) std::fill(p.values.begin(), p.values.end(), 0.0);
  return z;
}

void ParameterSet::add_scaled(const ParameterSet& other, double scale) {
  if (!same_layout(other)) throw std::invalid_argument("parameter layouts differ");
  for (std::size_t i = 0; i < params_.size(); ++i)
    for (std::size_t k = 0; k < params_[i].values.size(); ++k) params_[i].values[k] += scale * other.params_[i].values[k];
}

double ParameterSet::squared_norm() const {
  double s = 0.0;
  for (const auto& p : params_)
    for (double v : p.values) s += v * v;
  return s;
}

bool ParameterSet::same_layout(const ParameterSet& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name != other.params_[i].name || params_[i].shape != other.params_[i].shape) return false;
  return true;
}

bool operator==(const ParameterSet& a, const ParameterSet& b) {
  if (!a.same_layout(b)) return false;
  for (std::size_t i = 0; i < a.params_.size(); ++i)
    if (a.params_[i].values != b.params_[i].values) return false;
  return true;
}

void ModelConfig::validate() const {
  if (widths.size() != 3) throw ConfigError("model needs exactly three hidden widths");
  for (int w : widths)
    if (w < 1) throw ConfigError("model widths must be positive");
  if (descriptor_dim < 4) throw ConfigError("descriptor dimension must be at least 4");
  if (stride != 1 && stride != 2 && stride != 4) throw ConfigError("stride must be 1, 2 or 4");
  if (nms_radius < 0.0) throw ConfigError("nms radius must be >= 0");
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << std::setprecision(17) << "widths=";
  for (std::size_t i = 0; i < widths.size(); ++i) os << (i ? "," : "") << widths[i];
  os << "\ndescriptor_dim=" << descriptor_dim << "\nstride=" << stride << "\nnms_radius=" << nms_radius
     << "\nseed=" << seed << '\n';
  return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig c;
  std::istringstream in(text);
  std::string line;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("malformed model config line: " + line);
      const std::string key = line.substr(0, eq);
      const std::string value = line.substr(eq + 1);
      if (key == "widths") {
        c.widths.clear();
        std::stringstream ss(value);
        std::string item;
        while (std::getline(ss, item, ',')) c.widths.push_back(std::stoi(item));
      } else if (key == "descriptor_dim") {
        c.descriptor_dim = std::stoi(value);
      } else if (key == "stride") {
        c.stride = std::stoi(value);
      } else if (key == "nms_radius") {
        c.nms_radius = std::stod(value);
      } else if (key == "seed") {
        c.seed = std::stoull(value);
      } else {
        throw ConfigError("unknown model config key: " + key);
      }
    }
  } catch (const std::logic_error& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

void DenseGrad::add_scaled(const DenseGrad& other, double scale) {
  auto axpy = [scale](std::vector<double>& y, const std::vector<double>& x) {
    if (y.size() != x.size()) throw std::invalid_argument("dense gradient shapes differ");
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += scale * x[i];
  };
  axpy(descriptors.values(), other.descriptors.values());
  axpy(scores.values(), other.scores.values());
}

ConvNet::ConvNet(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng(config_.seed);
  const std::vector<int> ins = {1, config_.widths[0], config_.widths[1], config_.widths[2]};
  const std::vector<int> outs = {config_.widths[0], config_.widths[1], config_.widths[2], config_.descriptor_dim};
  std::vector<Parameter> params;
  for (int l = 0; l < 4; ++l) {
    Parameter w{"conv" + std::to_string(l) + ".weight", {outs[l], ins[l], 3, 3}, {}};
    Parameter b{"conv" + std::to_string(l) + ".bias", {outs[l]}, {}};
    const double std = std::sqrt(2.0 / (ins[l] * 9.0));
    w.values.resize(product(w.shape));
    for (auto& v : w.values) v = std * standard_normal(rng);
    b.values.resize(outs[l]);
    for (auto& v : b.values) v = 0.01 * standard_normal(rng);
    params.push_back(std::move(w));
    params.push_back(std::move(b));
  }
  params_ = ParameterSet(std::move(params));
}

int ConvNet::layer_stride(int layer) const {
  if (layer == 1 && config_.stride >= 2) return 2;
  if (layer == 2 && config_.stride == 4) return 2;
  return 1;
}

Tensor ConvNet::features(const Image& image, Tape* tape) const {
  if (image.channels() != 1 || image.empty()) throw std::invalid_argument("network input must be a non-empty single-channel image");
  if (image.height() % config_.stride != 0 || image.width() % config_.stride != 0)
    throw std::invalid_argument("image size " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                                " is not divisible by stride " + std::to_string(config_.stride));
  Tensor x = image;
  for (auto& v : x.values()) v = (v - kInputMean) / kInputScale;
  if (tape) {
    tape->activations.clear();
    tape->activations.push_back(x);
  }
  for (int l = 0; l < 4; ++l) {
    Tensor y;
    const auto& w = params_[2 * l];
    const auto& b = params_[2 * l + 1];
    kernels::conv3x3_forward(x, w.values, b.values, w.shape[0], layer_stride(l), y);
    if (l < 3) {
      for (auto& v : y.values()) v = std::max(v, 0.0);
      if (tape) tape->activations.push_back(y);
    }
    x = std::move(y);
  }
  return x;
}

void ConvNet::backward(const Tape& tape, const Tensor& grad_features, ParameterSet* grads, Image* grad_input) const {
  if (tape.activations.size() != 4) throw std::invalid_argument("tape does not come from this network");
  ParameterSet scratch;
  if (!grads) {
    scratch = params_.zeros_like();
    grads = &scratch;
  }
  Tensor g = grad_features;
  for (int l = 3; l >= 0; --l) {
    const Tensor& input = tape.activations[l];
    const bool need_input_grad = l > 0 || grad_input != nullptr;
    Tensor gin;
    kernels::conv3x3_backward(input, params_[2 * l].values, layer_stride(l), g, need_input_grad ? &gin : nullptr,
                              (*grads)[2 * l].values, (*grads)[2 * l + 1].values);
    if (l > 0) {
      // input = relu(previous pre-activation)
      for (std::size_t k = 0; k < gin.size(); ++k)
        if (input.values()[k] <= 0.0) gin.values()[k] = 0.0;
    } else if (grad_input) {
      for (auto& v : gin.values()) v /= kInputScale;
      *grad_input = std::move(gin);
    }
    g = std::move(gin);
  }
}

FeatureOutput detect_and_describe(Tensor features, int stride, ImageSize image_size) {
  FeatureOutput out;
  out.stride = stride;
  out.image_size = image_size;
  const int c = features.channels();
  const std::size_t n = features.plane();
  out.descriptors = Tensor(c, features.height(), features.width());
  for (std::size_t k = 0; k < n; ++k) {
    double s = 0.0;
    for (int ch = 0; ch < c; ++ch) s += features.values()[ch * n + k] * features.values()[ch * n + k];
    const double norm = std::sqrt(s);
    if (norm < kNormFloor) continue;
    for (int ch = 0; ch < c; ++ch) out.descriptors.values()[ch * n + k] = features.values()[ch * n + k] / norm;
  }
  const HeadState s = head_state(features);
  out.scores = Tensor(1, features.height(), features.width());
  if (degenerate_scores(s)) {
    out.scores.fill(1.0 / static_cast<double>(n));
  } else {
    for (std::size_t k = 0; k < n; ++k) out.scores.values()[k] = s.gamma[k] / s.gamma_sum;
  }
  out.features = std::move(features);
  return out;
}

Tensor head_backward(const FeatureOutput& out, const DenseGrad& grad) {
  const Tensor& f = out.features;
  const int c = f.channels();
  const int h = f.height();
  const int w = f.width();
  const std::size_t n = f.plane();
  Tensor gf(c, h, w);

  // Descriptor path: D = F / |F|.
  for (std::size_t k = 0; k < n; ++k) {
    double norm2 = 0.0;
    double dot = 0.0;
    for (int ch = 0; ch < c; ++ch) {
      norm2 += f.values()[ch * n + k] * f.values()[ch * n + k];
      dot += out.descriptors.values()[ch * n + k] * grad.descriptors.values()[ch * n + k];
    }
    const double norm = std::sqrt(norm2);
    if (norm < kNormFloor) continue;
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t i = ch * n + k;
      gf.values()[i] += (grad.descriptors.values()[i] - out.descriptors.values()[i] * dot) / norm;
    }
  }

  // Score path.
  const HeadState s = head_state(f);
  if (degenerate_scores(s)) return gf;
  double mean = 0.0;
  for (std::size_t k = 0; k < n; ++k) mean += grad.scores.values()[k] * out.scores.values()[k];
  Tensor grect(c, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t k = static_cast<std::size_t>(y) * w + x;
      const double g_gamma = (grad.scores.values()[k] - mean) / s.gamma_sum;
      if (g_gamma == 0.0) continue;
      const int cb = s.best_channel[k];
      const std::size_t i = cb * n + k;
      const double m = s.channel_max_value[k];
      const double alpha = s.expv.values()[i] / s.neighbourhood.values()[i];
      const double beta = s.rectified.values()[i] / (m + kBetaEps);
      const double g_alpha = g_gamma * beta;
      const double g_beta = g_gamma * alpha;
      // beta = F+_cb / (max_c F+ + eps)
      grect.values()[i] += g_beta / (m + kBetaEps);
      grect.values()[s.channel_argmax[k] * n + k] -= g_beta * s.rectified.values()[i] / ((m + kBetaEps) * (m + kBetaEps));
      // alpha = e_k / sum over the neighbourhood of e
      grect.values()[i] += g_alpha * alpha;
      const double scale = g_alpha * alpha / s.neighbourhood.values()[i];
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy;
          const int xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
          grect(cb, yy, xx) -= scale * s.expv(cb, yy, xx);
        }
    }
  for (std::size_t i = 0; i < gf.size(); ++i)
    if (f.values()[i] > 0.0) gf.values()[i] += grect.values()[i];
  return gf;
}

FeatureOutput forward(const Network& net, const Image& image, Tape* tape) {
  return detect_and_describe(net.features(image, tape), net.stride(), image.size2d());
}

void backward(const Network& net, const Tape& tape, const FeatureOutput& out, const DenseGrad& grad,
              ParameterSet* param_grads, Image* grad_input) {
  net.backward(tape, head_backward(out, grad), param_grads, grad_input);
}

KeypointSet extract_keypoints(const FeatureOutput& out, std::size_t k, double nms_radius) {
  const int h = out.scores.height();
  const int w = out.scores.width();
  const auto& s = out.scores.values();
  std::vector<int> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return s[a] > s[b]; });

  std::vector<char> suppressed(s.size(), 0);
  const int reach = static_cast<int>(std::ceil(nms_radius / out.stride));
  KeypointSet kps;
  kps.descriptors.dim = out.descriptor_dim();
  std::vector<int> taken;
  for (int idx : order) {
    if (taken.size() >= k) break;
    if (suppressed[idx]) continue;
    taken.push_back(idx);
    const int y = idx / w;
    const int x = idx % w;
    for (int yy = std::max(0, y - reach); yy <= std::min(h - 1, y + reach); ++yy)
      for (int xx = std::max(0, x - reach); xx <= std::min(w - 1, x + reach); ++xx) {
        const double dy = static_cast<double>(yy - y) * out.stride;
        const double dx = static_cast<double>(xx - x) * out.stride;
        if (dx * dx + dy * dy < nms_radius * nms_radius) suppressed[yy * w + xx] = 1;
      }
  }
  const int c = out.descriptor_dim();
  for (int idx : taken) {
    const int y = idx / w;
    const int x = idx % w;
    kps.points.push_back(out.cell_center(y, x));
    kps.scores.push_back(s[idx]);
    for (int ch = 0; ch < c; ++ch) kps.descriptors.values.push_back(out.descriptors(ch, y, x));
  }
  return kps;
}

DescriptorSet describe_at(const FeatureOutput& out, const std::vector<Point2>& points) {
  const int c = out.descriptor_dim();
  DescriptorSet set;
  set.dim = c;
  set.values.resize(points.size() * c);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Bilinear b = bilinear_taps(out, points[i]);
    double* row = set.values.data() + i * c;
    double norm2 = 0.0;
    for (int ch = 0; ch < c; ++ch) {
      row[ch] = sample(out.descriptors, ch, b);
      norm2 += row[ch] * row[ch];
    }
    const double norm = std::sqrt(norm2);
    if (norm < kNormFloor) continue;
    for (int ch = 0; ch < c; ++ch) row[ch] /= norm;
  }
  return set;
}

void describe_at_backward(const FeatureOutput& out, const std::vector<Point2>& points, const DescriptorSet& grad_rows,
                          DenseGrad& grad) {
  const int c = out.descriptor_dim();
  std::vector<double> raw(c);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Bilinear b = bilinear_taps(out, points[i]);
    double norm2 = 0.0;
    for (int ch = 0; ch < c; ++ch) {
      raw[ch] = sample(out.descriptors, ch, b);
      norm2 += raw[ch] * raw[ch];
    }
    const double norm = std::sqrt(norm2);
    if (norm < kNormFloor) continue;
    const auto g = grad_rows.row(i);
    double dot = 0.0;
    for (int ch = 0; ch < c; ++ch) dot += raw[ch] / norm * g[ch];
    for (int ch = 0; ch < c; ++ch) scatter(grad.descriptors, ch, b, (g[ch] - raw[ch] / norm * dot) / norm);
  }
}

std::vector<double> scores_at(const FeatureOutput& out, const std::vector<Point2>& points) {
  std::vector<double> v(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) v[i] = sample(out.scores, 0, bilinear_taps(out, points[i]));
  return v;
}

void scores_at_backward(const FeatureOutput& out, const std::vector<Point2>& points, const std::vector<double>& grad,
                        DenseGrad& dense) {
  for (std::size_t i = 0; i < points.size(); ++i) scatter(dense.scores, 0, bilinear_taps(out, points[i]), grad[i]);
}

const Parameter* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");
  std::string buf = "XMODALCK";
  put_u32(buf, kVersion);
  put_u32(buf, static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    put_string(buf, k);
    put_string(buf, v);
  }
  put_u32(buf, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (product(t.shape) != t.values.size()) throw std::invalid_argument("tensor '" + t.name + "' shape mismatch");
    put_string(buf, t.name);
    put_u32(buf, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(buf, static_cast<std::uint32_t>(d));
    for (double v : t.values) put_u64(buf, std::bit_cast<std::uint64_t>(v));
  }
  put_u64(buf, fnv1a(buf));

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("checkpoint not found: " + path.string());
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < 8 + 4 + 8 || data.compare(0, 8, "XMODALCK") != 0)
    throw ConfigError("not a checkpoint file: " + path.string());
  const std::string_view body(data.data(), data.size() - 8);
  Reader tail(std::string_view(data).substr(data.size() - 8));
  if (tail.uint(8) != fnv1a(body)) throw ConfigError("checkpoint checksum mismatch (corrupt file): " + path.string());

  Reader r(body.substr(8));
  Checkpoint ck;
  const auto version = r.uint(4);
  if (version != kVersion)
    throw ConfigError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kVersion) + ")");
  const auto n_meta = r.uint(4);
  for (std::uint64_t i = 0; i < n_meta; ++i) {
    std::string k = r.string();
    ck.meta[k] = r.string();
  }
  const auto n_tensors = r.uint(4);
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    Parameter t;
    t.name = r.string();
    const auto nd = r.uint(4);
    if (nd > 8) throw ConfigError("checkpoint tensor '" + t.name + "' has too many dimensions");
    for (std::uint64_t d = 0; d < nd; ++d) t.shape.push_back(static_cast<int>(r.uint(4)));
    const std::size_t count = product(t.shape);
    if (count * 8 > r.remaining()) throw ConfigError("checkpoint is truncated");
    t.values.resize(count);
    for (auto& v : t.values) v = r.f64();
    ck.tensors.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw ConfigError("checkpoint has trailing bytes");
  return ck;
}

void store_model(const ConvNet& net, Checkpoint& ckpt) {
  ckpt.meta["model.config"] = net.config().to_text();
  for (const auto& p : net.parameters().items()) ckpt.tensors.push_back({"param/" + p.name, p.shape, p.values});
}

ConvNet restore_model(const Checkpoint& ckpt) {
  const auto it = ckpt.meta.find("model.config");
  if (it == ckpt.meta.end()) throw ConfigError("checkpoint has no model.config entry");
  ConvNet net(ModelConfig::from_text(it->second));
  for (auto& p : net.parameters().items()) {
    const Parameter* stored = ckpt.find("param/" + p.name);
    if (!stored) throw ConfigError("checkpoint is missing parameter '" + p.name + "'");
    if (stored->shape != p.shape) throw ConfigError("checkpoint parameter '" + p.name + "' has the wrong shape");
    p.values = stored->values;
  }
  return net;
}

ConvNet load_model(const std::filesystem::path& path) { return restore_model(Checkpoint::load(path)); }

}  // namespace xmodal
