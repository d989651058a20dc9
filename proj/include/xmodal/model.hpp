#pragma once

// Detect-and-describe network: image -> dense feature map F -> unit descriptors D
// plus a soft-detection score map S, and test-time keypoint extraction.

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "xmodal/core.hpp"

namespace xmodal {

struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<double> values;
};

/// Ordered list of named tensors. Gradients and optimizer moments use the same layout.
class ParameterSet {
 public:
  ParameterSet() = default;
  explicit ParameterSet(std::vector<Parameter> params) : params_(std::move(params)) {}

  std::vector<Parameter>& items() { return params_; }
  const std::vector<Parameter>& items() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  const Parameter* find(const std::string& name) const;

  ParameterSet zeros_like() const;
  /// this += scale * other; layouts must match.
  void add_scaled(const ParameterSet& other, double scale);
  double squared_norm() const;
  bool same_layout(const ParameterSet& other) const;

  friend bool operator==(const ParameterSet& a, const ParameterSet& b);

 private:
  std::vector<Parameter> params_;
};

struct ModelConfig {
  /// Widths of the three hidden convolution blocks; the fourth block emits descriptor_dim.
  std::vector<int> widths{32, 32, 64};
  int descriptor_dim = 64;
  int stride = 1;
  double nms_radius = 4.0;
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
};

struct FeatureOutput {
  Tensor features;     // raw F, C x H' x W'
  Tensor descriptors;  // per-cell L2-normalized F
  Tensor scores;       // 1 x H' x W', non-negative, sums to 1
  int stride = 1;
  ImageSize image_size;

  int descriptor_dim() const { return features.channels(); }
  /// Image-space center of a cell.
  Point2 cell_center(int row, int col) const { return {(col + 0.5) * stride, (row + 0.5) * stride}; }
};

/// Gradient of a scalar with respect to the dense descriptor and score maps.
struct DenseGrad {
  Tensor descriptors;
  Tensor scores;

  static DenseGrad zeros_for(const FeatureOutput& out) {
    return {Tensor(out.descriptors.channels(), out.descriptors.height(), out.descriptors.width()),
            Tensor(1, out.scores.height(), out.scores.width())};
  }
  void add_scaled(const DenseGrad& other, double scale);
};

/// Intermediate activations kept by a forward pass for the backward pass.
struct Tape {
  std::vector<Tensor> activations;
};

/// Backbone producing the raw feature map. The descriptor / score head is shared.
class Network {
 public:
  virtual ~Network() = default;

  virtual int stride() const = 0;
  virtual int descriptor_dim() const = 0;
  /// Raw features; when `tape` is non-null it receives what backward needs.
  virtual Tensor features(const Image& image, Tape* tape) const = 0;
  /// Accumulates d(loss)/d(parameters) into `grads` (layout of parameters()) and,
  /// when requested, writes d(loss)/d(input) into `grad_input`.
  virtual void backward(const Tape& tape, const Tensor& grad_features, ParameterSet* grads,
                        Image* grad_input) const = 0;

  virtual ParameterSet& parameters() = 0;
  virtual const ParameterSet& parameters() const = 0;
};

/// Four 3x3 convolution blocks with ReLU between them. Stride 2 / 4 is taken in the
/// second (and third) block.
class ConvNet final : public Network {
 public:
  explicit ConvNet(ModelConfig config);

  const ModelConfig& config() const { return config_; }

  int stride() const override { return config_.stride; }
  int descriptor_dim() const override { return config_.descriptor_dim; }
  Tensor features(const Image& image, Tape* tape) const override;
  void backward(const Tape& tape, const Tensor& grad_features, ParameterSet* grads, Image* grad_input) const override;
  ParameterSet& parameters() override { return params_; }
  const ParameterSet& parameters() const override { return params_; }

 private:
  int layer_stride(int layer) const;

  ModelConfig config_;
  ParameterSet params_;
};

/// Descriptors and soft-detection scores from raw features:
///   F+ = max(F, 0), alpha = exp(F+) / sum over the 3x3 neighbourhood (per channel),
///   beta = F+ / (max_c F+ + 1e-8), gamma = max_c alpha * beta, S = gamma / sum(gamma).
/// A map with sum(gamma) = 0 gets uniform scores.
FeatureOutput detect_and_describe(Tensor features, int stride, ImageSize image_size);

/// d(loss)/dF given d(loss)/dD and d(loss)/dS.
Tensor head_backward(const FeatureOutput& out, const DenseGrad& grad);

/// Full forward pass; `tape` as in Network::features.
FeatureOutput forward(const Network& net, const Image& image, Tape* tape = nullptr);

/// d(loss)/d(params) (accumulated) and optionally d(loss)/d(image) for one forward pass.
void backward(const Network& net, const Tape& tape, const FeatureOutput& out, const DenseGrad& grad,
              ParameterSet* param_grads, Image* grad_input = nullptr);

struct DescriptorSet {
  int dim = 0;
  std::vector<double> values;  // row-major

  std::size_t count() const { return dim > 0 ? values.size() / dim : 0; }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, static_cast<std::size_t>(dim)}; }
};

struct KeypointSet {
  std::vector<Point2> points;
  std::vector<double> scores;
  DescriptorSet descriptors;

  std::size_t size() const { return points.size(); }
};

/// Greedy non-maximum suppression: cells visited by descending score (ties by
/// lower row-major index); a cell is taken unless a taken cell lies closer than
/// nms_radius pixels. Returns at most K points at cell centers.
KeypointSet extract_keypoints(const FeatureOutput& out, std::size_t k, double nms_radius);

/// Bilinear sample of the descriptor map at image points, renormalized to unit length.
/// Throws std::out_of_range for points outside the image.
DescriptorSet describe_at(const FeatureOutput& out, const std::vector<Point2>& points);
/// Accumulates into grad.descriptors the pullback of d(loss)/d(sampled descriptors).
void describe_at_backward(const FeatureOutput& out, const std::vector<Point2>& points, const DescriptorSet& grad_rows,
                          DenseGrad& grad);

/// Bilinear sample of the score map.
std::vector<double> scores_at(const FeatureOutput& out, const std::vector<Point2>& points);
void scores_at_backward(const FeatureOutput& out, const std::vector<Point2>& points, const std::vector<double>& grad,
                        DenseGrad& dense);

/// Versioned binary container: magic "XMODALCK", u32 version, string metadata,
/// named f64 tensors, FNV-1a 64 checksum. All integers little-endian.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, std::string> meta;
  std::vector<Parameter> tensors;

  void save(const std::filesystem::path& path) const;
  /// Parses the whole file before returning; throws ConfigError on any defect.
  static Checkpoint load(const std::filesystem::path& path);

  const Parameter* find(const std::string& name) const;
};

/// Stores the model config (meta "model.config") and parameters ("param/<name>").
void store_model(const ConvNet& net, Checkpoint& ckpt);
/// Rebuilds the network, validating every tensor shape against the stored config.
ConvNet restore_model(const Checkpoint& ckpt);
ConvNet load_model(const std::filesystem::path& path);

}  // namespace xmodal
