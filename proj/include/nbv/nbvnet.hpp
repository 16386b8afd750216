#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "nbv/random.hpp"

namespace nbv::net {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& s);
std::string shape_string(const Shape& s);

/// Dense row-major tensor; the leading dimension is the batch.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t batch() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t sample_size() const { return batch() ? data_.size() / batch() : 0; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> sample(std::size_t b) {
    return {data_.data() + b * sample_size(), sample_size()};
  }
  std::span<const double> sample(std::size_t b) const {
    return {data_.data() + b * sample_size(), sample_size()};
  }

  void reshape(Shape shape);

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Layer specifications. Conv3d and MaxPool3d operate on (C, D, H, W) samples.
struct Conv3d {
  std::size_t filters;
  std::size_t kernel;
  std::size_t stride = 1;
  std::size_t padding = 0;
};
struct MaxPool3d {
  std::size_t stride;
};
struct FullyConnected {
  std::size_t nodes;
};
struct ReLU {};
struct Tanh {};
struct Dropout {
  double p;
};
struct Flatten {};

using LayerSpec = std::variant<Conv3d, MaxPool3d, FullyConnected, ReLU, Tanh, Dropout, Flatten>;

std::string describe(const LayerSpec& spec);

/// Per-sample output shape of `spec` applied to `in`, or Errc::ShapeMismatch.
Shape propagate(const LayerSpec& spec, const Shape& in);

/// Trainable tensor with its gradient and Adam moments.
struct Parameter {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<double> m;
  std::vector<double> v;

  explicit Parameter(Shape s);
};

enum class Mode { Train, Eval };

class Layer {
 public:
  virtual ~Layer() = default;
  // Caching forward pass used for training.
  virtual Tensor forward(const Tensor& x, Mode mode, Rng& rng) = 0;
  // Eval-mode pass without side effects.
  virtual Tensor infer(const Tensor& x) const = 0;
  // `need_input_grad` is false for the first layer, whose input gradient is
  // never consumed.
  virtual Tensor backward(const Tensor& grad_out, bool need_input_grad) = 0;
  virtual std::vector<Parameter*> parameters() { return {}; }
  virtual void clear_cache() = 0;
};

enum class DropoutStart { None, Conv1, Conv2, Conv3, Conv4, FullyConnected };

DropoutStart parse_dropout_start(const std::string& s);
std::string to_string(DropoutStart d);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update of `w` in place; t is the 1-based step.
void adam_update(std::span<double> w, std::span<const double> g, std::span<double> m,
                 std::span<double> v, double lr, std::uint64_t t, const AdamConfig& cfg = {});

/// Layered 3D CNN with materialized parameters. Training (forward/backward/
/// adam_step) is single-writer; infer() is const and may run concurrently.
class NbvNet {
 public:
  NbvNet(std::string name, Shape input_shape, std::vector<LayerSpec> specs, std::uint64_t seed);
  NbvNet(const NbvNet& other);
  NbvNet& operator=(const NbvNet& other);
  NbvNet(NbvNet&&) noexcept = default;
  NbvNet& operator=(NbvNet&&) noexcept = default;
  ~NbvNet();

  const std::string& name() const { return name_; }
  const Shape& input_shape() const { return input_shape_; }
  const std::vector<LayerSpec>& specs() const { return specs_; }
  /// Per-sample shape after each layer (index i = output of layer i).
  const std::vector<Shape>& shapes() const { return shapes_; }
  std::size_t output_width() const { return shapes_.back()[0]; }
  /// Width of the Flatten layer's output; 0 if the net has no Flatten.
  std::size_t flattened_width() const;

  Mode mode() const { return mode_; }
  void set_mode(Mode m) { mode_ = m; }

  /// Input shape (batch, input_shape...). Throws Errc::ShapeMismatch.
  /// Caches activations for backward(); dropout is active in Mode::Train.
  Tensor forward(const Tensor& input);
  /// Eval-mode forward without caching.
  Tensor infer(const Tensor& input) const;
  /// Accumulates parameter gradients from dLoss/dOutput. Throws
  /// Errc::StaleCache without a preceding forward.
  void backward(const Tensor& loss_gradient);
  void zero_grad();
  /// Adam step on every parameter using the accumulated gradients.
  void adam_step(double lr, std::uint64_t t, const AdamConfig& cfg = {});

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;

  /// Rounds every parameter to the nearest float32, the weight-file precision.
  void round_to_float32();
  /// Re-seeds the dropout mask generator.
  void reseed(std::uint64_t seed) { rng_ = Rng(seed); }

 private:
  void build_layers();

  std::string name_;
  Shape input_shape_;
  std::vector<LayerSpec> specs_;
  std::vector<Shape> shapes_;
  std::vector<std::unique_ptr<Layer>> layers_;
  Mode mode_ = Mode::Eval;
  Rng rng_;
  bool cached_ = false;
};

struct VariantOptions {
  std::size_t input_side = 32;
  // Multiplies every filter and hidden-node count (rounded, at least 1); used
  // to build small nets for gradient checks.
  double width_scale = 1.0;
};

const std::vector<std::string>& variant_names();

/// Layer list for a named variant (3-3, 3-5, 4-3, 4-5).
std::vector<LayerSpec> variant_layers(const std::string& name, std::size_t output_width,
                                      DropoutStart dropout, const VariantOptions& opt = {});

/// Builds a named variant with fan-in scaled uniform initialization.
/// Throws Errc::UnknownVariant.
NbvNet build_variant(const std::string& name, std::size_t output_width, DropoutStart dropout,
                     std::uint64_t seed, const VariantOptions& opt = {});

struct LossResult {
  double loss;
  Tensor gradient;
};

/// Mean over components and batch of (pred - target)^2, with its gradient.
LossResult mse_loss(const Tensor& target, const Tensor& prediction);
/// Mean absolute componentwise error averaged over the batch.
double mae(const Tensor& target, const Tensor& prediction);

struct Example {
  std::span<const float> input;
  std::span<const float> target;
};

struct TrainConfig {
  int epochs = 600;
  double learning_rate = 1e-4;
  int batch_size = 250;
  DropoutStart dropout_start = DropoutStart::None;
  std::uint64_t seed = 0;
  // Samples per forward/backward chunk; gradients of a batch are accumulated
  // over chunks so memory does not grow with batch_size.
  int chunk_size = 16;

  void validate() const;
};

struct EpochRecord {
  int epoch;
  double train_mse;
  double val_mse;
  double val_mae;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Seeded mini-batch Adam training on MSE. Throws Errc::EmptyDataset.
std::vector<EpochRecord> train(NbvNet& net, std::span<const Example> train_set,
                               std::span<const Example> val_set, const TrainConfig& config,
                               const EpochCallback& on_epoch = {});

struct Evaluation {
  double mse;
  double mae;
};
Evaluation evaluate(NbvNet& net, std::span<const Example> set, int chunk_size = 16);

/// Stacks examples' inputs into a (n, 1, side, side, side) tensor.
Tensor stack_inputs(std::span<const Example> set, const Shape& input_shape);

inline constexpr std::uint32_t kWeightFormatVersion = 1;

void save_weights(const NbvNet& net, const std::filesystem::path& path);
/// Rebuilds the architecture named in the file. Throws Errc::IoError,
/// Errc::FormatVersionMismatch, Errc::ChecksumMismatch, Errc::UnknownVariant.
NbvNet load_weights(const std::filesystem::path& path);
/// Loads parameters into an existing net; Errc::ShapeMismatch when the file's
/// tensors do not fit.
void load_weights_into(NbvNet& net, const std::filesystem::path& path);

}  // namespace nbv::net
