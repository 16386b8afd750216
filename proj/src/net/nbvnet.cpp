#include "nbv/nbvnet.hpp"

#include <cmath>
#include <sstream>

#include "layers.hpp"
#include "nbv/error.hpp"

namespace nbv::net {

std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_string(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_)) {
    throw Error(Errc::ShapeMismatch, "tensor data does not match shape " + shape_string(shape_));
  }
}

void Tensor::reshape(Shape shape) {
  if (shape_size(shape) != data_.size()) {
    throw Error(Errc::ShapeMismatch, "cannot reshape " + shape_string(shape_) + " to " +
                                         shape_string(shape));
  }
  shape_ = std::move(shape);
}

Parameter::Parameter(Shape s) : shape(std::move(s)) {
  const std::size_t n = shape_size(shape);
  value.assign(n, 0.0);
  grad.assign(n, 0.0);
  m.assign(n, 0.0);
  v.assign(n, 0.0);
}

std::string describe(const LayerSpec& spec) {
  return std::visit(
      [](const auto& s) -> std::string {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Conv3d>) {
          return "C(" + std::to_string(s.filters) + "," + std::to_string(s.kernel) + "," +
                 std::to_string(s.stride) + ")";
        } else if constexpr (std::is_same_v<T, MaxPool3d>) {
          return "P(" + std::to_string(s.stride) + ")";
        } else if constexpr (std::is_same_v<T, FullyConnected>) {
          return "FC(" + std::to_string(s.nodes) + ")";
        } else if constexpr (std::is_same_v<T, ReLU>) {
          return "ReLU";
        } else if constexpr (std::is_same_v<T, Tanh>) {
          return "Tanh";
        } else if constexpr (std::is_same_v<T, Dropout>) {
          std::ostringstream os;
          os << "D(" << s.p << ")";
          return os.str();
        } else {
          return "Flatten";
        }
      },
      spec);
}

Shape propagate(const LayerSpec& spec, const Shape& in) {
  auto fail = [&](const std::string& why) -> Shape {
    throw Error(Errc::ShapeMismatch, describe(spec) + " on " + shape_string(in) + ": " + why);
  };
  return std::visit(
      [&](const auto& s) -> Shape {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Conv3d>) {
          if (in.size() != 4) return fail("expects (C, D, H, W)");
          if (s.filters == 0 || s.kernel == 0 || s.stride == 0) return fail("zero size");
          Shape out{s.filters};
          for (int a = 1; a < 4; ++a) {
            const std::size_t padded = in[a] + 2 * s.padding;
            if (padded < s.kernel) return fail("kernel larger than padded input");
            out.push_back((padded - s.kernel) / s.stride + 1);
          }
          return out;
        } else if constexpr (std::is_same_v<T, MaxPool3d>) {
          if (in.size() != 4) return fail("expects (C, D, H, W)");
          if (s.stride == 0) return fail("zero stride");
          Shape out{in[0]};
          for (int a = 1; a < 4; ++a) {
            if (in[a] < s.stride) return fail("pool window larger than input");
            out.push_back(in[a] / s.stride);
          }
          return out;
        } else if constexpr (std::is_same_v<T, FullyConnected>) {
          if (in.size() != 1) return fail("expects a flat input");
          if (s.nodes == 0) return fail("zero nodes");
          return Shape{s.nodes};
        } else if constexpr (std::is_same_v<T, Flatten>) {
          return Shape{shape_size(in)};
        } else if constexpr (std::is_same_v<T, Dropout>) {
          if (!(s.p >= 0.0 && s.p < 1.0)) return fail("dropout probability outside [0, 1)");
          return in;
        } else {
          return in;
        }
      },
      spec);
}

DropoutStart parse_dropout_start(const std::string& s) {
  if (s == "none") return DropoutStart::None;
  if (s == "conv1") return DropoutStart::Conv1;
  if (s == "conv2") return DropoutStart::Conv2;
  if (s == "conv3") return DropoutStart::Conv3;
  if (s == "conv4") return DropoutStart::Conv4;
  if (s == "fc") return DropoutStart::FullyConnected;
  throw Error(Errc::ConfigError, "unknown dropout start '" + s + "'");
}

std::string to_string(DropoutStart d) {
  switch (d) {
    case DropoutStart::None: return "none";
    case DropoutStart::Conv1: return "conv1";
    case DropoutStart::Conv2: return "conv2";
    case DropoutStart::Conv3: return "conv3";
    case DropoutStart::Conv4: return "conv4";
    case DropoutStart::FullyConnected: return "fc";
  }
  return "none";
}

void adam_update(std::span<double> w, std::span<const double> g, std::span<double> m,
                 std::span<double> v, double lr, std::uint64_t t, const AdamConfig& cfg) {
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < w.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    w[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
}

// ---------------------------------------------------------------------------

NbvNet::NbvNet(std::string name, Shape input_shape, std::vector<LayerSpec> specs,
               std::uint64_t seed)
    : name_(std::move(name)),
      input_shape_(std::move(input_shape)),
      specs_(std::move(specs)),
      rng_(Rng::derive(seed, 1)) {
  if (specs_.empty()) throw Error(Errc::ShapeMismatch, "a network needs at least one layer");
  Shape s = input_shape_;
  for (const LayerSpec& spec : specs_) {
    s = propagate(spec, s);
    shapes_.push_back(s);
  }
  if (shapes_.back().size() != 1) {
    throw Error(Errc::ShapeMismatch, "network output must be flat, got " +
                                         shape_string(shapes_.back()));
  }
  Rng init(Rng::derive(seed, 0));
  Shape in = input_shape_;
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    layers_.push_back(make_layer(specs_[i], in, init));
    in = shapes_[i];
  }
}

NbvNet::NbvNet(const NbvNet& other)
    : name_(other.name_),
      input_shape_(other.input_shape_),
      specs_(other.specs_),
      shapes_(other.shapes_),
      mode_(other.mode_),
      rng_(other.rng_) {
  Rng scratch(0);
  Shape in = input_shape_;
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    layers_.push_back(make_layer(specs_[i], in, scratch));
    in = shapes_[i];
  }
  auto dst = parameters();
  auto src = other.parameters();
  for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] = *src[i];
}

NbvNet& NbvNet::operator=(const NbvNet& other) {
  if (this != &other) {
    NbvNet copy(other);
    *this = std::move(copy);
  }
  return *this;
}

NbvNet::~NbvNet() = default;

std::size_t NbvNet::flattened_width() const {
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    if (std::holds_alternative<Flatten>(specs_[i])) return shapes_[i][0];
  }
  return 0;
}

namespace {

void check_input(const Tensor& input, const Shape& expected) {
  const Shape& s = input.shape();
  if (s.size() != expected.size() + 1 || s[0] == 0 ||
      !std::equal(expected.begin(), expected.end(), s.begin() + 1)) {
    throw Error(Errc::ShapeMismatch, "input " + shape_string(s) + " does not match (batch, " +
                                         shape_string(expected).substr(1));
  }
}

}  // namespace

Tensor NbvNet::forward(const Tensor& input) {
  check_input(input, input_shape_);
  Tensor x = input;
  for (auto& layer : layers_) x = layer->forward(x, mode_, rng_);
  cached_ = true;
  return x;
}

Tensor NbvNet::infer(const Tensor& input) const {
  check_input(input, input_shape_);
  Tensor x = input;
  for (const auto& layer : layers_) x = layer->infer(x);
  return x;
}

void NbvNet::backward(const Tensor& loss_gradient) {
  if (!cached_) throw Error(Errc::StaleCache, "backward() needs a preceding forward()");
  if (loss_gradient.shape().size() != 2 || loss_gradient.shape()[1] != output_width()) {
    throw Error(Errc::ShapeMismatch, "loss gradient " + shape_string(loss_gradient.shape()) +
                                         " does not match the output width");
  }
  Tensor g = loss_gradient;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    g = layers_[i]->backward(g, i > 0);
    layers_[i]->clear_cache();
  }
  cached_ = false;
}

void NbvNet::zero_grad() {
  for (Parameter* p : parameters()) std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

void NbvNet::adam_step(double lr, std::uint64_t t, const AdamConfig& cfg) {
  for (Parameter* p : parameters()) adam_update(p->value, p->grad, p->m, p->v, lr, t, cfg);
}

std::vector<Parameter*> NbvNet::parameters() {
  std::vector<Parameter*> out;
  for (auto& layer : layers_) {
    for (Parameter* p : layer->parameters()) out.push_back(p);
  }
  return out;
}

std::vector<const Parameter*> NbvNet::parameters() const {
  std::vector<const Parameter*> out;
  for (const auto& layer : layers_) {
    for (Parameter* p : layer->parameters()) out.push_back(p);
  }
  return out;
}

std::size_t NbvNet::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

void NbvNet::round_to_float32() {
  for (Parameter* p : parameters()) {
    for (double& w : p->value) w = static_cast<float>(w);
  }
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names = {"3-3", "3-5", "4-3", "4-5"};
  return names;
}

std::vector<LayerSpec> variant_layers(const std::string& name, std::size_t output_width,
                                      DropoutStart dropout, const VariantOptions& opt) {
  std::vector<std::size_t> filters;
  std::vector<std::size_t> hidden;
  if (name == "3-3") {
    filters = {10, 12, 8};
    hidden = {1024, 500};
  } else if (name == "3-5") {
    filters = {10, 12, 8};
    hidden = {1500, 500, 100, 50};
  } else if (name == "4-3") {
    filters = {16, 32, 64, 64};
    hidden = {1024, 500};
  } else if (name == "4-5") {
    filters = {16, 32, 64, 64};
    hidden = {1500, 500, 100, 50};
  } else {
    throw Error(Errc::UnknownVariant, "unknown network variant '" + name + "'");
  }
  if (output_width == 0) throw Error(Errc::ShapeMismatch, "output width must be positive");
  auto scaled = [&](std::size_t n) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(n * opt.width_scale)));
  };

  constexpr double kDropoutP = 0.5;
  const int first_dropout_conv = [&] {
    switch (dropout) {
      case DropoutStart::Conv1: return 1;
      case DropoutStart::Conv2: return 2;
      case DropoutStart::Conv3: return 3;
      case DropoutStart::Conv4: return 4;
      case DropoutStart::FullyConnected: return 100;
      case DropoutStart::None: break;
    }
    return -1;
  }();
  const bool fc_dropout = first_dropout_conv > 0;

  std::vector<LayerSpec> layers;
  for (std::size_t i = 0; i < filters.size(); ++i) {
    layers.push_back(Conv3d{scaled(filters[i]), 3, 1, 1});
    layers.push_back(ReLU{});
    const int conv_number = static_cast<int>(i) + 1;
    if (first_dropout_conv > 0 && conv_number >= first_dropout_conv) {
      layers.push_back(Dropout{kDropoutP});
    }
    // The fourth convolution of the 4-x variants has no pooling after it.
    if (i < 3) layers.push_back(MaxPool3d{2});
  }
  layers.push_back(Flatten{});
  for (std::size_t n : hidden) {
    layers.push_back(FullyConnected{scaled(n)});
    layers.push_back(ReLU{});
    if (fc_dropout) layers.push_back(Dropout{kDropoutP});
  }
  layers.push_back(FullyConnected{output_width});
  layers.push_back(Tanh{});
  return layers;
}

NbvNet build_variant(const std::string& name, std::size_t output_width, DropoutStart dropout,
                     std::uint64_t seed, const VariantOptions& opt) {
  std::vector<LayerSpec> layers = variant_layers(name, output_width, dropout, opt);
  std::string full = name;
  if (opt.input_side != 32) full += ";in=" + std::to_string(opt.input_side);
  if (opt.width_scale != 1.0) {
    std::ostringstream os;
    os.precision(17);
    os << opt.width_scale;
    full += ";w=" + os.str();
  }
  if (dropout != DropoutStart::None) full += ";drop=" + to_string(dropout);
  const std::size_t side = opt.input_side;
  return NbvNet(full, {1, side, side, side}, std::move(layers), seed);
}

// ---------------------------------------------------------------------------

namespace {

void check_same_shape(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.shape().size() != 2 || a.size() == 0) {
    throw Error(Errc::ShapeMismatch, "loss operands " + shape_string(a.shape()) + " and " +
                                         shape_string(b.shape()) + " differ");
  }
}

}  // namespace

LossResult mse_loss(const Tensor& target, const Tensor& prediction) {
  check_same_shape(target, prediction);
  LossResult r{0.0, Tensor(prediction.shape())};
  const double n = static_cast<double>(prediction.size());
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double d = prediction[i] - target[i];
    r.loss += d * d;
    r.gradient[i] = 2.0 * d / n;
  }
  r.loss /= n;
  return r;
}

double mae(const Tensor& target, const Tensor& prediction) {
  check_same_shape(target, prediction);
  double sum = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    sum += std::abs(prediction[i] - target[i]);
  }
  return sum / static_cast<double>(prediction.size());
}

}  // namespace nbv::net
