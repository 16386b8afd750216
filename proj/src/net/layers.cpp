#include "layers.hpp"

#include <algorithm>
#include <Eigen/Core>
#include <cmath>

#include "nbv/error.hpp"

namespace nbv::net {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

Shape with_batch(std::size_t batch, const Shape& s) {
  Shape out{batch};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

void init_uniform(Parameter& p, std::size_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& w : p.value) w = rng.uniform(-limit, limit);
}

class ConvLayer final : public Layer {
 public:
  ConvLayer(const Conv3d& spec, const Shape& in, Rng& rng)
      : spec_(spec),
        in_(in),
        out_(propagate(spec, in)),
        weight_({spec.filters, in[0], spec.kernel, spec.kernel, spec.kernel}),
        bias_({spec.filters}) {
    rows_ = in_[0] * spec_.kernel * spec_.kernel * spec_.kernel;
    cols_ = out_[1] * out_[2] * out_[3];
    init_uniform(weight_, rows_, rng);
  }

  Tensor forward(const Tensor& x, Mode, Rng&) override {
    input_ = x;
    return infer(x);
  }

  Tensor infer(const Tensor& x) const override {
    const std::size_t batch = x.batch();
    Tensor y(with_batch(batch, out_));
    std::vector<double> col(rows_ * cols_);
    ConstMatrixMap w(weight_.value.data(), spec_.filters, rows_);
    ConstVectorMap b(bias_.value.data(), spec_.filters);
    for (std::size_t n = 0; n < batch; ++n) {
      im2col(x.sample(n).data(), col.data());
      ConstMatrixMap c(col.data(), rows_, cols_);
      MatrixMap o(y.sample(n).data(), spec_.filters, cols_);
      o.noalias() = w * c;
      o.colwise() += b;
    }
    return y;
  }

  Tensor backward(const Tensor& grad_out, bool need_input_grad) override {
    const std::size_t batch = grad_out.batch();
    Tensor dx;
    if (need_input_grad) dx = Tensor(with_batch(batch, in_));
    std::vector<double> col(rows_ * cols_);
    std::vector<double> dcol(need_input_grad ? rows_ * cols_ : 0);
    ConstMatrixMap w(weight_.value.data(), spec_.filters, rows_);
    MatrixMap dw(weight_.grad.data(), spec_.filters, rows_);
    VectorMap db(bias_.grad.data(), spec_.filters);
    for (std::size_t n = 0; n < batch; ++n) {
      im2col(input_.sample(n).data(), col.data());
      ConstMatrixMap c(col.data(), rows_, cols_);
      ConstMatrixMap g(grad_out.sample(n).data(), spec_.filters, cols_);
      dw.noalias() += g * c.transpose();
      db += g.rowwise().sum();
      if (need_input_grad) {
        MatrixMap dc(dcol.data(), rows_, cols_);
        dc.noalias() = w.transpose() * g;
        col2im(dcol.data(), dx.sample(n).data());
      }
    }
    return dx;
  }

  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
  void clear_cache() override { input_ = Tensor(); }

 private:
  // Row r = ((c * k + kz) * k + ky) * k + kx, column = output voxel.
  void im2col(const double* x, double* col) const {
    const std::size_t k = spec_.kernel, s = spec_.stride;
    const long pad = static_cast<long>(spec_.padding);
    const long D = in_[1], H = in_[2], W = in_[3];
    const std::size_t od = out_[1], oh = out_[2], ow = out_[3];
    std::size_t row = 0;
    for (std::size_t c = 0; c < in_[0]; ++c) {
      const double* xc = x + c * D * H * W;
      for (std::size_t kz = 0; kz < k; ++kz)
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx, ++row) {
            double* dst = col + row * cols_;
            for (std::size_t z = 0; z < od; ++z) {
              const long iz = static_cast<long>(z * s + kz) - pad;
              for (std::size_t y = 0; y < oh; ++y, dst += ow) {
                const long iy = static_cast<long>(y * s + ky) - pad;
                if (iz < 0 || iz >= D || iy < 0 || iy >= H) {
                  std::fill(dst, dst + ow, 0.0);
                  continue;
                }
                const double* src = xc + (iz * H + iy) * W;
                for (std::size_t xo = 0; xo < ow; ++xo) {
                  const long ix = static_cast<long>(xo * s + kx) - pad;
                  dst[xo] = (ix >= 0 && ix < W) ? src[ix] : 0.0;
                }
              }
            }
          }
    }
  }

  void col2im(const double* col, double* dx) const {
    const std::size_t k = spec_.kernel, s = spec_.stride;
    const long pad = static_cast<long>(spec_.padding);
    const long D = in_[1], H = in_[2], W = in_[3];
    const std::size_t od = out_[1], oh = out_[2], ow = out_[3];
    std::size_t row = 0;
    for (std::size_t c = 0; c < in_[0]; ++c) {
      double* dxc = dx + c * D * H * W;
      for (std::size_t kz = 0; kz < k; ++kz)
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx, ++row) {
            const double* src = col + row * cols_;
            for (std::size_t z = 0; z < od; ++z) {
              const long iz = static_cast<long>(z * s + kz) - pad;
              for (std::size_t y = 0; y < oh; ++y, src += ow) {
                const long iy = static_cast<long>(y * s + ky) - pad;
                if (iz < 0 || iz >= D || iy < 0 || iy >= H) continue;
                double* dst = dxc + (iz * H + iy) * W;
                for (std::size_t xo = 0; xo < ow; ++xo) {
                  const long ix = static_cast<long>(xo * s + kx) - pad;
                  if (ix >= 0 && ix < W) dst[ix] += src[xo];
                }
              }
            }
          }
    }
  }

  Conv3d spec_;
  Shape in_, out_;
  std::size_t rows_ = 0, cols_ = 0;
  Parameter weight_, bias_;
  Tensor input_;
};

class PoolLayer final : public Layer {
 public:
  PoolLayer(const MaxPool3d& spec, const Shape& in)
      : stride_(spec.stride), in_(in), out_(propagate(spec, in)) {}

  Tensor forward(const Tensor& x, Mode, Rng&) override {
    argmax_.assign(x.batch() * shape_size(out_), 0);
    input_size_ = shape_size(in_);
    return run(x, argmax_.data());
  }

  Tensor infer(const Tensor& x) const override { return run(x, nullptr); }

  Tensor backward(const Tensor& grad_out, bool need_input_grad) override {
    if (!need_input_grad) return {};
    Tensor dx(with_batch(grad_out.batch(), in_));
    const std::size_t per = shape_size(out_);
    for (std::size_t n = 0; n < grad_out.batch(); ++n) {
      double* d = dx.sample(n).data();
      const double* g = grad_out.sample(n).data();
      const std::uint32_t* am = argmax_.data() + n * per;
      for (std::size_t i = 0; i < per; ++i) d[am[i]] += g[i];
    }
    return dx;
  }

  void clear_cache() override { argmax_.clear(); }

 private:
  // Window positions are scanned z, y, x; ties keep the first maximum.
  Tensor run(const Tensor& x, std::uint32_t* argmax) const {
    const std::size_t batch = x.batch();
    Tensor y(with_batch(batch, out_));
    const std::size_t C = in_[0], D = in_[1], H = in_[2], W = in_[3];
    const std::size_t od = out_[1], oh = out_[2], ow = out_[3];
    const std::size_t s = stride_;
    const std::size_t per = shape_size(out_);
    for (std::size_t n = 0; n < batch; ++n) {
      const double* xs = x.sample(n).data();
      double* ys = y.sample(n).data();
      std::size_t o = 0;
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t z = 0; z < od; ++z)
          for (std::size_t yy = 0; yy < oh; ++yy)
            for (std::size_t xx = 0; xx < ow; ++xx, ++o) {
              double best = -std::numeric_limits<double>::infinity();
              std::size_t best_i = 0;
              for (std::size_t dz = 0; dz < s; ++dz)
                for (std::size_t dy = 0; dy < s; ++dy)
                  for (std::size_t dxx = 0; dxx < s; ++dxx) {
                    const std::size_t i =
                        ((c * D + z * s + dz) * H + yy * s + dy) * W + xx * s + dxx;
                    if (xs[i] > best) {
                      best = xs[i];
                      best_i = i;
                    }
                  }
              ys[o] = best;
              if (argmax) argmax[n * per + o] = static_cast<std::uint32_t>(best_i);
            }
    }
    return y;
  }

  std::size_t stride_;
  Shape in_, out_;
  std::vector<std::uint32_t> argmax_;
  std::size_t input_size_ = 0;
};

class DenseLayer final : public Layer {
 public:
  DenseLayer(const FullyConnected& spec, const Shape& in, Rng& rng)
      : in_width_(in[0]), out_width_(spec.nodes),
        weight_({spec.nodes, in[0]}), bias_({spec.nodes}) {
    init_uniform(weight_, in_width_, rng);
  }

  Tensor forward(const Tensor& x, Mode, Rng&) override {
    input_ = x;
    return infer(x);
  }

  Tensor infer(const Tensor& x) const override {
    const std::size_t batch = x.batch();
    Tensor y({batch, out_width_});
    ConstMatrixMap xin(x.data(), batch, in_width_);
    ConstMatrixMap w(weight_.value.data(), out_width_, in_width_);
    MatrixMap out(y.data(), batch, out_width_);
    out.noalias() = xin * w.transpose();
    out.rowwise() += ConstVectorMap(bias_.value.data(), out_width_).transpose();
    return y;
  }

  Tensor backward(const Tensor& grad_out, bool need_input_grad) override {
    const std::size_t batch = grad_out.batch();
    ConstMatrixMap g(grad_out.data(), batch, out_width_);
    ConstMatrixMap xin(input_.data(), batch, in_width_);
    MatrixMap dw(weight_.grad.data(), out_width_, in_width_);
    dw.noalias() += g.transpose() * xin;
    VectorMap(bias_.grad.data(), out_width_) += g.colwise().sum().transpose();
    if (!need_input_grad) return {};
    Tensor dx({batch, in_width_});
    ConstMatrixMap w(weight_.value.data(), out_width_, in_width_);
    MatrixMap(dx.data(), batch, in_width_).noalias() = g * w;
    return dx;
  }

  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
  void clear_cache() override { input_ = Tensor(); }

 private:
  std::size_t in_width_, out_width_;
  Parameter weight_, bias_;
  Tensor input_;
};

class ReluLayer final : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode, Rng&) override {
    output_ = infer(x);
    return output_;
  }
  Tensor infer(const Tensor& x) const override {
    Tensor y = x;
    for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
    return y;
  }
  Tensor backward(const Tensor& grad_out, bool) override {
    Tensor dx = grad_out;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (!(output_[i] > 0.0)) dx[i] = 0.0;
    }
    return dx;
  }
  void clear_cache() override { output_ = Tensor(); }

 private:
  Tensor output_;
};

class TanhLayer final : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode, Rng&) override {
    output_ = infer(x);
    return output_;
  }
  Tensor infer(const Tensor& x) const override {
    // tanh rounds to exactly +-1 for |x| > ~19; keep outputs strictly inside
    // the open interval.
    static const double kLimit = std::nextafter(1.0, 0.0);
    Tensor y = x;
    for (double& v : y.values()) v = std::clamp(std::tanh(v), -kLimit, kLimit);
    return y;
  }
  Tensor backward(const Tensor& grad_out, bool) override {
    Tensor dx = grad_out;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= 1.0 - output_[i] * output_[i];
    return dx;
  }
  void clear_cache() override { output_ = Tensor(); }

 private:
  Tensor output_;
};

// Inverted dropout: kept activations are scaled by 1 / (1 - p) in training so
// evaluation is the identity.
class DropoutLayer final : public Layer {
 public:
  explicit DropoutLayer(const Dropout& spec) : p_(spec.p) {}

  Tensor forward(const Tensor& x, Mode mode, Rng& rng) override {
    if (mode == Mode::Eval || p_ == 0.0) {
      mask_.clear();
      return x;
    }
    const double keep_scale = 1.0 / (1.0 - p_);
    mask_.resize(x.size());
    Tensor y = x;
    for (std::size_t i = 0; i < y.size(); ++i) {
      mask_[i] = rng.uniform() >= p_ ? keep_scale : 0.0;
      y[i] *= mask_[i];
    }
    return y;
  }
  Tensor infer(const Tensor& x) const override { return x; }
  Tensor backward(const Tensor& grad_out, bool) override {
    if (mask_.empty()) return grad_out;
    Tensor dx = grad_out;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= mask_[i];
    return dx;
  }
  void clear_cache() override { mask_.clear(); }

 private:
  double p_;
  std::vector<double> mask_;
};

class FlattenLayer final : public Layer {
 public:
  explicit FlattenLayer(const Shape& in) : in_(in) {}
  Tensor forward(const Tensor& x, Mode, Rng&) override { return infer(x); }
  Tensor infer(const Tensor& x) const override {
    Tensor y = x;
    y.reshape({x.batch(), shape_size(in_)});
    return y;
  }
  Tensor backward(const Tensor& grad_out, bool) override {
    Tensor dx = grad_out;
    dx.reshape(with_batch(grad_out.batch(), in_));
    return dx;
  }
  void clear_cache() override {}

 private:
  Shape in_;
};

}  // namespace

std::unique_ptr<Layer> make_layer(const LayerSpec& spec, const Shape& in, Rng& init_rng) {
  return std::visit(
      [&](const auto& s) -> std::unique_ptr<Layer> {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Conv3d>) {
          return std::make_unique<ConvLayer>(s, in, init_rng);
        } else if constexpr (std::is_same_v<T, MaxPool3d>) {
          return std::make_unique<PoolLayer>(s, in);
        } else if constexpr (std::is_same_v<T, FullyConnected>) {
          return std::make_unique<DenseLayer>(s, in, init_rng);
        } else if constexpr (std::is_same_v<T, ReLU>) {
          return std::make_unique<ReluLayer>();
        } else if constexpr (std::is_same_v<T, Tanh>) {
          return std::make_unique<TanhLayer>();
        } else if constexpr (std::is_same_v<T, Dropout>) {
          return std::make_unique<DropoutLayer>(s);
        } else {
          return std::make_unique<FlattenLayer>(in);
        }
      },
      spec);
}

}  // namespace nbv::net
