#include <algorithm>
#include <numeric>

#include "nbv/error.hpp"
#include "nbv/nbvnet.hpp"

namespace nbv::net {

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1 || chunk_size < 1 || !(learning_rate >= 0.0)) {
    throw Error(Errc::ConfigError,
                "training needs epochs >= 1, batch_size >= 1 and learning_rate >= 0");
  }
}

namespace {

Tensor gather_inputs(std::span<const Example> set, std::span<const std::size_t> order,
                     const Shape& input_shape) {
  const std::size_t per = shape_size(input_shape);
  Shape shape{order.size()};
  shape.insert(shape.end(), input_shape.begin(), input_shape.end());
  Tensor t(shape);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& in = set[order[i]].input;
    if (in.size() != per) {
      throw Error(Errc::ShapeMismatch, "example input has " + std::to_string(in.size()) +
                                           " values, expected " + std::to_string(per));
    }
    std::copy(in.begin(), in.end(), t.sample(i).begin());
  }
  return t;
}

Tensor gather_targets(std::span<const Example> set, std::span<const std::size_t> order,
                      std::size_t width) {
  Tensor t({order.size(), width});
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& tg = set[order[i]].target;
    if (tg.size() != width) {
      throw Error(Errc::ShapeMismatch, "example target width " + std::to_string(tg.size()) +
                                           " does not match the network output " +
                                           std::to_string(width));
    }
    std::copy(tg.begin(), tg.end(), t.sample(i).begin());
  }
  return t;
}

}  // namespace

Tensor stack_inputs(std::span<const Example> set, const Shape& input_shape) {
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), 0);
  return gather_inputs(set, order, input_shape);
}

Evaluation evaluate(NbvNet& net, std::span<const Example> set, int chunk_size) {
  if (set.empty()) throw Error(Errc::EmptyDataset, "cannot evaluate on an empty set");
  double se = 0.0, ae = 0.0;
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t width = net.output_width();
  for (std::size_t begin = 0; begin < set.size(); begin += chunk_size) {
    const std::size_t end = std::min(set.size(), begin + chunk_size);
    std::span<const std::size_t> idx(order.data() + begin, end - begin);
    const Tensor out = net.infer(gather_inputs(set, idx, net.input_shape()));
    const Tensor target = gather_targets(set, idx, width);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double d = out[i] - target[i];
      se += d * d;
      ae += std::abs(d);
    }
  }
  const double n = static_cast<double>(set.size() * width);
  return {se / n, ae / n};
}

std::vector<EpochRecord> train(NbvNet& net, std::span<const Example> train_set,
                               std::span<const Example> val_set, const TrainConfig& config,
                               const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty() || val_set.empty()) {
    throw Error(Errc::EmptyDataset, "training needs non-empty training and validation sets");
  }
  Rng shuffle_rng(Rng::derive(config.seed, 2));
  net.reseed(Rng::derive(config.seed, 3));

  const std::size_t width = net.output_width();
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  // Per-sample squared error of the epoch, summed in sample order so the
  // reported loss does not depend on the shuffle.
  std::vector<double> sample_loss(train_set.size());
  std::vector<EpochRecord> log;
  std::uint64_t step = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    net.set_mode(Mode::Train);
    for (std::size_t b0 = 0; b0 < order.size(); b0 += config.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + config.batch_size);
      const double batch_n = static_cast<double>((b1 - b0) * width);
      net.zero_grad();
      for (std::size_t c0 = b0; c0 < b1; c0 += config.chunk_size) {
        const std::size_t c1 = std::min(b1, c0 + config.chunk_size);
        std::span<const std::size_t> idx(order.data() + c0, c1 - c0);
        const Tensor out = net.forward(gather_inputs(train_set, idx, net.input_shape()));
        const Tensor target = gather_targets(train_set, idx, width);
        Tensor grad(out.shape());
        for (std::size_t i = 0; i < idx.size(); ++i) {
          double se = 0.0;
          for (std::size_t k = 0; k < width; ++k) {
            const std::size_t j = i * width + k;
            const double d = out[j] - target[j];
            se += d * d;
            grad[j] = 2.0 * d / batch_n;
          }
          sample_loss[idx[i]] = se;
        }
        net.backward(grad);
      }
      net.adam_step(config.learning_rate, ++step);
    }
    net.set_mode(Mode::Eval);

    double total = 0.0;
    for (double l : sample_loss) total += l;
    const Evaluation val = evaluate(net, val_set, config.chunk_size);
    EpochRecord rec{epoch, total / static_cast<double>(train_set.size() * width), val.mse,
                    val.mae};
    log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return log;
}

}  // namespace nbv::net
