#pragma once

#include <memory>

#include "nbv/nbvnet.hpp"

namespace nbv::net {

/// Materializes the layer for `spec` given its per-sample input shape.
/// Parameters are initialized uniformly in +-sqrt(6 / fan_in); biases start at 0.
std::unique_ptr<Layer> make_layer(const LayerSpec& spec, const Shape& in, Rng& init_rng);

}  // namespace nbv::net
