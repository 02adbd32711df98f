#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "strep/diffengine.hpp"

namespace strep {

// Fully-connected layer, weight stored in x out so that y = x W + b.
struct Layer {
  RowMatrix weight;
  RowMatrix bias;

  Eigen::Index fan_in() const { return weight.rows(); }
  Eigen::Index fan_out() const { return weight.cols(); }
};

// Weights uniform in +-sqrt(1/fan_in), biases zero.
template <class Rng>
Layer make_layer(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng,
                 double weight_scale = 1.0) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Layer l;
  l.weight.resize(fan_in, fan_out);
  for (Eigen::Index i = 0; i < l.weight.size(); ++i)
    l.weight.data()[i] = weight_scale * dist(rng);
  l.bias = RowMatrix::Zero(1, fan_out);
  return l;
}

// Layer stack through widths[0] -> widths[1] -> ... -> widths.back().
template <class Rng>
std::vector<Layer> make_mlp(const std::vector<int>& widths, Rng& rng) {
  std::vector<Layer> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    layers.push_back(make_layer(widths[i], widths[i + 1], rng));
  return layers;
}

struct BoundLayer {
  ad::Var weight;
  ad::Var bias;
};

// Puts layers on a graph. Trainable layers use keys key_base + 2*i (weight)
// and key_base + 2*i + 1 (bias); frozen layers become constants.
inline std::vector<BoundLayer> bind_layers(ad::Graph& g,
                                           const std::vector<Layer>& layers,
                                           int key_base, bool trainable) {
  std::vector<BoundLayer> out;
  out.reserve(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const int key = key_base + 2 * static_cast<int>(i);
    if (trainable) {
      out.push_back({g.parameter(layers[i].weight, key),
                     g.parameter(layers[i].bias, key + 1)});
    } else {
      out.push_back({g.constant(layers[i].weight), g.constant(layers[i].bias)});
    }
  }
  return out;
}

// ReLU after every layer except (optionally) the last.
inline ad::Var run_mlp(const std::vector<BoundLayer>& layers, ad::Var x,
                       bool relu_on_last) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = ad::linear(layers[i].weight, layers[i].bias, x);
    if (i + 1 < layers.size() || relu_on_last) x = ad::relu(x);
  }
  return x;
}

inline bool layers_finite(const std::vector<Layer>& layers) {
  for (const auto& l : layers)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

}  // namespace strep
