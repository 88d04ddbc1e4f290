#pragma once

#include <cmath>

#include "mead/core.hpp"
#include "mead/nn.hpp"

namespace testutil {

inline mead::ModelParams random_model(std::size_t in, std::vector<std::size_t> hidden, std::size_t out,
                                      std::uint64_t seed) {
  mead::Architecture a;
  a.input_dim = in;
  a.hidden = std::move(hidden);
  a.output_dim = out;
  auto p = mead::init_params(a, seed);
  // give the biases something to do so ReLU kinks are spread around
  mead::Rng rng(seed ^ 0x55);
  for (auto& L : p.layers)
    for (double& b : L.bias) b = 0.3 * mead::normal(rng);
  return p;
}

// single affine layer: logits = W x + b
inline mead::ModelParams linear_model(const mead::Matrix& w, const mead::Vec& b) {
  mead::ModelParams p;
  mead::DenseLayer L;
  L.weight = w;
  L.bias = b;
  L.activation = mead::Activation::Identity;
  p.layers.push_back(L);
  return p;
}

inline mead::Vec random_vec(std::size_t d, mead::Rng& rng, double scale = 1.0) {
  mead::Vec v(d);
  for (double& x : v) x = scale * mead::normal(rng);
  return v;
}

inline mead::Vec random_simplex(std::size_t c, mead::Rng& rng) {
  mead::Vec v(c);
  double s = 0.0;
  for (double& x : v) {
    x = -std::log(std::max(mead::uniform01(rng), 1e-300));
    s += x;
  }
  for (double& x : v) x /= s;
  return v;
}

// true if every hidden pre-activation is at least `margin` away from 0
inline bool away_from_kinks(const mead::ModelParams& p, mead::ConstSpan x, double margin) {
  const auto t = mead::forward_trace(p, x);
  for (std::size_t l = 0; l < p.depth(); ++l) {
    if (p.layers[l].activation != mead::Activation::ReLU) continue;
    for (double z : t.pre[l])
      if (std::abs(z) < margin) return false;
  }
  return true;
}

// standard normal CDF
inline double phi(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace testutil
