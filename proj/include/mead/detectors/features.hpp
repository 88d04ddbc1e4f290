#pragma once

#include <vector>

#include "mead/nn.hpp"

namespace mead {

/// Hidden representations of one input.
struct FeatureBundle {
  std::vector<Vec> layers;  // output of every layer, logits last
  Vec last_hidden;          // empty for single-layer models
  Vec probs;
};

inline FeatureBundle extract_features(const ModelParams& model, ConstSpan x) {
  auto t = forward_trace(model, x);
  FeatureBundle f;
  f.layers.assign(t.values.begin() + 1, t.values.end());
  if (f.layers.size() >= 2) f.last_hidden = f.layers[f.layers.size() - 2];
  f.probs = softmax(f.layers.back());
  return f;
}

}  // namespace mead
