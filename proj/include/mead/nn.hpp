// Dense feed-forward softmax classifier (and autoencoder) with SGD training
// and reverse-mode gradients with respect to the input.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mead/core.hpp"
#include "mead/objectives.hpp"

namespace mead {

enum class Activation : std::uint32_t { Identity = 0, ReLU = 1 };

struct DenseLayer {
  Matrix weight;  // out x in
  Vec bias;       // out
  Activation activation = Activation::ReLU;
  double dropout = 0.0;  // applied to this layer's output when active

  std::size_t in_dim() const { return weight.cols; }
  std::size_t out_dim() const { return weight.rows; }
  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct ModelParams {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }
  std::size_t depth() const { return layers.size(); }

  /// Throws ConfigError unless dimensions chain and every parameter is finite.
  void validate() const {
    if (layers.empty()) throw ConfigError("model has no layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& L = layers[l];
      if (L.weight.rows == 0 || L.weight.cols == 0) throw ConfigError("layer " + std::to_string(l) + " is empty");
      if (L.bias.size() != L.weight.rows) throw ConfigError("layer " + std::to_string(l) + " bias size mismatch");
      if (l > 0 && layers[l - 1].out_dim() != L.in_dim())
        throw ConfigError("layer " + std::to_string(l) + " input does not chain with previous output");
      if (!all_finite(L.weight.data) || !all_finite(L.bias)) throw ConfigError("non-finite parameter");
      if (!(L.dropout >= 0.0 && L.dropout <= 1.0)) throw ConfigError("dropout rate outside [0,1]");
    }
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

struct Architecture {
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden{16};
  std::size_t output_dim = 2;
  Activation hidden_activation = Activation::ReLU;
  double dropout = 0.0;  // on every hidden layer

  void validate() const {
    if (input_dim == 0 || output_dim == 0) throw ConfigError("architecture dimensions must be positive");
    for (std::size_t h : hidden)
      if (h == 0) throw ConfigError("architecture hidden width must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("architecture dropout must lie in [0,1)");
  }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct SoftPrediction {
  Vec logits;
  Vec probs;
};

struct TrainConfig {
  int epochs = 20;
  double learning_rate = 0.01;
  double momentum = 0.0;
  double weight_decay = 0.0;
  std::size_t batch_size = 1;
  std::uint64_t seed = 1;

  void validate() const {
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct LabeledDataset {
  Matrix inputs;  // m x d
  std::vector<std::size_t> labels;
  std::size_t classes = 0;
  std::optional<std::pair<std::size_t, std::size_t>> image_shape;  // rows, cols

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return inputs.cols; }
  ConstSpan input(std::size_t i) const { return inputs.row(i); }

  void validate() const {
    if (inputs.rows != labels.size()) throw ConfigError("dataset inputs/labels length mismatch");
    for (std::size_t y : labels)
      if (y >= classes) throw ConfigError("dataset label out of range");
  }

  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

inline Vec softmax(ConstSpan logits) {
  Vec p(logits.begin(), logits.end());
  const double mx = *std::max_element(p.begin(), p.end());
  double s = 0.0;
  for (double& v : p) {
    v = std::exp(v - mx);
    s += v;
  }
  for (double& v : p) v /= s;
  return p;
}

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(ConstSpan v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

/// Cached activations of one forward pass. values[0] is the input and
/// values[l + 1] the (post-activation, post-dropout) output of layer l.
struct ForwardTrace {
  std::vector<Vec> values;
  std::vector<Vec> pre;    // pre-activations per layer
  std::vector<Vec> masks;  // inverted-dropout multipliers, empty when inactive

  ConstSpan logits() const { return values.back(); }
};

inline ForwardTrace forward_trace(const ModelParams& params, ConstSpan x, bool dropout_active = false,
                                  std::uint64_t seed = 0) {
  if (params.layers.empty()) throw ConfigError("model has no layers");
  if (x.size() != params.input_dim())
    throw ConfigError("input dimension " + std::to_string(x.size()) + " does not match model input " +
                      std::to_string(params.input_dim()));
  ForwardTrace t;
  t.values.reserve(params.depth() + 1);
  t.values.emplace_back(x.begin(), x.end());
  t.pre.resize(params.depth());
  t.masks.resize(params.depth());
  Rng rng(seed);
  for (std::size_t l = 0; l < params.depth(); ++l) {
    const auto& L = params.layers[l];
    const Vec& in = t.values.back();
    Vec z(L.out_dim());
    for (std::size_t o = 0; o < L.out_dim(); ++o) z[o] = dot(L.weight.row(o), in) + L.bias[o];
    Vec a = z;
    if (L.activation == Activation::ReLU)
      for (double& v : a) v = v > 0.0 ? v : 0.0;
    if (dropout_active && L.dropout > 0.0) {
      Vec mask(a.size());
      const double keep = 1.0 - L.dropout;
      for (std::size_t i = 0; i < a.size(); ++i) {
        mask[i] = (keep > 0.0 && uniform01(rng) < keep) ? 1.0 / keep : 0.0;
        a[i] *= mask[i];
      }
      t.masks[l] = std::move(mask);
    }
    t.pre[l] = std::move(z);
    t.values.push_back(std::move(a));
  }
  return t;
}

inline SoftPrediction forward(const ModelParams& params, ConstSpan x, bool dropout_active = false,
                              std::uint64_t seed = 0) {
  auto t = forward_trace(params, x, dropout_active, seed);
  SoftPrediction p;
  p.logits = std::move(t.values.back());
  p.probs = softmax(p.logits);
  return p;
}

inline std::size_t predict_label(const ModelParams& params, ConstSpan x) { return argmax(forward(params, x).probs); }

/// Raw network output without softmax (autoencoder reconstruction).
inline Vec network_output(const ModelParams& params, ConstSpan x) {
  return std::move(forward_trace(params, x).values.back());
}

/// Pulls d(objective)/d(output) back through every layer. When
/// `param_grads` is non-null the weight and bias gradients are accumulated
/// into it (same shape as params). Returns d(objective)/d(input).
inline Vec backpropagate(const ModelParams& params, const ForwardTrace& trace, Vec grad_out,
                         ModelParams* param_grads = nullptr) {
  Vec g = std::move(grad_out);
  for (std::size_t l = params.depth(); l-- > 0;) {
    const auto& L = params.layers[l];
    if (!trace.masks[l].empty())
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= trace.masks[l][i];
    if (L.activation == Activation::ReLU)
      for (std::size_t i = 0; i < g.size(); ++i)
        if (!(trace.pre[l][i] > 0.0)) g[i] = 0.0;
    const Vec& in = trace.values[l];
    if (param_grads) {
      auto& G = param_grads->layers[l];
      for (std::size_t o = 0; o < L.out_dim(); ++o) {
        if (g[o] == 0.0) continue;
        auto row = G.weight.row(o);
        for (std::size_t i = 0; i < in.size(); ++i) row[i] += g[o] * in[i];
        G.bias[o] += g[o];
      }
    }
    Vec next(L.in_dim(), 0.0);
    for (std::size_t o = 0; o < L.out_dim(); ++o) {
      if (g[o] == 0.0) continue;
      auto row = L.weight.row(o);
      for (std::size_t i = 0; i < next.size(); ++i) next[i] += g[o] * row[i];
    }
    g = std::move(next);
  }
  return g;
}

/// Vector-Jacobian product of softmax: maps dL/dprobs to dL/dlogits.
inline Vec softmax_vjp(ConstSpan probs, ConstSpan grad_probs) {
  const double inner = dot(probs, grad_probs);
  Vec g(probs.size());
  for (std::size_t j = 0; j < probs.size(); ++j) g[j] = probs[j] * (grad_probs[j] - inner);
  return g;
}

/// Gradient of a linear functional of the logits with respect to the input.
inline Vec logit_input_gradient(const ModelParams& params, ConstSpan x, ConstSpan grad_logits) {
  const auto t = forward_trace(params, x);
  return backpropagate(params, t, Vec(grad_logits.begin(), grad_logits.end()));
}

inline double objective_at(const ModelParams& params, ConstSpan x_adv, ObjectiveKind kind,
                           const ObjectiveReference& ref) {
  return objective_value(kind, ref, forward(params, x_adv).probs);
}

/// Gradient of the attack objective with respect to the perturbed input.
inline Vec input_gradient(const ModelParams& params, ConstSpan x_adv, ObjectiveKind kind,
                          const ObjectiveReference& ref) {
  const auto t = forward_trace(params, x_adv);
  const Vec probs = softmax(t.logits());
  const Vec gp = objective_grad_probs(kind, ref, probs);
  return backpropagate(params, t, softmax_vjp(probs, gp));
}

/// Builds the reference an objective needs from the natural input.
inline ObjectiveReference make_reference(const ModelParams& params, ObjectiveKind kind, ConstSpan x,
                                         std::size_t y) {
  switch (kind) {
    case ObjectiveKind::ACE: return TrueLabel{y};
    case ObjectiveKind::KL:
    case ObjectiveKind::FR: return NaturalPrediction{forward(params, x).probs};
    case ObjectiveKind::Gini: return std::monostate{};
  }
  return std::monostate{};
}

inline ModelParams init_params(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(seed);
  ModelParams p;
  std::size_t in = arch.input_dim;
  std::vector<std::size_t> widths = arch.hidden;
  widths.push_back(arch.output_dim);
  for (std::size_t l = 0; l < widths.size(); ++l) {
    DenseLayer L;
    L.weight = Matrix(widths[l], in);
    L.bias.assign(widths[l], 0.0);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& w : L.weight.data) w = uniform(rng, -bound, bound);
    for (double& b : L.bias) b = uniform(rng, -bound, bound);
    const bool last = l + 1 == widths.size();
    L.activation = last ? Activation::Identity : arch.hidden_activation;
    L.dropout = last ? 0.0 : arch.dropout;
    p.layers.push_back(std::move(L));
    in = widths[l];
  }
  return p;
}

struct TrainedModel {
  ModelParams params;
  double final_loss = 0.0;
  double train_accuracy = 0.0;  // classifiers only
};

namespace detail {

inline ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  for (auto& L : z.layers) {
    std::fill(L.weight.data.begin(), L.weight.data.end(), 0.0);
    std::fill(L.bias.begin(), L.bias.end(), 0.0);
  }
  return z;
}

// SGD with PyTorch-style momentum and L2 weight decay folded into the gradient.
inline void sgd_step(ModelParams& p, ModelParams& velocity, const ModelParams& grad, double scale,
                     const TrainConfig& cfg) {
  auto update = [&](std::span<double> w, std::span<double> v, ConstSpan g) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * scale + cfg.weight_decay * w[i];
      v[i] = cfg.momentum * v[i] + gi;
      w[i] -= cfg.learning_rate * v[i];
    }
  };
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    update(p.layers[l].weight.data, velocity.layers[l].weight.data, grad.layers[l].weight.data);
    update(p.layers[l].bias, velocity.layers[l].bias, grad.layers[l].bias);
  }
}

// Generic minibatch loop; `loss_grad` returns (loss, dL/doutput) for sample i.
template <typename LossGrad>
double run_sgd(ModelParams& params, std::size_t m, const TrainConfig& cfg, LossGrad&& loss_grad,
               const Matrix& inputs) {
  ModelParams velocity = zeros_like(params);
  ModelParams grad = zeros_like(params);
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg.seed, 0x5eed));
  double epoch_loss = 0.0;
  for (int e = 0; e < cfg.epochs; ++e) {
    shuffle(order, rng);
    epoch_loss = 0.0;
    for (std::size_t start = 0; start < m; start += cfg.batch_size) {
      const std::size_t end = std::min(m, start + cfg.batch_size);
      grad = zeros_like(params);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        const auto trace = forward_trace(params, inputs.row(i), true, rng());
        auto [loss, g_out] = loss_grad(i, trace);
        if (!std::isfinite(loss))
          throw TrainingError("non-finite training loss at epoch " + std::to_string(e) + ", sample " +
                              std::to_string(i));
        epoch_loss += loss;
        backpropagate(params, trace, std::move(g_out), &grad);
      }
      sgd_step(params, velocity, grad, 1.0 / static_cast<double>(end - start), cfg);
    }
    epoch_loss /= static_cast<double>(m);
  }
  return epoch_loss;
}

}  // namespace detail

inline double accuracy(const ModelParams& params, const LabeledDataset& data) {
  if (data.size() == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) hits += predict_label(params, data.input(i)) == data.labels[i];
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

/// Mini-batch SGD on softmax cross-entropy.
inline TrainedModel train_classifier(const LabeledDataset& data, const Architecture& arch, const TrainConfig& cfg) {
  data.validate();
  cfg.validate();
  if (data.size() == 0) throw ConfigError("training set is empty");
  if (arch.input_dim != data.dim()) throw ConfigError("architecture input width does not match data");
  if (arch.output_dim != data.classes) throw ConfigError("architecture output width does not match class count");
  TrainedModel out;
  out.params = init_params(arch, cfg.seed);
  auto loss_grad = [&](std::size_t i, const ForwardTrace& t) {
    Vec p = softmax(t.logits());
    const std::size_t y = data.labels[i];
    const double loss = -std::log(std::max(p[y], std::numeric_limits<double>::min()));
    p[y] -= 1.0;
    return std::pair<double, Vec>{loss, std::move(p)};
  };
  out.final_loss = detail::run_sgd(out.params, data.size(), cfg, loss_grad, data.inputs);
  out.train_accuracy = accuracy(out.params, data);
  return out;
}

inline double reconstruction_mse(const ModelParams& ae, const Matrix& inputs) {
  double s = 0.0;
  for (std::size_t i = 0; i < inputs.rows; ++i) s += squared_distance(network_output(ae, inputs.row(i)), inputs.row(i));
  return s / static_cast<double>(inputs.rows * inputs.cols);
}

/// Dense encoder-decoder trained on mean squared reconstruction error.
/// `arch.output_dim` is forced to the input width.
inline TrainedModel train_autoencoder(const Matrix& inputs, Architecture arch, const TrainConfig& cfg) {
  cfg.validate();
  if (inputs.rows == 0) throw ConfigError("autoencoder training set is empty");
  arch.input_dim = inputs.cols;
  arch.output_dim = inputs.cols;
  TrainedModel out;
  out.params = init_params(arch, cfg.seed);
  const double scale = 1.0 / static_cast<double>(inputs.cols);
  auto loss_grad = [&](std::size_t i, const ForwardTrace& t) {
    const ConstSpan x = inputs.row(i);
    Vec g(t.logits().begin(), t.logits().end());
    double loss = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) {
      g[j] -= x[j];
      loss += g[j] * g[j];
      g[j] *= 2.0 * scale;
    }
    return std::pair<double, Vec>{loss * scale, std::move(g)};
  };
  detail::run_sgd(out.params, inputs.rows, cfg, loss_grad, inputs);
  out.final_loss = reconstruction_mse(out.params, inputs);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: "MEADMDL1", u32 layer count, per layer u32 (in, out), then per
// layer the weights row-major followed by the bias, all little-endian f64.
// Models whose layers deviate from ReLU-hidden/identity-output or carry
// dropout get a trailer: "MEADEXT1", then per layer u32 activation + f64
// dropout rate.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, sizeof v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct ByteReader {
  const std::string& buf;
  std::size_t pos = 0;
  std::string what;

  void need(std::size_t n) {
    if (pos + n > buf.size())
      throw FormatError(what + ": truncated at byte offset " + std::to_string(pos));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    double d;
    std::memcpy(&d, &v, sizeof d);
    return d;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  bool done() const { return pos == buf.size(); }
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for '" + path + "'");
}

}  // namespace detail

inline constexpr char kCheckpointMagic[] = "MEADMDL1";
inline constexpr char kCheckpointExtMagic[] = "MEADEXT1";

inline std::string serialize_model(const ModelParams& p) {
  p.validate();
  std::string out(kCheckpointMagic, 8);
  detail::put_u32(out, static_cast<std::uint32_t>(p.depth()));
  for (const auto& L : p.layers) {
    detail::put_u32(out, static_cast<std::uint32_t>(L.in_dim()));
    detail::put_u32(out, static_cast<std::uint32_t>(L.out_dim()));
  }
  for (const auto& L : p.layers) {
    for (double w : L.weight.data) detail::put_f64(out, w);
    for (double b : L.bias) detail::put_f64(out, b);
  }
  bool standard = true;
  for (std::size_t l = 0; l < p.depth(); ++l) {
    const bool last = l + 1 == p.depth();
    const Activation expected = last ? Activation::Identity : Activation::ReLU;
    if (p.layers[l].activation != expected || p.layers[l].dropout != 0.0) standard = false;
  }
  if (!standard) {
    out.append(kCheckpointExtMagic, 8);
    for (const auto& L : p.layers) {
      detail::put_u32(out, static_cast<std::uint32_t>(L.activation));
      detail::put_f64(out, L.dropout);
    }
  }
  return out;
}

inline ModelParams deserialize_model(const std::string& bytes, const std::string& what = "checkpoint") {
  detail::ByteReader r{bytes, 0, what};
  if (r.bytes(8) != std::string(kCheckpointMagic, 8)) throw FormatError(what + ": bad magic at byte offset 0");
  const std::uint32_t count = r.u32();
  if (count == 0 || count > 4096) throw FormatError(what + ": implausible layer count at byte offset 8");
  ModelParams p;
  p.layers.resize(count);
  for (std::uint32_t l = 0; l < count; ++l) {
    const std::uint32_t in = r.u32();
    const std::uint32_t out = r.u32();
    p.layers[l].weight = Matrix(out, in);
    p.layers[l].bias.assign(out, 0.0);
    p.layers[l].activation = l + 1 == count ? Activation::Identity : Activation::ReLU;
  }
  for (auto& L : p.layers) {
    for (double& w : L.weight.data) w = r.f64();
    for (double& b : L.bias) b = r.f64();
  }
  if (!r.done()) {
    const std::size_t at = r.pos;
    if (r.bytes(8) != std::string(kCheckpointExtMagic, 8))
      throw FormatError(what + ": unexpected trailing bytes at byte offset " + std::to_string(at));
    for (auto& L : p.layers) {
      const std::uint32_t act = r.u32();
      if (act > 1) throw FormatError(what + ": unknown activation tag at byte offset " + std::to_string(r.pos - 4));
      L.activation = static_cast<Activation>(act);
      L.dropout = r.f64();
    }
    if (!r.done()) throw FormatError(what + ": trailing bytes at byte offset " + std::to_string(r.pos));
  }
  try {
    p.validate();
  } catch (const ConfigError& e) {
    throw FormatError(what + ": " + e.what());
  }
  return p;
}

inline void save_model(const ModelParams& p, const std::string& path) { detail::write_file(path, serialize_model(p)); }

inline ModelParams load_model(const std::string& path) { return deserialize_model(detail::read_file(path), path); }

}  // namespace mead
