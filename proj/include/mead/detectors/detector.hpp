// Uniform detector interface: fit, score (higher = more adversarial) and a
// versioned binary blob format.
#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>

#include "mead/detectors/kdbu.hpp"
#include "mead/detectors/lid.hpp"
#include "mead/detectors/magnet.hpp"
#include "mead/detectors/squeeze.hpp"
#include "mead/detectors/svm.hpp"
#include "mead/nn.hpp"

namespace mead {

enum class DetectorKind : std::uint8_t { RbfSvm = 0, Lid = 1, KdBu = 2, Fs = 3, MagNet = 4 };

inline std::string_view to_string(DetectorKind k) {
  switch (k) {
    case DetectorKind::RbfSvm: return "rbf_svm";
    case DetectorKind::Lid: return "lid";
    case DetectorKind::KdBu: return "kd_bu";
    case DetectorKind::Fs: return "fs";
    case DetectorKind::MagNet: return "magnet";
  }
  return "?";
}

inline DetectorKind parse_detector_kind(std::string_view s) {
  for (auto k : {DetectorKind::RbfSvm, DetectorKind::Lid, DetectorKind::KdBu, DetectorKind::Fs, DetectorKind::MagNet})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown detector '" + std::string(s) + "' (expected rbf_svm|lid|kd_bu|fs|magnet)");
}

inline bool is_supervised(DetectorKind k) {
  return k == DetectorKind::RbfSvm || k == DetectorKind::Lid || k == DetectorKind::KdBu;
}

struct DetectorConfig {
  DetectorKind kind = DetectorKind::Fs;
  RbfSvmConfig svm{};
  LidConfig lid{};
  KdBuConfig kdbu{};
  FsConfig fs{};
  MagNetConfig magnet{};

  friend bool operator==(const DetectorConfig&, const DetectorConfig&) = default;
};

using DetectorState = std::variant<std::monostate, RbfSvm, LidDetector, KdBuDetector, FsDetector, MagNetDetector>;

struct Detector {
  DetectorKind kind = DetectorKind::Fs;
  DetectorState state;
  std::string training_attack;  // empty for unsupervised detectors

  bool fitted() const { return !std::holds_alternative<std::monostate>(state); }

  double score(const ModelParams& model, ConstSpan x) const {
    return std::visit(
        [&](const auto& s) -> double {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, std::monostate>) {
            throw UsageError("detector '" + std::string(to_string(kind)) + "' scored before fit");
          } else if constexpr (std::is_same_v<T, RbfSvm>) {
            return s.decision(x);
          } else if constexpr (std::is_same_v<T, FsDetector>) {
            return fs_score(model, x, s.config.bit_depths, s.config.median_window, s.image_shape);
          } else {
            return s.score(model, x);
          }
        },
        state);
  }

  friend bool operator==(const Detector&, const Detector&) = default;
};

/// Training material. Unsupervised kinds ignore `adversarials`.
/// `adversarial_sources[i]`, when given, is the natural row adversarial i was
/// made from.
struct DetectorFitData {
  const LabeledDataset* naturals = nullptr;
  Matrix adversarials;
  std::string attack_name;
  std::vector<std::size_t> adversarial_sources;
};

inline Detector fit_detector(const DetectorConfig& cfg, const ModelParams& model, const DetectorFitData& data,
                             std::uint64_t seed) {
  if (!data.naturals || data.naturals->size() == 0) throw ConfigError("detector fit needs naturals");
  const auto& nat = *data.naturals;
  Detector d;
  d.kind = cfg.kind;
  if (is_supervised(cfg.kind)) {
    if (data.adversarials.rows == 0) throw ConfigError("supervised detector needs adversarial training samples");
    d.training_attack = data.attack_name;
  }
  switch (cfg.kind) {
    case DetectorKind::RbfSvm: d.state = fit_rbf_svm(nat.inputs, data.adversarials, cfg.svm); break;
    case DetectorKind::Lid: d.state = fit_lid_detector(model, nat.inputs, data.adversarials, cfg.lid, seed, data.adversarial_sources); break;
    case DetectorKind::KdBu:
      d.state = fit_kd_bu(model, nat.inputs, nat.labels, data.adversarials, cfg.kdbu, seed, data.adversarial_sources);
      break;
    case DetectorKind::Fs: {
      FsDetector fs;
      fs.config = cfg.fs;
      fs.image_shape = nat.image_shape;
      d.state = fs;
      break;
    }
    case DetectorKind::MagNet: {
      MagNetConfig mc = cfg.magnet;
      mc.train.seed = derive_seed(seed, 0xae);
      d.state = fit_magnet(model, nat.inputs, mc);
      break;
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Blob: "MEADDET" + kind byte + version byte + kind-specific payload.
// ---------------------------------------------------------------------------

inline constexpr char kDetectorMagic[] = "MEADDET";
inline constexpr std::uint8_t kDetectorVersion = 1;

namespace detail {

struct BlobWriter {
  std::string out;
  void u8(std::uint8_t v) { out.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { put_u32(out, v); }
  void f64(double v) { put_f64(out, v); }
  void vec(ConstSpan v) {
    u32(static_cast<std::uint32_t>(v.size()));
    for (double x : v) f64(x);
  }
  void mat(const Matrix& m) {
    u32(static_cast<std::uint32_t>(m.rows));
    u32(static_cast<std::uint32_t>(m.cols));
    for (double x : m.data) f64(x);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out += s;
  }
  void head(const LogisticHead& h) {
    vec(h.mean);
    vec(h.scale);
    vec(h.weights);
    f64(h.bias);
    f64(h.ridge);
  }
  void kde(const GaussianKde& k) {
    mat(k.points);
    f64(k.bandwidth);
  }
};

struct BlobReader : ByteReader {
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::size_t count() {
    const std::uint32_t n = u32();
    if (static_cast<std::size_t>(n) > buf.size()) throw FormatError(what + ": implausible length at byte offset " + std::to_string(pos - 4));
    return n;
  }
  Vec vec() {
    const std::size_t n = count();
    need(n * 8);
    Vec v(n);
    for (double& x : v) x = f64();
    return v;
  }
  Matrix mat() {
    const std::size_t r = count();
    const std::size_t c = count();
    need(r * c * 8);
    Matrix m(r, c);
    for (double& x : m.data) x = f64();
    return m;
  }
  std::string str() { return bytes(count()); }
  LogisticHead head() {
    LogisticHead h;
    h.mean = vec();
    h.scale = vec();
    h.weights = vec();
    h.bias = f64();
    h.ridge = f64();
    return h;
  }
  GaussianKde kde() {
    GaussianKde k;
    k.points = mat();
    k.bandwidth = f64();
    return k;
  }
};

}  // namespace detail

inline std::string serialize_detector(const Detector& d) {
  if (!d.fitted()) throw UsageError("cannot serialize an unfitted detector");
  detail::BlobWriter w;
  w.out.assign(kDetectorMagic, 7);
  w.u8(static_cast<std::uint8_t>(d.kind));
  w.u8(kDetectorVersion);
  w.str(d.training_attack);
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, RbfSvm>) {
          w.mat(s.support);
          w.vec(s.coef);
          w.f64(s.bias);
          w.f64(s.gamma);
          w.u8(s.converged);
          w.f64(static_cast<double>(s.iterations));
        } else if constexpr (std::is_same_v<T, LidDetector>) {
          w.u32(static_cast<std::uint32_t>(s.config.k));
          w.u32(static_cast<std::uint32_t>(s.config.reference_size));
          w.f64(s.config.noise_sigma);
          w.u32(static_cast<std::uint32_t>(s.reference.size()));
          for (const auto& m : s.reference) w.mat(m);
          w.head(s.head);
        } else if constexpr (std::is_same_v<T, KdBuDetector>) {
          w.f64(s.config.bandwidth);
          w.u32(static_cast<std::uint32_t>(s.config.dropout_passes));
          w.u32(static_cast<std::uint32_t>(s.per_class.size()));
          for (const auto& k : s.per_class) w.kde(k);
          w.kde(s.global);
          w.u32(static_cast<std::uint32_t>(s.dropout_seed >> 32));
          w.u32(static_cast<std::uint32_t>(s.dropout_seed & 0xffffffffULL));
          w.head(s.head);
        } else if constexpr (std::is_same_v<T, FsDetector>) {
          w.u32(static_cast<std::uint32_t>(s.config.bit_depths.size()));
          for (int b : s.config.bit_depths) w.u32(static_cast<std::uint32_t>(b));
          w.u32(static_cast<std::uint32_t>(s.config.median_window));
          w.u8(s.image_shape.has_value());
          w.u32(static_cast<std::uint32_t>(s.image_shape ? s.image_shape->first : 0));
          w.u32(static_cast<std::uint32_t>(s.image_shape ? s.image_shape->second : 0));
        } else if constexpr (std::is_same_v<T, MagNetDetector>) {
          w.f64(s.config.temperature);
          w.str(serialize_model(s.autoencoder));
          w.vec(s.fit_recon);
          w.vec(s.fit_divergence);
        }
      },
      d.state);
  return w.out;
}

inline Detector deserialize_detector(const std::string& bytes, const std::string& what = "detector blob") {
  detail::BlobReader r{{bytes, 0, what}};
  if (r.bytes(7) != std::string(kDetectorMagic, 7)) throw FormatError(what + ": bad magic at byte offset 0");
  const std::uint8_t kind = r.u8();
  if (kind > 4) throw FormatError(what + ": unknown detector kind at byte offset 7");
  const std::uint8_t version = r.u8();
  if (version != kDetectorVersion) throw FormatError(what + ": unsupported version at byte offset 8");
  Detector d;
  d.kind = static_cast<DetectorKind>(kind);
  d.training_attack = r.str();
  switch (d.kind) {
    case DetectorKind::RbfSvm: {
      RbfSvm s;
      s.support = r.mat();
      s.coef = r.vec();
      s.bias = r.f64();
      s.gamma = r.f64();
      s.converged = r.u8() != 0;
      s.iterations = static_cast<std::size_t>(r.f64());
      d.state = std::move(s);
      break;
    }
    case DetectorKind::Lid: {
      LidDetector s;
      s.config.k = r.u32();
      s.config.reference_size = r.u32();
      s.config.noise_sigma = r.f64();
      s.reference.resize(r.count());
      for (auto& m : s.reference) m = r.mat();
      s.head = r.head();
      d.state = std::move(s);
      break;
    }
    case DetectorKind::KdBu: {
      KdBuDetector s;
      s.config.bandwidth = r.f64();
      s.config.dropout_passes = static_cast<int>(r.u32());
      s.per_class.resize(r.count());
      for (auto& k : s.per_class) k = r.kde();
      s.global = r.kde();
      const std::uint64_t hi = r.u32();
      const std::uint64_t lo = r.u32();
      s.dropout_seed = (hi << 32) | lo;
      s.head = r.head();
      d.state = std::move(s);
      break;
    }
    case DetectorKind::Fs: {
      FsDetector s;
      s.config.bit_depths.resize(r.count());
      for (int& b : s.config.bit_depths) b = static_cast<int>(r.u32());
      s.config.median_window = r.u32();
      const bool has_shape = r.u8() != 0;
      const std::size_t rows = r.u32(), cols = r.u32();
      if (has_shape) s.image_shape = std::pair{rows, cols};
      d.state = std::move(s);
      break;
    }
    case DetectorKind::MagNet: {
      MagNetDetector s;
      s.config.temperature = r.f64();
      s.autoencoder = deserialize_model(r.str(), what + " (autoencoder)");
      s.fit_recon = r.vec();
      s.fit_divergence = r.vec();
      d.state = std::move(s);
      break;
    }
  }
  if (!r.done()) throw FormatError(what + ": trailing bytes at byte offset " + std::to_string(r.pos));
  return d;
}

}  // namespace mead
