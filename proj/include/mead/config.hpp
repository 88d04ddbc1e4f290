// Experiment configuration: a JSON document parsed fail-closed (unknown
// keys are errors), plus the named attack-grid presets.
#pragma once

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mead/attacks.hpp"
#include "mead/data.hpp"
#include "mead/detectors/detector.hpp"
#include "mead/nn.hpp"

namespace mead {

struct DatasetConfig {
  std::string kind = "gaussian";  // gaussian | idx
  GaussianSpec gaussian{};
  std::string train_images, train_labels, test_images, test_labels;
  std::optional<std::size_t> train_limit, test_limit;

  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct PresetSelection {
  std::string name;
  std::vector<double> epsilons;  // empty keeps the full grid

  friend bool operator==(const PresetSelection&, const PresetSelection&) = default;
};

struct AttackGridConfig {
  std::vector<PresetSelection> presets;
  std::vector<AttackSpec> specs;
  int steps = 40;
  int square_iters = 300;
  int deepfool_max_iter = 50;
  double deepfool_overshoot = 0.02;

  friend bool operator==(const AttackGridConfig&, const AttackGridConfig&) = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 7;
  DatasetConfig dataset{};
  Architecture model{};  // input/output widths are taken from the data
  TrainConfig train{};
  AttackGridConfig attacks{};
  std::vector<DetectorConfig> detectors{};
  AttackSpec detector_training_attack{};  // supervised positives
  std::size_t fit_samples = 300;  // training naturals used to fit detectors
  std::string output_dir = "mead-out";
  bool domain_clip = false;
  bool restrict_to_correct = false;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// The supervised-detector training attack: PGD Linf, eps = 0.03125, ACE.
inline AttackSpec default_training_attack() {
  AttackSpec s;
  s.family = AttackFamily::PGD;
  s.objective = ObjectiveKind::ACE;
  s.norm = Norm::Linf;
  s.epsilon = 0.03125;
  s.steps = 40;
  s.random_init = true;
  return s;
}

inline ExperimentConfig default_config() {
  ExperimentConfig c;
  c.detector_training_attack = default_training_attack();
  c.attacks.presets = {{"paper-linf", {}}};
  c.model.dropout = 0.1;  // gives KD-BU's dropout passes something to vary
  for (auto k : {DetectorKind::RbfSvm, DetectorKind::Lid, DetectorKind::KdBu, DetectorKind::Fs, DetectorKind::MagNet}) {
    DetectorConfig d;
    d.kind = k;
    if (k == DetectorKind::Fs) d.fs.bit_depths = {4};  // the default dataset is 2-d synthetic
    c.detectors.push_back(d);
  }
  return c;
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"paper-l1", "paper-l2", "paper-linf", "paper-spatial"};
  return names;
}

/// Expands a named grid. `epsilons` (if non-empty) must be a subset of the
/// preset's grid.
inline std::vector<AttackSpec> expand_preset(const PresetSelection& sel, const AttackGridConfig& grid) {
  std::vector<double> eps_grid;
  std::vector<AttackFamily> families;
  Norm norm = Norm::Linf;
  bool deepfool = false, square = false, spatial = false;
  if (sel.name == "paper-l1") {
    eps_grid = {5, 10, 15, 20, 25, 30, 40};
    families = {AttackFamily::PGD};
    norm = Norm::L1;
  } else if (sel.name == "paper-l2") {
    eps_grid = {0.125, 0.25, 0.3125, 0.5, 1, 1.5, 2};
    families = {AttackFamily::PGD};
    norm = Norm::L2;
    deepfool = true;
  } else if (sel.name == "paper-linf") {
    eps_grid = {0.0315, 0.0625, 0.125, 0.25, 0.3125, 0.5};
    families = {AttackFamily::FGSM, AttackFamily::BIM, AttackFamily::PGD};
    norm = Norm::Linf;
    square = true;
  } else if (sel.name == "paper-spatial") {
    spatial = true;
  } else {
    throw ConfigError("unknown preset '" + sel.name + "'");
  }
  std::vector<double> eps = sel.epsilons.empty() ? eps_grid : sel.epsilons;
  for (double e : eps)
    if (std::find(eps_grid.begin(), eps_grid.end(), e) == eps_grid.end())
      throw ConfigError("epsilon " + format_double(e) + " is not in preset '" + sel.name + "'");

  std::vector<AttackSpec> out;
  for (double e : eps)
    for (AttackFamily f : families)
      for (ObjectiveKind k : kAllObjectives) {
        AttackSpec s;
        s.family = f;
        s.objective = k;
        s.norm = norm;
        s.epsilon = e;
        s.steps = f == AttackFamily::FGSM ? 1 : grid.steps;
        s.random_init = f == AttackFamily::PGD;
        out.push_back(s);
      }
  if (square) {
    // Square attack runs at a single budget; keep it when that budget is selected.
    const double sq_eps = 0.3125;
    if (std::find(eps.begin(), eps.end(), sq_eps) != eps.end() || sel.epsilons.empty())
      for (ObjectiveKind k : kAllObjectives) {
        AttackSpec s;
        s.family = AttackFamily::Square;
        s.objective = k;
        s.norm = Norm::Linf;
        s.epsilon = sq_eps;
        s.steps = grid.square_iters;
        out.push_back(s);
      }
  }
  if (deepfool) {
    AttackSpec s;
    s.family = AttackFamily::DeepFool;
    s.norm = Norm::L2;
    s.steps = grid.deepfool_max_iter;
    s.overshoot = grid.deepfool_overshoot;
    out.push_back(s);
  }
  if (spatial) {
    AttackSpec s;
    s.family = AttackFamily::SpatialTransform;
    s.norm = Norm::None;
    s.max_rotation_deg = 60.0;
    s.max_translation_px = 10;
    s.grid_steps = 7;
    out.push_back(s);
  }
  return out;
}

inline std::vector<AttackSpec> resolve_attacks(const AttackGridConfig& grid) {
  std::vector<AttackSpec> out;
  for (const auto& p : grid.presets) {
    auto v = expand_preset(p, grid);
    out.insert(out.end(), v.begin(), v.end());
  }
  out.insert(out.end(), grid.specs.begin(), grid.specs.end());
  for (const auto& s : out) s.validate();
  return out;
}

// ---------------------------------------------------------------------------
// JSON mapping
// ---------------------------------------------------------------------------

namespace detail {

using nlohmann::json;

/// Tracks which keys of an object were consumed; finish() rejects the rest.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& required(const std::string& key) {
    if (!j_.contains(key)) throw ConfigError("missing required key '" + qualified(key) + "'");
    seen_.insert(key);
    return j_.at(key);
  }

  template <typename T>
  void optional(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("bad value for '" + qualified(key) + "': " + e.what());
    }
  }

  template <typename T>
  T get_required(const std::string& key) {
    const json& v = required(key);
    try {
      return v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("bad value for '" + qualified(key) + "': " + e.what());
    }
  }

  const json* maybe(const std::string& key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + qualified(it.key()) + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline json to_json(const AttackSpec& s) {
  json j;
  j["family"] = std::string(to_string(s.family));
  j["objective"] = std::string(to_string(s.objective));
  j["norm"] = std::string(to_string(s.norm));
  j["epsilon"] = s.epsilon;
  j["steps"] = s.steps;
  j["step_size"] = s.step_size;
  j["random_init"] = s.random_init;
  j["seed"] = s.seed;
  j["overshoot"] = s.overshoot;
  j["max_rotation_deg"] = s.max_rotation_deg;
  j["max_translation_px"] = s.max_translation_px;
  j["grid_steps"] = s.grid_steps;
  return j;
}

inline AttackSpec attack_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  AttackSpec s;
  s.family = parse_family(r.get_required<std::string>("family"));
  std::string obj = std::string(to_string(s.objective)), norm = std::string(to_string(s.norm));
  r.optional("objective", obj);
  r.optional("norm", norm);
  s.objective = parse_objective(obj);
  s.norm = parse_norm(norm);
  if (s.family == AttackFamily::DeepFool && !r.has("norm")) s.norm = Norm::L2;
  if (s.family == AttackFamily::SpatialTransform && !r.has("norm")) s.norm = Norm::None;
  r.optional("epsilon", s.epsilon);
  r.optional("steps", s.steps);
  r.optional("step_size", s.step_size);
  r.optional("random_init", s.random_init);
  r.optional("seed", s.seed);
  r.optional("overshoot", s.overshoot);
  r.optional("max_rotation_deg", s.max_rotation_deg);
  r.optional("max_translation_px", s.max_translation_px);
  r.optional("grid_steps", s.grid_steps);
  r.finish();
  s.validate();
  return s;
}

inline json to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},           {"learning_rate", t.learning_rate}, {"momentum", t.momentum},
          {"weight_decay", t.weight_decay}, {"batch_size", t.batch_size},     {"seed", t.seed}};
}

inline TrainConfig train_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  TrainConfig t;
  r.optional("epochs", t.epochs);
  r.optional("learning_rate", t.learning_rate);
  r.optional("momentum", t.momentum);
  r.optional("weight_decay", t.weight_decay);
  r.optional("batch_size", t.batch_size);
  r.optional("seed", t.seed);
  r.finish();
  t.validate();
  return t;
}

inline std::string activation_name(Activation a) { return a == Activation::ReLU ? "relu" : "identity"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "identity") return Activation::Identity;
  throw ConfigError("unknown activation '" + s + "'");
}

inline json to_json(const DetectorConfig& d) {
  json j;
  j["kind"] = std::string(to_string(d.kind));
  switch (d.kind) {
    case DetectorKind::RbfSvm:
      j["gamma"] = d.svm.gamma;
      j["c_reg"] = d.svm.c_reg;
      j["max_passes"] = d.svm.max_passes;
      j["kkt_tolerance"] = d.svm.kkt_tolerance;
      break;
    case DetectorKind::Lid:
      j["k"] = d.lid.k;
      j["reference_size"] = d.lid.reference_size;
      j["noise_sigma"] = d.lid.noise_sigma;
      break;
    case DetectorKind::KdBu:
      j["bandwidth"] = d.kdbu.bandwidth;
      j["dropout_passes"] = d.kdbu.dropout_passes;
      break;
    case DetectorKind::Fs:
      j["bit_depths"] = d.fs.bit_depths;
      j["median_window"] = d.fs.median_window;
      break;
    case DetectorKind::MagNet:
      j["hidden"] = d.magnet.hidden;
      j["hidden_activation"] = activation_name(d.magnet.hidden_activation);
      j["train"] = to_json(d.magnet.train);
      j["temperature"] = d.magnet.temperature;
      break;
  }
  return j;
}

inline DetectorConfig detector_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  DetectorConfig d;
  d.kind = parse_detector_kind(r.get_required<std::string>("kind"));
  switch (d.kind) {
    case DetectorKind::RbfSvm:
      r.optional("gamma", d.svm.gamma);
      r.optional("c_reg", d.svm.c_reg);
      r.optional("max_passes", d.svm.max_passes);
      r.optional("kkt_tolerance", d.svm.kkt_tolerance);
      break;
    case DetectorKind::Lid:
      r.optional("k", d.lid.k);
      r.optional("reference_size", d.lid.reference_size);
      r.optional("noise_sigma", d.lid.noise_sigma);
      break;
    case DetectorKind::KdBu:
      r.optional("bandwidth", d.kdbu.bandwidth);
      r.optional("dropout_passes", d.kdbu.dropout_passes);
      break;
    case DetectorKind::Fs:
      r.optional("bit_depths", d.fs.bit_depths);
      r.optional("median_window", d.fs.median_window);
      break;
    case DetectorKind::MagNet: {
      r.optional("hidden", d.magnet.hidden);
      std::string act = activation_name(d.magnet.hidden_activation);
      r.optional("hidden_activation", act);
      d.magnet.hidden_activation = parse_activation(act);
      if (const json* t = r.maybe("train")) d.magnet.train = train_from_json(*t, r.qualified("train"));
      r.optional("temperature", d.magnet.temperature);
      break;
    }
  }
  r.finish();
  return d;
}

}  // namespace detail

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  using detail::json;
  json j;
  j["seed"] = c.seed;
  json ds;
  ds["kind"] = c.dataset.kind;
  if (c.dataset.kind == "gaussian") {
    const auto& g = c.dataset.gaussian;
    ds["n_per_class"] = g.n_per_class;
    ds["mu0"] = g.mu0;
    ds["mu1"] = g.mu1;
    ds["sigma"] = g.sigma;
    ds["train_fraction"] = g.train_fraction;
    ds["seed"] = g.seed;
  } else {
    ds["train_images"] = c.dataset.train_images;
    ds["train_labels"] = c.dataset.train_labels;
    ds["test_images"] = c.dataset.test_images;
    ds["test_labels"] = c.dataset.test_labels;
    if (c.dataset.train_limit) ds["train_limit"] = *c.dataset.train_limit;
    if (c.dataset.test_limit) ds["test_limit"] = *c.dataset.test_limit;
  }
  j["dataset"] = ds;
  j["model"] = {{"hidden", c.model.hidden},
                {"dropout", c.model.dropout},
                {"hidden_activation", detail::activation_name(c.model.hidden_activation)}};
  j["train"] = detail::to_json(c.train);
  json at;
  at["presets"] = json::array();
  for (const auto& p : c.attacks.presets) at["presets"].push_back({{"name", p.name}, {"epsilons", p.epsilons}});
  at["specs"] = json::array();
  for (const auto& s : c.attacks.specs) at["specs"].push_back(detail::to_json(s));
  at["steps"] = c.attacks.steps;
  at["square_iters"] = c.attacks.square_iters;
  at["deepfool_max_iter"] = c.attacks.deepfool_max_iter;
  at["deepfool_overshoot"] = c.attacks.deepfool_overshoot;
  j["attacks"] = at;
  j["detectors"] = json::array();
  for (const auto& d : c.detectors) j["detectors"].push_back(detail::to_json(d));
  j["detector_training_attack"] = detail::to_json(c.detector_training_attack);
  j["fit_samples"] = c.fit_samples;
  j["output_dir"] = c.output_dir;
  j["domain_clip"] = c.domain_clip;
  j["restrict_to_correct"] = c.restrict_to_correct;
  return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using detail::ObjectReader;
  ExperimentConfig c = default_config();
  ObjectReader top(j, "");
  c.seed = top.get_required<std::uint64_t>("seed");
  {
    ObjectReader r(top.required("dataset"), "dataset");
    c.dataset.kind = r.get_required<std::string>("kind");
    if (c.dataset.kind == "gaussian") {
      auto& g = c.dataset.gaussian;
      r.optional("n_per_class", g.n_per_class);
      r.optional("mu0", g.mu0);
      r.optional("mu1", g.mu1);
      r.optional("sigma", g.sigma);
      r.optional("train_fraction", g.train_fraction);
      r.optional("seed", g.seed);
      g.validate();
    } else if (c.dataset.kind == "idx") {
      c.dataset.train_images = r.get_required<std::string>("train_images");
      c.dataset.train_labels = r.get_required<std::string>("train_labels");
      c.dataset.test_images = r.get_required<std::string>("test_images");
      c.dataset.test_labels = r.get_required<std::string>("test_labels");
      if (r.has("train_limit")) c.dataset.train_limit = r.get_required<std::size_t>("train_limit");
      if (r.has("test_limit")) c.dataset.test_limit = r.get_required<std::size_t>("test_limit");
    } else {
      throw ConfigError("dataset.kind must be 'gaussian' or 'idx'");
    }
    r.finish();
  }
  if (const auto* m = top.maybe("model")) {
    ObjectReader r(*m, "model");
    r.optional("hidden", c.model.hidden);
    r.optional("dropout", c.model.dropout);
    std::string act = detail::activation_name(c.model.hidden_activation);
    r.optional("hidden_activation", act);
    c.model.hidden_activation = detail::parse_activation(act);
    r.finish();
    c.model.validate();
  }
  if (const auto* t = top.maybe("train")) c.train = detail::train_from_json(*t, "train");
  {
    ObjectReader r(top.required("attacks"), "attacks");
    c.attacks.presets.clear();
    if (const auto* ps = r.maybe("presets")) {
      if (!ps->is_array()) throw ConfigError("attacks.presets must be an array");
      for (const auto& p : *ps) {
        PresetSelection sel;
        if (p.is_string()) {
          sel.name = p.get<std::string>();
        } else {
          ObjectReader pr(p, "attacks.presets[]");
          sel.name = pr.get_required<std::string>("name");
          pr.optional("epsilons", sel.epsilons);
          pr.finish();
        }
        c.attacks.presets.push_back(sel);
      }
    }
    if (const auto* ss = r.maybe("specs")) {
      if (!ss->is_array()) throw ConfigError("attacks.specs must be an array");
      for (const auto& s : *ss) c.attacks.specs.push_back(detail::attack_from_json(s, "attacks.specs[]"));
    }
    r.optional("steps", c.attacks.steps);
    r.optional("square_iters", c.attacks.square_iters);
    r.optional("deepfool_max_iter", c.attacks.deepfool_max_iter);
    r.optional("deepfool_overshoot", c.attacks.deepfool_overshoot);
    r.finish();
    if (c.attacks.presets.empty() && c.attacks.specs.empty()) throw ConfigError("attacks: no presets or specs");
    resolve_attacks(c.attacks);
  }
  if (const auto* ds = top.maybe("detectors")) {
    if (!ds->is_array()) throw ConfigError("detectors must be an array");
    c.detectors.clear();
    for (const auto& d : *ds) c.detectors.push_back(detail::detector_from_json(d, "detectors[]"));
  }
  if (const auto* a = top.maybe("detector_training_attack"))
    c.detector_training_attack = detail::attack_from_json(*a, "detector_training_attack");
  top.optional("fit_samples", c.fit_samples);
  if (c.fit_samples < 2) throw ConfigError("fit_samples must be at least 2");
  top.optional("output_dir", c.output_dir);
  top.optional("domain_clip", c.domain_clip);
  top.optional("restrict_to_correct", c.restrict_to_correct);
  top.finish();
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline ExperimentConfig parse_config(const std::string& path) {
  std::string text;
  try {
    text = detail::read_file(path);
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
  return parse_config_text(text);
}

inline std::string write_config_text(const ExperimentConfig& c) { return config_to_json(c).dump(2) + "\n"; }

/// Resolves an IDX path, honoring MEAD_DATA_DIR.
inline std::string resolve_data_path(const std::string& p) {
  if (const char* dir = std::getenv("MEAD_DATA_DIR"); dir && *dir)
    return (std::filesystem::path(dir) / std::filesystem::path(p).filename()).string();
  return p;
}

inline TrainTestSplit load_dataset(const DatasetConfig& d) {
  if (d.kind == "gaussian") return gen_gaussian_dataset(d.gaussian);
  TrainTestSplit s;
  s.train = load_idx(resolve_data_path(d.train_images), resolve_data_path(d.train_labels), d.train_limit);
  s.test = load_idx(resolve_data_path(d.test_images), resolve_data_path(d.test_labels), d.test_limit);
  s.test.classes = s.train.classes = std::max(s.train.classes, s.test.classes);
  return s;
}

}  // namespace mead
