// Datasets (synthetic Gaussians, IDX files) and CSV persistence.
#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mead/core.hpp"
#include "mead/eval.hpp"
#include "mead/nn.hpp"

namespace mead {

struct GaussianSpec {
  std::size_t n_per_class = 300;
  Vec mu0{1.0, 1.0};
  Vec mu1{-1.0, -1.0};
  double sigma = 1.0;
  double train_fraction = 0.7;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_per_class < 1) throw ConfigError("gaussian: n_per_class must be >= 1");
    if (mu0.size() != mu1.size() || mu0.empty()) throw ConfigError("gaussian: means must have equal positive width");
    if (!(sigma >= 0.0)) throw ConfigError("gaussian: sigma must be non-negative");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("gaussian: train_fraction must lie in (0,1)");
  }

  friend bool operator==(const GaussianSpec&, const GaussianSpec&) = default;
};

struct TrainTestSplit {
  LabeledDataset train;
  LabeledDataset test;
};

/// Two isotropic Gaussian classes, shuffled and split.
inline TrainTestSplit gen_gaussian_dataset(const GaussianSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t d = spec.mu0.size();
  Matrix pts(2 * spec.n_per_class, d);
  std::vector<std::size_t> labels(2 * spec.n_per_class);
  for (std::size_t i = 0; i < pts.rows; ++i) {
    const std::size_t y = i < spec.n_per_class ? 0 : 1;
    const Vec& mu = y == 0 ? spec.mu0 : spec.mu1;
    for (std::size_t k = 0; k < d; ++k) pts(i, k) = mu[k] + spec.sigma * normal(rng);
    labels[i] = y;
  }
  std::vector<std::size_t> order(pts.rows);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle(order, rng);
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(pts.rows)));
  TrainTestSplit out;
  out.train.classes = out.test.classes = 2;
  out.train.inputs = Matrix(0, d);
  out.test.inputs = Matrix(0, d);
  for (std::size_t j = 0; j < order.size(); ++j) {
    auto& dst = j < n_train ? out.train : out.test;
    dst.inputs.append_row(pts.row(order[j]));
    dst.labels.push_back(labels[order[j]]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// IDX (big-endian): images magic 0x00000803 with dims (n, rows, cols);
// labels magic 0x00000801 with dim (n).
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t be32(const std::string& b, std::size_t off, const std::string& what) {
  if (off + 4 > b.size()) throw FormatError(what + ": truncated header at byte offset " + std::to_string(off));
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(b[off + i]);
  return v;
}

inline void put_be32(std::string& out, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Parses an IDX image/label pair. Pixels are scaled to [0,1] by 1/255.
/// `limit` truncates to the first `limit` samples.
inline LabeledDataset parse_idx(const std::string& images, const std::string& labels,
                                std::optional<std::size_t> limit = std::nullopt,
                                const std::string& images_name = "images", const std::string& labels_name = "labels") {
  if (detail::be32(images, 0, images_name) != kIdxImageMagic)
    throw FormatError(images_name + ": expected image magic 0x00000803 at byte offset 0");
  if (detail::be32(labels, 0, labels_name) != kIdxLabelMagic)
    throw FormatError(labels_name + ": expected label magic 0x00000801 at byte offset 0");
  const std::size_t n = detail::be32(images, 4, images_name);
  const std::size_t rows = detail::be32(images, 8, images_name);
  const std::size_t cols = detail::be32(images, 12, images_name);
  const std::size_t n_labels = detail::be32(labels, 4, labels_name);
  const std::size_t img_expected = 16 + n * rows * cols;
  if (images.size() != img_expected)
    throw FormatError(images_name + ": declared dimensions need " + std::to_string(img_expected) +
                      " bytes but file has " + std::to_string(images.size()) + " (mismatch at byte offset " +
                      std::to_string(std::min(images.size(), img_expected)) + ")");
  if (labels.size() != 8 + n_labels)
    throw FormatError(labels_name + ": declared count needs " + std::to_string(8 + n_labels) +
                      " bytes but file has " + std::to_string(labels.size()) + " (mismatch at byte offset " +
                      std::to_string(std::min(labels.size(), 8 + n_labels)) + ")");
  if (n != n_labels) throw FormatError(labels_name + ": label count differs from image count at byte offset 4");

  LabeledDataset out;
  out.image_shape = std::pair{rows, cols};
  out.inputs = Matrix(0, rows * cols);
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n; ++i) max_label = std::max<std::size_t>(max_label, static_cast<unsigned char>(labels[8 + i]));
  out.classes = max_label + 1;
  const std::size_t take = limit ? std::min(*limit, n) : n;
  Vec row(rows * cols);
  for (std::size_t i = 0; i < take; ++i) {
    for (std::size_t p = 0; p < rows * cols; ++p)
      row[p] = static_cast<unsigned char>(images[16 + i * rows * cols + p]) / 255.0;
    out.inputs.append_row(row);
    out.labels.push_back(static_cast<unsigned char>(labels[8 + i]));
  }
  return out;
}

inline LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path,
                               std::optional<std::size_t> limit = std::nullopt) {
  return parse_idx(detail::read_file(images_path), detail::read_file(labels_path), limit, images_path, labels_path);
}

/// Serializes 8-bit images and labels to an IDX pair (used for fixtures).
inline std::pair<std::string, std::string> encode_idx(const std::vector<std::uint8_t>& pixels, std::size_t rows,
                                                      std::size_t cols, const std::vector<std::uint8_t>& labels) {
  std::string img, lab;
  detail::put_be32(img, kIdxImageMagic);
  detail::put_be32(img, static_cast<std::uint32_t>(labels.size()));
  detail::put_be32(img, static_cast<std::uint32_t>(rows));
  detail::put_be32(img, static_cast<std::uint32_t>(cols));
  img.append(pixels.begin(), pixels.end());
  detail::put_be32(lab, kIdxLabelMagic);
  detail::put_be32(lab, static_cast<std::uint32_t>(labels.size()));
  lab.append(labels.begin(), labels.end());
  return {img, lab};
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string format_fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline double parse_double(std::string_view s, const std::string& what) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw FormatError(what + ": not a number '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline constexpr char kReportHeader[] = "norm,epsilon,setting,detector,auroc,fpr_at_95_tpr,n_naturals,n_adversarials";

inline std::string report_csv(const std::vector<ReportRow>& rows) {
  std::string out = std::string(kReportHeader) + "\n";
  for (const auto& r : rows) {
    out += std::string(to_string(r.norm)) + "," + format_double(r.epsilon) + "," + std::string(to_string(r.setting)) +
           "," + r.detector + "," + format_fixed(r.auroc) + "," + format_fixed(r.fpr_at_95_tpr) + "," +
           std::to_string(r.n_naturals) + "," + std::to_string(r.n_adversarials) + "\n";
  }
  return out;
}

inline void write_report_csv(const std::vector<ReportRow>& rows, const std::string& path) {
  detail::write_file(path, report_csv(rows));
}

inline std::vector<ReportRow> read_report_csv(const std::string& path) {
  std::istringstream in(detail::read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != kReportHeader) throw FormatError(path + ": missing report header");
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 8) throw FormatError(path + ": expected 8 columns");
    ReportRow r;
    r.norm = parse_norm(f[0]);
    r.epsilon = parse_double(f[1], path);
    r.setting = parse_setting(f[2]);
    r.detector = f[3];
    r.auroc = parse_double(f[4], path);
    r.fpr_at_95_tpr = parse_double(f[5], path);
    r.n_naturals = static_cast<std::size_t>(parse_double(f[6], path));
    r.n_adversarials = static_cast<std::size_t>(parse_double(f[7], path));
    rows.push_back(r);
  }
  return rows;
}

/// One detector score; `arm` is empty for the natural input.
struct ScoreRecord {
  std::size_t sample = 0;
  std::string arm;
  std::string detector;
  double score = 0.0;

  std::string sample_id() const { return arm.empty() ? std::to_string(sample) : std::to_string(sample) + "/" + arm; }
};

inline constexpr char kScoresHeader[] = "sample_id,detector,score";

inline std::string scores_csv(const std::vector<ScoreRecord>& recs) {
  std::string out = std::string(kScoresHeader) + "\n";
  for (const auto& r : recs) out += r.sample_id() + "," + r.detector + "," + format_double(r.score) + "\n";
  return out;
}

inline std::vector<ScoreRecord> read_scores_csv(const std::string& path) {
  std::istringstream in(detail::read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != kScoresHeader) throw FormatError(path + ": missing scores header");
  std::vector<ScoreRecord> recs;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 3) throw FormatError(path + ": expected 3 columns");
    ScoreRecord r;
    const auto slash = f[0].find('/');
    r.sample = static_cast<std::size_t>(parse_double(f[0].substr(0, slash), path));
    if (slash != std::string::npos) r.arm = f[0].substr(slash + 1);
    r.detector = f[1];
    r.score = parse_double(f[2], path);
    recs.push_back(std::move(r));
  }
  return recs;
}

}  // namespace mead
