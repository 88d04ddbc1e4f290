// Feature squeezing: compare the prediction on x with predictions on
// bit-depth-reduced and median-smoothed copies of x.
#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "mead/nn.hpp"

namespace mead {

/// Rounds every coordinate to the grid {0, 1/L, ..., 1} with L = 2^bits - 1,
/// halves rounding up.
inline Vec bit_depth_squeeze(ConstSpan x, int bits) {
  const double levels = std::ldexp(1.0, bits) - 1.0;
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::floor(x[i] * levels + 0.5) / levels;
  return out;
}

/// Median over the window [i, i+w) x [j, j+w) with edge replication. For even
/// window sizes the upper median is taken.
inline Vec median_smooth(ConstSpan image, std::size_t rows, std::size_t cols, std::size_t window) {
  Vec out(image.size());
  std::vector<double> buf;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      buf.clear();
      for (std::size_t a = 0; a < window; ++a)
        for (std::size_t b = 0; b < window; ++b) {
          const std::size_t r = std::min(i + a, rows - 1);
          const std::size_t c = std::min(j + b, cols - 1);
          buf.push_back(image[r * cols + c]);
        }
      std::nth_element(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(buf.size() / 2), buf.end());
      out[i * cols + j] = buf[buf.size() / 2];
    }
  return out;
}

struct FsConfig {
  std::vector<int> bit_depths{1, 2, 3, 4, 5, 6, 7};
  std::size_t median_window = 2;

  friend bool operator==(const FsConfig&, const FsConfig&) = default;
};

struct FsDetector {
  FsConfig config;
  std::optional<std::pair<std::size_t, std::size_t>> image_shape;

  friend bool operator==(const FsDetector&, const FsDetector&) = default;
};

inline double l1_distance(ConstSpan a, ConstSpan b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

/// Max over squeezers of ||softmax(x) - softmax(squeeze(x))||_1.
inline double fs_score(const ModelParams& model, ConstSpan x, const std::vector<int>& bit_depths,
                       std::size_t median_window,
                       const std::optional<std::pair<std::size_t, std::size_t>>& image_shape = std::nullopt) {
  const Vec base = forward(model, x).probs;
  double best = 0.0;
  for (int b : bit_depths) best = std::max(best, l1_distance(base, forward(model, bit_depth_squeeze(x, b)).probs));
  if (image_shape && median_window > 1 && image_shape->first * image_shape->second == x.size())
    best = std::max(best, l1_distance(base, forward(model, median_smooth(x, image_shape->first, image_shape->second,
                                                                         median_window))
                                                .probs));
  return best;
}

}  // namespace mead
