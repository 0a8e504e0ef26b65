#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nirev/core.hpp"
#include "nirev/numerics.hpp"

namespace nirev {

/// Binary edge map, one byte per pixel holding 0 or 1.
class EdgeMap {
 public:
  EdgeMap() = default;
  EdgeMap(int width, int height, std::vector<std::uint8_t> data);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::uint8_t at(int x, int y) const { return data_[std::size_t(y) * width_ + x]; }
  std::span<const std::uint8_t> data() const noexcept { return data_; }
  friend bool operator==(const EdgeMap&, const EdgeMap&) = default;

 private:
  int width_ = 0, height_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Per-pixel structural agreement in [0,1].
class ConsistencyMap {
 public:
  ConsistencyMap() = default;
  ConsistencyMap(int width, int height, std::vector<double> data);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  double at(int x, int y) const { return data_[std::size_t(y) * width_ + x]; }
  std::span<const double> data() const noexcept { return data_; }
  Frame to_frame() const { return Frame(width_, height_, data_); }
  friend bool operator==(const ConsistencyMap&, const ConsistencyMap&) = default;

 private:
  int width_ = 0, height_ = 0;
  std::vector<double> data_;
};

inline constexpr double kDefaultEdgeThreshold = 0.1;

/// sqrt(Gx^2 + Gy^2) from the standard 3x3 Sobel pair with zero padding.
std::vector<double> sobel_magnitude(const Frame& frame);

/// Sobel magnitude binarized: 1 where magnitude > threshold.
EdgeMap sobel_edges(const Frame& frame, double threshold = kDefaultEdgeThreshold);

/// Otsu's threshold over a 256-bin histogram of `values` on [0, max].
double otsu_threshold(std::span<const double> values);

/// Sobel edges with an Otsu threshold picked from the frame's own magnitudes.
EdgeMap sobel_edges_otsu(const Frame& frame);

/// C = 1/2 (1 - Sv)(1 - Sn) + Sv * Sn, pixelwise.
ConsistencyMap structural_consistency(const EdgeMap& s_v, const EdgeMap& s_n);

/// Mean squared error between C and the decoded map conv2d(m_c, decode).
template <typename T>
T sc_loss(const ConsistencyMap& c, const FeatureTensor<T>& m_c, const Kernel<T>& decode);

template <typename T>
struct ScLossGrads {
  FeatureTensor<T> m_c;
  Kernel<T> decode;
};

template <typename T>
ScLossGrads<T> sc_loss_backward(const ConsistencyMap& c, const FeatureTensor<T>& m_c, const Kernel<T>& decode,
                                T upstream = T(1));

}  // namespace nirev
