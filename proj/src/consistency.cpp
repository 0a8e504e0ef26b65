#include "nirev/consistency.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace nirev {

EdgeMap::EdgeMap(int width, int height, std::vector<std::uint8_t> data)
    : width_(width), height_(height), data_(std::move(data)) {
  if (data_.size() != std::size_t(width) * height) throw InvariantError("edge map length mismatch");
  for (auto v : data_) {
    if (v > 1) throw InvariantError("edge map values must be 0 or 1");
  }
}

ConsistencyMap::ConsistencyMap(int width, int height, std::vector<double> data)
    : width_(width), height_(height), data_(std::move(data)) {
  if (data_.size() != std::size_t(width) * height) throw InvariantError("consistency map length mismatch");
  for (double v : data_) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvariantError("consistency values must be in [0,1]");
  }
}

std::vector<double> sobel_magnitude(const Frame& frame) {
  const int W = frame.width(), H = frame.height();
  auto pix = [&](int x, int y) { return (x < 0 || y < 0 || x >= W || y >= H) ? 0.0 : frame.at(x, y); };
  std::vector<double> mag(frame.size());
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double gx = (pix(x + 1, y - 1) + 2.0 * pix(x + 1, y) + pix(x + 1, y + 1)) -
                        (pix(x - 1, y - 1) + 2.0 * pix(x - 1, y) + pix(x - 1, y + 1));
      const double gy = (pix(x - 1, y + 1) + 2.0 * pix(x, y + 1) + pix(x + 1, y + 1)) -
                        (pix(x - 1, y - 1) + 2.0 * pix(x, y - 1) + pix(x + 1, y - 1));
      mag[std::size_t(y) * W + x] = std::sqrt(gx * gx + gy * gy);
    }
  }
  return mag;
}

EdgeMap sobel_edges(const Frame& frame, double threshold) {
  if (!(threshold >= 0.0)) throw std::invalid_argument("sobel_edges: threshold must be >= 0");
  auto mag = sobel_magnitude(frame);
  std::vector<std::uint8_t> bin(mag.size());
  for (std::size_t i = 0; i < mag.size(); ++i) bin[i] = mag[i] > threshold ? 1 : 0;
  return EdgeMap(frame.width(), frame.height(), std::move(bin));
}

double otsu_threshold(std::span<const double> values) {
  if (values.empty()) return 0.0;
  const double mx = *std::max_element(values.begin(), values.end());
  if (!(mx > 0.0)) return 0.0;
  constexpr int kBins = 256;
  std::array<double, kBins> hist{};
  for (double v : values) hist[std::min(kBins - 1, int(v / mx * kBins))] += 1.0;
  const double total = double(values.size());
  double sum_all = 0.0;
  for (int i = 0; i < kBins; ++i) sum_all += i * hist[i];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_bin = 0;
  for (int i = 0; i < kBins; ++i) {
    w0 += hist[i];
    if (w0 == 0.0) continue;
    const double w1 = total - w0;
    if (w1 == 0.0) break;
    sum0 += i * hist[i];
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_bin = i;
    }
  }
  // Upper edge of the last bin in the lower class.
  return (best_bin + 1) * mx / kBins;
}

EdgeMap sobel_edges_otsu(const Frame& frame) {
  auto mag = sobel_magnitude(frame);
  const double t = otsu_threshold(mag);
  std::vector<std::uint8_t> bin(mag.size());
  for (std::size_t i = 0; i < mag.size(); ++i) bin[i] = mag[i] > t ? 1 : 0;
  return EdgeMap(frame.width(), frame.height(), std::move(bin));
}

ConsistencyMap structural_consistency(const EdgeMap& s_v, const EdgeMap& s_n) {
  if (s_v.width() != s_n.width() || s_v.height() != s_n.height()) {
    throw ShapeError("structural_consistency: edge maps differ in size");
  }
  std::vector<double> c(s_v.data().size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double v = s_v.data()[i], n = s_n.data()[i];
    c[i] = 0.5 * (1.0 - v) * (1.0 - n) + v * n;
  }
  return ConsistencyMap(s_v.width(), s_v.height(), std::move(c));
}

namespace {

template <typename T>
FeatureTensor<T> decode_map(const ConsistencyMap& c, const FeatureTensor<T>& m_c, const Kernel<T>& decode) {
  if (decode.out_channels() != 1 || decode.is_depthwise()) {
    throw ShapeError("sc_loss: decode kernel must map to a single channel");
  }
  if (m_c.height() != c.height() || m_c.width() != c.width()) {
    throw ShapeError("sc_loss: consistency map and feature tensor differ spatially");
  }
  return conv2d(m_c, decode);
}

}  // namespace

template <typename T>
T sc_loss(const ConsistencyMap& c, const FeatureTensor<T>& m_c, const Kernel<T>& decode) {
  const auto c_hat = decode_map(c, m_c, decode);
  T acc = T(0);
  for (std::size_t i = 0; i < c_hat.size(); ++i) {
    const T d = T(c.data()[i]) - c_hat[i];
    acc += d * d;
  }
  return c_hat.size() == 0 ? T(0) : acc / T(c_hat.size());
}

template <typename T>
ScLossGrads<T> sc_loss_backward(const ConsistencyMap& c, const FeatureTensor<T>& m_c, const Kernel<T>& decode,
                                T upstream) {
  const auto c_hat = decode_map(c, m_c, decode);
  FeatureTensor<T> g_hat(1, c_hat.height(), c_hat.width());
  const T k = T(2) * upstream / T(std::max<std::size_t>(1, c_hat.size()));
  for (std::size_t i = 0; i < c_hat.size(); ++i) g_hat[i] = k * (c_hat[i] - T(c.data()[i]));
  auto g = conv2d_backward(m_c, decode, g_hat);
  return {std::move(g.input), std::move(g.kernel)};
}

template float sc_loss(const ConsistencyMap&, const FeatureTensor<float>&, const Kernel<float>&);
template double sc_loss(const ConsistencyMap&, const FeatureTensor<double>&, const Kernel<double>&);
template ScLossGrads<float> sc_loss_backward(const ConsistencyMap&, const FeatureTensor<float>&,
                                             const Kernel<float>&, float);
template ScLossGrads<double> sc_loss_backward(const ConsistencyMap&, const FeatureTensor<double>&,
                                              const Kernel<double>&, double);

}  // namespace nirev
