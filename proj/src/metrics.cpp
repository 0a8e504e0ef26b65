#include "nirev/metrics.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace nirev {

void LossWeights::validate() const {
  for (double w : {lambda1, lambda2, lambda3}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw InvariantError("loss weights must be finite and >= 0");
  }
}

namespace {

void require_same(const Frame& a, const Frame& b, const char* what) {
  if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": frames differ in shape");
}

void require_same(const VoxelGrid& a, const VoxelGrid& b, const char* what) {
  if (a.bins() != b.bins() || a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError(std::string(what) + ": voxel grids differ in shape");
  }
}

double frame_mse(const Frame& a, const Frame& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  return a.size() == 0 ? 0.0 : acc / double(a.size());
}

using Window = std::array<double, kSsimWindow * kSsimWindow>;

Window gaussian_window() {
  Window w{};
  std::array<double, kSsimWindow> g{};
  double sum = 0.0;
  const int r = kSsimWindow / 2;
  for (int i = 0; i < kSsimWindow; ++i) {
    g[i] = std::exp(-double((i - r) * (i - r)) / (2.0 * kSsimSigma * kSsimSigma));
    sum += g[i];
  }
  for (auto& v : g) v /= sum;
  for (int y = 0; y < kSsimWindow; ++y) {
    for (int x = 0; x < kSsimWindow; ++x) w[y * kSsimWindow + x] = g[y] * g[x];
  }
  return w;
}

}  // namespace

double l_md(const Frame& pred, const Frame& truth) {
  require_same(pred, truth, "l_md");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred.data()[i] - truth.data()[i]);
  return pred.size() == 0 ? 0.0 : acc / double(pred.size());
}

double l_ed(const VoxelGrid& pred, const VoxelGrid& truth) {
  require_same(pred, truth, "l_ed");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = double(pred.data()[i]) - double(truth.data()[i]);
    acc += d * d;
  }
  return pred.size() == 0 ? 0.0 : acc / double(pred.size());
}

double l_total(double md, double ed, double sc, const LossWeights& w) {
  w.validate();
  return w.lambda1 * md + w.lambda2 * ed + w.lambda3 * sc;
}

double psnr(const Frame& pred, const Frame& truth, double peak) {
  require_same(pred, truth, "psnr");
  if (!(peak > 0.0)) throw std::invalid_argument("psnr: peak must be > 0");
  const double mse = frame_mse(pred, truth);
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Frame& pred, const Frame& truth) {
  require_same(pred, truth, "ssim");
  const int W = pred.width(), H = pred.height();
  if (W < kSsimWindow || H < kSsimWindow) throw ShapeError("ssim: image smaller than the 11x11 window");
  static const Window win = gaussian_window();
  constexpr double c1 = (0.01 * 1.0) * (0.01 * 1.0);
  constexpr double c2 = (0.03 * 1.0) * (0.03 * 1.0);

  // Second moments of (a, b) share one code path so that a == b gives
  // bit-identical variance and covariance.
  auto moment = [&](const Frame& a, const Frame& b, int x0, int y0, double mu_a, double mu_b) {
    double acc = 0.0;
    for (int y = 0; y < kSsimWindow; ++y) {
      for (int x = 0; x < kSsimWindow; ++x) {
        acc += win[y * kSsimWindow + x] * (a.at(x0 + x, y0 + y) - mu_a) * (b.at(x0 + x, y0 + y) - mu_b);
      }
    }
    return acc;
  };
  auto mean = [&](const Frame& a, int x0, int y0) {
    double acc = 0.0;
    for (int y = 0; y < kSsimWindow; ++y) {
      for (int x = 0; x < kSsimWindow; ++x) acc += win[y * kSsimWindow + x] * a.at(x0 + x, y0 + y);
    }
    return acc;
  };

  double total = 0.0;
  std::size_t count = 0;
  for (int y0 = 0; y0 + kSsimWindow <= H; ++y0) {
    for (int x0 = 0; x0 + kSsimWindow <= W; ++x0) {
      const double mx = mean(pred, x0, y0), my = mean(truth, x0, y0);
      const double sxx = moment(pred, pred, x0, y0, mx, mx);
      const double syy = moment(truth, truth, x0, y0, my, my);
      const double sxy = moment(pred, truth, x0, y0, mx, my);
      total += ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
      ++count;
    }
  }
  return total / double(count);
}

double rmse_voxel(const VoxelGrid& pred, const VoxelGrid& truth) { return std::sqrt(l_ed(pred, truth)); }

}  // namespace nirev
