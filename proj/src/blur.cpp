#include "nirev/blur.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace nirev {

void BlurConfig::validate() const {
  if (n_latent < 2) throw InvariantError("blur: n_latent must be >= 2");
  if (!(velocity_sigma >= 0.0) || !(noise_sigma >= 0.0)) throw InvariantError("blur: sigmas must be >= 0");
  if (!(max_displacement >= 0.0)) throw InvariantError("blur: max_displacement must be >= 0");
  if (!(damping >= 0.0 && damping <= 1.0)) throw InvariantError("blur: damping must be in [0,1]");
}

Trajectory::Trajectory(std::vector<Displacement> samples, double bound) : samples_(std::move(samples)) {
  if (samples_.size() < 2) throw InvariantError("trajectory needs at least 2 samples");
  for (const auto& s : samples_) {
    if (!std::isfinite(s.dx) || !std::isfinite(s.dy)) throw InvariantError("trajectory sample not finite");
    if (std::hypot(s.dx, s.dy) > bound * (1.0 + 1e-12)) {
      throw InvariantError("trajectory sample exceeds displacement bound");
    }
  }
}

Trajectory gen_trajectory(const BlurConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> step(0.0, 1.0);
  std::vector<Displacement> out;
  out.reserve(std::size_t(cfg.n_latent));
  out.push_back({0.0, 0.0});
  double px = 0, py = 0, vx = 0, vy = 0;
  for (int k = 1; k < cfg.n_latent; ++k) {
    // Always draw both, so sigma = 0 consumes the stream identically.
    const double nx = step(rng), ny = step(rng);
    vx = cfg.damping * vx + cfg.velocity_sigma * nx;
    vy = cfg.damping * vy + cfg.velocity_sigma * ny;
    px += vx;
    py += vy;
    const double r = std::hypot(px, py);
    if (r > cfg.max_displacement) {
      const double s = cfg.max_displacement / r;
      px *= s;
      py *= s;
    }
    out.push_back({px, py});
  }
  return Trajectory(std::move(out), cfg.max_displacement);
}

Frame translate_frame(const Frame& sharp, double dx, double dy) {
  const int W = sharp.width(), H = sharp.height();
  auto pix = [&](int x, int y) { return (x < 0 || y < 0 || x >= W || y >= H) ? 0.0 : sharp.at(x, y); };
  std::vector<double> out(sharp.size());
  for (int y = 0; y < H; ++y) {
    const double sy = y - dy;
    const double y0f = std::floor(sy);
    const double fy = sy - y0f;
    const int y0 = int(y0f);
    for (int x = 0; x < W; ++x) {
      const double sx = x - dx;
      const double x0f = std::floor(sx);
      const double fx = sx - x0f;
      const int x0 = int(x0f);
      double v = (1.0 - fx) * (1.0 - fy) * pix(x0, y0);
      if (fx != 0.0) v += fx * (1.0 - fy) * pix(x0 + 1, y0);
      if (fy != 0.0) {
        v += (1.0 - fx) * fy * pix(x0, y0 + 1);
        if (fx != 0.0) v += fx * fy * pix(x0 + 1, y0 + 1);
      }
      out[std::size_t(y) * W + x] = std::clamp(v, 0.0, 1.0);
    }
  }
  return Frame(W, H, std::move(out));
}

std::vector<Frame> render_sequence(const Frame& sharp, const Trajectory& traj) {
  std::vector<Frame> frames;
  frames.reserve(traj.size());
  for (const auto& s : traj.samples()) frames.push_back(translate_frame(sharp, s.dx, s.dy));
  return frames;
}

Frame average_blur(std::span<const Frame> frames) {
  if (frames.empty()) throw std::invalid_argument("average_blur: no frames");
  for (const auto& f : frames) {
    if (!f.same_shape(frames.front())) throw ShapeError("average_blur: frame sizes differ");
  }
  // Running mean m_k = m_{k-1} + (x_k - m_{k-1}) / k: identical inputs
  // reproduce the input bit for bit.
  std::vector<double> mean(frames.front().data().begin(), frames.front().data().end());
  for (std::size_t k = 1; k < frames.size(); ++k) {
    const double inv = 1.0 / double(k + 1);
    auto src = frames[k].data();
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += (src[i] - mean[i]) * inv;
  }
  for (auto& v : mean) v = std::clamp(v, 0.0, 1.0);
  return Frame(frames.front().width(), frames.front().height(), std::move(mean));
}

Frame add_frame_noise(const Frame& frame, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("add_frame_noise: sigma must be >= 0");
  if (sigma == 0.0) return frame;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  std::vector<double> out(frame.data().begin(), frame.data().end());
  for (auto& v : out) v = std::clamp(v + noise(rng), 0.0, 1.0);
  return Frame(frame.width(), frame.height(), std::move(out));
}

}  // namespace nirev
