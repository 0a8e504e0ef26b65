#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nirev/core.hpp"

namespace nirev {

struct BlurConfig {
  int n_latent = 16;             ///< latent frames per exposure
  double max_displacement = 8.0; ///< pixels, Euclidean clamp on the path
  double velocity_sigma = 0.5;   ///< pixels per step
  double damping = 0.9;          ///< velocity memory of the random walk
  double noise_sigma = 0.01;     ///< additive Gaussian noise on the blurry frame
  std::uint64_t seed = 0;

  void validate() const;
};

struct Displacement {
  double dx = 0.0;
  double dy = 0.0;
  friend bool operator==(const Displacement&, const Displacement&) = default;
};

/// Camera-shake path: one sub-pixel offset per latent frame.
class Trajectory {
 public:
  Trajectory() = default;
  /// Requires at least two finite samples whose magnitude is within `bound`.
  Trajectory(std::vector<Displacement> samples, double bound);

  std::span<const Displacement> samples() const noexcept { return samples_; }
  std::size_t size() const noexcept { return samples_.size(); }
  friend bool operator==(const Trajectory&, const Trajectory&) = default;

 private:
  std::vector<Displacement> samples_;
};

/// Damped Gaussian random walk on velocity:
///   v_k = damping * v_{k-1} + N(0, velocity_sigma^2) per axis,
///   p_k = clamp(p_{k-1} + v_k) to |p| <= max_displacement,
/// starting from p_0 = v_0 = (0, 0). Deterministic in `seed`.
Trajectory gen_trajectory(const BlurConfig& cfg);

/// Sharp frame translated by (dx, dy), bilinear, zero outside the source.
Frame translate_frame(const Frame& sharp, double dx, double dy);

/// One translated copy of `sharp` per trajectory sample.
std::vector<Frame> render_sequence(const Frame& sharp, const Trajectory& traj);

/// Per-pixel arithmetic mean (discretized exposure integral).
Frame average_blur(std::span<const Frame> frames);

/// Adds N(0, sigma^2) per pixel and clamps to [0,1].
Frame add_frame_noise(const Frame& frame, double sigma, std::uint64_t seed);

}  // namespace nirev
