#pragma once

#include <cstdint>
#include <span>

#include "nirev/core.hpp"

namespace nirev {

struct EventSimConfig {
  double contrast_threshold = 0.15;   ///< log-intensity units
  double log_eps = 1e-3;              ///< intensity floor inside the log
  std::uint64_t refractory = 0;       ///< microseconds
  std::uint64_t frame_interval = 1000; ///< microseconds between latent frames

  void validate() const;
};

struct NoiseConfig {
  double rate = 0.0;              ///< events per pixel per second
  double polarity_balance = 0.5;  ///< probability of a +1 noise event
  std::uint64_t seed = 0;

  void validate() const;
};

/// Threshold-crossing event generation. Frame k is taken at
/// k * frame_interval. Per pixel, L = ln(I + log_eps) is linearly
/// interpolated between frames; each time L departs from the reference level
/// by a full threshold an event is emitted at the interpolated crossing time
/// (floored to integer microseconds) and the reference moves by exactly one
/// threshold. Events inside the refractory period of the pixel's previous
/// emitted event are dropped, but the reference still advances.
EventStream simulate_events(std::span<const Frame> frames, const EventSimConfig& cfg);

/// Background activity: per pixel, a homogeneous Poisson process at
/// cfg.rate over the stream window, merged with the clean events.
EventStream inject_noise(const EventStream& clean, const NoiseConfig& cfg);

}  // namespace nirev
