#include "nirev/events.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace nirev {

void EventSimConfig::validate() const {
  if (!(contrast_threshold > 0.0)) throw InvariantError("event sim: contrast_threshold must be > 0");
  if (!(log_eps > 0.0)) throw InvariantError("event sim: log_eps must be > 0");
  if (frame_interval == 0) throw InvariantError("event sim: frame_interval must be > 0");
}

void NoiseConfig::validate() const {
  if (!(rate >= 0.0) || !std::isfinite(rate)) throw InvariantError("noise: rate must be finite and >= 0");
  if (!(polarity_balance >= 0.0 && polarity_balance <= 1.0)) {
    throw InvariantError("noise: polarity_balance must be in [0,1]");
  }
}

EventStream simulate_events(std::span<const Frame> frames, const EventSimConfig& cfg) {
  cfg.validate();
  if (frames.size() < 2) throw std::invalid_argument("simulate_events: need at least 2 frames");
  const int W = frames.front().width(), H = frames.front().height();
  for (const auto& f : frames) {
    if (!f.same_shape(frames.front())) throw ShapeError("simulate_events: frame sizes differ");
  }
  const double theta = cfg.contrast_threshold;
  const double dt = double(cfg.frame_interval);
  const std::uint64_t t_end = std::uint64_t(frames.size() - 1) * cfg.frame_interval;

  std::vector<Event> events;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double l0 = std::log(frames[0].at(x, y) + cfg.log_eps);
      long long level = 0;  // reference = l0 + level * theta
      bool have_last = false;
      std::uint64_t last_t = 0;
      double la = l0;
      for (std::size_t k = 0; k + 1 < frames.size(); ++k) {
        const double lb = std::log(frames[k + 1].at(x, y) + cfg.log_eps);
        if (lb != la) {
          const double q = (lb - l0) / theta;
          const int dir = lb > la ? 1 : -1;
          const std::uint64_t tk = std::uint64_t(k) * cfg.frame_interval;
          while (dir > 0 ? double(level + 1) <= q : double(level - 1) >= q) {
            level += dir;
            const double crossing = l0 + double(level) * theta;
            const double frac = std::clamp((crossing - la) / (lb - la), 0.0, 1.0);
            // The tiny guard keeps exact fractions such as 0.4 * 1000 from
            // flooring to 399 through rounding.
            std::uint64_t t = tk + std::uint64_t(std::floor(frac * dt + 1e-6));
            t = std::min(t, tk + cfg.frame_interval);
            if (have_last && t - last_t < cfg.refractory) continue;
            events.push_back(Event{t, std::uint16_t(x), std::uint16_t(y), std::int8_t(dir)});
            have_last = true;
            last_t = t;
          }
        }
        la = lb;
      }
    }
  }
  return EventStream::normalized(W, H, 0, t_end, std::move(events));
}

EventStream inject_noise(const EventStream& clean, const NoiseConfig& cfg) {
  cfg.validate();
  if (cfg.rate == 0.0 || clean.width() == 0 || clean.height() == 0) return clean;
  const double duration_s = double(clean.t_end() - clean.t_start()) * 1e-6;
  const double mean = cfg.rate * duration_s;
  if (mean == 0.0) return clean;

  std::mt19937_64 rng(cfg.seed);
  std::poisson_distribution<long long> count(mean);
  std::uniform_int_distribution<std::uint64_t> when(clean.t_start(), clean.t_end());
  std::bernoulli_distribution positive(cfg.polarity_balance);

  std::vector<Event> events(clean.events().begin(), clean.events().end());
  for (int y = 0; y < clean.height(); ++y) {
    for (int x = 0; x < clean.width(); ++x) {
      const long long n = count(rng);
      for (long long i = 0; i < n; ++i) {
        const std::uint64_t t = when(rng);
        const bool pos = positive(rng);
        events.push_back(Event{t, std::uint16_t(x), std::uint16_t(y), std::int8_t(pos ? 1 : -1)});
      }
    }
  }
  // stable_sort keeps equal events in insertion order; they are identical
  // anyway, so the result is fully canonical.
  std::stable_sort(events.begin(), events.end(), canonical_less);
  return EventStream(clean.width(), clean.height(), clean.t_start(), clean.t_end(), std::move(events));
}

}  // namespace nirev
