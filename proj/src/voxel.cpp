#include "nirev/voxel.hpp"

#include <cmath>
#include <vector>

namespace nirev {

VoxelGrid voxelize(const EventStream& stream, int bins) {
  if (bins < 1) throw std::invalid_argument("voxelize: bins must be >= 1");
  const std::uint64_t duration = stream.t_end() - stream.t_start();
  if (duration == 0 && bins > 1) throw std::invalid_argument("voxelize: zero-duration stream with bins > 1");

  const int H = stream.height(), W = stream.width();
  const std::size_t plane = std::size_t(H) * W;
  std::vector<double> acc(std::size_t(bins) * plane, 0.0);
  const double scale = bins > 1 ? double(bins - 1) / double(duration) : 0.0;

  for (const Event& e : stream.events()) {
    const double tau = double(e.t - stream.t_start()) * scale;
    const std::size_t px = std::size_t(e.y) * W + e.x;
    const double p = e.p;
    const double k = std::floor(tau);
    if (k >= double(bins - 1)) {
      acc[std::size_t(bins - 1) * plane + px] += p;
      continue;
    }
    const double frac = tau - k;
    const auto b = std::size_t(k);
    acc[b * plane + px] += p * (1.0 - frac);
    if (frac != 0.0) acc[(b + 1) * plane + px] += p * frac;
  }
  std::vector<float> data(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) data[i] = static_cast<float>(acc[i]);
  return VoxelGrid(bins, H, W, std::move(data));
}

}  // namespace nirev
