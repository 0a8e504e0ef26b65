#pragma once

#include "nirev/core.hpp"

namespace nirev {

inline constexpr int kDefaultVoxelBins = 13;

/// Temporal bilinear voxel grid. Each event sits at
///   tau = (t - t_start) * (B - 1) / (t_end - t_start)
/// and deposits p * (1 - frac(tau)) into bin floor(tau) and p * frac(tau)
/// into the next bin; tau == B - 1 goes entirely into the last bin.
/// Accumulation is in double, stored as float.
VoxelGrid voxelize(const EventStream& stream, int bins = kDefaultVoxelBins);

}  // namespace nirev
