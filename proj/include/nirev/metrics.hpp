#pragma once

#include <limits>

#include "nirev/core.hpp"

namespace nirev {

struct LossWeights {
  double lambda1 = 1.0;  ///< image deblurring term
  double lambda2 = 1.0;  ///< event denoising term
  double lambda3 = 0.1;  ///< structural consistency term

  void validate() const;
};

/// Mean absolute difference.
double l_md(const Frame& pred, const Frame& truth);
/// Mean squared difference over all cells.
double l_ed(const VoxelGrid& pred, const VoxelGrid& truth);
double l_total(double md, double ed, double sc, const LossWeights& w = {});

/// Returned by psnr for identical inputs.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

double psnr(const Frame& pred, const Frame& truth, double peak = 1.0);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

/// Gaussian-windowed SSIM averaged over all fully contained windows.
double ssim(const Frame& pred, const Frame& truth);

double rmse_voxel(const VoxelGrid& pred, const VoxelGrid& truth);

}  // namespace nirev
