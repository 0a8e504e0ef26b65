#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "nirev/core.hpp"

namespace nirev {

/// 3x3 projective transform, row-major, scaled so h[8] == 1 when possible.
class Homography {
 public:
  Homography();  // identity
  explicit Homography(const std::array<double, 9>& m);

  static Homography translation(double tx, double ty);

  double operator()(int r, int c) const { return m_[r * 3 + c]; }
  const std::array<double, 9>& matrix() const noexcept { return m_; }

  /// Maps (x, y); returns false when the point lands at infinity.
  bool apply(double x, double y, double& ox, double& oy) const;
  Homography inverse() const;
  Homography compose(const Homography& first) const;  // this * first
  double determinant() const;

 private:
  std::array<double, 9> m_;
};

struct Correspondence {
  double x, y;    // source
  double xp, yp;  // target
};

/// Normalized DLT over all pairs; least squares when over-determined.
Homography estimate_homography(std::span<const Correspondence> pairs);

/// Inverse-mapped bilinear resampling; pixels whose source falls outside
/// the input are 0.
Frame warp_frame(const Frame& frame, const Homography& h, int out_width, int out_height);

/// Nearest-pixel event remapping; out-of-bounds events are dropped.
EventStream warp_events(const EventStream& stream, const Homography& h, int out_width, int out_height);

std::vector<Correspondence> read_correspondences(std::istream& in);
std::vector<Correspondence> read_correspondences(const std::filesystem::path& path);
void write_homography(const Homography& h, std::ostream& out);
Homography read_homography(std::istream& in);

}  // namespace nirev
