#include "nirev/calibrate.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "nirev/io.hpp"

namespace nirev {

namespace {

std::array<double, 9> to_array(const Eigen::Matrix3d& m) {
  std::array<double, 9> a{};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) a[r * 3 + c] = m(r, c);
  }
  return a;
}

Eigen::Matrix3d to_matrix(const std::array<double, 9>& a) {
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m(r, c) = a[r * 3 + c];
  }
  return m;
}

std::array<double, 9> normalized(std::array<double, 9> m) {
  if (std::abs(m[8]) > 1e-12) {
    const double s = m[8];
    for (auto& v : m) v /= s;
    m[8] = 1.0;
  }
  return m;
}

// Moves the centroid to the origin and scales the mean distance to sqrt(2).
Eigen::Matrix3d isotropic(const std::vector<Eigen::Vector2d>& pts) {
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (const auto& p : pts) c += p;
  c /= double(pts.size());
  double mean = 0.0;
  for (const auto& p : pts) mean += (p - c).norm();
  mean /= double(pts.size());
  if (!(mean > 0.0)) throw InvariantError("estimate_homography: all points coincide");
  const double s = std::sqrt(2.0) / mean;
  Eigen::Matrix3d t;
  t << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
  return t;
}

}  // namespace

Homography::Homography() : m_{1, 0, 0, 0, 1, 0, 0, 0, 1} {}

Homography::Homography(const std::array<double, 9>& m) : m_(normalized(m)) {
  for (double v : m_) {
    if (!std::isfinite(v)) throw InvariantError("homography entries must be finite");
  }
  if (!(std::abs(determinant()) > 1e-12)) throw InvariantError("homography must be invertible");
}

Homography Homography::translation(double tx, double ty) { return Homography({1, 0, tx, 0, 1, ty, 0, 0, 1}); }

bool Homography::apply(double x, double y, double& ox, double& oy) const {
  const double w = m_[6] * x + m_[7] * y + m_[8];
  if (std::abs(w) < 1e-15) return false;
  ox = (m_[0] * x + m_[1] * y + m_[2]) / w;
  oy = (m_[3] * x + m_[4] * y + m_[5]) / w;
  return true;
}

double Homography::determinant() const { return to_matrix(m_).determinant(); }

Homography Homography::inverse() const { return Homography(to_array(to_matrix(m_).inverse())); }

Homography Homography::compose(const Homography& first) const {
  return Homography(to_array(to_matrix(m_) * to_matrix(first.m_)));
}

Homography estimate_homography(std::span<const Correspondence> pairs) {
  if (pairs.size() < 4) throw InvariantError("estimate_homography: need at least 4 correspondences");
  std::vector<Eigen::Vector2d> src, dst;
  for (const auto& c : pairs) {
    if (!std::isfinite(c.x) || !std::isfinite(c.y) || !std::isfinite(c.xp) || !std::isfinite(c.yp)) {
      throw InvariantError("estimate_homography: non-finite coordinate");
    }
    src.emplace_back(c.x, c.y);
    dst.emplace_back(c.xp, c.yp);
  }
  const Eigen::Matrix3d ts = isotropic(src), td = isotropic(dst);

  const int n = int(pairs.size());
  Eigen::MatrixXd a(2 * n, 9);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d p = ts * src[i].homogeneous();
    const Eigen::Vector3d q = td * dst[i].homogeneous();
    const double x = p.x(), y = p.y(), u = q.x(), v = q.y();
    a.row(2 * i) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    a.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // A well-posed system has a one-dimensional null space: the second
  // smallest singular value must stay clear of zero.
  if (sv.size() < 8 || sv(7) < 1e-9 * std::max(1.0, sv(0))) {
    throw InvariantError("estimate_homography: degenerate configuration");
  }
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  const Eigen::Matrix3d hd = td.inverse() * hn * ts;
  if (std::abs(hd(2, 2)) < 1e-12) throw InvariantError("estimate_homography: h33 vanishes");
  return Homography(to_array(hd / hd(2, 2)));
}

Frame warp_frame(const Frame& frame, const Homography& h, int out_width, int out_height) {
  if (out_width < 1 || out_height < 1) throw ShapeError("warp_frame: output dims must be positive");
  const Homography inv = h.inverse();
  const int W = frame.width(), H = frame.height();
  std::vector<double> out(std::size_t(out_width) * out_height, 0.0);
  for (int y = 0; y < out_height; ++y) {
    for (int x = 0; x < out_width; ++x) {
      double sx, sy;
      if (!inv.apply(x, y, sx, sy)) continue;
      if (!(sx > -1.0 && sy > -1.0 && sx < W && sy < H)) continue;
      const double fx = std::floor(sx), fy = std::floor(sy);
      const double ax = sx - fx, ay = sy - fy;
      const int x0 = int(fx), y0 = int(fy);
      auto pix = [&](int px, int py) { return (px < 0 || py < 0 || px >= W || py >= H) ? 0.0 : frame.at(px, py); };
      const double v = (1 - ay) * ((1 - ax) * pix(x0, y0) + ax * pix(x0 + 1, y0)) +
                       ay * ((1 - ax) * pix(x0, y0 + 1) + ax * pix(x0 + 1, y0 + 1));
      out[std::size_t(y) * out_width + x] = std::clamp(v, 0.0, 1.0);
    }
  }
  return Frame(out_width, out_height, std::move(out));
}

EventStream warp_events(const EventStream& stream, const Homography& h, int out_width, int out_height) {
  if (out_width < 1 || out_height < 1 || out_width > 65535 || out_height > 65535) {
    throw ShapeError("warp_events: output dims out of range");
  }
  std::vector<Event> out;
  out.reserve(stream.size());
  for (const Event& e : stream.events()) {
    double x, y;
    if (!h.apply(e.x, e.y, x, y)) continue;
    const double rx = std::round(x), ry = std::round(y);
    if (!(rx >= 0 && ry >= 0 && rx < out_width && ry < out_height)) continue;
    out.push_back({e.t, std::uint16_t(rx), std::uint16_t(ry), e.p});
  }
  return EventStream::normalized(out_width, out_height, stream.t_start(), stream.t_end(), std::move(out));
}

std::vector<Correspondence> read_correspondences(std::istream& in) {
  std::vector<Correspondence> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[line.find_first_not_of(" \t")] == '#') continue;
    for (char& c : line) {
      if (c == ',') c = ' ';
    }
    std::istringstream ss(line);
    Correspondence c{};
    if (!(ss >> c.x >> c.y >> c.xp >> c.yp)) {
      // A non-numeric first row is treated as a header.
      if (out.empty() && lineno == 1) continue;
      throw FormatError("correspondences: expected x,y,x',y' on line " + std::to_string(lineno));
    }
    std::string rest;
    if (ss >> rest) throw FormatError("correspondences: extra fields on line " + std::to_string(lineno));
    out.push_back(c);
  }
  return out;
}

std::vector<Correspondence> read_correspondences(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_correspondences(in);
}

void write_homography(const Homography& h, std::ostream& out) {
  out << std::setprecision(17);
  for (int r = 0; r < 3; ++r) out << h(r, 0) << ' ' << h(r, 1) << ' ' << h(r, 2) << '\n';
}

Homography read_homography(std::istream& in) {
  std::array<double, 9> m{};
  for (auto& v : m) {
    if (!(in >> v)) throw FormatError("homography: expected 9 numbers");
  }
  std::string rest;
  if (in >> rest) throw FormatError("homography: trailing content");
  return Homography(m);
}

}  // namespace nirev
