#include "nirev/core.hpp"

#include <algorithm>
#include <cmath>

namespace nirev {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw InvariantError(msg);
}

}  // namespace

Frame::Frame(int width, int height, std::vector<double> data)
    : width_(width), height_(height), data_(std::move(data)) {
  require(width >= 0 && height >= 0, "frame dimensions must be non-negative");
  require(data_.size() == static_cast<std::size_t>(width) * height,
          "frame data length must equal width * height");
  for (double v : data_) {
    require(std::isfinite(v) && v >= 0.0 && v <= 1.0, "frame values must be finite and in [0,1]");
  }
}

Frame Frame::filled(int width, int height, double value) {
  return Frame(width, height, std::vector<double>(static_cast<std::size_t>(width) * height, value));
}

std::string check_stream(int width, int height, std::uint64_t t_start, std::uint64_t t_end,
                         std::span<const Event> events) {
  if (width < 0 || height < 0 || width > 65536 || height > 65536) return "invalid sensor geometry";
  if (t_end < t_start) return "t_end precedes t_start";
  for (std::size_t i = 0; i < events.size(); ++i) {
    const Event& e = events[i];
    if (e.x >= width || e.y >= height) return "coordinate out of bounds (event " + std::to_string(i) + ")";
    if (e.p != 1 && e.p != -1) return "polarity must be -1 or +1 (event " + std::to_string(i) + ")";
    if (e.t < t_start || e.t > t_end) return "timestamp outside stream window (event " + std::to_string(i) + ")";
    if (i > 0 && canonical_less(e, events[i - 1])) {
      return "unsorted timestamps (event " + std::to_string(i) + ")";
    }
  }
  return {};
}

EventStream::EventStream(int width, int height, std::uint64_t t_start, std::uint64_t t_end,
                         std::vector<Event> events)
    : width_(width), height_(height), t_start_(t_start), t_end_(t_end), events_(std::move(events)) {
  if (auto why = check_stream(width_, height_, t_start_, t_end_, events_); !why.empty()) {
    throw InvariantError(why);
  }
}

EventStream EventStream::normalized(int width, int height, std::uint64_t t_start,
                                    std::uint64_t t_end, std::vector<Event> events) {
  std::sort(events.begin(), events.end(), canonical_less);
  return EventStream(width, height, t_start, t_end, std::move(events));
}

VoxelGrid::VoxelGrid(int bins, int height, int width, std::vector<float> data)
    : bins_(bins), height_(height), width_(width), data_(std::move(data)) {
  require(bins >= 1 && height >= 0 && width >= 0, "voxel grid needs at least one bin");
  require(data_.size() == static_cast<std::size_t>(bins) * height * width,
          "voxel data length must equal bins * height * width");
  for (float v : data_) require(std::isfinite(v), "voxel values must be finite");
}

VoxelGrid VoxelGrid::zeros(int bins, int height, int width) {
  return VoxelGrid(bins, height, width,
                   std::vector<float>(static_cast<std::size_t>(bins) * height * width, 0.0f));
}

template <typename T>
FeatureTensor<T>::FeatureTensor(int channels, int height, int width, T fill)
    : channels_(channels), height_(height), width_(width) {
  require(channels >= 0 && height >= 0 && width >= 0, "tensor dimensions must be non-negative");
  data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

template <typename T>
FeatureTensor<T>::FeatureTensor(int channels, int height, int width, std::vector<T> data)
    : channels_(channels), height_(height), width_(width), data_(std::move(data)) {
  require(channels >= 0 && height >= 0 && width >= 0, "tensor dimensions must be non-negative");
  require(data_.size() == static_cast<std::size_t>(channels) * height * width,
          "tensor data length must equal C * H * W");
}

template <typename T>
bool FeatureTensor<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template class FeatureTensor<float>;
template class FeatureTensor<double>;

template <typename T>
FeatureTensor<T> concat_channels(const FeatureTensor<T>& a, const FeatureTensor<T>& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError("concat_channels: spatial dimensions differ");
  }
  std::vector<T> data;
  data.reserve(a.size() + b.size());
  data.insert(data.end(), a.data().begin(), a.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return FeatureTensor<T>(a.channels() + b.channels(), a.height(), a.width(), std::move(data));
}

template <typename T>
FeatureTensor<T> slice_channels(const FeatureTensor<T>& t, int first, int count) {
  if (first < 0 || count < 0 || first + count > t.channels()) {
    throw ShapeError("slice_channels: range outside tensor");
  }
  auto src = t.data().subspan(std::size_t(first) * t.plane(), std::size_t(count) * t.plane());
  return FeatureTensor<T>(count, t.height(), t.width(), std::vector<T>(src.begin(), src.end()));
}

template FeatureTensor<float> concat_channels(const FeatureTensor<float>&, const FeatureTensor<float>&);
template FeatureTensor<double> concat_channels(const FeatureTensor<double>&, const FeatureTensor<double>&);
template FeatureTensor<float> slice_channels(const FeatureTensor<float>&, int, int);
template FeatureTensor<double> slice_channels(const FeatureTensor<double>&, int, int);

FeatureTensor<float> to_tensor(const Frame& f) {
  FeatureTensor<float> t(1, f.height(), f.width());
  for (std::size_t i = 0; i < f.size(); ++i) t[i] = static_cast<float>(f.data()[i]);
  return t;
}

FeatureTensor<float> to_tensor(const VoxelGrid& g) {
  return FeatureTensor<float>(g.bins(), g.height(), g.width(),
                              std::vector<float>(g.data().begin(), g.data().end()));
}

VoxelGrid to_voxel(const FeatureTensor<float>& t) {
  return VoxelGrid(t.channels(), t.height(), t.width(),
                   std::vector<float>(t.data().begin(), t.data().end()));
}

Frame to_frame_clamped(const FeatureTensor<float>& t) {
  if (t.channels() != 1) throw ShapeError("to_frame_clamped: expected a single channel");
  std::vector<double> data(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    double v = t[i];
    data[i] = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
  }
  return Frame(t.width(), t.height(), std::move(data));
}

}  // namespace nirev
