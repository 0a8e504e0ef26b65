#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nirev {

/// Raised when a value would violate the invariants of a domain type.
class InvariantError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when two operands disagree in shape.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised by the binary/text readers. Carries the byte offset of the failure
/// when one is meaningful.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what, std::int64_t offset = -1)
      : std::runtime_error(offset >= 0 ? what + " at byte offset " + std::to_string(offset) : what),
        offset_(offset) {}
  std::int64_t offset() const noexcept { return offset_; }

 private:
  std::int64_t offset_;
};

/// Single-channel intensity image, row-major, values in [0,1].
class Frame {
 public:
  Frame() = default;
  Frame(int width, int height, std::vector<double> data);

  static Frame filled(int width, int height, double value);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double at(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  std::span<const double> data() const noexcept { return data_; }

  bool same_shape(const Frame& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_;
  }

  friend bool operator==(const Frame&, const Frame&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

/// One polarity event. Timestamps are integer microseconds.
struct Event {
  std::uint64_t t = 0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t p = 1;

  friend bool operator==(const Event&, const Event&) = default;
};

/// Canonical total order: time, then row, column and polarity ascending.
inline std::strong_ordering canonical_compare(const Event& a, const Event& b) noexcept {
  if (auto c = a.t <=> b.t; c != 0) return c;
  if (auto c = a.y <=> b.y; c != 0) return c;
  if (auto c = a.x <=> b.x; c != 0) return c;
  return a.p <=> b.p;
}

inline bool canonical_less(const Event& a, const Event& b) noexcept {
  return canonical_compare(a, b) < 0;
}

/// Time-ordered events from a width x height sensor over [t_start, t_end].
class EventStream {
 public:
  EventStream() = default;
  /// Validates; throws InvariantError if events are unsorted, out of bounds,
  /// outside the window or carry a polarity other than +-1.
  EventStream(int width, int height, std::uint64_t t_start, std::uint64_t t_end,
              std::vector<Event> events);

  /// Sorts `events` canonically, then validates.
  static EventStream normalized(int width, int height, std::uint64_t t_start, std::uint64_t t_end,
                                std::vector<Event> events);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::uint64_t t_start() const noexcept { return t_start_; }
  std::uint64_t t_end() const noexcept { return t_end_; }
  std::size_t size() const noexcept { return events_.size(); }
  bool empty() const noexcept { return events_.empty(); }
  std::span<const Event> events() const noexcept { return events_; }

  friend bool operator==(const EventStream&, const EventStream&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::uint64_t t_start_ = 0;
  std::uint64_t t_end_ = 0;
  std::vector<Event> events_;
};

/// Returns a human-readable reason if the stream fields violate an invariant,
/// or an empty string when valid.
std::string check_stream(int width, int height, std::uint64_t t_start, std::uint64_t t_end,
                         std::span<const Event> events);

/// bins x height x width signed polarity accumulations, bin-major.
class VoxelGrid {
 public:
  VoxelGrid() = default;
  VoxelGrid(int bins, int height, int width, std::vector<float> data);

  static VoxelGrid zeros(int bins, int height, int width);

  int bins() const noexcept { return bins_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }

  float at(int b, int y, int x) const {
    return data_[(static_cast<std::size_t>(b) * height_ + y) * width_ + x];
  }
  std::span<const float> data() const noexcept { return data_; }

  bool same_shape(const VoxelGrid& o) const noexcept {
    return bins_ == o.bins_ && height_ == o.height_ && width_ == o.width_;
  }

  friend bool operator==(const VoxelGrid&, const VoxelGrid&) = default;

 private:
  int bins_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

/// Dense C x H x W array. Mutable working storage for the numerics and
/// fusion code; shape is fixed at construction.
template <typename T>
class FeatureTensor {
 public:
  using value_type = T;

  FeatureTensor() = default;
  FeatureTensor(int channels, int height, int width, T fill = T(0));
  FeatureTensor(int channels, int height, int width, std::vector<T> data);

  int channels() const noexcept { return channels_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int plane() const noexcept { return height_ * width_; }
  std::size_t size() const noexcept { return data_.size(); }

  T& operator()(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }
  T operator()(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::span<T> channel(int c) { return std::span<T>(data_).subspan(std::size_t(c) * plane(), plane()); }
  std::span<const T> channel(int c) const {
    return std::span<const T>(data_).subspan(std::size_t(c) * plane(), plane());
  }

  bool same_shape(const FeatureTensor& o) const noexcept {
    return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
  }
  bool all_finite() const noexcept;

  friend bool operator==(const FeatureTensor&, const FeatureTensor&) = default;

 private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

extern template class FeatureTensor<float>;
extern template class FeatureTensor<double>;

/// Channel-wise concatenation; spatial dims must agree.
template <typename T>
FeatureTensor<T> concat_channels(const FeatureTensor<T>& a, const FeatureTensor<T>& b);

/// Copies channels [first, first + count) into a new tensor.
template <typename T>
FeatureTensor<T> slice_channels(const FeatureTensor<T>& t, int first, int count);

template <typename U, typename T>
FeatureTensor<U> tensor_cast(const FeatureTensor<T>& t) {
  FeatureTensor<U> out(t.channels(), t.height(), t.width());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<U>(t[i]);
  return out;
}

/// Views between domain types and feature tensors.
FeatureTensor<float> to_tensor(const Frame& f);
FeatureTensor<float> to_tensor(const VoxelGrid& g);
VoxelGrid to_voxel(const FeatureTensor<float>& t);
/// Values are clamped into [0,1] to satisfy the Frame invariant.
Frame to_frame_clamped(const FeatureTensor<float>& t);

}  // namespace nirev
