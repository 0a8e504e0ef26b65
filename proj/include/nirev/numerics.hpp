#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nirev/core.hpp"

namespace nirev {

/// Convolution weights. Dense kernels are out x in x k_h x k_w; depthwise
/// kernels hold one k_h x k_w filter per channel (in-channels-per-group = 1).
template <typename T>
class Kernel {
 public:
  Kernel() = default;
  static Kernel dense(int out_channels, int in_channels, int k_h, int k_w, bool with_bias = true);
  static Kernel depthwise(int channels, int k_h, int k_w);

  int out_channels() const noexcept { return out_; }
  /// Input channels consumed. For depthwise kernels this equals out_channels().
  int in_channels() const noexcept { return in_; }
  int k_h() const noexcept { return kh_; }
  int k_w() const noexcept { return kw_; }
  bool is_depthwise() const noexcept { return depthwise_; }
  bool has_bias() const noexcept { return !bias_.empty(); }
  T bias_or_zero(int o) const { return bias_.empty() ? T(0) : bias_[o]; }
  std::size_t parameter_count() const noexcept { return weights_.size() + bias_.size(); }

  T& weight(int o, int i, int ky, int kx) { return weights_[index(o, i, ky, kx)]; }
  T weight(int o, int i, int ky, int kx) const { return weights_[index(o, i, ky, kx)]; }

  std::span<T> weights() noexcept { return weights_; }
  std::span<const T> weights() const noexcept { return weights_; }
  std::span<T> bias() noexcept { return bias_; }
  std::span<const T> bias() const noexcept { return bias_; }

  bool all_finite() const noexcept;
  /// Gradient container with the same shape, all zero.
  Kernel zeros_like() const;

 private:
  Kernel(int out, int in, int kh, int kw, bool depthwise, bool with_bias = true);
  std::size_t index(int o, int i, int ky, int kx) const {
    const int per_out = depthwise_ ? 1 : in_;
    return ((std::size_t(o) * per_out + (depthwise_ ? 0 : i)) * kh_ + ky) * kw_ + kx;
  }

  int out_ = 0, in_ = 0, kh_ = 0, kw_ = 0;
  bool depthwise_ = false;
  std::vector<T> weights_;
  std::vector<T> bias_;
};

/// Zero-padded convolution. With stride 1 the output keeps the input's H x W
/// ("same"); with stride s it is ceil(H/s) x ceil(W/s). Even kernel sizes
/// are rejected because their centre is undefined.
template <typename T>
FeatureTensor<T> conv2d(const FeatureTensor<T>& input, const Kernel<T>& kernel, int stride = 1);

template <typename T>
struct ConvGrads {
  FeatureTensor<T> input;
  Kernel<T> kernel;
};

/// Adjoint of conv2d with respect to input, weights and bias.
template <typename T>
ConvGrads<T> conv2d_backward(const FeatureTensor<T>& input, const Kernel<T>& kernel,
                             const FeatureTensor<T>& grad_output, int stride = 1);

/// Stride-2 transposed convolution with a 2x2 kernel: every input pixel
/// expands to a 2x2 output block. Kernel is out x in x 2 x 2.
template <typename T>
FeatureTensor<T> conv_transpose2x2(const FeatureTensor<T>& input, const Kernel<T>& kernel);

/// Row-wise softmax of `scale * m` for a rows x cols matrix, using per-row
/// max subtraction. Returns a new matrix.
template <typename T>
std::vector<T> softmax_rows(std::span<const T> m, int rows, int cols, T scale = T(1));

template <typename T>
T sigmoid(T z) {
  return T(1) / (T(1) + std::exp(-z));
}

template <typename T>
void relu_inplace(FeatureTensor<T>& t) {
  for (auto& v : t.data()) v = v > T(0) ? v : T(0);
}

template <typename T>
void add_inplace(FeatureTensor<T>& acc, const FeatureTensor<T>& x) {
  if (!acc.same_shape(x)) throw ShapeError("add_inplace: shape mismatch");
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x[i];
}

// ---- finite-difference gradient check ----------------------------------------

/// A scalar program over a flat parameter vector together with its claimed
/// analytic gradient.
struct DifferentiableProgram {
  std::function<double(std::span<const double>)> loss;
  std::function<std::vector<double>(std::span<const double>)> gradient;
};

struct GradCheckEntry {
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  /// Largest offenders, worst first.
  std::vector<GradCheckEntry> worst;

  bool passed() const noexcept { return max_rel_error <= tolerance; }
};

class NonDeterministicProgram : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kGradCheckEpsilon = 1e-8;

/// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric) noexcept;

/// Compares the program's analytic gradient against central differences
/// (f(p + h) - f(p - h)) / 2h for every parameter. Throws
/// NonDeterministicProgram if two evaluations at the same point disagree.
GradCheckReport finite_diff_check(const DifferentiableProgram& program, std::span<const double> params,
                                  double step = 1e-5, double tolerance = 1e-4, std::size_t keep_worst = 8);

}  // namespace nirev
