#include "nirev/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace nirev {

template <typename T>
Kernel<T>::Kernel(int out, int in, int kh, int kw, bool depthwise, bool with_bias)
    : out_(out), in_(in), kh_(kh), kw_(kw), depthwise_(depthwise) {
  if (out < 1 || in < 1 || kh < 1 || kw < 1) throw InvariantError("kernel dimensions must be positive");
  if (depthwise && out != in) throw InvariantError("depthwise kernel needs out_channels == in_channels");
  weights_.assign(std::size_t(out) * (depthwise ? 1 : in) * kh * kw, T(0));
  bias_.assign(with_bias ? std::size_t(out) : 0, T(0));
}

template <typename T>
Kernel<T> Kernel<T>::dense(int out_channels, int in_channels, int k_h, int k_w, bool with_bias) {
  return Kernel(out_channels, in_channels, k_h, k_w, false, with_bias);
}

template <typename T>
Kernel<T> Kernel<T>::depthwise(int channels, int k_h, int k_w) {
  return Kernel(channels, channels, k_h, k_w, true);
}

template <typename T>
bool Kernel<T>::all_finite() const noexcept {
  auto fin = [](T v) { return std::isfinite(v); };
  return std::all_of(weights_.begin(), weights_.end(), fin) && std::all_of(bias_.begin(), bias_.end(), fin);
}

template <typename T>
Kernel<T> Kernel<T>::zeros_like() const {
  return Kernel(out_, in_, kh_, kw_, depthwise_, has_bias());
}

namespace {

int out_extent(int n, int stride) { return (n + stride - 1) / stride; }

template <typename T>
void check_conv(const FeatureTensor<T>& input, const Kernel<T>& kernel, int stride) {
  if (kernel.k_h() % 2 == 0 || kernel.k_w() % 2 == 0) {
    throw InvariantError("conv2d: even kernel size has no centre");
  }
  if (kernel.in_channels() != input.channels()) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.in_channels()) +
                     " input channels, tensor has " + std::to_string(input.channels()));
  }
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
}

// Valid output index range [lo, hi) such that o*stride + k - pad lies in [0, n).
inline void valid_range(int n_in, int n_out, int stride, int k, int pad, int& lo, int& hi) {
  const int shift = k - pad;
  lo = shift >= 0 ? 0 : (-shift + stride - 1) / stride;
  hi = n_in - shift <= 0 ? 0 : std::min(n_out, (n_in - shift + stride - 1) / stride);
  if (hi < lo) hi = lo;
}

}  // namespace

template <typename T>
FeatureTensor<T> conv2d(const FeatureTensor<T>& input, const Kernel<T>& kernel, int stride) {
  check_conv(input, kernel, stride);
  const int H = input.height(), W = input.width();
  const int OH = out_extent(H, stride), OW = out_extent(W, stride);
  const int ph = kernel.k_h() / 2, pw = kernel.k_w() / 2;
  FeatureTensor<T> out(kernel.out_channels(), OH, OW);

  // Per output element the sum order is bias, then (in-channel, ky, kx)
  // lexicographic, independent of how output channels are scheduled.
  for (int o = 0; o < kernel.out_channels(); ++o) {
    auto dst = out.channel(o);
    std::fill(dst.begin(), dst.end(), kernel.bias_or_zero(o));
    const int i_first = kernel.is_depthwise() ? o : 0;
    const int i_last = kernel.is_depthwise() ? o + 1 : input.channels();
    for (int i = i_first; i < i_last; ++i) {
      auto src = input.channel(i);
      for (int ky = 0; ky < kernel.k_h(); ++ky) {
        int y0, y1;
        valid_range(H, OH, stride, ky, ph, y0, y1);
        for (int kx = 0; kx < kernel.k_w(); ++kx) {
          const T w = kernel.weight(o, i, ky, kx);
          int x0, x1;
          valid_range(W, OW, stride, kx, pw, x0, x1);
          for (int y = y0; y < y1; ++y) {
            const T* s = src.data() + std::size_t(y * stride + ky - ph) * W + (kx - pw);
            T* d = dst.data() + std::size_t(y) * OW;
            if (stride == 1) {
              for (int x = x0; x < x1; ++x) d[x] += w * s[x];
            } else {
              for (int x = x0; x < x1; ++x) d[x] += w * s[x * stride];
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const FeatureTensor<T>& input, const Kernel<T>& kernel,
                             const FeatureTensor<T>& grad_output, int stride) {
  check_conv(input, kernel, stride);
  const int H = input.height(), W = input.width();
  const int OH = out_extent(H, stride), OW = out_extent(W, stride);
  if (grad_output.channels() != kernel.out_channels() || grad_output.height() != OH ||
      grad_output.width() != OW) {
    throw ShapeError("conv2d_backward: upstream gradient shape does not match forward output");
  }
  const int ph = kernel.k_h() / 2, pw = kernel.k_w() / 2;
  ConvGrads<T> g{FeatureTensor<T>(input.channels(), H, W), kernel.zeros_like()};

  for (int o = 0; o < kernel.out_channels(); ++o) {
    auto go = grad_output.channel(o);
    T bsum = T(0);
    for (T v : go) bsum += v;
    if (kernel.has_bias()) g.kernel.bias()[o] = bsum;
    const int i_first = kernel.is_depthwise() ? o : 0;
    const int i_last = kernel.is_depthwise() ? o + 1 : input.channels();
    for (int i = i_first; i < i_last; ++i) {
      auto src = input.channel(i);
      auto gin = g.input.channel(i);
      for (int ky = 0; ky < kernel.k_h(); ++ky) {
        int y0, y1;
        valid_range(H, OH, stride, ky, ph, y0, y1);
        for (int kx = 0; kx < kernel.k_w(); ++kx) {
          const T w = kernel.weight(o, i, ky, kx);
          int x0, x1;
          valid_range(W, OW, stride, kx, pw, x0, x1);
          T wsum = T(0);
          for (int y = y0; y < y1; ++y) {
            const std::size_t row = std::size_t(y * stride + ky - ph) * W + (kx - pw);
            const T* d = go.data() + std::size_t(y) * OW;
            for (int x = x0; x < x1; ++x) {
              const std::size_t at = row + std::size_t(x) * stride;
              wsum += src[at] * d[x];
              gin[at] += w * d[x];
            }
          }
          g.kernel.weight(o, i, ky, kx) += wsum;
        }
      }
    }
  }
  return g;
}

template <typename T>
FeatureTensor<T> conv_transpose2x2(const FeatureTensor<T>& input, const Kernel<T>& kernel) {
  if (kernel.k_h() != 2 || kernel.k_w() != 2 || kernel.is_depthwise()) {
    throw InvariantError("conv_transpose2x2: expects a dense 2x2 kernel");
  }
  if (kernel.in_channels() != input.channels()) throw ShapeError("conv_transpose2x2: channel mismatch");
  const int H = input.height(), W = input.width();
  FeatureTensor<T> out(kernel.out_channels(), 2 * H, 2 * W);
  for (int o = 0; o < kernel.out_channels(); ++o) {
    auto dst = out.channel(o);
    std::fill(dst.begin(), dst.end(), kernel.bias_or_zero(o));
    for (int i = 0; i < input.channels(); ++i) {
      auto src = input.channel(i);
      for (int ky = 0; ky < 2; ++ky) {
        for (int kx = 0; kx < 2; ++kx) {
          const T w = kernel.weight(o, i, ky, kx);
          for (int y = 0; y < H; ++y) {
            T* d = dst.data() + std::size_t(2 * y + ky) * (2 * W) + kx;
            const T* s = src.data() + std::size_t(y) * W;
            for (int x = 0; x < W; ++x) d[2 * x] += w * s[x];
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
std::vector<T> softmax_rows(std::span<const T> m, int rows, int cols, T scale) {
  if (m.size() != std::size_t(rows) * cols) throw ShapeError("softmax_rows: matrix size mismatch");
  std::vector<T> out(m.size());
  for (int r = 0; r < rows; ++r) {
    const T* in = m.data() + std::size_t(r) * cols;
    T* o = out.data() + std::size_t(r) * cols;
    T mx = in[0] * scale;
    for (int c = 1; c < cols; ++c) mx = std::max(mx, in[c] * scale);
    T sum = T(0);
    for (int c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] * scale - mx);
      sum += o[c];
    }
    const T inv = T(1) / sum;
    for (int c = 0; c < cols; ++c) o[c] *= inv;
  }
  return out;
}

#define NIREV_INSTANTIATE(T)                                                                     \
  template class Kernel<T>;                                                                      \
  template FeatureTensor<T> conv2d(const FeatureTensor<T>&, const Kernel<T>&, int);              \
  template ConvGrads<T> conv2d_backward(const FeatureTensor<T>&, const Kernel<T>&,               \
                                        const FeatureTensor<T>&, int);                           \
  template FeatureTensor<T> conv_transpose2x2(const FeatureTensor<T>&, const Kernel<T>&);        \
  template std::vector<T> softmax_rows(std::span<const T>, int, int, T);

NIREV_INSTANTIATE(float)
NIREV_INSTANTIATE(double)
#undef NIREV_INSTANTIATE

// ---- gradient check ----------------------------------------------------------

double relative_error(double analytic, double numeric) noexcept {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckEpsilon});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport finite_diff_check(const DifferentiableProgram& program, std::span<const double> params,
                                  double step, double tolerance, std::size_t keep_worst) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");
  for (double p : params) {
    if (!std::isfinite(p)) throw std::invalid_argument("finite_diff_check: non-finite parameter");
  }
  std::vector<double> theta(params.begin(), params.end());
  const double f0 = program.loss(theta);
  const double f0_again = program.loss(theta);
  if (!(f0 == f0_again)) {
    throw NonDeterministicProgram("finite_diff_check: two evaluations at the same point differ");
  }
  const std::vector<double> analytic = program.gradient(theta);
  if (analytic.size() != theta.size()) {
    throw ShapeError("finite_diff_check: gradient length differs from parameter count");
  }

  GradCheckReport report;
  report.tolerance = tolerance;
  std::vector<GradCheckEntry> entries;
  entries.reserve(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + step;
    const double up = program.loss(theta);
    theta[i] = saved - step;
    const double down = program.loss(theta);
    theta[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    double err = relative_error(analytic[i], numeric);
    if (std::isnan(err)) err = std::numeric_limits<double>::infinity();
    entries.push_back({i, analytic[i], numeric, err});
    report.max_rel_error = std::max(report.max_rel_error, err);
  }
  report.checked = theta.size();
  const std::size_t k = std::min(keep_worst, entries.size());
  std::partial_sort(entries.begin(), entries.begin() + std::ptrdiff_t(k), entries.end(),
                    [](const auto& a, const auto& b) { return a.rel_error > b.rel_error; });
  entries.resize(k);
  report.worst = std::move(entries);
  return report;
}

}  // namespace nirev
