#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nirev/consistency.hpp"
#include "nirev/core.hpp"
#include "nirev/numerics.hpp"

namespace nirev {

/// Visitor over named, mutable parameter blocks.
template <typename T>
using ParamVisitor = std::function<void(const std::string& name, std::span<T> values)>;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and bias.
template <typename T>
void init_uniform(Kernel<T>& k, std::mt19937_64& rng);

// ---- spectral consistency enhancement ---------------------------------------

/// Three depthwise branches (3x3, 5x5, 7x7) over the 2C-channel concatenation
/// of image and event features, a 1x1 aggregation of the 6C branch outputs
/// down to C, and a 3x3 decoder from the C-channel map to one channel.
template <typename T>
struct SCEParams {
  int channels = 0;  ///< C
  Kernel<T> dw3, dw5, dw7;
  Kernel<T> aggregate;
  Kernel<T> decode;

  static SCEParams zeros(int channels);
  static SCEParams random(int channels, std::uint64_t seed);

  void visit(const ParamVisitor<T>& fn);
  std::size_t parameter_count() const;
  void validate() const;
};

template <typename T>
struct SCEResult {
  FeatureTensor<T> m_c;  ///< C x H x W, strictly inside (0,1)
  FeatureTensor<T> f_b_c;  ///< concat(f_b, f_b * m_c)
  FeatureTensor<T> f_e_c;  ///< concat(f_e, f_e * m_c)
};

template <typename T>
SCEResult<T> sce_forward(const FeatureTensor<T>& f_b, const FeatureTensor<T>& f_e, const SCEParams<T>& p);

// ---- multi-order gradients --------------------------------------------------

inline constexpr double kGradientEpsilon = 1e-6;

template <typename T>
struct MultiOrderGradients {
  FeatureTensor<T> g0;  ///< the features themselves
  FeatureTensor<T> g1;  ///< sqrt(dx^2 + dy^2 + eps^2), central differences
  FeatureTensor<T> g2;  ///< |Laplacian| (4-neighbour stencil)
};

/// Per-channel derivative maps with zero padding at the border.
template <typename T>
MultiOrderGradients<T> multi_order_gradients(const FeatureTensor<T>& f);

/// Adjoint of multi_order_gradients.
template <typename T>
FeatureTensor<T> multi_order_gradients_backward(const FeatureTensor<T>& f, const FeatureTensor<T>& d_g0,
                                                const FeatureTensor<T>& d_g1, const FeatureTensor<T>& d_g2);

// ---- cross attention ----------------------------------------------------------

/// softmax_rows(q k^T / sqrt(d)) v for row-major token matrices
/// q: n x d, k: m x d, v: m x d. Returns n x d.
template <typename T>
std::vector<T> cross_attention(std::span<const T> q, std::span<const T> k, std::span<const T> v, int n, int m,
                               int d);

/// The attention weights softmax_rows(q k^T / sqrt(d)), n x m.
template <typename T>
std::vector<T> attention_weights(std::span<const T> q, std::span<const T> k, int n, int m, int d);

template <typename T>
struct AttentionGrads {
  std::vector<T> q, k, v;
};

template <typename T>
AttentionGrads<T> cross_attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                                           std::span<const T> d_out, int n, int m, int d);

/// Tensor form: tokens are spatial positions, features are channels.
/// Queries are processed in blocks so the score matrix never exceeds
/// block x (H*W); results do not depend on the block size.
template <typename T>
FeatureTensor<T> cross_attention(const FeatureTensor<T>& q, const FeatureTensor<T>& k, const FeatureTensor<T>& v,
                                 int query_block = 256);

// ---- cross-modal multi-order interaction -----------------------------------------

/// One interaction direction: queries come from the multi-order gradients of
/// one modality, keys and values from the other.
template <typename T>
struct CMIDirection {
  std::array<Kernel<T>, 3> query;  ///< 1x1, in -> dim, one per gradient order
  Kernel<T> key;                   ///< 1x1, in -> dim
  Kernel<T> value;                 ///< 1x1, in -> dim
  std::array<T, 3> order_weight{};  ///< w0, w1, w2
};

template <typename T>
struct CMIParams {
  int channels = 0;  ///< input channels of each side (2C after SCE)
  int dim = 0;       ///< attention dimension d
  /// Image-gradient queries over event keys/values; yields f_e_i.
  CMIDirection<T> to_event;
  /// Event-gradient queries over image keys/values; yields f_b_i.
  CMIDirection<T> to_image;

  static CMIParams zeros(int channels, int dim);
  /// Seeded uniform +-1/sqrt(fan_in) projections, order weights 1/3.
  static CMIParams random(int channels, int dim, std::uint64_t seed);

  void visit(const ParamVisitor<T>& fn);
  std::size_t parameter_count() const;
  void validate() const;
};

template <typename T>
struct CMIResult {
  FeatureTensor<T> f_b_i;  ///< concat(f_b_c, fused), channels + dim
  FeatureTensor<T> f_e_i;  ///< concat(f_e_c, fused), channels + dim
};

template <typename T>
CMIResult<T> cmi_forward(const FeatureTensor<T>& f_b_c, const FeatureTensor<T>& f_e_c, const CMIParams<T>& p,
                         int query_block = 256);

// ---- joint forward / backward --------------------------------------------------------

template <typename T>
struct FusionResult {
  SCEResult<T> sce;
  CMIResult<T> cmi;
};

template <typename T>
FusionResult<T> fusion_forward(const FeatureTensor<T>& f_b, const FeatureTensor<T>& f_e, const SCEParams<T>& sce,
                               const CMIParams<T>& cmi);

/// Upstream gradients of a scalar loss with respect to the fusion outputs.
/// Empty tensors stand for zero. When `consistency_target` is set the loss
/// additionally contains sc_weight * sc_loss(target, m_c, sce.decode).
template <typename T>
struct FusionUpstream {
  FeatureTensor<T> m_c;
  FeatureTensor<T> f_b_i;
  FeatureTensor<T> f_e_i;
  const ConsistencyMap* consistency_target = nullptr;
  T sc_weight = T(1);
};

template <typename T>
struct FusionGrads {
  FeatureTensor<T> f_b;
  FeatureTensor<T> f_e;
  SCEParams<T> sce;
  CMIParams<T> cmi;
};

/// Analytic gradients through sce_forward followed by cmi_forward.
template <typename T>
FusionGrads<T> fusion_backward(const FeatureTensor<T>& f_b, const FeatureTensor<T>& f_e, const SCEParams<T>& sce,
                               const CMIParams<T>& cmi, const FusionUpstream<T>& upstream);

/// Everything a fusion gradient check perturbs, flattened.
template <typename T>
struct FusionProblem {
  FeatureTensor<T> f_b, f_e;
  SCEParams<T> sce;
  CMIParams<T> cmi;

  std::vector<double> flatten();
  void assign(std::span<const double> flat);
};

struct FusionCheckConfig {
  int channels = 3;
  int height = 6;
  int width = 6;
  int dim = 4;
  double step = 1e-5;
  double tolerance = 1e-4;
  double sc_weight = 0.1;
};

/// Builds a seeded random instance with the scalar loss
///   <R_b, f_b_i> + <R_e, f_e_i> + <R_m, m_c> + sc_weight * L_sc(C, m_c)
/// (random R's, random binary-derived C) and checks the analytic gradient
/// of every input and parameter against central differences at 64 bits.
GradCheckReport check_fusion_gradients(std::uint64_t seed, const FusionCheckConfig& cfg = {});

}  // namespace nirev
