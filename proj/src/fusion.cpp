#include "nirev/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "nirev/rng.hpp"

namespace nirev {

template <typename T>
void init_uniform(Kernel<T>& k, std::mt19937_64& rng) {
  const int per_out = k.is_depthwise() ? 1 : k.in_channels();
  const double bound = 1.0 / std::sqrt(double(per_out * k.k_h() * k.k_w()));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& w : k.weights()) w = T(u(rng));
  for (auto& b : k.bias()) b = T(u(rng));
}

namespace {

template <typename T>
void visit_kernel(const ParamVisitor<T>& fn, const std::string& name, Kernel<T>& k) {
  fn(name + ".weight", k.weights());
  if (k.has_bias()) fn(name + ".bias", k.bias());
}

template <typename T>
FeatureTensor<T> zeros_if_empty(const FeatureTensor<T>& t, int c, int h, int w) {
  if (t.size() == 0) return FeatureTensor<T>(c, h, w);
  if (t.channels() != c || t.height() != h || t.width() != w) {
    throw ShapeError("fusion_backward: upstream gradient does not match the forward output shape");
  }
  return t;
}

// C x (H*W) channel-major tensor to (H*W) x C token rows.
template <typename T>
std::vector<T> to_tokens(const FeatureTensor<T>& t) {
  const int n = t.plane(), d = t.channels();
  std::vector<T> out(std::size_t(n) * d);
  for (int c = 0; c < d; ++c) {
    auto ch = t.channel(c);
    for (int i = 0; i < n; ++i) out[std::size_t(i) * d + c] = ch[i];
  }
  return out;
}

template <typename T>
FeatureTensor<T> from_tokens(std::span<const T> tok, int d, int h, int w) {
  FeatureTensor<T> out(d, h, w);
  const int n = h * w;
  for (int c = 0; c < d; ++c) {
    auto ch = out.channel(c);
    for (int i = 0; i < n; ++i) ch[i] = tok[std::size_t(i) * d + c];
  }
  return out;
}

// softmax(scale * q_block k^T) for rows [r0, r1) of q.
template <typename T>
std::vector<T> attention_block(std::span<const T> q, std::span<const T> k, int r0, int r1, int m, int d) {
  const T scale = T(1) / std::sqrt(T(d));
  const int rows = r1 - r0;
  std::vector<T> scores(std::size_t(rows) * m);
  for (int r = 0; r < rows; ++r) {
    const T* qi = q.data() + std::size_t(r0 + r) * d;
    T* s = scores.data() + std::size_t(r) * m;
    for (int j = 0; j < m; ++j) {
      const T* kj = k.data() + std::size_t(j) * d;
      T acc = T(0);
      for (int c = 0; c < d; ++c) acc += qi[c] * kj[c];
      s[j] = acc;
    }
  }
  return softmax_rows<T>(scores, rows, m, scale);
}

template <typename T>
void check_attention(std::size_t qs, std::size_t ks, std::size_t vs, int n, int m, int d) {
  if (n < 0 || m < 1 || d < 1) throw ShapeError("cross_attention: need m >= 1 and d >= 1");
  if (qs != std::size_t(n) * d || ks != std::size_t(m) * d || vs != std::size_t(m) * d) {
    throw ShapeError("cross_attention: token matrix sizes disagree with (n, m, d)");
  }
}

template <typename T>
std::vector<T> attend(std::span<const T> q, std::span<const T> k, std::span<const T> v, int n, int m, int d,
                      int block) {
  check_attention<T>(q.size(), k.size(), v.size(), n, m, d);
  block = std::max(1, block);
  std::vector<T> out(std::size_t(n) * d, T(0));
  for (int r0 = 0; r0 < n; r0 += block) {
    const int r1 = std::min(n, r0 + block);
    const auto p = attention_block(q, k, r0, r1, m, d);
    for (int r = r0; r < r1; ++r) {
      T* o = out.data() + std::size_t(r) * d;
      const T* pr = p.data() + std::size_t(r - r0) * m;
      for (int j = 0; j < m; ++j) {
        const T w = pr[j];
        const T* vj = v.data() + std::size_t(j) * d;
        for (int c = 0; c < d; ++c) o[c] += w * vj[c];
      }
    }
  }
  return out;
}

}  // namespace

// ---- SCE -----------------------------------------------------------------------

template <typename T>
SCEParams<T> SCEParams<T>::zeros(int channels) {
  if (channels < 1) throw InvariantError("SCE: channels must be >= 1");
  SCEParams p;
  p.channels = channels;
  p.dw3 = Kernel<T>::depthwise(2 * channels, 3, 3);
  p.dw5 = Kernel<T>::depthwise(2 * channels, 5, 5);
  p.dw7 = Kernel<T>::depthwise(2 * channels, 7, 7);
  p.aggregate = Kernel<T>::dense(channels, 6 * channels, 1, 1);
  p.decode = Kernel<T>::dense(1, channels, 3, 3);
  return p;
}

template <typename T>
SCEParams<T> SCEParams<T>::random(int channels, std::uint64_t seed) {
  auto p = zeros(channels);
  std::mt19937_64 rng(seed);
  init_uniform(p.dw3, rng);
  init_uniform(p.dw5, rng);
  init_uniform(p.dw7, rng);
  init_uniform(p.aggregate, rng);
  init_uniform(p.decode, rng);
  return p;
}

template <typename T>
void SCEParams<T>::visit(const ParamVisitor<T>& fn) {
  visit_kernel(fn, "sce.dw3", dw3);
  visit_kernel(fn, "sce.dw5", dw5);
  visit_kernel(fn, "sce.dw7", dw7);
  visit_kernel(fn, "sce.aggregate", aggregate);
  visit_kernel(fn, "sce.decode", decode);
}

template <typename T>
std::size_t SCEParams<T>::parameter_count() const {
  return dw3.parameter_count() + dw5.parameter_count() + dw7.parameter_count() + aggregate.parameter_count() +
         decode.parameter_count();
}

template <typename T>
void SCEParams<T>::validate() const {
  const int c2 = 2 * channels;
  auto dw_ok = [&](const Kernel<T>& k, int size) {
    return k.is_depthwise() && k.out_channels() == c2 && k.k_h() == size && k.k_w() == size;
  };
  if (channels < 1 || !dw_ok(dw3, 3) || !dw_ok(dw5, 5) || !dw_ok(dw7, 7)) {
    throw InvariantError("SCE: depthwise branches must be 3x3/5x5/7x7 over 2C channels");
  }
  if (aggregate.is_depthwise() || aggregate.out_channels() != channels || aggregate.in_channels() != 3 * c2 ||
      aggregate.k_h() != 1 || aggregate.k_w() != 1) {
    throw InvariantError("SCE: aggregation must be a 1x1 kernel from 6C to C channels");
  }
  if (decode.is_depthwise() || decode.out_channels() != 1 || decode.in_channels() != channels ||
      decode.k_h() != 3 || decode.k_w() != 3) {
    throw InvariantError("SCE: decoder must be a 3x3 kernel from C channels to 1");
  }
  for (const Kernel<T>* k : {&dw3, &dw5, &dw7, &aggregate, &decode}) {
    if (!k->all_finite()) throw InvariantError("SCE: non-finite weight");
  }
}

namespace {

template <typename T>
struct SCETrace {
  FeatureTensor<T> x;    // concat(f_b, f_e)
  FeatureTensor<T> agg;  // concat of branch outputs
  FeatureTensor<T> m;
};

template <typename T>
SCETrace<T> sce_trace(const FeatureTensor<T>& f_b, const FeatureTensor<T>& f_e, const SCEParams<T>& p) {
  p.validate();
  if (!f_b.same_shape(f_e)) throw ShapeError("sce_forward: image and event features differ in shape");
  if (f_b.channels() != p.channels) throw ShapeError("sce_forward: feature channels differ from SCE channels");
  SCETrace<T> t;
  t.x = concat_channels(f_b, f_e);
  t.agg = concat_channels(concat_channels(conv2d(t.x, p.dw3), conv2d(t.x, p.dw5)), conv2d(t.x, p.dw7));
  t.m = conv2d(t.agg, p.aggregate);
  for (auto& v : t.m.data()) v = sigmoid(v);
  return t;
}

template <typename T>
FeatureTensor<T> gate_concat(const FeatureTensor<T>& f, const FeatureTensor<T>& m) {
  FeatureTensor<T> gated = f;
  for (std::size_t i = 0; i < gated.size(); ++i) gated[i] *= m[i];
  return concat_channels(f, gated);
}

}  // namespace

template <typename T>
SCEResult<T> sce_forward(const FeatureTensor<T>& f_b, const FeatureTensor<T>& f_e, const SCEParams<T>& p) {
  auto t = sce_trace(f_b, f_e, p);
  SCEResult<T> r;
  r.f_b_c = gate_concat(f_b, t.m);
  r.f_e_c = gate_concat(f_e, t.m);
  r.m_c = std::move(t.m);
  return r;
}

// ---- multi-order gradients ------------------------------------------------------

template <typename T>
MultiOrderGradients<T> multi_order_gradients(const FeatureTensor<T>& f) {
  const int C = f.channels(), H = f.height(), W = f.width();
  const T eps2 = T(kGradientEpsilon * kGradientEpsilon);
  MultiOrderGradients<T> g{f, FeatureTensor<T>(C, H, W), FeatureTensor<T>(C, H, W)};
  for (int c = 0; c < C; ++c) {
    auto at = [&](int y, int x) { return (x < 0 || y < 0 || x >= W || y >= H) ? T(0) : f(c, y, x); };
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const T dx = T(0.5) * (at(y, x + 1) - at(y, x - 1));
        const T dy = T(0.5) * (at(y + 1, x) - at(y - 1, x));
        g.g1(c, y, x) = std::sqrt(dx * dx + dy * dy + eps2);
        const T lap = at(y, x + 1) + at(y, x - 1) + at(y + 1, x) + at(y - 1, x) - T(4) * f(c, y, x);
        g.g2(c, y, x) = std::abs(lap);
      }
    }
  }
  return g;
}

template <typename T>
FeatureTensor<T> multi_order_gradients_backward(const FeatureTensor<T>& f, const FeatureTensor<T>& d_g0,
                                                const FeatureTensor<T>& d_g1, const FeatureTensor<T>& d_g2) {
  if (!f.same_shape(d_g0) || !f.same_shape(d_g1) || !f.same_shape(d_g2)) {
    throw ShapeError("multi_order_gradients_backward: shape mismatch");
  }
  const int C = f.channels(), H = f.height(), W = f.width();
  const T eps2 = T(kGradientEpsilon * kGradientEpsilon);
  FeatureTensor<T> df = d_g0;
  for (int c = 0; c < C; ++c) {
    auto at = [&](int y, int x) { return (x < 0 || y < 0 || x >= W || y >= H) ? T(0) : f(c, y, x); };
    auto add = [&](int y, int x, T v) {
      if (x >= 0 && y >= 0 && x < W && y < H) df(c, y, x) += v;
    };
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const T dx = T(0.5) * (at(y, x + 1) - at(y, x - 1));
        const T dy = T(0.5) * (at(y + 1, x) - at(y - 1, x));
        const T g1 = std::sqrt(dx * dx + dy * dy + eps2);
        const T ux = d_g1(c, y, x) * dx / g1;
        const T uy = d_g1(c, y, x) * dy / g1;
        add(y, x + 1, T(0.5) * ux);
        add(y, x - 1, T(-0.5) * ux);
        add(y + 1, x, T(0.5) * uy);
        add(y - 1, x, T(-0.5) * uy);

        const T lap = at(y, x + 1) + at(y, x - 1) + at(y + 1, x) + at(y - 1, x) - T(4) * f(c, y, x);
        const T s = lap > T(0) ? T(1) : (lap < T(0) ? T(-1) : T(0));
        const T v = d_g2(c, y, x) * s;
        add(y, x + 1, v);
        add(y, x - 1, v);
        add(y + 1, x, v);
        add(y - 1, x, v);
        df(c, y, x) += T(-4) * v;
      }
    }
  }
  return df;
}

// ---- cross attention -------------------------------------------------------------

template <typename T>
std::vector<T> cross_attention(std::span<const T> q, std::span<const T> k, std::span<const T> v, int n, int m,
                               int d) {
  return attend(q, k, v, n, m, d, std::max(1, n));
}

template <typename T>
std::vector<T> attention_weights(std::span<const T> q, std::span<const T> k, int n, int m, int d) {
  check_attention<T>(q.size(), k.size(), k.size(), n, m, d);
  return attention_block(q, k, 0, n, m, d);
}

template <typename T>
AttentionGrads<T> cross_attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                                           std::span<const T> d_out, int n, int m, int d) {
  check_attention<T>(q.size(), k.size(), v.size(), n, m, d);
  if (d_out.size() != std::size_t(n) * d) throw ShapeError("cross_attention_backward: upstream size mismatch");
  const T scale = T(1) / std::sqrt(T(d));
  AttentionGrads<T> g{std::vector<T>(q.size(), T(0)), std::vector<T>(k.size(), T(0)),
                      std::vector<T>(v.size(), T(0))};
  std::vector<T> dp(static_cast<std::size_t>(m));
  const int block = 256;
  for (int r0 = 0; r0 < n; r0 += block) {
    const int r1 = std::min(n, r0 + block);
    const auto p = attention_block(q, k, r0, r1, m, d);
    for (int r = r0; r < r1; ++r) {
      const T* pr = p.data() + std::size_t(r - r0) * m;
      const T* go = d_out.data() + std::size_t(r) * d;
      T dot = T(0);
      for (int j = 0; j < m; ++j) {
        const T* vj = v.data() + std::size_t(j) * d;
        T acc = T(0);
        for (int c = 0; c < d; ++c) acc += go[c] * vj[c];
        dp[j] = acc;
        dot += pr[j] * acc;
        T* gv = g.v.data() + std::size_t(j) * d;
        for (int c = 0; c < d; ++c) gv[c] += pr[j] * go[c];
      }
      const T* qi = q.data() + std::size_t(r) * d;
      T* gq = g.q.data() + std::size_t(r) * d;
      for (int j = 0; j < m; ++j) {
        const T ds = pr[j] * (dp[j] - dot) * scale;
        const T* kj = k.data() + std::size_t(j) * d;
        T* gk = g.k.data() + std::size_t(j) * d;
        for (int c = 0; c < d; ++c) {
          gq[c] += ds * kj[c];
          gk[c] += ds * qi[c];
        }
      }
    }
  }
  return g;
}

template <typename T>
FeatureTensor<T> cross_attention(const FeatureTensor<T>& q, const FeatureTensor<T>& k, const FeatureTensor<T>& v,
                                 int query_block) {
  if (q.channels() != k.channels() || k.channels() != v.channels() || k.plane() != v.plane()) {
    throw ShapeError("cross_attention: q/k/v dimensions disagree");
  }
  const auto qt = to_tokens(q), kt = to_tokens(k), vt = to_tokens(v);
  const auto out = attend<T>(qt, kt, vt, q.plane(), k.plane(), q.channels(), query_block);
  return from_tokens<T>(out, q.channels(), q.height(), q.width());
}

// ---- CMI ---------------------------------------------------------------------------

template <typename T>
CMIParams<T> CMIParams<T>::zeros(int channels, int dim) {
  if (channels < 1 || dim < 1) throw InvariantError("CMI: channels and dim must be >= 1");
  CMIParams p;
  p.channels = channels;
  p.dim = dim;
  for (CMIDirection<T>* dir : {&p.to_event, &p.to_image}) {
    for (auto& q : dir->query) q = Kernel<T>::dense(dim, channels, 1, 1);
    // A key bias shifts every score in a softmax row equally and has no
    // effect on the output, so the key projection carries none.
    dir->key = Kernel<T>::dense(dim, channels, 1, 1, false);
    dir->value = Kernel<T>::dense(dim, channels, 1, 1);
    dir->order_weight = {T(0), T(0), T(0)};
  }
  return p;
}

template <typename T>
CMIParams<T> CMIParams<T>::random(int channels, int dim, std::uint64_t seed) {
  auto p = zeros(channels, dim);
  std::mt19937_64 rng(seed);
  for (CMIDirection<T>* dir : {&p.to_event, &p.to_image}) {
    for (auto& q : dir->query) init_uniform(q, rng);
    init_uniform(dir->key, rng);
    init_uniform(dir->value, rng);
    dir->order_weight = {T(1) / T(3), T(1) / T(3), T(1) / T(3)};
  }
  return p;
}

template <typename T>
void CMIParams<T>::visit(const ParamVisitor<T>& fn) {
  for (auto [name, dir] : {std::pair<const char*, CMIDirection<T>*>{"cmi.to_event", &to_event},
                           std::pair<const char*, CMIDirection<T>*>{"cmi.to_image", &to_image}}) {
    const std::string base = name;
    for (int j = 0; j < 3; ++j) visit_kernel(fn, base + ".query" + std::to_string(j), dir->query[j]);
    visit_kernel(fn, base + ".key", dir->key);
    visit_kernel(fn, base + ".value", dir->value);
    fn(base + ".order_weight", std::span<T>(dir->order_weight));
  }
}

template <typename T>
std::size_t CMIParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const CMIDirection<T>* dir : {&to_event, &to_image}) {
    for (const auto& q : dir->query) n += q.parameter_count();
    n += dir->key.parameter_count() + dir->value.parameter_count() + dir->order_weight.size();
  }
  return n;
}

template <typename T>
void CMIParams<T>::validate() const {
  auto proj_ok = [&](const Kernel<T>& k, bool bias) {
    return !k.is_depthwise() && k.out_channels() == dim && k.in_channels() == channels && k.k_h() == 1 &&
           k.k_w() == 1 && k.has_bias() == bias && k.all_finite();
  };
  for (const CMIDirection<T>* dir : {&to_event, &to_image}) {
    for (const auto& q : dir->query) {
      if (!proj_ok(q, true)) throw InvariantError("CMI: query projection must be a finite 1x1 kernel channels -> dim");
    }
    if (!proj_ok(dir->key, false) || !proj_ok(dir->value, true)) {
      throw InvariantError("CMI: key (bias-free) and value projections must be finite 1x1 kernels channels -> dim");
    }
    for (T w : dir->order_weight) {
      if (!std::isfinite(w)) throw InvariantError("CMI: non-finite order weight");
    }
  }
}

namespace {

template <typename T>
struct DirectionTrace {
  MultiOrderGradients<T> grads;
  std::array<FeatureTensor<T>, 3> q;
  FeatureTensor<T> k, v;
  std::array<FeatureTensor<T>, 3> attended;
  FeatureTensor<T> fused;
};

template <typename T>
DirectionTrace<T> direction_forward(const FeatureTensor<T>& query_src, const FeatureTensor<T>& kv_src,
                                    const CMIDirection<T>& dir, int query_block) {
  DirectionTrace<T> t;
  t.grads = multi_order_gradients(query_src);
  const FeatureTensor<T>* orders[3] = {&t.grads.g0, &t.grads.g1, &t.grads.g2};
  t.k = conv2d(kv_src, dir.key);
  t.v = conv2d(kv_src, dir.value);
  t.fused = FeatureTensor<T>(dir.key.out_channels(), query_src.height(), query_src.width());
  for (int j = 0; j < 3; ++j) {
    t.q[j] = conv2d(*orders[j], dir.query[j]);
    t.attended[j] = cross_attention(t.q[j], t.k, t.v, query_block);
    for (std::size_t i = 0; i < t.fused.size(); ++i) t.fused[i] += dir.order_weight[j] * t.attended[j][i];
  }
  return t;
}

template <typename T>
void check_cmi_inputs(const FeatureTensor<T>& f_b_c, const FeatureTensor<T>& f_e_c, const CMIParams<T>& p) {
  p.validate();
  if (!f_b_c.same_shape(f_e_c)) throw ShapeError("cmi_forward: image and event features differ in shape");
  if (f_b_c.channels() != p.channels) throw ShapeError("cmi_forward: feature channels differ from CMI channels");
}

}  // namespace

template <typename T>
CMIResult<T> cmi_forward(const FeatureTensor<T>& f_b_c, const FeatureTensor<T>& f_e_c, const CMIParams<T>& p,
                         int query_block) {
  check_cmi_inputs(f_b_c, f_e_c, p);
  auto to_event = direction_forward(f_b_c, f_e_c, p.to_event, query_block);
  auto to_image = direction_forward(f_e_c, f_b_c, p.to_image, query_block);
  return {concat_channels(f_b_c, to_image.fused), concat_channels(f_e_c, to_event.fused)};
}

template <typename T>
FusionResult<T> fusion_forward(const FeatureTensor<T>& f_b, const FeatureTensor<T>& f_e, const SCEParams<T>& sce,
                               const CMIParams<T>& cmi) {
  FusionResult<T> r;
  r.sce = sce_forward(f_b, f_e, sce);
  r.cmi = cmi_forward(r.sce.f_b_c, r.sce.f_e_c, cmi);
  return r;
}

// ---- backward ------------------------------------------------------------------------

namespace {

template <typename T>
void accumulate(Kernel<T>& acc, const Kernel<T>& g) {
  for (std::size_t i = 0; i < g.weights().size(); ++i) acc.weights()[i] += g.weights()[i];
  for (std::size_t i = 0; i < g.bias().size(); ++i) acc.bias()[i] += g.bias()[i];
}

// Gradient of one interaction direction given d(fused). Adds into the
// query-source and key/value-source input gradients.
template <typename T>
void direction_backward(const FeatureTensor<T>& query_src, const FeatureTensor<T>& kv_src, const CMIDirection<T>& dir,
                        const DirectionTrace<T>& t, const FeatureTensor<T>& d_fused, CMIDirection<T>& g_dir,
                        FeatureTensor<T>& d_query_src, FeatureTensor<T>& d_kv_src) {
  const int d = dir.key.out_channels();
  const int H = query_src.height(), W = query_src.width(), n = H * W;
  const auto kt = to_tokens(t.k), vt = to_tokens(t.v);
  std::vector<T> dk(kt.size(), T(0)), dv(vt.size(), T(0));
  std::array<FeatureTensor<T>, 3> d_orders;
  const FeatureTensor<T>* orders[3] = {&t.grads.g0, &t.grads.g1, &t.grads.g2};

  for (int j = 0; j < 3; ++j) {
    T dw = T(0);
    for (std::size_t i = 0; i < d_fused.size(); ++i) dw += d_fused[i] * t.attended[j][i];
    g_dir.order_weight[j] += dw;

    FeatureTensor<T> d_att = d_fused;
    for (auto& x : d_att.data()) x *= dir.order_weight[j];
    const auto qt = to_tokens(t.q[j]);
    const auto d_att_tok = to_tokens(d_att);
    auto ga = cross_attention_backward<T>(qt, kt, vt, d_att_tok, n, n, d);
    for (std::size_t i = 0; i < dk.size(); ++i) {
      dk[i] += ga.k[i];
      dv[i] += ga.v[i];
    }
    const auto d_q = from_tokens<T>(ga.q, d, H, W);
    auto gq = conv2d_backward(*orders[j], dir.query[j], d_q);
    accumulate(g_dir.query[j], gq.kernel);
    d_orders[j] = std::move(gq.input);
  }
  add_inplace(d_query_src, multi_order_gradients_backward(query_src, d_orders[0], d_orders[1], d_orders[2]));

  auto gk = conv2d_backward(kv_src, dir.key, from_tokens<T>(dk, d, H, W));
  auto gv = conv2d_backward(kv_src, dir.value, from_tokens<T>(dv, d, H, W));
  accumulate(g_dir.key, gk.kernel);
  accumulate(g_dir.value, gv.kernel);
  add_inplace(d_kv_src, gk.input);
  add_inplace(d_kv_src, gv.input);
}

}  // namespace

template <typename T>
FusionGrads<T> fusion_backward(const FeatureTensor<T>& f_b, const FeatureTensor<T>& f_e, const SCEParams<T>& sce,
                               const CMIParams<T>& cmi, const FusionUpstream<T>& up) {
  // Forward trace.
  const auto st = sce_trace(f_b, f_e, sce);
  const auto f_b_c = gate_concat(f_b, st.m);
  const auto f_e_c = gate_concat(f_e, st.m);
  check_cmi_inputs(f_b_c, f_e_c, cmi);
  const auto to_event = direction_forward(f_b_c, f_e_c, cmi.to_event, 256);
  const auto to_image = direction_forward(f_e_c, f_b_c, cmi.to_image, 256);

  const int C = f_b.channels(), H = f_b.height(), W = f_b.width();
  const int C2 = 2 * C, D = cmi.dim;
  const auto d_fbi = zeros_if_empty(up.f_b_i, C2 + D, H, W);
  const auto d_fei = zeros_if_empty(up.f_e_i, C2 + D, H, W);
  auto d_m = zeros_if_empty(up.m_c, C, H, W);

  FusionGrads<T> g;
  g.sce = SCEParams<T>::zeros(C);
  g.cmi = CMIParams<T>::zeros(cmi.channels, cmi.dim);

  if (up.consistency_target != nullptr) {
    auto gs = sc_loss_backward(*up.consistency_target, st.m, sce.decode, up.sc_weight);
    add_inplace(d_m, gs.m_c);
    accumulate(g.sce.decode, gs.decode);
  }

  // CMI: outputs are concat(f_b_c, fused_image) and concat(f_e_c, fused_event).
  FeatureTensor<T> d_fbc = slice_channels(d_fbi, 0, C2);
  FeatureTensor<T> d_fec = slice_channels(d_fei, 0, C2);
  direction_backward(f_b_c, f_e_c, cmi.to_event, to_event, slice_channels(d_fei, C2, D), g.cmi.to_event, d_fbc,
                     d_fec);
  direction_backward(f_e_c, f_b_c, cmi.to_image, to_image, slice_channels(d_fbi, C2, D), g.cmi.to_image, d_fec,
                     d_fbc);

  // Gates: f_x_c = concat(f_x, f_x * m).
  g.f_b = slice_channels(d_fbc, 0, C);
  g.f_e = slice_channels(d_fec, 0, C);
  for (std::size_t i = 0; i < st.m.size(); ++i) {
    const T gb = d_fbc[std::size_t(C) * H * W + i];
    const T ge = d_fec[std::size_t(C) * H * W + i];
    g.f_b[i] += gb * st.m[i];
    g.f_e[i] += ge * st.m[i];
    d_m[i] += gb * f_b[i] + ge * f_e[i];
  }

  // Sigmoid, aggregation, depthwise branches.
  FeatureTensor<T> d_z = d_m;
  for (std::size_t i = 0; i < d_z.size(); ++i) d_z[i] *= st.m[i] * (T(1) - st.m[i]);
  auto ga = conv2d_backward(st.agg, sce.aggregate, d_z);
  accumulate(g.sce.aggregate, ga.kernel);
  FeatureTensor<T> d_x(C2, H, W);
  const Kernel<T>* branches[3] = {&sce.dw3, &sce.dw5, &sce.dw7};
  Kernel<T>* branch_grads[3] = {&g.sce.dw3, &g.sce.dw5, &g.sce.dw7};
  for (int b = 0; b < 3; ++b) {
    auto gb = conv2d_backward(st.x, *branches[b], slice_channels(ga.input, b * C2, C2));
    accumulate(*branch_grads[b], gb.kernel);
    add_inplace(d_x, gb.input);
  }
  add_inplace(g.f_b, slice_channels(d_x, 0, C));
  add_inplace(g.f_e, slice_channels(d_x, C, C));
  return g;
}

// ---- gradient-check problem -------------------------------------------------------------

template <typename T>
std::vector<double> FusionProblem<T>::flatten() {
  std::vector<double> flat(f_b.data().begin(), f_b.data().end());
  flat.insert(flat.end(), f_e.data().begin(), f_e.data().end());
  auto push = [&](const std::string&, std::span<T> v) { flat.insert(flat.end(), v.begin(), v.end()); };
  sce.visit(push);
  cmi.visit(push);
  return flat;
}

template <typename T>
void FusionProblem<T>::assign(std::span<const double> flat) {
  std::size_t pos = 0;
  auto take = [&](const std::string&, std::span<T> v) {
    if (pos + v.size() > flat.size()) throw ShapeError("FusionProblem::assign: vector too short");
    for (auto& x : v) x = T(flat[pos++]);
  };
  take("f_b", f_b.data());
  take("f_e", f_e.data());
  sce.visit(take);
  cmi.visit(take);
  if (pos != flat.size()) throw ShapeError("FusionProblem::assign: vector too long");
}

GradCheckReport check_fusion_gradients(std::uint64_t seed, const FusionCheckConfig& cfg) {
  const int C = cfg.channels, H = cfg.height, W = cfg.width;
  std::mt19937_64 rng(derive_seed(seed, 0));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto random_tensor = [&](int c) {
    FeatureTensor<double> t(c, H, W);
    for (auto& v : t.data()) v = u(rng);
    return t;
  };

  FusionProblem<double> base;
  base.f_b = random_tensor(C);
  base.f_e = random_tensor(C);
  base.sce = SCEParams<double>::random(C, derive_seed(seed, 1));
  base.cmi = CMIParams<double>::random(2 * C, cfg.dim, derive_seed(seed, 2));
  for (CMIDirection<double>* dir : {&base.cmi.to_event, &base.cmi.to_image}) {
    for (auto& w : dir->order_weight) w = 0.2 + 0.4 * (0.5 * (u(rng) + 1.0));
  }

  FusionUpstream<double> up;
  up.m_c = random_tensor(C);
  up.f_b_i = random_tensor(2 * C + cfg.dim);
  up.f_e_i = random_tensor(2 * C + cfg.dim);
  std::vector<double> target(std::size_t(H) * W);
  std::uniform_int_distribution<int> edge(0, 1);
  for (auto& v : target) {
    const int sv = edge(rng), sn = edge(rng);
    v = 0.5 * (1 - sv) * (1 - sn) + sv * sn;
  }
  const ConsistencyMap cmap(W, H, std::move(target));
  up.consistency_target = &cmap;
  up.sc_weight = cfg.sc_weight;

  auto dot = [](const FeatureTensor<double>& a, const FeatureTensor<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
  };

  DifferentiableProgram program;
  program.loss = [&](std::span<const double> theta) {
    FusionProblem<double> p = base;
    p.assign(theta);
    const auto r = fusion_forward(p.f_b, p.f_e, p.sce, p.cmi);
    return dot(up.f_b_i, r.cmi.f_b_i) + dot(up.f_e_i, r.cmi.f_e_i) + dot(up.m_c, r.sce.m_c) +
           cfg.sc_weight * sc_loss(cmap, r.sce.m_c, p.sce.decode);
  };
  program.gradient = [&](std::span<const double> theta) {
    FusionProblem<double> p = base;
    p.assign(theta);
    auto g = fusion_backward(p.f_b, p.f_e, p.sce, p.cmi, up);
    FusionProblem<double> gp{std::move(g.f_b), std::move(g.f_e), std::move(g.sce), std::move(g.cmi)};
    return gp.flatten();
  };
  const auto theta = base.flatten();
  return finite_diff_check(program, theta, cfg.step, cfg.tolerance);
}

#define NIREV_INSTANTIATE(T)                                                                                   \
  template void init_uniform(Kernel<T>&, std::mt19937_64&);                                                    \
  template struct SCEParams<T>;                                                                                \
  template struct CMIParams<T>;                                                                                \
  template SCEResult<T> sce_forward(const FeatureTensor<T>&, const FeatureTensor<T>&, const SCEParams<T>&);   \
  template MultiOrderGradients<T> multi_order_gradients(const FeatureTensor<T>&);                              \
  template FeatureTensor<T> multi_order_gradients_backward(const FeatureTensor<T>&, const FeatureTensor<T>&,   \
                                                           const FeatureTensor<T>&, const FeatureTensor<T>&);  \
  template std::vector<T> cross_attention(std::span<const T>, std::span<const T>, std::span<const T>, int, int, \
                                          int);                                                                \
  template std::vector<T> attention_weights(std::span<const T>, std::span<const T>, int, int, int);            \
  template AttentionGrads<T> cross_attention_backward(std::span<const T>, std::span<const T>,                  \
                                                      std::span<const T>, std::span<const T>, int, int, int);  \
  template FeatureTensor<T> cross_attention(const FeatureTensor<T>&, const FeatureTensor<T>&,                  \
                                            const FeatureTensor<T>&, int);                                     \
  template CMIResult<T> cmi_forward(const FeatureTensor<T>&, const FeatureTensor<T>&, const CMIParams<T>&, int); \
  template FusionResult<T> fusion_forward(const FeatureTensor<T>&, const FeatureTensor<T>&, const SCEParams<T>&, \
                                          const CMIParams<T>&);                                                \
  template FusionGrads<T> fusion_backward(const FeatureTensor<T>&, const FeatureTensor<T>&, const SCEParams<T>&, \
                                          const CMIParams<T>&, const FusionUpstream<T>&);                      \
  template struct FusionProblem<T>;

NIREV_INSTANTIATE(float)
NIREV_INSTANTIATE(double)
#undef NIREV_INSTANTIATE

}  // namespace nirev
