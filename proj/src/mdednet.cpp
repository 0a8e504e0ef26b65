#include "nirev/mdednet.hpp"

#include <map>
#include <random>
#include <string>

#include "nirev/rng.hpp"

namespace nirev {

void MDEDNetConfig::validate() const {
  for (int c : channels) {
    if (c < 1) throw InvariantError("MDEDNet: channel widths must be >= 1");
  }
  if (bins < 1) throw InvariantError("MDEDNet: bins must be >= 1");
  if (attention_dim < 1) throw InvariantError("MDEDNet: attention dim must be >= 1");
}

namespace {

ResBlock make_block(int c) { return {Kernel<float>::dense(c, c, 3, 3), Kernel<float>::dense(c, c, 3, 3)}; }

BranchParams make_branch(const MDEDNetConfig& cfg, int in, int out) {
  const auto& c = cfg.channels;
  BranchParams b;
  b.head = Kernel<float>::dense(c[0], in, 3, 3);
  for (int s = 0; s < 3; ++s) {
    for (auto& blk : b.enc[s]) blk = make_block(c[s]);
    for (auto& blk : b.dec[s]) blk = make_block(c[s]);
  }
  for (int s = 0; s < 2; ++s) {
    b.down[s] = Kernel<float>::dense(c[s + 1], c[s], 3, 3);
    b.up[s] = Kernel<float>::dense(c[s], c[s + 1], 2, 2);
  }
  b.fuse = Kernel<float>::dense(c[2], 2 * c[2] + cfg.attention_dim, 1, 1);
  b.tail = Kernel<float>::dense(out, c[0], 3, 3);
  return b;
}

void visit_kernel(const ParamVisitor<float>& fn, const std::string& name, Kernel<float>& k) {
  fn(name + ".weight", k.weights());
  if (k.has_bias()) fn(name + ".bias", k.bias());
}

template <typename Branch, typename Fn>
void for_each_kernel(Branch& b, const std::string& base, Fn&& fn) {
  fn(base + ".head", b.head);
  for (int s = 0; s < 3; ++s) {
    for (int i = 0; i < 2; ++i) {
      const std::string n = base + ".enc" + std::to_string(s) + "." + std::to_string(i);
      fn(n + ".a", b.enc[s][i].a);
      fn(n + ".b", b.enc[s][i].b);
    }
    if (s < 2) fn(base + ".down" + std::to_string(s), b.down[s]);
  }
  fn(base + ".fuse", b.fuse);
  for (int s = 2; s >= 0; --s) {
    for (int i = 0; i < 2; ++i) {
      const std::string n = base + ".dec" + std::to_string(s) + "." + std::to_string(i);
      fn(n + ".a", b.dec[s][i].a);
      fn(n + ".b", b.dec[s][i].b);
    }
    if (s > 0) fn(base + ".up" + std::to_string(s - 1), b.up[s - 1]);
  }
  fn(base + ".tail", b.tail);
}

FeatureTensor<float> res_block(const FeatureTensor<float>& x, const ResBlock& blk) {
  auto h = conv2d(x, blk.a);
  relu_inplace(h);
  auto out = conv2d(h, blk.b);
  add_inplace(out, x);
  return out;
}

struct Encoded {
  std::array<FeatureTensor<float>, 2> skips;
  FeatureTensor<float> bottleneck;
};

Encoded encode(const FeatureTensor<float>& input, const BranchParams& b) {
  Encoded e;
  auto x = conv2d(input, b.head);
  for (int s = 0; s < 3; ++s) {
    for (const auto& blk : b.enc[s]) x = res_block(x, blk);
    if (s < 2) {
      e.skips[s] = x;
      x = conv2d(x, b.down[s], 2);
    }
  }
  e.bottleneck = std::move(x);
  return e;
}

FeatureTensor<float> decode(const Encoded& e, const FeatureTensor<float>& interaction, const BranchParams& b) {
  auto x = conv2d(interaction, b.fuse);
  add_inplace(x, e.bottleneck);
  for (int s = 2; s >= 0; --s) {
    for (const auto& blk : b.dec[s]) x = res_block(x, blk);
    if (s > 0) {
      x = conv_transpose2x2(x, b.up[s - 1]);
      add_inplace(x, e.skips[s - 1]);
    }
  }
  return conv2d(x, b.tail);
}

std::size_t conv_count(std::size_t out, std::size_t in, std::size_t k) { return out * in * k * k + out; }

}  // namespace

MDEDNetParams MDEDNetParams::zeros(const MDEDNetConfig& cfg) {
  cfg.validate();
  MDEDNetParams p;
  p.config = cfg;
  p.image = make_branch(cfg, 1, 1);
  p.event = make_branch(cfg, cfg.bins, cfg.bins);
  p.sce = SCEParams<float>::zeros(cfg.channels[2]);
  p.cmi = CMIParams<float>::zeros(2 * cfg.channels[2], cfg.attention_dim);
  return p;
}

MDEDNetParams MDEDNetParams::random(const MDEDNetConfig& cfg, std::uint64_t seed) {
  MDEDNetParams p = zeros(cfg);
  std::mt19937_64 rng(derive_seed(seed, 0));
  auto init = [&](const std::string&, Kernel<float>& k) { init_uniform(k, rng); };
  for_each_kernel(p.image, "image", init);
  for_each_kernel(p.event, "event", init);
  p.sce = SCEParams<float>::random(cfg.channels[2], derive_seed(seed, 1));
  p.cmi = CMIParams<float>::random(2 * cfg.channels[2], cfg.attention_dim, derive_seed(seed, 2));
  return p;
}

void MDEDNetParams::visit(const ParamVisitor<float>& fn) {
  auto each = [&](const std::string& name, Kernel<float>& k) { visit_kernel(fn, name, k); };
  for_each_kernel(image, "image", each);
  for_each_kernel(event, "event", each);
  sce.visit(fn);
  cmi.visit(fn);
}

std::size_t MDEDNetParams::parameter_count() const {
  std::size_t n = 0;
  auto count = [&](const std::string&, const Kernel<float>& k) { n += k.parameter_count(); };
  for_each_kernel(image, "image", count);
  for_each_kernel(event, "event", count);
  return n + sce.parameter_count() + cmi.parameter_count();
}

void MDEDNetParams::validate() const {
  config.validate();
  const MDEDNetParams ref = zeros(config);
  std::vector<const Kernel<float>*> mine, expect;
  auto collect = [](std::vector<const Kernel<float>*>& out) {
    return [&out](const std::string&, const Kernel<float>& k) { out.push_back(&k); };
  };
  for_each_kernel(image, "image", collect(mine));
  for_each_kernel(event, "event", collect(mine));
  for_each_kernel(ref.image, "image", collect(expect));
  for_each_kernel(ref.event, "event", collect(expect));
  for (std::size_t i = 0; i < mine.size(); ++i) {
    const auto& a = *mine[i];
    const auto& b = *expect[i];
    if (a.out_channels() != b.out_channels() || a.in_channels() != b.in_channels() || a.k_h() != b.k_h() ||
        a.k_w() != b.k_w() || a.is_depthwise() != b.is_depthwise()) {
      throw InvariantError("MDEDNet: kernel shape does not follow the channel plan");
    }
    if (!a.all_finite()) throw InvariantError("MDEDNet: non-finite weight");
  }
  if (sce.channels != config.channels[2] || cmi.channels != 2 * config.channels[2] ||
      cmi.dim != config.attention_dim) {
    throw InvariantError("MDEDNet: fusion parameters do not follow the channel plan");
  }
  sce.validate();
  cmi.validate();
}

std::vector<io::NamedTensor> MDEDNetParams::to_tensors() const {
  std::vector<io::NamedTensor> out;
  MDEDNetParams copy = *this;
  copy.visit([&](const std::string& name, std::span<float> v) {
    out.push_back({name, {std::uint32_t(v.size())}, std::vector<float>(v.begin(), v.end())});
  });
  return out;
}

MDEDNetParams MDEDNetParams::from_tensors(const MDEDNetConfig& cfg, const std::vector<io::NamedTensor>& tensors) {
  MDEDNetParams p = zeros(cfg);
  std::map<std::string, const io::NamedTensor*> by_name;
  for (const auto& t : tensors) {
    if (!by_name.emplace(t.name, &t).second) throw InvariantError("MDEDNet: duplicate tensor '" + t.name + "'");
  }
  std::size_t used = 0;
  p.visit([&](const std::string& name, std::span<float> v) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw InvariantError("MDEDNet: missing tensor '" + name + "'");
    if (it->second->data.size() != v.size()) throw InvariantError("MDEDNet: size mismatch for '" + name + "'");
    std::copy(it->second->data.begin(), it->second->data.end(), v.begin());
    ++used;
  });
  if (used != tensors.size()) throw InvariantError("MDEDNet: parameter file has unknown tensors");
  p.validate();
  return p;
}

std::size_t mdednet_parameter_count(const MDEDNetConfig& cfg) {
  cfg.validate();
  const auto& c = cfg.channels;
  const std::size_t d = cfg.attention_dim;
  auto branch = [&](std::size_t in, std::size_t out) {
    std::size_t n = conv_count(c[0], in, 3) + conv_count(out, c[0], 3);
    for (int s = 0; s < 3; ++s) n += 2 * 2 * 2 * conv_count(c[s], c[s], 3);  // enc + dec, 2 blocks, 2 convs
    for (int s = 0; s < 2; ++s) n += conv_count(c[s + 1], c[s], 3) + conv_count(c[s], c[s + 1], 2);
    return n + conv_count(c[2], 2 * c[2] + d, 1);
  };
  const std::size_t C = c[2], C2 = 2 * C;
  const std::size_t sce = (C2 * 9 + C2) + (C2 * 25 + C2) + (C2 * 49 + C2) + conv_count(C, 3 * C2, 1) +
                          conv_count(1, C, 3);
  const std::size_t cmi_dir = 4 * conv_count(d, C2, 1) + d * C2 + 3;  // key projection has no bias
  return branch(1, 1) + branch(cfg.bins, cfg.bins) + sce + 2 * cmi_dir;
}

MDEDNetOutput mdednet_forward(const Frame& blurry, const VoxelGrid& voxels, const MDEDNetParams& p) {
  p.validate();
  const int H = blurry.height(), W = blurry.width();
  if (voxels.bins() != p.config.bins) throw ShapeError("mdednet_forward: voxel bins differ from the network plan");
  if (voxels.height() != H || voxels.width() != W) {
    throw ShapeError("mdednet_forward: image and voxel grid differ spatially");
  }
  if (H < 4 || W < 4 || H % 4 != 0 || W % 4 != 0) {
    throw ShapeError("mdednet_forward: height and width must be positive multiples of 4");
  }

  const auto img_in = to_tensor(blurry);
  const auto evt_in = to_tensor(voxels);
  const auto enc_b = encode(img_in, p.image);
  const auto enc_e = encode(evt_in, p.event);
  const auto fused = fusion_forward(enc_b.bottleneck, enc_e.bottleneck, p.sce, p.cmi);

  auto img_res = decode(enc_b, fused.cmi.f_e_i, p.image);
  auto evt_res = decode(enc_e, fused.cmi.f_b_i, p.event);
  add_inplace(img_res, img_in);
  add_inplace(evt_res, evt_in);
  return {to_frame_clamped(img_res), to_voxel(evt_res), fused.sce.m_c};
}

}  // namespace nirev
