#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "nirev/core.hpp"
#include "nirev/fusion.hpp"
#include "nirev/io.hpp"
#include "nirev/numerics.hpp"

namespace nirev {

/// Channel plan of the dual-branch network. Scale s runs at H / 2^s.
struct MDEDNetConfig {
  std::array<int, 3> channels{32, 64, 128};
  int bins = 13;
  int attention_dim = 128;

  void validate() const;
};

/// x + b(relu(a(x))), both 3x3 and channel preserving.
struct ResBlock {
  Kernel<float> a, b;
};

/// One encoder/decoder branch.
struct BranchParams {
  Kernel<float> head;                        ///< 3x3, in -> c0
  std::array<std::array<ResBlock, 2>, 3> enc;
  std::array<Kernel<float>, 2> down;         ///< 3x3 stride 2, c_s -> c_{s+1}
  Kernel<float> fuse;                        ///< 1x1, 2*c2 + dim -> c2
  std::array<std::array<ResBlock, 2>, 3> dec;
  std::array<Kernel<float>, 2> up;           ///< 2x2 transposed, c_{s+1} -> c_s
  Kernel<float> tail;                        ///< 3x3, c0 -> out
};

struct MDEDNetParams {
  MDEDNetConfig config;
  BranchParams image;  ///< 1 input channel, 1 output channel
  BranchParams event;  ///< bins input channels, bins output channels
  SCEParams<float> sce;
  CMIParams<float> cmi;

  static MDEDNetParams zeros(const MDEDNetConfig& cfg);
  static MDEDNetParams random(const MDEDNetConfig& cfg, std::uint64_t seed);

  void visit(const ParamVisitor<float>& fn);
  std::size_t parameter_count() const;
  void validate() const;

  std::vector<io::NamedTensor> to_tensors() const;
  /// Loads values into a zero-initialized network of the same plan. Names and
  /// sizes must match exactly.
  static MDEDNetParams from_tensors(const MDEDNetConfig& cfg, const std::vector<io::NamedTensor>& tensors);
};

/// Parameter count implied by the channel plan alone.
std::size_t mdednet_parameter_count(const MDEDNetConfig& cfg);

struct MDEDNetOutput {
  Frame sharp;
  VoxelGrid clean_voxels;
  FeatureTensor<float> consistency;  ///< m_c at the bottleneck
};

/// Both outputs are residual over the inputs; the image is clamped to [0,1].
/// Height and width must be multiples of 4.
MDEDNetOutput mdednet_forward(const Frame& blurry, const VoxelGrid& voxels, const MDEDNetParams& p);

}  // namespace nirev
