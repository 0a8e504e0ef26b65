#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nirev/blur.hpp"
#include "nirev/consistency.hpp"
#include "nirev/core.hpp"
#include "nirev/events.hpp"
#include "nirev/metrics.hpp"

namespace nirev {

/// Bad or unknown configuration key/value.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PipelineConfig {
  int crop_width = 320;
  int crop_height = 256;
  int trajectories = 20;
  BlurConfig blur;       // seed is derived per sample
  EventSimConfig events;
  NoiseConfig noise{10.0, 0.5, 0};  // seed is derived per sample
  double edge_threshold = kDefaultEdgeThreshold;
  bool edge_otsu = false;
  int bins = 13;
  LossWeights weights;
  std::uint64_t seed = 0;
  double test_fraction = 0.15;

  void validate() const;
};

/// Parses `key = value` lines grouped under `[section]` headers into `cfg`,
/// starting from whatever `cfg` already holds. Unknown keys are errors.
void parse_config(std::istream& in, PipelineConfig& cfg);
PipelineConfig load_config(const std::filesystem::path& path);
/// Emits every key; parse_config(format_config(c)) reproduces c.
std::string format_config(const PipelineConfig& cfg);

struct Scene {
  std::string name;
  Frame visible;
  Frame nir;
};

/// Pairs `<name>_vis.pgm` with `<name>_nir.pgm`, sorted by name.
std::vector<Scene> load_scenes(const std::filesystem::path& dir);

/// Seeds: scene = derive_seed(master, fnv1a64(name)); the crop uses
/// derive_seed(scene, 0) and trajectory k uses derive_seed(scene, k + 1).
std::uint64_t scene_seed(std::uint64_t master, const std::string& scene);
std::uint64_t sample_seed(std::uint64_t master, const std::string& scene, int trajectory);
std::string sample_id(const std::string& scene, int trajectory);
/// "train" or "test", from the scene name only.
std::string scene_split(const std::string& scene, double test_fraction);

Frame crop(const Frame& f, int x0, int y0, int width, int height);

struct SampleManifest {
  std::string id;
  std::string scene;
  int trajectory = 0;
  std::uint64_t seed = 0;
  std::string split;
  // Paths relative to the output root.
  std::string sharp, blurry, consistency, events_clean, events_noisy, voxel_clean, voxel_noisy;
  std::size_t num_events_clean = 0;
  std::size_t num_events_noisy = 0;

  std::string to_json() const;
  static SampleManifest from_json(const std::string& line);
};

/// In-memory result of the generation steps for one sample.
struct SampleData {
  Frame sharp, blurry;
  ConsistencyMap consistency;
  EventStream events_clean, events_noisy;
  VoxelGrid voxel_clean, voxel_noisy;
};

/// Runs crop, edges and consistency, trajectory, rendering, event
/// simulation, blur averaging, event noise, frame noise and voxelization.
SampleData synthesize_sample(const Scene& scene, const PipelineConfig& cfg, int trajectory);

/// synthesize_sample, then writes the seven artifacts under out/<id>/ and
/// re-reads each of them.
SampleManifest generate_sample(const Scene& scene, const PipelineConfig& cfg, int trajectory,
                               const std::filesystem::path& out);

struct SynthReport {
  std::vector<SampleManifest> samples;  // sorted by id
  std::vector<std::string> failures;    // "<id>: <stage>: <message>"
};

/// Generates every (scene, trajectory) sample on `jobs` worker threads and
/// writes out/manifest.jsonl. Output bytes do not depend on `jobs`.
SynthReport run_synth(const std::vector<Scene>& scenes, const PipelineConfig& cfg, const std::filesystem::path& out,
                      int jobs);

std::vector<SampleManifest> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<SampleManifest>& samples, const std::filesystem::path& path);

struct EvalRow {
  std::string id;
  bool present = false;
  double psnr = 0.0, ssim = 0.0, rmse = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::size_t present = 0;
  double mean_psnr = 0.0, mean_ssim = 0.0, mean_rmse = 0.0;

  /// Header, one row per sample ("absent" for missing predictions), then a
  /// `# mean` summary line.
  void write_csv(std::ostream& out) const;
};

/// Compares `<predictions>/<id>.pgm` with the sharp frame and
/// `<predictions>/<id>.vox` with the clean voxel grid of each sample.
/// `root` is the directory the manifest paths are relative to.
EvalReport run_eval(const std::vector<SampleManifest>& samples, const std::filesystem::path& root,
                    const std::filesystem::path& predictions);

}  // namespace nirev
