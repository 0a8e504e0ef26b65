#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "cli.hpp"
#include "nirev/io.hpp"
#include "nirev/mdednet.hpp"
#include "nirev/pipeline.hpp"
#include "nirev/rng.hpp"
#include "oracles.hpp"

using namespace nirev;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("nirev_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

PipelineConfig small_config() {
  PipelineConfig c;
  c.crop_width = 32;
  c.crop_height = 24;
  c.trajectories = 3;
  c.blur.n_latent = 4;
  c.blur.max_displacement = 2.0;
  c.seed = 5;
  return c;
}

std::vector<Scene> small_scenes() {
  std::mt19937_64 rng(1);
  std::vector<Scene> s;
  for (const char* name : {"b", "a"}) s.push_back({name, oracle::random_frame(40, 30, rng), oracle::random_frame(40, 30, rng)});
  return s;
}

std::map<std::string, std::vector<std::uint8_t>> read_tree(const fs::path& root) {
  std::map<std::string, std::vector<std::uint8_t>> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = io::read_file(e.path());
  }
  return out;
}

int cli(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  args.insert(args.begin(), "nirev");
  std::vector<const char*> argv;
  for (auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(int(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

}  // namespace

// ---- config ---------------------------------------------------------------------------

TEST(Config, FormatParseRoundTrip) {
  PipelineConfig c = small_config();
  c.noise.rate = 0.125;
  c.edge_otsu = true;
  c.weights.lambda3 = 0.3;
  c.events.refractory = 17;
  const std::string text = format_config(c);
  PipelineConfig back;
  std::istringstream in(text);
  parse_config(in, back);
  EXPECT_EQ(format_config(back), text);
  EXPECT_EQ(back.events.refractory, 17u);
  EXPECT_TRUE(back.edge_otsu);
}

TEST(Config, PartialFilesKeepDefaults) {
  std::istringstream in("# comment\n[voxel]\nbins = 5\n\n; another\n[noise]\n  rate = 2.5  \n");
  PipelineConfig c;
  parse_config(in, c);
  EXPECT_EQ(c.bins, 5);
  EXPECT_EQ(c.noise.rate, 2.5);
  EXPECT_EQ(c.crop_width, 320);
}

TEST(Config, UnknownKeysAndBadValuesAreRejected) {
  PipelineConfig c;
  std::istringstream unknown("[blur]\nn_latent = 4\nspeed = 3\n");
  try {
    parse_config(unknown, c);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("blur.speed"), std::string::npos);
  }
  std::istringstream bad("[voxel]\nbins = many\n");
  EXPECT_THROW(parse_config(bad, c), ConfigError);
  std::istringstream nosection("bins = 3\n");
  EXPECT_THROW(parse_config(nosection, c), ConfigError);
  PipelineConfig invalid;
  invalid.test_fraction = 2.0;
  EXPECT_THROW(invalid.validate(), ConfigError);
}

// ---- seeds, ids, splits -------------------------------------------------------------------

TEST(Seeds, SampleSeedsFollowSceneHash) {
  EXPECT_EQ(scene_seed(9, "harbor"), derive_seed(9, fnv1a64("harbor")));
  EXPECT_EQ(sample_seed(9, "harbor", 3), derive_seed(scene_seed(9, "harbor"), 4));
  EXPECT_EQ(sample_id("harbor", 3), "harbor_t03");
  EXPECT_EQ(scene_split("harbor", 0.0), "train");
  EXPECT_EQ(scene_split("harbor", 1.0), "test");
  EXPECT_EQ(scene_split("harbor", 0.15), scene_split("harbor", 0.15));
}

TEST(Crop, CopiesTheWindowAndChecksBounds) {
  std::mt19937_64 rng(2);
  const Frame f = oracle::random_frame(10, 8, rng);
  const Frame c = crop(f, 3, 2, 4, 5);
  for (int y = 0; y < 5; ++y) {
    for (int x = 0; x < 4; ++x) EXPECT_EQ(c.at(x, y), f.at(x + 3, y + 2));
  }
  EXPECT_ANY_THROW(crop(f, 7, 0, 4, 4));
}

TEST(Manifest, JsonRoundTrip) {
  SampleManifest m;
  m.id = "x_t01";
  m.scene = "x";
  m.trajectory = 1;
  m.seed = 0xFFFFFFFFFFFFFFFFull;
  m.split = "test";
  m.sharp = "x_t01/sharp.pgm";
  m.events_noisy = "x_t01/events_noisy.evt";
  m.num_events_clean = 12;
  m.num_events_noisy = 40;
  const auto back = SampleManifest::from_json(m.to_json());
  EXPECT_EQ(back.to_json(), m.to_json());
  EXPECT_EQ(back.seed, m.seed);
  EXPECT_ANY_THROW(SampleManifest::from_json("{not json"));
}

// ---- synthesis ------------------------------------------------------------------------------

TEST(Synthesis, StaticSceneProducesNoMotionArtifacts) {
  PipelineConfig c = small_config();
  c.blur.velocity_sigma = 0.0;
  c.blur.noise_sigma = 0.0;
  c.noise.rate = 0.0;
  const auto s = small_scenes();
  const auto d = synthesize_sample(s[0], c, 0);
  EXPECT_EQ(d.blurry, d.sharp);
  EXPECT_TRUE(d.events_clean.empty());
  EXPECT_TRUE(d.events_noisy.empty());
  for (float v : d.voxel_clean.data()) EXPECT_EQ(v, 0.0f);
  EXPECT_EQ(d.sharp.width(), 32);
  EXPECT_EQ(d.voxel_clean.bins(), c.bins);
}

TEST(Synthesis, MovingSceneIsConsistentAcrossStages) {
  const PipelineConfig c = small_config();
  const auto s = small_scenes();
  const auto d = synthesize_sample(s[1], c, 2);
  EXPECT_FALSE(d.events_clean.empty());
  EXPECT_GE(d.events_noisy.size(), d.events_clean.size());
  EXPECT_EQ(d.events_clean.t_end(), std::uint64_t(c.blur.n_latent - 1) * c.events.frame_interval);
  double sum = 0.0, pol = 0.0;
  for (float v : d.voxel_clean.data()) sum += v;
  for (const auto& e : d.events_clean.events()) pol += e.p;
  EXPECT_NEAR(sum, pol, 1e-3);
  // Same inputs, same sample.
  const auto again = synthesize_sample(s[1], c, 2);
  EXPECT_EQ(again.events_noisy, d.events_noisy);
  EXPECT_EQ(again.blurry, d.blurry);
}

TEST(Synthesis, RunIsIndependentOfWorkerCount) {
  const auto scenes = small_scenes();
  const auto c = small_config();
  TempDir a("synth_a"), b("synth_b");
  const auto ra = run_synth(scenes, c, a.path, 1);
  const auto rb = run_synth(scenes, c, b.path, 4);
  EXPECT_TRUE(ra.failures.empty());
  ASSERT_EQ(ra.samples.size(), 6u);
  EXPECT_EQ(ra.samples.front().id, "a_t00");
  EXPECT_EQ(read_tree(a.path), read_tree(b.path));

  const auto m = read_manifest(a.path / "manifest.jsonl");
  ASSERT_EQ(m.size(), 6u);
  for (const auto& s : m) {
    EXPECT_TRUE(fs::exists(a.path / s.voxel_noisy));
    EXPECT_EQ(io::read_events(a.path / s.events_clean).size(), s.num_events_clean);
  }
}

TEST(Eval, PerfectAndMissingPredictions) {
  const auto scenes = small_scenes();
  auto c = small_config();
  c.trajectories = 2;
  TempDir data("eval_data"), pred("eval_pred");
  const auto r = run_synth(scenes, c, data.path, 1);
  ASSERT_EQ(r.samples.size(), 4u);
  for (std::size_t i = 0; i + 1 < r.samples.size(); ++i) {
    const auto& s = r.samples[i];
    fs::copy_file(data.path / s.sharp, pred.path / (s.id + ".pgm"));
    fs::copy_file(data.path / s.voxel_clean, pred.path / (s.id + ".vox"));
  }
  const auto rep = run_eval(r.samples, data.path, pred.path);
  EXPECT_EQ(rep.present, 3u);
  EXPECT_EQ(rep.mean_psnr, kPsnrIdentical);
  EXPECT_EQ(rep.mean_ssim, 1.0);
  EXPECT_EQ(rep.mean_rmse, 0.0);
  std::ostringstream csv;
  rep.write_csv(csv);
  const std::string text = csv.str();
  EXPECT_EQ(text.rfind("sample_id,psnr,ssim,rmse\n", 0), 0u);
  EXPECT_NE(text.find(",absent,absent,absent"), std::string::npos);
  EXPECT_NE(text.find("# mean over 3 of 4 samples: psnr=inf"), std::string::npos);

  // Same run through the command line: a missing prediction is a data error.
  const std::string manifest = (data.path / "manifest.jsonl").string();
  EXPECT_EQ(cli({"metrics", "--manifest", manifest, "--predictions", pred.path.string()}), kExitData);
  const auto& last = r.samples.back();
  fs::copy_file(data.path / last.sharp, pred.path / (last.id + ".pgm"));
  fs::copy_file(data.path / last.voxel_clean, pred.path / (last.id + ".vox"));
  EXPECT_EQ(cli({"metrics", "--manifest", manifest, "--predictions", pred.path.string()}), kExitOk);
  EXPECT_EQ(cli({"metrics", "--manifest", manifest, "--predictions", pred.path.string(), "--max-rmse", "-1"}),
            kExitCheckFailed);
}

// ---- command line ----------------------------------------------------------------------------

TEST(Cli, UsageErrorsExitWithOne) {
  EXPECT_EQ(cli({}), kExitUsage);
  EXPECT_EQ(cli({"no-such-command"}), kExitUsage);
  EXPECT_EQ(cli({"synth"}), kExitUsage);
  EXPECT_EQ(cli({"params-count", "--channels", "1,2"}), kExitUsage);
  TempDir d("cli_cfg");
  std::ofstream(d.path / "bad.ini") << "[crop]\nwidht = 3\n";
  EXPECT_EQ(cli({"--config", (d.path / "bad.ini").string(), "print-config"}), kExitUsage);
}

TEST(Cli, DataErrorsExitWithTwo) {
  EXPECT_EQ(cli({"metrics", "--manifest", "/nonexistent/manifest.jsonl", "--predictions", "/nonexistent"}),
            kExitData);
  EXPECT_EQ(cli({"voxelize", "--events", "/nonexistent.evt", "--out", "/tmp/x.vox"}), kExitData);
}

TEST(Cli, ParamsCountAndPrintConfig) {
  std::string out;
  EXPECT_EQ(cli({"params-count"}, &out), kExitOk);
  EXPECT_EQ(out, std::to_string(mdednet_parameter_count(MDEDNetConfig{})) + "\n");
  EXPECT_EQ(cli({"--seed", "42", "print-config"}, &out), kExitOk);
  PipelineConfig c;
  std::istringstream in(out);
  parse_config(in, c);
  EXPECT_EQ(c.seed, 42u);
}

TEST(Cli, GradCheckPassesOnOneInstance) {
  std::string out;
  EXPECT_EQ(cli({"grad-check", "--instances", "1"}, &out), kExitOk);
  EXPECT_NE(out.find("grad-check passed"), std::string::npos);
  // An impossible tolerance turns the same run into a check failure.
  EXPECT_EQ(cli({"grad-check", "--instances", "1", "--tolerance", "0"}), kExitCheckFailed);
}

TEST(Cli, ForwardAndVoxelizeRoundTrip) {
  TempDir d("cli_fwd");
  std::mt19937_64 rng(3);
  io::write_pgm(oracle::random_frame(16, 16, rng), d.path / "b.pgm");
  const auto s = oracle::random_stream(16, 16, 0, 1000, 200, rng);
  io::write_events(s, d.path / "e.evt");
  const std::string vox = (d.path / "e.vox").string();
  ASSERT_EQ(cli({"voxelize", "--events", (d.path / "e.evt").string(), "--bins", "5", "--out", vox}), kExitOk);
  EXPECT_EQ(io::read_voxel(fs::path(vox)).bins(), 5);
  ASSERT_EQ(cli({"forward", "--blurry", (d.path / "b.pgm").string(), "--voxels", vox, "--channels", "4,8,8", "--dim",
                 "4", "--save-params", (d.path / "p.prm").string(), "--out-voxels", (d.path / "o.vox").string(),
                 "--out", (d.path / "o.pgm").string()}),
            kExitOk);
  const auto first = io::read_file(d.path / "o.vox");
  ASSERT_EQ(cli({"forward", "--blurry", (d.path / "b.pgm").string(), "--voxels", vox, "--channels", "4,8,8", "--dim",
                 "4", "--params", (d.path / "p.prm").string(), "--out-voxels", (d.path / "o2.vox").string(), "--out",
                 (d.path / "o2.pgm").string()}),
            kExitOk);
  EXPECT_EQ(io::read_file(d.path / "o2.vox"), first);
}
