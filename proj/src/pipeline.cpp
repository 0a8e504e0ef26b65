#include "nirev/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "nirev/io.hpp"
#include "nirev/rng.hpp"
#include "nirev/voxel.hpp"

namespace nirev {

namespace fs = std::filesystem;
using json = nlohmann::json;

void PipelineConfig::validate() const {
  if (crop_width < 1 || crop_height < 1) throw ConfigError("crop dimensions must be positive");
  if (trajectories < 1) throw ConfigError("trajectories must be >= 1");
  if (bins < 1) throw ConfigError("voxel bins must be >= 1");
  if (!(edge_threshold >= 0.0)) throw ConfigError("edge threshold must be >= 0");
  if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) throw ConfigError("test_fraction must be in [0,1]");
  try {
    blur.validate();
    events.validate();
    noise.validate();
    weights.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

// ---- config file -------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto r = std::from_chars(text.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end) throw ConfigError("invalid value for " + key + ": '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("invalid boolean for " + key + ": '" + text + "'");
}

struct Field {
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

template <typename T>
Field number_field(const std::string& key, T& ref) {
  return {[key, &ref](const std::string& v) { ref = parse_number<T>(key, v); },
          [&ref] {
            if constexpr (std::is_floating_point_v<T>) {
              return fmt_double(ref);
            } else {
              return std::to_string(ref);
            }
          }};
}

// Ordered list of (section.key, field) bound to `cfg`.
std::vector<std::pair<std::string, Field>> fields(PipelineConfig& cfg) {
  std::vector<std::pair<std::string, Field>> f;
  auto num = [&](const std::string& key, auto& ref) { f.emplace_back(key, number_field(key, ref)); };
  num("pipeline.seed", cfg.seed);
  num("pipeline.trajectories", cfg.trajectories);
  num("pipeline.test_fraction", cfg.test_fraction);
  num("crop.width", cfg.crop_width);
  num("crop.height", cfg.crop_height);
  num("blur.n_latent", cfg.blur.n_latent);
  num("blur.max_displacement", cfg.blur.max_displacement);
  num("blur.velocity_sigma", cfg.blur.velocity_sigma);
  num("blur.damping", cfg.blur.damping);
  num("blur.noise_sigma", cfg.blur.noise_sigma);
  num("events.contrast_threshold", cfg.events.contrast_threshold);
  num("events.log_eps", cfg.events.log_eps);
  num("events.refractory", cfg.events.refractory);
  num("events.frame_interval", cfg.events.frame_interval);
  num("noise.rate", cfg.noise.rate);
  num("noise.polarity_balance", cfg.noise.polarity_balance);
  num("consistency.threshold", cfg.edge_threshold);
  f.emplace_back("consistency.otsu",
                 Field{[&cfg](const std::string& v) { cfg.edge_otsu = parse_bool("consistency.otsu", v); },
                       [&cfg] { return std::string(cfg.edge_otsu ? "true" : "false"); }});
  num("voxel.bins", cfg.bins);
  num("loss.lambda1", cfg.weights.lambda1);
  num("loss.lambda2", cfg.weights.lambda2);
  num("loss.lambda3", cfg.weights.lambda3);
  return f;
}

}  // namespace

void parse_config(std::istream& in, PipelineConfig& cfg) {
  auto table = fields(cfg);
  std::map<std::string, Field*> by_key;
  for (auto& [k, f] : table) by_key[k] = &f;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string full = section.empty() ? key : section + "." + key;
    auto it = by_key.find(full);
    if (it == by_key.end()) throw ConfigError(where + "unknown key '" + full + "'");
    try {
      it->second->set(trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  cfg.validate();
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  PipelineConfig cfg;
  parse_config(in, cfg);
  return cfg;
}

std::string format_config(const PipelineConfig& cfg) {
  PipelineConfig copy = cfg;
  std::ostringstream out;
  std::string section;
  for (auto& [key, f] : fields(copy)) {
    const auto dot = key.find('.');
    const std::string s = key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) out << '\n';
      out << '[' << s << "]\n";
      section = s;
    }
    out << key.substr(dot + 1) << " = " << f.get() << '\n';
  }
  return out.str();
}

// ---- scenes and seeds ----------------------------------------------------------

std::vector<Scene> load_scenes(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError("scene directory not found: " + dir.string());
  const std::string suffix = "_vis.pgm";
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string f = entry.path().filename().string();
    if (f.size() > suffix.size() && f.compare(f.size() - suffix.size(), suffix.size(), suffix) == 0) {
      names.push_back(f.substr(0, f.size() - suffix.size()));
    }
  }
  std::sort(names.begin(), names.end());
  std::vector<Scene> scenes;
  for (const auto& n : names) {
    const fs::path nir = dir / (n + "_nir.pgm");
    if (!fs::exists(nir)) throw FormatError("scene '" + n + "' has no matching " + nir.filename().string());
    Scene s{n, io::read_pgm(dir / (n + suffix)), io::read_pgm(nir)};
    if (!s.visible.same_shape(s.nir)) throw FormatError("scene '" + n + "': visible and NIR sizes differ");
    scenes.push_back(std::move(s));
  }
  return scenes;
}

std::uint64_t scene_seed(std::uint64_t master, const std::string& scene) {
  return derive_seed(master, fnv1a64(scene));
}

std::uint64_t sample_seed(std::uint64_t master, const std::string& scene, int trajectory) {
  return derive_seed(scene_seed(master, scene), std::uint64_t(trajectory) + 1);
}

std::string sample_id(const std::string& scene, int trajectory) {
  std::string n = std::to_string(trajectory);
  if (n.size() < 2) n.insert(0, 2 - n.size(), '0');
  return scene + "_t" + n;
}

std::string scene_split(const std::string& scene, double test_fraction) {
  const double u = double(splitmix64(fnv1a64(scene)) >> 11) * 0x1.0p-53;
  return u < test_fraction ? "test" : "train";
}

Frame crop(const Frame& f, int x0, int y0, int width, int height) {
  if (x0 < 0 || y0 < 0 || width < 1 || height < 1 || x0 + width > f.width() || y0 + height > f.height()) {
    throw ShapeError("crop: window does not fit the source frame");
  }
  std::vector<double> out(std::size_t(width) * height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) out[std::size_t(y) * width + x] = f.at(x0 + x, y0 + y);
  }
  return Frame(width, height, std::move(out));
}

// ---- manifest ------------------------------------------------------------------

std::string SampleManifest::to_json() const {
  json j = {{"id", id},
            {"scene", scene},
            {"trajectory", trajectory},
            {"seed", seed},
            {"split", split},
            {"sharp", sharp},
            {"blurry", blurry},
            {"consistency", consistency},
            {"events_clean", events_clean},
            {"events_noisy", events_noisy},
            {"voxel_clean", voxel_clean},
            {"voxel_noisy", voxel_noisy},
            {"num_events_clean", num_events_clean},
            {"num_events_noisy", num_events_noisy}};
  return j.dump();
}

SampleManifest SampleManifest::from_json(const std::string& line) {
  try {
    const json j = json::parse(line);
    SampleManifest m;
    m.id = j.at("id").get<std::string>();
    m.scene = j.at("scene").get<std::string>();
    m.trajectory = j.at("trajectory").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.split = j.at("split").get<std::string>();
    m.sharp = j.at("sharp").get<std::string>();
    m.blurry = j.at("blurry").get<std::string>();
    m.consistency = j.at("consistency").get<std::string>();
    m.events_clean = j.at("events_clean").get<std::string>();
    m.events_noisy = j.at("events_noisy").get<std::string>();
    m.voxel_clean = j.at("voxel_clean").get<std::string>();
    m.voxel_noisy = j.at("voxel_noisy").get<std::string>();
    m.num_events_clean = j.at("num_events_clean").get<std::size_t>();
    m.num_events_noisy = j.at("num_events_noisy").get<std::size_t>();
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest record: ") + e.what());
  }
}

std::vector<SampleManifest> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path.string());
  std::vector<SampleManifest> out;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    out.push_back(SampleManifest::from_json(line));
  }
  return out;
}

void write_manifest(const std::vector<SampleManifest>& samples, const fs::path& path) {
  std::string text;
  for (const auto& s : samples) text += s.to_json() + '\n';
  io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ---- generation -------------------------------------------------------------------

namespace {

// Error raised inside a named stage of sample generation.
struct StageError : std::runtime_error {
  StageError(const std::string& stage, const std::string& what) : std::runtime_error(stage + ": " + what) {}
};

template <typename Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace

SampleData synthesize_sample(const Scene& scene, const PipelineConfig& cfg, int trajectory) {
  cfg.validate();
  if (scene.visible.width() < cfg.crop_width || scene.visible.height() < cfg.crop_height) {
    throw StageError("crop", "scene '" + scene.name + "' is smaller than the crop");
  }
  const std::uint64_t s_seed = scene_seed(cfg.seed, scene.name);
  const std::uint64_t seed = sample_seed(cfg.seed, scene.name, trajectory);

  // One crop window per scene, shared by all of its trajectories.
  std::mt19937_64 crop_rng(derive_seed(s_seed, 0));
  std::uniform_int_distribution<int> ux(0, scene.visible.width() - cfg.crop_width);
  std::uniform_int_distribution<int> uy(0, scene.visible.height() - cfg.crop_height);
  const int x0 = ux(crop_rng), y0 = uy(crop_rng);

  SampleData d;
  const Frame vis = stage("crop", [&] { return crop(scene.visible, x0, y0, cfg.crop_width, cfg.crop_height); });
  d.sharp = stage("crop", [&] { return crop(scene.nir, x0, y0, cfg.crop_width, cfg.crop_height); });

  d.consistency = stage("consistency", [&] {
    auto edges = [&](const Frame& f) {
      return cfg.edge_otsu ? sobel_edges_otsu(f) : sobel_edges(f, cfg.edge_threshold);
    };
    return structural_consistency(edges(vis), edges(d.sharp));
  });

  BlurConfig blur = cfg.blur;
  blur.seed = derive_seed(seed, 0);
  const Trajectory traj = stage("trajectory", [&] { return gen_trajectory(blur); });
  const auto vis_seq = stage("render", [&] { return render_sequence(vis, traj); });
  const auto nir_seq = stage("render", [&] { return render_sequence(d.sharp, traj); });

  d.events_clean = stage("events", [&] { return simulate_events(vis_seq, cfg.events); });
  const Frame averaged = stage("blur", [&] { return average_blur(nir_seq); });

  NoiseConfig noise = cfg.noise;
  noise.seed = derive_seed(seed, 1);
  d.events_noisy = stage("event-noise", [&] { return inject_noise(d.events_clean, noise); });
  d.blurry = stage("frame-noise", [&] { return add_frame_noise(averaged, cfg.blur.noise_sigma, derive_seed(seed, 2)); });

  d.voxel_clean = stage("voxelize", [&] { return voxelize(d.events_clean, cfg.bins); });
  d.voxel_noisy = stage("voxelize", [&] { return voxelize(d.events_noisy, cfg.bins); });
  return d;
}

SampleManifest generate_sample(const Scene& scene, const PipelineConfig& cfg, int trajectory, const fs::path& out) {
  const SampleData d = synthesize_sample(scene, cfg, trajectory);
  SampleManifest m;
  m.id = sample_id(scene.name, trajectory);
  m.scene = scene.name;
  m.trajectory = trajectory;
  m.seed = sample_seed(cfg.seed, scene.name, trajectory);
  m.split = scene_split(scene.name, cfg.test_fraction);
  m.sharp = m.id + "/sharp.pgm";
  m.blurry = m.id + "/blurry.pgm";
  m.consistency = m.id + "/consistency.pgm";
  m.events_clean = m.id + "/events_clean.evt";
  m.events_noisy = m.id + "/events_noisy.evt";
  m.voxel_clean = m.id + "/voxel_clean.vox";
  m.voxel_noisy = m.id + "/voxel_noisy.vox";
  m.num_events_clean = d.events_clean.size();
  m.num_events_noisy = d.events_noisy.size();

  stage("write", [&] {
    fs::create_directories(out / m.id);
    io::write_pgm(d.sharp, out / m.sharp, 16);
    io::write_pgm(d.blurry, out / m.blurry, 16);
    io::write_pgm(d.consistency.to_frame(), out / m.consistency, 8);
    io::write_events(d.events_clean, out / m.events_clean);
    io::write_events(d.events_noisy, out / m.events_noisy);
    io::write_voxel(d.voxel_clean, out / m.voxel_clean);
    io::write_voxel(d.voxel_noisy, out / m.voxel_noisy);
  });

  stage("verify", [&] {
    const int W = cfg.crop_width, H = cfg.crop_height;
    for (const auto& p : {m.sharp, m.blurry, m.consistency}) {
      const Frame f = io::read_pgm(out / p);
      if (f.width() != W || f.height() != H) throw FormatError(p + ": unexpected dimensions");
    }
    if (io::read_events(out / m.events_clean) != d.events_clean) throw FormatError("clean events do not round-trip");
    if (io::read_events(out / m.events_noisy) != d.events_noisy) throw FormatError("noisy events do not round-trip");
    if (io::read_voxel(out / m.voxel_clean) != d.voxel_clean) throw FormatError("clean voxels do not round-trip");
    if (io::read_voxel(out / m.voxel_noisy) != d.voxel_noisy) throw FormatError("noisy voxels do not round-trip");
  });
  return m;
}

SynthReport run_synth(const std::vector<Scene>& scenes, const PipelineConfig& cfg, const fs::path& out, int jobs) {
  cfg.validate();
  struct Task {
    const Scene* scene;
    int trajectory;
  };
  std::vector<Task> tasks;
  for (const auto& s : scenes) {
    for (int k = 0; k < cfg.trajectories; ++k) tasks.push_back({&s, k});
  }
  std::vector<std::optional<SampleManifest>> done(tasks.size());
  std::vector<std::string> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  fs::create_directories(out);

  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      const Task& t = tasks[i];
      try {
        done[i] = generate_sample(*t.scene, cfg, t.trajectory, out);
      } catch (const std::exception& e) {
        errors[i] = sample_id(t.scene->name, t.trajectory) + ": " + e.what();
      }
    }
  };
  jobs = std::clamp(jobs, 1, std::max<int>(1, int(tasks.size())));
  std::vector<std::thread> pool;
  for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  SynthReport r;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (done[i]) r.samples.push_back(std::move(*done[i]));
    if (!errors[i].empty()) r.failures.push_back(errors[i]);
  }
  std::sort(r.samples.begin(), r.samples.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  std::sort(r.failures.begin(), r.failures.end());
  write_manifest(r.samples, out / "manifest.jsonl");
  return r;
}

// ---- evaluation -------------------------------------------------------------------

EvalReport run_eval(const std::vector<SampleManifest>& samples, const fs::path& root, const fs::path& predictions) {
  EvalReport r;
  for (const auto& s : samples) {
    EvalRow row;
    row.id = s.id;
    const fs::path img = predictions / (s.id + ".pgm");
    const fs::path vox = predictions / (s.id + ".vox");
    if (fs::exists(img) && fs::exists(vox)) {
      const Frame pred = io::read_pgm(img);
      const Frame truth = io::read_pgm(root / s.sharp);
      row.psnr = psnr(pred, truth);
      row.ssim = ssim(pred, truth);
      row.rmse = rmse_voxel(io::read_voxel(vox), io::read_voxel(root / s.voxel_clean));
      row.present = true;
      ++r.present;
      r.mean_psnr += row.psnr;
      r.mean_ssim += row.ssim;
      r.mean_rmse += row.rmse;
    }
    r.rows.push_back(std::move(row));
  }
  if (r.present > 0) {
    r.mean_psnr /= double(r.present);
    r.mean_ssim /= double(r.present);
    r.mean_rmse /= double(r.present);
  }
  return r;
}

void EvalReport::write_csv(std::ostream& out) const {
  auto num = [](double v) { return std::isinf(v) ? std::string(v > 0 ? "inf" : "-inf") : fmt_double(v); };
  out << "sample_id,psnr,ssim,rmse\n";
  for (const auto& row : rows) {
    if (row.present) {
      out << row.id << ',' << num(row.psnr) << ',' << num(row.ssim) << ',' << num(row.rmse) << '\n';
    } else {
      out << row.id << ",absent,absent,absent\n";
    }
  }
  if (!rows.empty()) {
    out << "# mean over " << present << " of " << rows.size() << " samples: psnr=" << num(mean_psnr)
        << " ssim=" << num(mean_ssim) << " rmse=" << num(mean_rmse) << '\n';
  }
}

}  // namespace nirev
