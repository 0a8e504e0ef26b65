#include "cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "nirev/calibrate.hpp"
#include "nirev/io.hpp"
#include "nirev/mdednet.hpp"
#include "nirev/pipeline.hpp"
#include "nirev/rng.hpp"
#include "nirev/voxel.hpp"

namespace nirev {

namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::string out;
};

PipelineConfig resolve_config(const Globals& g) {
  PipelineConfig cfg = g.config.empty() ? PipelineConfig{} : load_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

std::string require_out(const Globals& g, const char* cmd) {
  if (g.out.empty()) throw ConfigError(std::string(cmd) + ": --out is required");
  return g.out;
}

EventStream load_events(const std::string& path, int width, int height) {
  if (fs::path(path).extension() == ".csv") {
    if (width < 1 || height < 1) throw ConfigError("CSV events need --width and --height");
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path);
    return io::read_events_csv(in, width, height);
  }
  return io::read_events(fs::path(path));
}

void save_events(const EventStream& s, const std::string& path) {
  if (fs::path(path).extension() == ".csv") {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path);
    io::write_events_csv(s, out);
    return;
  }
  io::write_events(s, fs::path(path));
}

MDEDNetConfig net_config(const std::vector<int>& channels, int bins, int dim) {
  if (channels.size() != 3) throw ConfigError("--channels needs exactly three widths");
  MDEDNetConfig c;
  c.channels = {channels[0], channels[1], channels[2]};
  c.bins = bins;
  c.attention_dim = dim;
  c.validate();
  return c;
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"NIR deblurring and event denoising toolkit", "nirev"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Pipeline config file (key = value sections)");
  app.add_option("--seed", g.seed, "Master seed (overrides the config)");
  app.add_option("--jobs", g.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "Output file or directory");

  std::function<int()> action;

  // synth
  auto* synth = app.add_subcommand("synth", "Generate the synthetic dataset from paired scenes");
  std::string scenes_dir;
  std::optional<int> trajectories;
  synth->add_option("--scenes", scenes_dir, "Directory of <name>_vis.pgm / <name>_nir.pgm pairs")->required();
  synth->add_option("--trajectories", trajectories, "Trajectories per scene (overrides the config)");
  synth->callback([&] {
    action = [&] {
      PipelineConfig cfg = resolve_config(g);
      if (trajectories) cfg.trajectories = *trajectories;
      cfg.validate();
      const std::string dir = require_out(g, "synth");
      const auto scenes = load_scenes(scenes_dir);
      if (scenes.empty()) {
        err << "synth: no scenes found in " << scenes_dir << '\n';
        return int(kExitData);
      }
      const auto report = run_synth(scenes, cfg, dir, g.jobs);
      for (const auto& f : report.failures) err << "synth: " << f << '\n';
      out << "generated " << report.samples.size() << " samples from " << scenes.size() << " scenes into " << dir
          << '\n';
      return report.failures.empty() ? int(kExitOk) : int(kExitData);
    };
  });

  // simulate-events
  auto* sim = app.add_subcommand("simulate-events", "Convert a frame sequence to an event stream");
  std::vector<std::string> frame_paths;
  bool with_noise = false;
  sim->add_option("--frames", frame_paths, "Ordered PGM frames")->required()->expected(2, -1);
  sim->add_flag("--noise", with_noise, "Add background-activity noise from the config");
  sim->callback([&] {
    action = [&] {
      const PipelineConfig cfg = resolve_config(g);
      const std::string path = require_out(g, "simulate-events");
      std::vector<Frame> frames;
      for (const auto& p : frame_paths) frames.push_back(io::read_pgm(p));
      EventStream s = simulate_events(frames, cfg.events);
      if (with_noise) {
        NoiseConfig n = cfg.noise;
        n.seed = derive_seed(cfg.seed, 1);
        s = inject_noise(s, n);
      }
      save_events(s, path);
      out << s.size() << " events\n";
      return int(kExitOk);
    };
  });

  // voxelize
  auto* vox = app.add_subcommand("voxelize", "Accumulate an event stream into a voxel grid");
  std::string events_path;
  std::optional<int> bins;
  int csv_width = 0, csv_height = 0;
  vox->add_option("--events", events_path, "EVT1 file, or .csv with --width/--height")->required();
  vox->add_option("--bins", bins, "Temporal bins (default from config)");
  vox->add_option("--width", csv_width, "Sensor width for CSV input");
  vox->add_option("--height", csv_height, "Sensor height for CSV input");
  vox->callback([&] {
    action = [&] {
      const PipelineConfig cfg = resolve_config(g);
      const std::string path = require_out(g, "voxelize");
      const auto grid = voxelize(load_events(events_path, csv_width, csv_height), bins.value_or(cfg.bins));
      io::write_voxel(grid, fs::path(path));
      return int(kExitOk);
    };
  });

  // consistency
  auto* cons = app.add_subcommand("consistency", "Structural consistency map of a visible/NIR pair");
  std::string vis_path, nir_path;
  std::optional<double> threshold;
  bool otsu = false;
  cons->add_option("--visible", vis_path)->required();
  cons->add_option("--nir", nir_path)->required();
  cons->add_option("--threshold", threshold, "Edge threshold (default from config)");
  cons->add_flag("--otsu", otsu, "Pick the edge threshold per image with Otsu's method");
  cons->callback([&] {
    action = [&] {
      const PipelineConfig cfg = resolve_config(g);
      const std::string path = require_out(g, "consistency");
      const Frame v = io::read_pgm(vis_path), n = io::read_pgm(nir_path);
      const bool use_otsu = otsu || cfg.edge_otsu;
      const double t = threshold.value_or(cfg.edge_threshold);
      auto edges = [&](const Frame& f) { return use_otsu ? sobel_edges_otsu(f) : sobel_edges(f, t); };
      io::write_pgm(structural_consistency(edges(v), edges(n)).to_frame(), path, 8);
      return int(kExitOk);
    };
  });

  // metrics
  auto* met = app.add_subcommand("metrics", "Score predictions against a dataset manifest");
  std::string manifest_path, predictions, root;
  std::optional<double> min_psnr, max_rmse;
  met->add_option("--manifest", manifest_path)->required();
  met->add_option("--predictions", predictions, "Directory of <id>.pgm and <id>.vox")->required();
  met->add_option("--root", root, "Directory manifest paths are relative to (default: manifest's directory)");
  met->add_option("--min-psnr", min_psnr, "Fail (exit 3) when mean PSNR is below this");
  met->add_option("--max-rmse", max_rmse, "Fail (exit 3) when mean RMSE is above this");
  met->callback([&] {
    action = [&] {
      const auto samples = read_manifest(manifest_path);
      const fs::path base = root.empty() ? fs::path(manifest_path).parent_path() : fs::path(root);
      const auto report = run_eval(samples, base, predictions);
      if (g.out.empty()) {
        report.write_csv(out);
      } else {
        std::ofstream f(g.out);
        if (!f) throw FormatError("cannot write " + g.out);
        report.write_csv(f);
      }
      if (samples.empty()) {
        err << "metrics: manifest is empty\n";
        return int(kExitData);
      }
      if (report.present != report.rows.size()) {
        err << "metrics: " << report.rows.size() - report.present << " predictions missing\n";
        return int(kExitData);
      }
      if ((min_psnr && report.mean_psnr < *min_psnr) || (max_rmse && report.mean_rmse > *max_rmse)) {
        err << "metrics: below threshold\n";
        return int(kExitCheckFailed);
      }
      return int(kExitOk);
    };
  });

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of the fusion backward pass");
  int instances = 10;
  FusionCheckConfig gcc;
  gc->add_option("--instances", instances)->check(CLI::PositiveNumber);
  gc->add_option("--step", gcc.step);
  gc->add_option("--tolerance", gcc.tolerance);
  gc->callback([&] {
    action = [&] {
      const std::uint64_t base = g.seed.value_or(0);
      bool ok = true;
      for (int i = 0; i < instances; ++i) {
        const std::uint64_t s = derive_seed(base, std::uint64_t(i));
        const auto r = check_fusion_gradients(s, gcc);
        ok = ok && r.passed();
        out << "instance " << i << " seed " << s << " params " << r.checked << " max_rel_error "
            << fmt(r.max_rel_error) << (r.passed() ? " ok" : " FAIL") << '\n';
      }
      out << (ok ? "grad-check passed\n" : "grad-check FAILED\n");
      return ok ? int(kExitOk) : int(kExitCheckFailed);
    };
  });

  // forward
  auto* fwd = app.add_subcommand("forward", "Run the untrained network on a blurry frame and voxel grid");
  std::string blurry_path, voxels_path, params_path, save_params, out_voxels;
  std::vector<int> channels{32, 64, 128};
  int dim = 128;
  fwd->add_option("--blurry", blurry_path)->required();
  fwd->add_option("--voxels", voxels_path)->required();
  fwd->add_option("--params", params_path, "PRM1 parameter file (default: seeded random init)");
  fwd->add_option("--save-params", save_params, "Write the parameters used to this PRM1 file");
  fwd->add_option("--out-voxels", out_voxels, "Predicted clean voxel grid")->required();
  fwd->add_option("--channels", channels, "Three channel widths")->delimiter(',')->expected(3);
  fwd->add_option("--dim", dim, "Attention dimension");
  fwd->callback([&] {
    action = [&] {
      const PipelineConfig cfg = resolve_config(g);
      const std::string path = require_out(g, "forward");
      const Frame blurry = io::read_pgm(blurry_path);
      const VoxelGrid voxels = io::read_voxel(fs::path(voxels_path));
      const auto nc = net_config(channels, voxels.bins(), dim);
      const MDEDNetParams p =
          params_path.empty() ? MDEDNetParams::random(nc, cfg.seed) : MDEDNetParams::from_tensors(nc, io::read_params(params_path));
      if (!save_params.empty()) io::write_params(p.to_tensors(), save_params);
      const auto r = mdednet_forward(blurry, voxels, p);
      io::write_pgm(r.sharp, path, 16);
      io::write_voxel(r.clean_voxels, fs::path(out_voxels));
      return int(kExitOk);
    };
  });

  // params-count
  auto* pc = app.add_subcommand("params-count", "Parameter count of the network channel plan");
  int pc_bins = 13;
  pc->add_option("--channels", channels, "Three channel widths")->delimiter(',')->expected(3);
  pc->add_option("--dim", dim, "Attention dimension");
  pc->add_option("--bins", pc_bins, "Voxel bins");
  pc->callback([&] {
    action = [&] {
      out << mdednet_parameter_count(net_config(channels, pc_bins, dim)) << '\n';
      return int(kExitOk);
    };
  });

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "Estimate a homography and optionally warp data with it");
  std::string pairs_path, warp_frame_in, frame_out, warp_events_in, events_out;
  int warp_w = 0, warp_h = 0;
  cal->add_option("--pairs", pairs_path, "CSV of x,y,x',y' correspondences")->required();
  cal->add_option("--warp-frame", warp_frame_in);
  cal->add_option("--frame-out", frame_out);
  cal->add_option("--warp-events", warp_events_in);
  cal->add_option("--events-out", events_out);
  cal->add_option("--width", warp_w, "Output width (default: input width)");
  cal->add_option("--height", warp_h, "Output height (default: input height)");
  cal->callback([&] {
    action = [&] {
      const auto pairs = read_correspondences(fs::path(pairs_path));
      const Homography h = estimate_homography(pairs);
      if (g.out.empty()) {
        write_homography(h, out);
      } else {
        std::ofstream f(g.out);
        if (!f) throw FormatError("cannot write " + g.out);
        write_homography(h, f);
      }
      if (!warp_frame_in.empty()) {
        if (frame_out.empty()) throw ConfigError("--warp-frame needs --frame-out");
        const Frame f = io::read_pgm(warp_frame_in);
        io::write_pgm(warp_frame(f, h, warp_w > 0 ? warp_w : f.width(), warp_h > 0 ? warp_h : f.height()), frame_out);
      }
      if (!warp_events_in.empty()) {
        if (events_out.empty()) throw ConfigError("--warp-events needs --events-out");
        const EventStream s = io::read_events(fs::path(warp_events_in));
        save_events(warp_events(s, h, warp_w > 0 ? warp_w : s.width(), warp_h > 0 ? warp_h : s.height()), events_out);
      }
      return int(kExitOk);
    };
  });

  // print-config
  auto* pcfg = app.add_subcommand("print-config", "Print the fully resolved configuration");
  pcfg->callback([&] {
    action = [&] {
      out << format_config(resolve_config(g));
      return int(kExitOk);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "nirev: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    return action();
  } catch (const ConfigError& e) {
    err << "nirev: config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "nirev: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace nirev
