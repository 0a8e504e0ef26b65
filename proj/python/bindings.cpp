#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "nirev/blur.hpp"
#include "nirev/calibrate.hpp"
#include "nirev/consistency.hpp"
#include "nirev/events.hpp"
#include "nirev/fusion.hpp"
#include "nirev/mdednet.hpp"
#include "nirev/metrics.hpp"
#include "nirev/pipeline.hpp"
#include "nirev/rng.hpp"
#include "nirev/voxel.hpp"

namespace py = pybind11;
using namespace nirev;

namespace {

using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;
using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;

Frame to_frame(const F64& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array (height, width)");
  const double* p = a.data();
  return Frame(int(a.shape(1)), int(a.shape(0)), std::vector<double>(p, p + a.size()));
}

py::array_t<double> from_frame(const Frame& f) {
  py::array_t<double> out({f.height(), f.width()});
  std::copy(f.data().begin(), f.data().end(), out.mutable_data());
  return out;
}

VoxelGrid to_grid(const F32& a) {
  if (a.ndim() != 3) throw ShapeError("expected a 3-D array (bins, height, width)");
  const float* p = a.data();
  return VoxelGrid(int(a.shape(0)), int(a.shape(1)), int(a.shape(2)), std::vector<float>(p, p + a.size()));
}

py::array_t<float> from_grid(const VoxelGrid& g) {
  py::array_t<float> out({g.bins(), g.height(), g.width()});
  std::copy(g.data().begin(), g.data().end(), out.mutable_data());
  return out;
}

py::dict from_stream(const EventStream& s) {
  const auto n = py::ssize_t(s.size());
  py::array_t<std::uint64_t> t(n);
  py::array_t<std::uint16_t> x(n), y(n);
  py::array_t<std::int8_t> p(n);
  for (py::ssize_t i = 0; i < n; ++i) {
    const Event& e = s.events()[std::size_t(i)];
    t.mutable_data()[i] = e.t;
    x.mutable_data()[i] = e.x;
    y.mutable_data()[i] = e.y;
    p.mutable_data()[i] = e.p;
  }
  py::dict d;
  d["t"] = t;
  d["x"] = x;
  d["y"] = y;
  d["p"] = p;
  d["width"] = s.width();
  d["height"] = s.height();
  d["t_start"] = s.t_start();
  d["t_end"] = s.t_end();
  return d;
}

EventStream to_stream(const py::dict& d) {
  auto t = d["t"].cast<py::array_t<std::uint64_t, py::array::c_style | py::array::forcecast>>();
  auto x = d["x"].cast<py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>>();
  auto y = d["y"].cast<py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>>();
  auto p = d["p"].cast<py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>>();
  const auto n = t.size();
  if (x.size() != n || y.size() != n || p.size() != n) throw ShapeError("event arrays differ in length");
  const int width = d["width"].cast<int>(), height = d["height"].cast<int>();
  std::vector<Event> ev(static_cast<std::size_t>(n));
  for (py::ssize_t i = 0; i < n; ++i) {
    if (x.data()[i] < 0 || x.data()[i] >= width || y.data()[i] < 0 || y.data()[i] >= height) {
      throw InvariantError("event coordinate out of bounds");
    }
    if (p.data()[i] != 1 && p.data()[i] != -1) throw InvariantError("event polarity must be +1 or -1");
    ev[std::size_t(i)] = {t.data()[i], std::uint16_t(x.data()[i]), std::uint16_t(y.data()[i]),
                          std::int8_t(p.data()[i])};
  }
  return EventStream::normalized(width, height, d["t_start"].cast<std::uint64_t>(), d["t_end"].cast<std::uint64_t>(),
                                 std::move(ev));
}

}  // namespace

PYBIND11_MODULE(_nirev, m) {
  m.doc() = "NIR motion deblurring and event denoising toolkit";

  py::register_exception<InvariantError>(m, "InvariantError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def("derive_seed", &derive_seed, py::arg("seed"), py::arg("index"));

  m.def(
      "gen_trajectory",
      [](std::uint64_t seed, int n_latent, double max_displacement, double velocity_sigma, double damping) {
        BlurConfig c;
        c.seed = seed;
        c.n_latent = n_latent;
        c.max_displacement = max_displacement;
        c.velocity_sigma = velocity_sigma;
        c.damping = damping;
        const auto t = gen_trajectory(c);
        py::array_t<double> out({py::ssize_t(t.size()), py::ssize_t(2)});
        for (std::size_t i = 0; i < t.size(); ++i) {
          out.mutable_at(i, 0) = t.samples()[i].dx;
          out.mutable_at(i, 1) = t.samples()[i].dy;
        }
        return out;
      },
      py::arg("seed"), py::arg("n_latent") = 16, py::arg("max_displacement") = 8.0, py::arg("velocity_sigma") = 0.5,
      py::arg("damping") = 0.9);

  m.def(
      "average_blur",
      [](const std::vector<F64>& frames) {
        std::vector<Frame> fs;
        for (const auto& f : frames) fs.push_back(to_frame(f));
        return from_frame(average_blur(fs));
      },
      py::arg("frames"));

  m.def(
      "simulate_events",
      [](const std::vector<F64>& frames, double contrast_threshold, std::uint64_t frame_interval) {
        std::vector<Frame> fs;
        for (const auto& f : frames) fs.push_back(to_frame(f));
        EventSimConfig c;
        c.contrast_threshold = contrast_threshold;
        c.frame_interval = frame_interval;
        return from_stream(simulate_events(fs, c));
      },
      py::arg("frames"), py::arg("contrast_threshold") = 0.15, py::arg("frame_interval") = 1000);

  m.def(
      "voxelize", [](const py::dict& events, int bins) { return from_grid(voxelize(to_stream(events), bins)); },
      py::arg("events"), py::arg("bins") = kDefaultVoxelBins);

  m.def(
      "sobel_edges",
      [](const F64& frame, double threshold) {
        const EdgeMap e = sobel_edges(to_frame(frame), threshold);
        py::array_t<std::uint8_t> out({e.height(), e.width()});
        std::copy(e.data().begin(), e.data().end(), out.mutable_data());
        return out;
      },
      py::arg("frame"), py::arg("threshold") = kDefaultEdgeThreshold);

  m.def(
      "structural_consistency",
      [](const F64& visible, const F64& nir, double threshold) {
        const auto c = structural_consistency(sobel_edges(to_frame(visible), threshold),
                                              sobel_edges(to_frame(nir), threshold));
        return from_frame(c.to_frame());
      },
      py::arg("visible"), py::arg("nir"), py::arg("threshold") = kDefaultEdgeThreshold);

  m.def(
      "cross_attention",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& q,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& k,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& v) {
        if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2) throw ShapeError("expected 2-D token matrices");
        const int n = int(q.shape(0)), mm = int(k.shape(0)), d = int(q.shape(1));
        const auto out = cross_attention<double>({q.data(), std::size_t(q.size())}, {k.data(), std::size_t(k.size())},
                                                 {v.data(), std::size_t(v.size())}, n, mm, d);
        py::array_t<double> r({n, d});
        std::copy(out.begin(), out.end(), r.mutable_data());
        return r;
      },
      py::arg("q"), py::arg("k"), py::arg("v"));

  m.def(
      "psnr", [](const F64& a, const F64& b, double peak) { return psnr(to_frame(a), to_frame(b), peak); },
      py::arg("pred"), py::arg("truth"), py::arg("peak") = 1.0);
  m.def("ssim", [](const F64& a, const F64& b) { return ssim(to_frame(a), to_frame(b)); }, py::arg("pred"),
        py::arg("truth"));
  m.def("l_md", [](const F64& a, const F64& b) { return l_md(to_frame(a), to_frame(b)); }, py::arg("pred"),
        py::arg("truth"));
  m.def("l_ed", [](const F32& a, const F32& b) { return l_ed(to_grid(a), to_grid(b)); }, py::arg("pred"),
        py::arg("truth"));
  m.def("rmse_voxel", [](const F32& a, const F32& b) { return rmse_voxel(to_grid(a), to_grid(b)); },
        py::arg("pred"), py::arg("truth"));
  m.def(
      "l_total",
      [](double md, double ed, double sc, double l1, double l2, double l3) {
        return l_total(md, ed, sc, LossWeights{l1, l2, l3});
      },
      py::arg("md"), py::arg("ed"), py::arg("sc"), py::arg("lambda1") = 1.0, py::arg("lambda2") = 1.0,
      py::arg("lambda3") = 0.1);

  m.def(
      "estimate_homography",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pairs) {
        if (pairs.ndim() != 2 || pairs.shape(1) != 4) throw ShapeError("expected an (N, 4) array of x, y, x', y'");
        std::vector<Correspondence> c;
        for (py::ssize_t i = 0; i < pairs.shape(0); ++i) {
          c.push_back({pairs.at(i, 0), pairs.at(i, 1), pairs.at(i, 2), pairs.at(i, 3)});
        }
        const Homography h = estimate_homography(c);
        py::array_t<double> out({3, 3});
        std::copy(h.matrix().begin(), h.matrix().end(), out.mutable_data());
        return out;
      },
      py::arg("pairs"));

  m.def(
      "grad_check",
      [](std::uint64_t seed) {
        const auto r = check_fusion_gradients(seed);
        py::dict d;
        d["checked"] = r.checked;
        d["max_rel_error"] = r.max_rel_error;
        d["tolerance"] = r.tolerance;
        d["passed"] = r.passed();
        return d;
      },
      py::arg("seed"));

  m.def(
      "params_count",
      [](std::array<int, 3> channels, int bins, int dim) {
        return mdednet_parameter_count(MDEDNetConfig{channels, bins, dim});
      },
      py::arg("channels") = std::array<int, 3>{32, 64, 128}, py::arg("bins") = 13, py::arg("dim") = 128);

  m.def(
      "mdednet_forward",
      [](const F64& blurry, const F32& voxels, std::uint64_t seed, std::array<int, 3> channels, int dim) {
        const VoxelGrid g = to_grid(voxels);
        const auto p = MDEDNetParams::random(MDEDNetConfig{channels, g.bins(), dim}, seed);
        const auto r = mdednet_forward(to_frame(blurry), g, p);
        return py::make_tuple(from_frame(r.sharp), from_grid(r.clean_voxels));
      },
      py::arg("blurry"), py::arg("voxels"), py::arg("seed") = 0,
      py::arg("channels") = std::array<int, 3>{32, 64, 128}, py::arg("dim") = 128);

  m.def(
      "synth",
      [](const std::filesystem::path& scenes, const std::filesystem::path& out, std::uint64_t seed, int jobs,
         int trajectories) {
        PipelineConfig cfg;
        cfg.seed = seed;
        cfg.trajectories = trajectories;
        py::gil_scoped_release release;
        const auto r = run_synth(load_scenes(scenes), cfg, out, jobs);
        std::vector<std::string> ids;
        for (const auto& s : r.samples) ids.push_back(s.id);
        return std::make_pair(ids, r.failures);
      },
      py::arg("scenes"), py::arg("out"), py::arg("seed") = 0, py::arg("jobs") = 1, py::arg("trajectories") = 20);

  m.def("default_config", [] { return format_config(PipelineConfig{}); });
}
