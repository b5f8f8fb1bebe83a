#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "vidattack/attack.hpp"
#include "vidattack/data.hpp"
#include "vidattack/harness.hpp"
#include "vidattack/metrics.hpp"
#include "vidattack/models.hpp"
#include "vidattack/vten.hpp"

namespace py = pybind11;
using namespace vidattack;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::dict prediction_dict(const Prediction& p) {
  py::dict d;
  d["frame_probs"] = p.frame_probs;
  d["video_probs"] = p.video_probs;
  d["frame_labels"] = p.frame_labels;
  d["video_label"] = p.video_label;
  return d;
}

py::list clips_list(const std::vector<LabeledVideo>& clips) {
  py::list out;
  for (const auto& c : clips) out.append(py::make_tuple(to_array(c.video), c.label, c.id));
  return out;
}

KeyValueConfig from_dict(const py::dict& d) {
  std::string text;
  for (auto [k, v] : d) text += py::str(k).cast<std::string>() + " = " + py::str(v).cast<std::string>() + "\n";
  return KeyValueConfig::parse(text);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Sparse adversarial perturbations for recurrent video classifiers";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  m.def(
      "generate_dataset",
      [](std::size_t frames, std::size_t width, std::size_t height, std::size_t samples_per_class, double noise_std,
         std::uint64_t seed) {
        SyntheticSpec s;
        s.frames = frames;
        s.width = width;
        s.height = height;
        s.samples_per_class = samples_per_class;
        s.noise_std = noise_std;
        s.seed = seed;
        const Dataset d = generate(s);
        return py::make_tuple(clips_list(d.train), clips_list(d.test));
      },
      py::arg("frames") = 40, py::arg("width") = 16, py::arg("height") = 16, py::arg("samples_per_class") = 48,
      py::arg("noise_std") = 0.02, py::arg("seed") = 1, "Stripe clips as ([(video, label, id)], [...]) train/test.");

  m.def(
      "load_dataset",
      [](const fs::path& dir) {
        const Dataset d = load_dataset(dir);
        return py::make_tuple(clips_list(d.train), clips_list(d.test));
      },
      py::arg("dir"));

  m.def("load_vten", [](const fs::path& p) { return to_array(load_tensor(p)); }, py::arg("path"));
  m.def("save_vten", [](const fs::path& p, const Array& a) { save_tensor(p, to_tensor(a)); }, py::arg("path"),
        py::arg("array"));

  py::class_<ThreatModel>(m, "ThreatModel")
      .def_static(
          "create",
          [](const std::string& head, std::size_t width, std::size_t height, std::size_t channels,
             std::size_t num_classes, std::size_t encoder_dim, std::size_t hidden_dim, std::uint64_t seed) {
            ModelDims d;
            d.width = width;
            d.height = height;
            d.channels = channels;
            d.num_classes = num_classes;
            d.encoder_dim = encoder_dim;
            d.hidden_dim = hidden_dim;
            return ThreatModel::create(parse_head_kind(head), d, seed);
          },
          py::arg("head"), py::arg("width") = 16, py::arg("height") = 16, py::arg("channels") = 1,
          py::arg("num_classes") = 8, py::arg("encoder_dim") = 64, py::arg("hidden_dim") = 64, py::arg("seed") = 11)
      .def_static("load", [](const fs::path& p) { return load_model(p); }, py::arg("path"))
      .def("save", [](const ThreatModel& self, const fs::path& p) { save_model(p, self); }, py::arg("path"))
      .def_property_readonly("head", [](const ThreatModel& self) { return std::string(head_kind_name(self.head_kind())); })
      .def("forward", [](const ThreatModel& self, const Array& v) { return prediction_dict(self.forward(to_tensor(v))); },
           py::arg("video"));

  m.def(
      "attack",
      [](const ThreatModel& model, const std::vector<Array>& videos, const std::vector<std::size_t>& labels,
         const std::string& mode, const std::string& norm, double lambda, std::size_t iters, double lr,
         std::optional<std::size_t> polluted, std::optional<std::size_t> target) {
        AttackConfig c;
        c.mode = parse_attack_mode(mode);
        c.norm = parse_norm(norm);
        c.lambda = lambda;
        c.iters = iters;
        c.adam.lr = lr;
        std::vector<Tensor> clips;
        for (const auto& v : videos) clips.push_back(to_tensor(v));
        if (clips.empty()) throw AttackError("attack: no videos given");
        if (polluted) c.mask = TemporalMask::prefix(clips[0].dim(0), *polluted);
        c.target_label = target;
        AttackResult r;
        {
          py::gil_scoped_release release;
          switch (c.mode) {
            case AttackMode::Single:
              if (clips.size() != 1 || labels.size() != 1) throw AttackError("single mode takes one video");
              r = attack_single(model, clips[0], labels[0], c);
              break;
            case AttackMode::Universal: r = attack_universal(model, clips, labels, c); break;
            case AttackMode::Masked: r = attack_masked(model, clips, labels, c); break;
            case AttackMode::Targeted:
              if (!target) throw ConfigError("targeted mode needs target");
              r = attack_targeted(model, clips, labels, *target, c);
              break;
          }
        }
        return py::make_tuple(to_array(r.perturbation.tensor()), r.report.to_json(false));
      },
      py::arg("model"), py::arg("videos"), py::arg("labels"), py::arg("mode") = "single", py::arg("norm") = "L21",
      py::arg("lam") = 1.0, py::arg("iters") = 500, py::arg("lr") = 0.01, py::arg("polluted") = py::none(),
      py::arg("target") = py::none(), "Returns (perturbation, report JSON text).");

  m.def("map_perceptibility", [](const Array& e) { return map_perceptibility(to_tensor(e)); }, py::arg("perturbation"));
  m.def("per_frame_map", [](const Array& e) { return per_frame_map(to_tensor(e), kReportPixelScale); },
        py::arg("perturbation"));
  m.def("sparsity", [](const std::vector<double>& frame_map, double threshold) { return sparsity(frame_map, threshold); },
        py::arg("frame_map"), py::arg("zero_threshold") = kZeroThreshold);
  m.def("fooling_rate", [](const std::vector<bool>& s) { return fooling_rate(s); }, py::arg("successes"));

  m.def(
      "run_command",
      [](const std::string& command, std::uint64_t seed, const fs::path& out_dir, const py::dict& settings) {
        const ExperimentConfig cfg = ExperimentConfig::build(command, seed, out_dir, {}, from_dict(settings));
        py::gil_scoped_release release;
        return run_command(cfg);
      },
      py::arg("command"), py::arg("seed") = 1, py::arg("out_dir") = "out", py::arg("settings") = py::dict(),
      "Runs a CLI subcommand in-process; returns the paths written.");
}
