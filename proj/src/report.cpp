#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "vidattack/error.hpp"
#include "vidattack/harness.hpp"
#include "vidattack/vten.hpp"

namespace vidattack {

using Json = nlohmann::ordered_json;

std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

void CsvTable::add(std::vector<std::string> row) {
  if (row.size() != header_.size()) {
    throw Error("csv row has " + std::to_string(row.size()) + " fields, header has " + std::to_string(header_.size()));
  }
  rows_.push_back(std::move(row));
}

std::string CsvTable::str() const {
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
    os << '\n';
  };
  line(header_);
  for (const auto& r : rows_) line(r);
  return os.str();
}

// ---- SVG --------------------------------------------------------------------

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt2(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace

std::string render_svg(const LinePlot& plot) {
  constexpr double W = 640, H = 400, L = 70, R = 150, Tp = 40, B = 55;
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const auto& s : plot.series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!any) {
        x0 = x1 = s.x[i];
        y0 = y1 = s.y[i];
        any = true;
      }
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  y0 = std::min(y0, 0.0);
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pw = W - L - R, ph = H - Tp - B;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return Tp + ph - (y - y0) / (y1 - y0) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << fmt2(W / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(plot.title)
     << "</text>\n";
  os << "<rect x=\"" << fmt2(L) << "\" y=\"" << fmt2(Tp) << "\" width=\"" << fmt2(pw) << "\" height=\"" << fmt2(ph)
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = x0 + (x1 - x0) * i / 4.0, fy = y0 + (y1 - y0) * i / 4.0;
    os << "<text x=\"" << fmt2(px(fx)) << "\" y=\"" << fmt2(Tp + ph + 16) << "\" text-anchor=\"middle\">"
       << tick_label(fx) << "</text>\n";
    os << "<text x=\"" << fmt2(L - 6) << "\" y=\"" << fmt2(py(fy) + 4) << "\" text-anchor=\"end\">" << tick_label(fy)
       << "</text>\n";
  }
  os << "<text x=\"" << fmt2(L + pw / 2) << "\" y=\"" << fmt2(H - 12) << "\" text-anchor=\"middle\">"
     << xml_escape(plot.x_label) << "</text>\n";
  os << "<text x=\"16\" y=\"" << fmt2(Tp + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << fmt2(Tp + ph / 2) << ")\">" << xml_escape(plot.y_label) << "</text>\n";

  for (std::size_t k = 0; k < plot.series.size(); ++k) {
    const auto& s = plot.series[k];
    const char* color = palette[k % std::size(palette)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      os << (i ? " " : "") << fmt2(px(s.x[i])) << ',' << fmt2(py(s.y[i]));
    }
    os << "\"/>\n";
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      os << "<circle cx=\"" << fmt2(px(s.x[i])) << "\" cy=\"" << fmt2(py(s.y[i])) << "\" r=\"3\" fill=\"" << color
         << "\"/>\n";
    }
    const double ly = Tp + 14 + 18.0 * static_cast<double>(k);
    os << "<line x1=\"" << fmt2(L + pw + 12) << "\" y1=\"" << fmt2(ly) << "\" x2=\"" << fmt2(L + pw + 32) << "\" y2=\""
       << fmt2(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << fmt2(L + pw + 38) << "\" y=\"" << fmt2(ly + 4) << "\">" << xml_escape(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// ---- commands ---------------------------------------------------------------

namespace {

std::string head_str(HeadKind k) { return std::string(head_kind_name(k)); }

Json stamp(const ExperimentConfig& cfg) {
  Json j;
  j["command"] = cfg.command;
  j["seed"] = cfg.seed;
  j["config_hash"] = cfg.config_hash();
  Json c;
  for (const auto& [k, v] : cfg.resolved.values()) c[k] = v;
  j["config"] = std::move(c);
  return j;
}

struct Writer {
  const ExperimentConfig& cfg;
  std::vector<fs::path> written;

  void text(const std::string& name, const std::string& body) {
    const fs::path p = cfg.out_dir / name;
    write_text(p, body);
    written.push_back(p);
  }
  void json(const std::string& name, const Json& j) { text(name, j.dump(2) + "\n"); }
  // Appends seed and config_hash columns to every row.
  CsvTable table(std::vector<std::string> header) const {
    header.emplace_back("seed");
    header.emplace_back("config_hash");
    return CsvTable(std::move(header));
  }
  std::vector<std::string> row(std::vector<std::string> r) const {
    r.push_back(std::to_string(cfg.seed));
    r.push_back(cfg.config_hash());
    return r;
  }
};

std::string label_list(const std::vector<std::size_t>& v, std::size_t t) { return std::to_string(v.at(t)); }

Json hardware() {
  Json h;
  h["hardware_threads"] = std::thread::hardware_concurrency();
  std::ifstream cpu("/proc/cpuinfo");
  std::string line;
  while (std::getline(cpu, line)) {
    if (line.rfind("model name", 0) == 0) {
      h["cpu"] = line.substr(line.find(':') + 2);
      break;
    }
  }
#ifdef __VERSION__
  h["compiler"] = __VERSION__;
#endif
  return h;
}

const LabeledVideo& pick_clip(const ExperimentConfig& cfg, const ThreatModel& model, const Dataset& data) {
  if (cfg.video_id) {
    for (const auto* split : {&data.test, &data.train}) {
      for (const auto& c : *split) {
        if (c.id == *cfg.video_id) return c;
      }
    }
    throw ConfigError("no clip with id '" + *cfg.video_id + "'");
  }
  const auto ok = correct_clips(model, data.test, 1);
  if (ok.empty()) throw AttackError("no correctly classified test clip to attack");
  return *ok[0];
}

void cmd_gen_data(Writer& w) {
  const Dataset data = generate(w.cfg.data);
  const fs::path dir = w.cfg.out_dir / "data";
  save_dataset(dir, data);
  w.written.push_back(dir);
  CsvTable t = w.table({"id", "label", "split"});
  for (const auto& c : data.train) t.add(w.row({c.id, std::to_string(c.label), "train"}));
  for (const auto& c : data.test) t.add(w.row({c.id, std::to_string(c.label), "test"}));
  w.text("table.csv", t.str());
  Json j = stamp(w.cfg);
  j["dataset_dir"] = "data";  // relative to the output directory
  j["train_clips"] = data.train.size();
  j["test_clips"] = data.test.size();
  w.json("report.json", j);
}

void cmd_train(Writer& w) {
  const Dataset data = load_or_generate(w.cfg);
  const auto acc = run_train(w.cfg, data);
  CsvTable t = w.table({"head", "train_accuracy", "test_accuracy", "final_loss"});
  Json j = stamp(w.cfg);
  j["models"] = Json::array();
  LinePlot plot{"Training loss", "epoch", "mean -log p(label)", {}};
  for (const auto& a : acc) {
    t.add(w.row({head_str(a.head), fmt_real(a.train_accuracy), fmt_real(a.test_accuracy), fmt_real(a.final_loss)}));
    j["models"].push_back({{"head", head_str(a.head)},
                           {"path", a.path.filename().string()},
                           {"train_accuracy", a.train_accuracy},
                           {"test_accuracy", a.test_accuracy},
                           {"final_loss", a.final_loss}});
    w.written.push_back(a.path);
    Series s{head_str(a.head), {}, {}};
    for (std::size_t e = 0; e < a.epoch_loss.size(); ++e) {
      s.x.push_back(static_cast<double>(e + 1));
      s.y.push_back(a.epoch_loss[e]);
    }
    plot.series.push_back(std::move(s));
  }
  w.text("table.csv", t.str());
  w.json("report.json", j);
  w.text("curve.svg", render_svg(plot));
}

void cmd_attack(Writer& w) {
  const ExperimentConfig& cfg = w.cfg;
  const Dataset data = load_or_generate(cfg);
  const ThreatModel model = load_head(cfg, cfg.head);
  AttackConfig a = cfg.attack;
  AttackResult r;
  Json j = stamp(cfg);
  j["head"] = head_str(model.head_kind());
  if (a.mode == AttackMode::Universal) {
    const auto fit = correct_clips(model, data.train, cfg.max_videos ? cfg.max_videos : cfg.universal_train_size);
    if (fit.empty()) throw AttackError("attack: no correctly classified training clip");
    std::vector<Tensor> v;
    std::vector<std::size_t> l;
    for (const auto* c : fit) {
      v.push_back(c->video);
      l.push_back(c->label);
    }
    HeldOut held;
    for (const auto& c : data.test) {
      held.videos.push_back(c.video);
      held.labels.push_back(c.label);
    }
    r = attack_universal(model, v, l, a, &held);
    j["videos_attacked"] = fit.size();
  } else {
    const LabeledVideo& clip = pick_clip(cfg, model, data);
    j["video_id"] = clip.id;
    j["label"] = clip.label;
    if (a.mode == AttackMode::Masked) {
      if (cfg.mask_polluted == 0 || cfg.mask_polluted > data.spec.frames) {
        throw ConfigError("masked attack needs mask_polluted in [1, T]");
      }
      a.mask = TemporalMask::prefix(data.spec.frames, cfg.mask_polluted);
      r = attack_masked(model, {clip.video}, {clip.label}, a);
    } else if (a.mode == AttackMode::Targeted) {
      if (!a.target_label) throw ConfigError("targeted attack needs target_label");
      r = attack_targeted(model, {clip.video}, {clip.label}, *a.target_label, a);
    } else {
      r = attack_single(model, clip.video, clip.label, a);
    }
  }
  const fs::path pert = cfg.out_dir / "perturbation.vten";
  fs::create_directories(cfg.out_dir);
  save_tensor(pert, r.perturbation.tensor());
  w.written.push_back(pert);

  j["report"] = Json::parse(r.report.to_json(false));
  w.json("report.json", j);
  Json timing = stamp(cfg);
  timing["seconds_per_iteration"] = r.report.seconds_per_iteration;
  timing["hardware"] = hardware();
  w.json("timing.json", timing);

  CsvTable t = w.table({"frame", "map", "label_before", "label_after"});
  Series s{"MAP", {}, {}};
  for (std::size_t f = 0; f < r.report.per_frame_map.size(); ++f) {
    t.add(w.row({std::to_string(f), fmt_real(r.report.per_frame_map[f]), label_list(r.report.frame_labels_before, f),
                 label_list(r.report.frame_labels_after, f)}));
    s.x.push_back(static_cast<double>(f));
    s.y.push_back(r.report.per_frame_map[f]);
  }
  w.text("table.csv", t.str());
  w.text("curve.svg", render_svg({"Per-frame MAP", "frame", "MAP (0-255)", {s}}));
}

void cmd_sweep(Writer& w) {
  const Dataset data = load_or_generate(w.cfg);
  const ThreatModel model = load_head(w.cfg, w.cfg.head);
  const SweepResult res = run_sparsity_sweep(model, data, w.cfg);
  CsvTable t = w.table({"polluted", "clean", "S", "F", "P", "P_clip", "videos", "fooled"});
  Json j = stamp(w.cfg);
  j["head"] = head_str(res.head);
  j["clean_error"] = res.clean_error;
  j["rows"] = Json::array();
  Series f{"F", {}, {}}, p{"P / 255", {}, {}};
  for (const auto& r : res.rows) {
    t.add(w.row({std::to_string(r.polluted), std::to_string(r.clean), fmt_real(r.sparsity), fmt_real(r.fooling_rate),
                 fmt_real(r.perceptibility), fmt_real(r.clip_perceptibility), std::to_string(r.videos),
                 std::to_string(r.fooled)}));
    j["rows"].push_back({{"polluted", r.polluted},
                         {"clean", r.clean},
                         {"S", r.sparsity},
                         {"F", r.fooling_rate},
                         {"P", r.perceptibility},
                         {"P_clip", r.clip_perceptibility},
                         {"videos", r.videos},
                         {"fooled", r.fooled}});
    f.x.push_back(r.sparsity);
    f.y.push_back(r.fooling_rate);
    p.x.push_back(r.sparsity);
    p.y.push_back(r.perceptibility / kReportPixelScale);
  }
  w.text("table.csv", t.str());
  w.json("report.json", j);
  w.text("curve.svg", render_svg({"Fooling rate and MAP versus sparsity", "S", "value", {f, p}}));
}

void cmd_propagation(Writer& w) {
  const ExperimentConfig& cfg = w.cfg;
  const Dataset data = load_or_generate(cfg);
  const ThreatModel model = load_head(cfg, cfg.head);
  const LabeledVideo& clip = pick_clip(cfg, model, data);
  const PropagationReport rep = run_propagation(model, clip, cfg);
  const PropagationStats stats = run_propagation_stats(model, data, cfg);

  CsvTable t = w.table({"frame", "map_l21", "map_l2", "label_before", "label_after_l21", "label_after_l2",
                        "propagated_l21", "propagated_l2"});
  const auto& c21 = rep.curves[0];
  const auto& c2 = rep.curves[1];
  std::vector<Series> curves;
  for (const auto* c : {&c21, &c2}) {
    Series s{std::string(norm_name(c->norm)) + " MAP", {}, {}};
    for (std::size_t f = 0; f < c->per_frame_map.size(); ++f) {
      s.x.push_back(static_cast<double>(f));
      s.y.push_back(c->per_frame_map[f]);
    }
    curves.push_back(std::move(s));
  }
  for (std::size_t f = 0; f < c21.per_frame_map.size(); ++f) {
    t.add(w.row({std::to_string(f), fmt_real(c21.per_frame_map[f]), fmt_real(c2.per_frame_map[f]),
                 label_list(rep.frame_labels_before, f), label_list(c21.frame_labels_after, f),
                 label_list(c2.frame_labels_after, f), c21.propagated[f] ? "1" : "0", c2.propagated[f] ? "1" : "0"}));
  }
  Json j = stamp(cfg);
  j["head"] = head_str(model.head_kind());
  j["video_id"] = rep.video_id;
  j["label"] = rep.label;
  j["video_label_before"] = rep.video_label_before;
  j["frame_labels_before"] = rep.frame_labels_before;
  for (const auto* c : {&c21, &c2}) {
    Json cj;
    cj["success"] = c->success;
    cj["video_label_after"] = c->video_label_after;
    cj["frame_labels_after"] = c->frame_labels_after;
    cj["per_frame_map"] = c->per_frame_map;
    std::size_t n = 0;
    for (bool b : c->propagated) n += b;
    cj["propagated_frames"] = n;
    j[c->norm == NormKind::L21 ? "L21" : "L2"] = std::move(cj);
  }
  j["prefix_mask"] = {{"polluted", stats.polluted},
                      {"attacked", stats.attacked},
                      {"succeeded", stats.succeeded},
                      {"propagated", stats.propagated},
                      {"propagated_fraction", stats.fraction()}};
  w.text("table.csv", t.str());
  w.json("report.json", j);
  w.text("curve.svg", render_svg({"Per-frame MAP, clip " + rep.video_id, "frame", "MAP (0-255)", curves}));
}

void cmd_splice(Writer& w) {
  const Dataset data = load_or_generate(w.cfg);
  const ThreatModel model = load_head(w.cfg, w.cfg.head);
  const auto rows = run_splice(model, data, w.cfg);
  CsvTable t = w.table({"N", "norm", "F", "P", "videos", "fooled"});
  Json j = stamp(w.cfg);
  j["head"] = head_str(model.head_kind());
  j["rows"] = Json::array();
  Series l2{"L2", {}, {}}, l21{"L21", {}, {}};
  for (const auto& r : rows) {
    const std::string norm(norm_name(r.norm));
    t.add(w.row({std::to_string(r.frames), norm, fmt_real(r.fooling_rate), fmt_real(r.perceptibility),
                 std::to_string(r.videos), std::to_string(r.fooled)}));
    j["rows"].push_back({{"N", r.frames}, {"norm", norm}, {"F", r.fooling_rate}, {"P", r.perceptibility},
                         {"videos", r.videos}, {"fooled", r.fooled}});
    Series& s = r.norm == NormKind::L2 ? l2 : l21;
    s.x.push_back(static_cast<double>(r.frames));
    s.y.push_back(r.fooling_rate);
  }
  w.text("table.csv", t.str());
  w.json("report.json", j);
  w.text("curve.svg", render_svg({"Splice attack fooling rate", "N (optimized frames)", "F", {l2, l21}}));
}

void cmd_transfer(Writer& w) {
  const Dataset data = load_or_generate(w.cfg);
  const auto models = load_zoo(w.cfg);
  const TransferMatrix m = run_transfer(models, data, w.cfg);
  std::vector<std::string> header{"generator"};
  for (HeadKind h : m.heads) header.push_back(head_str(h));
  CsvTable t = w.table(header);
  Json j = stamp(w.cfg);
  j["heads"] = Json::array();
  for (HeadKind h : m.heads) j["heads"].push_back(head_str(h));
  j["rate"] = m.rate;
  j["eligible"] = m.eligible;
  j["column_mean"] = Json::array();
  for (std::size_t r = 0; r < m.heads.size(); ++r) {
    std::vector<std::string> row{head_str(m.heads[r])};
    for (double v : m.rate[r]) row.push_back(fmt_real(v));
    t.add(w.row(row));
    j["column_mean"].push_back(m.column_mean(r));
  }
  w.text("table.csv", t.str());
  w.json("report.json", j);
}

void cmd_universal(Writer& w) {
  const Dataset data = load_or_generate(w.cfg);
  const ThreatModel model = load_head(w.cfg, w.cfg.head);
  const UniversalResult u = run_universal(model, data, w.cfg);
  const fs::path pert = w.cfg.out_dir / "perturbation.vten";
  fs::create_directories(w.cfg.out_dir);
  save_tensor(pert, u.perturbation.tensor());
  w.written.push_back(pert);
  CsvTable t = w.table({"split", "videos", "F", "clean_error"});
  t.add(w.row({"train", std::to_string(u.train_videos), fmt_real(u.train_fooling_rate), "0.000000"}));
  t.add(w.row({"test", std::to_string(u.test_videos), fmt_real(u.test_fooling_rate), fmt_real(u.clean_error)}));
  Json j = stamp(w.cfg);
  j["head"] = head_str(u.head);
  j["train_videos"] = u.train_videos;
  j["test_videos"] = u.test_videos;
  j["train_fooling_rate"] = u.train_fooling_rate;
  j["test_fooling_rate"] = u.test_fooling_rate;
  j["clean_error"] = u.clean_error;
  j["perceptibility_map"] = u.perceptibility;
  w.text("table.csv", t.str());
  w.json("report.json", j);
}

void cmd_timing(Writer& w) {
  const Dataset data = load_or_generate(w.cfg);
  const ThreatModel model = load_head(w.cfg, w.cfg.head);
  const auto rows = run_timing(model, data, w.cfg);
  CsvTable t = w.table({"S", "frames", "iterations", "seconds_per_iteration"});
  Json j = stamp(w.cfg);
  j["head"] = head_str(model.head_kind());
  j["hardware"] = hardware();
  j["rows"] = Json::array();
  Series s{"seconds / iteration", {}, {}};
  for (const auto& r : rows) {
    t.add(w.row({fmt_real(r.sparsity), std::to_string(r.frames), std::to_string(r.iterations),
                 fmt_real(r.seconds_per_iteration)}));
    j["rows"].push_back({{"S", r.sparsity}, {"frames", r.frames}, {"iterations", r.iterations},
                         {"seconds_per_iteration", r.seconds_per_iteration}});
    s.x.push_back(r.sparsity);
    s.y.push_back(r.seconds_per_iteration);
  }
  w.text("table.csv", t.str());
  w.json("report.json", j);
  w.text("curve.svg", render_svg({"Time per iteration", "S", "seconds", {s}}));
}

}  // namespace

std::vector<fs::path> run_command(const ExperimentConfig& cfg) {
  Writer w{cfg, {}};
  const std::string& c = cfg.command;
  if (c == "gen-data") cmd_gen_data(w);
  else if (c == "train") cmd_train(w);
  else if (c == "attack") cmd_attack(w);
  else if (c == "sparsity-sweep") cmd_sweep(w);
  else if (c == "propagation-report") cmd_propagation(w);
  else if (c == "splice-attack") cmd_splice(w);
  else if (c == "transfer-matrix") cmd_transfer(w);
  else if (c == "universal") cmd_universal(w);
  else if (c == "timing") cmd_timing(w);
  else throw ConfigError("unknown command '" + c + "'");
  return w.written;
}

}  // namespace vidattack
