#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "vidattack/harness.hpp"

using namespace vidattack;

namespace {

KeyValueConfig kv(const std::string& text) { return KeyValueConfig::parse(text); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Small enough to run every command in a few seconds.
const char* kTiny =
    "T = 6\nW = 6\nH = 6\nsamples_per_class = 5\nencoder_dim = 8\nhidden_dim = 8\n"
    "epochs = 12\ntrain_lr = 0.01\niters = 15\npolluted = 6,2,1\nsplice_frames = 1,3,6\n"
    "prop_polluted = 2\ntransfer_polluted = 2\nuniversal_train_size = 4\ntiming_iters = 2\ntiming_warmup = 1\nmax_videos = 4\n";

fs::path fresh(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("vidattack_harness_" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig tiny(const std::string& cmd, const fs::path& out, const std::string& extra = "") {
  return ExperimentConfig::build(cmd, 3, out, kv(kTiny), kv(extra));
}

}  // namespace

TEST_CASE("config precedence: defaults, command defaults, file, overrides") {
  const auto base = ExperimentConfig::build("attack", 1, "o", {}, {});
  CHECK(base.attack.lambda == 1.0);
  CHECK(base.attack.iters == 500);
  CHECK(base.attack.norm == NormKind::L21);
  const auto sweep = ExperimentConfig::build("sparsity-sweep", 1, "o", {}, {});
  CHECK(sweep.attack.mode == AttackMode::Masked);
  CHECK(sweep.attack.lambda == 1e-4);
  const auto file = ExperimentConfig::build("sparsity-sweep", 1, "o", kv("lambda = 0.5"), {});
  CHECK(file.attack.lambda == 0.5);
  const auto over = ExperimentConfig::build("sparsity-sweep", 1, "o", kv("lambda = 0.5"), kv("lambda = 0.25"));
  CHECK(over.attack.lambda == 0.25);
  CHECK(over.resolved.get_string("lambda", "") == "0.25");
}

TEST_CASE("seeds derive from the global seed unless set") {
  const auto a = ExperimentConfig::build("train", 5, "o", {}, {});
  CHECK(a.data.seed == 5);
  CHECK(a.model_seed == 15);
  CHECK(a.train.seed == 11);
  const auto b = ExperimentConfig::build("train", 5, "o", {}, kv("model_seed = 2"));
  CHECK(b.model_seed == 2);
}

TEST_CASE("unknown and malformed keys are rejected") {
  CHECK_THROWS_AS(ExperimentConfig::build("attack", 1, "o", kv("lamda = 1"), {}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::build("attack", 1, "o", {}, kv("iters = many")), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::build("attack", 1, "o", {}, kv("norm = L7")), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::build("attack", 1, "o", {}, kv("head = Transformer")), ConfigError);
  for (const auto& k : known_config_keys()) CHECK_FALSE(k.empty());
}

TEST_CASE("config hash tracks settings but not the worker count") {
  const auto a = ExperimentConfig::build("attack", 1, "o", {}, {});
  const auto b = ExperimentConfig::build("attack", 1, "o", {}, kv("workers = 8"));
  const auto c = ExperimentConfig::build("attack", 1, "o", {}, kv("iters = 499"));
  const auto d = ExperimentConfig::build("attack", 2, "o", {}, {});
  const auto e = ExperimentConfig::build("timing", 1, "o", {}, {});
  CHECK(a.config_hash() == b.config_hash());
  CHECK(b.workers == 8);
  CHECK(a.config_hash() != c.config_hash());
  CHECK(a.config_hash() != d.config_hash());
  CHECK(a.config_hash() != e.config_hash());
  CHECK(a.config_hash().size() == 16);
}

TEST_CASE("csv table") {
  CsvTable t({"a", "b"});
  t.add({"1", "x"});
  t.add({fmt_real(0.5), fmt_real(-1.0 / 3.0)});
  CHECK(t.str() == "a,b\n1,x\n0.500000,-0.333333\n");
  CHECK_THROWS_AS(t.add({"only"}), Error);
}

TEST_CASE("svg output is deterministic and well formed") {
  LinePlot p{"F vs S", "S", "F", {{"LSTM", {0, 0.5, 0.975}, {1, 0.6, 0.2}}, {"GRU", {0, 0.5}, {1, 0.1}}}};
  const std::string a = render_svg(p), b = render_svg(p);
  CHECK(a == b);
  CHECK(a.rfind("<svg", 0) == 0);
  CHECK(a.find("</svg>") != std::string::npos);
  CHECK(a.find("LSTM") != std::string::npos);
  CHECK(render_svg(LinePlot{"empty", "x", "y", {}}).find("</svg>") != std::string::npos);
}

TEST_CASE("parallel_map keeps order and rethrows") {
  for (std::size_t workers : {1u, 4u}) {
    const auto out = parallel_map<std::size_t>(50, workers, [](std::size_t i) { return i * i; });
    REQUIRE(out.size() == 50);
    for (std::size_t i = 0; i < 50; ++i) CHECK(out[i] == i * i);
    CHECK_THROWS_AS(parallel_map<int>(10, workers,
                                      [](std::size_t i) -> int {
                                        if (i == 7) throw std::runtime_error("boom");
                                        return 0;
                                      }),
                    std::runtime_error);
  }
  CHECK(parallel_map<int>(0, 3, [](std::size_t) { return 1; }).empty());
}

TEST_CASE("every command runs end to end and reproduces byte for byte") {
  const fs::path root = fresh("e2e");
  REQUIRE_FALSE(run_command(tiny("gen-data", root / "gen")).empty());
  const fs::path data = root / "gen" / "data";
  CHECK(fs::exists(data / "manifest"));

  const std::string ds = "dataset = " + data.string() + "\n";
  run_command(tiny("train", root / "train", ds));
  const fs::path models = root / "train" / "models";
  for (HeadKind k : kAllHeads) CHECK(fs::exists(models / (std::string(head_kind_name(k)) + ".vmdl")));
  CHECK(fs::exists(root / "train" / "table.csv"));

  const std::string both = ds + "models_dir = " + models.string() + "\n";
  for (const char* cmd : {"attack", "sparsity-sweep", "propagation-report", "splice-attack", "transfer-matrix",
                          "universal", "timing"}) {
    INFO(cmd);
    const std::string extra = both + (std::string(cmd) == "timing" ? "head = VanillaRNN\n" : "");
    const auto first = run_command(tiny(cmd, root / (std::string(cmd) + "_a"), extra));
    const auto second = run_command(tiny(cmd, root / (std::string(cmd) + "_b"), extra));
    REQUIRE(first.size() == second.size());
    CHECK(fs::exists(root / (std::string(cmd) + "_a") / "report.json"));
    CHECK(fs::exists(root / (std::string(cmd) + "_a") / "table.csv"));
    for (std::size_t i = 0; i < first.size(); ++i) {
      const std::string name = first[i].filename().string();
      if (name == "timing.json" || std::string(cmd) == "timing") continue;
      CHECK_MESSAGE(slurp(first[i]) == slurp(second[i]), name);
    }
  }
  const std::string table = slurp(root / "sparsity-sweep_a" / "table.csv");
  CHECK(table.rfind("polluted,", 0) == 0);
  CHECK(table.find("config_hash") != std::string::npos);
}

TEST_CASE("commands report missing inputs") {
  const fs::path root = fresh("missing");
  CHECK_THROWS_AS(run_command(tiny("attack", root)), ConfigError);
  CHECK_THROWS_AS(run_command(tiny("transfer-matrix", root)), ConfigError);
  CHECK_THROWS_AS(run_command(tiny("attack", root, "models_dir = " + (root / "nowhere").string())), ConfigError);
  CHECK_THROWS_AS(run_command(tiny("bogus", root)), ConfigError);
}
