#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "flowtopo/error.hpp"
#include "flowtopo/experiment.hpp"
#include "flowtopo/model_io.hpp"
#include "helpers.hpp"

using namespace flowtopo;
using namespace flowtopo::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("flowtopo_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  f << s;
}

std::string message_of(const std::function<void()>& fn, ErrorCode* code = nullptr) {
  try {
    fn();
  } catch (const Error& e) {
    if (code) *code = e.code();
    return e.what();
  }
  return "";
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

// Small enough to train in well under a second.
const char* kTinyConfig = R"({
  "seed": 3,
  "dataset": {"name": "two_moons", "n_train": 500, "n_val": 200},
  "base": {"kind": "crsb", "T": 5, "acceptance_hidden": [8]},
  "flow": {"kind": "realnvp", "layers": 2, "hidden": [8]},
  "train": {"objective": "ib", "steps": 20, "batch": 64, "S": 64, "z_samples": 2000},
  "eval": {"kld_samples": 1000, "ood": {"kind": "uniform_box", "n": 300}}
})";

FlowModel tiny_model(BaseKind base, CouplingKind flow, std::uint64_t seed) {
  ModelSpec spec;
  spec.flow.kind = flow;
  spec.flow.layers = 3;
  spec.flow.hidden = {8};
  spec.base.kind = base;
  spec.base.acceptance_hidden = {8};
  spec.base.truncation = 7;
  RngStream rng(seed, 0);
  FlowModel m(spec, ClassPrior({0.3, 0.7}), rng);
  std::vector<ParamBlock*> blocks = m.params();
  randomize(blocks, rng, 0.5);
  if (m.base.is_resampled()) {
    RngStream zr(seed, 1);
    estimate_z(m.base.resampled(), 5000, zr);
  }
  m.provenance.config_hash = "0123456789abcdef";
  m.provenance.seed = seed;
  m.provenance.steps = 42;
  m.provenance.objective = "ib";
  return m;
}

}  // namespace

TEST_CASE("config defaults") {
  const ExperimentConfig c = parse_experiment_config_text("{}");
  CHECK(c.seed == 0);
  CHECK(c.dataset.task.name == TaskName::kTwoMoons);
  CHECK(c.model.base.kind == BaseKind::kCRSB);
  CHECK(c.model.flow.kind == CouplingKind::kAffine);
  CHECK(c.model.flow.layers == 4);
  CHECK(c.train.objective == Objective::kIB);
  CHECK(c.train.steps == 10000);
  CHECK(c.eval.kld_samples == 10000);
  const ExperimentConfig g = parse_experiment_config_text(R"({"base": {"kind": "gaussian"}})");
  CHECK(g.model.flow.layers == 5);
}

TEST_CASE("config errors name the offending path") {
  ErrorCode code{};
  std::string msg = message_of([] { parse_experiment_config_text(R"({"train": {"betta": 1}})"); }, &code);
  CHECK(code == ErrorCode::kConfig);
  CHECK(starts_with(msg, "train.betta: unknown key"));
  msg = message_of([] { parse_experiment_config_text(R"({"train": {"beta": -1}})"); });
  CHECK(starts_with(msg, "train.beta"));
  msg = message_of([] { parse_experiment_config_text(R"({"flow": {"hidden": [8, 0]}})"); });
  CHECK(starts_with(msg, "flow.hidden[1]"));
  msg = message_of([] { parse_experiment_config_text(R"({"dataset": {"name": "spirals"}})"); });
  CHECK(starts_with(msg, "dataset.name"));
  msg = message_of([] { parse_experiment_config_text(R"({"eval": {"ood": {"shape": 1}}})"); });
  CHECK(starts_with(msg, "eval.ood.shape: unknown key"));
  msg = message_of([] { parse_experiment_config_text(R"({"flow": {"bins": 40}})"); });
  CHECK(starts_with(msg, "flow.bins"));
  msg = message_of([] { parse_experiment_config_text(R"({"seed": -4})"); });
  CHECK(starts_with(msg, "seed"));
  msg = message_of([] { parse_experiment_config_text("[1, 2]"); });
  CHECK(starts_with(msg, "<root>"));
}

TEST_CASE("config parse errors report line and column") {
  ErrorCode code{};
  const std::string msg = message_of([] { parse_experiment_config_text("{\n  \"seed\": 1,\n  oops\n}"); }, &code);
  CHECK(code == ErrorCode::kConfig);
  CHECK(msg.find("line 3") != std::string::npos);
  CHECK(msg.find("column") != std::string::npos);
  CHECK(message_of([] { load_experiment_config("/nonexistent/flowtopo.json"); }, &code) != "");
  CHECK(code == ErrorCode::kConfig);
}

TEST_CASE("resolved config round trips through its canonical JSON") {
  const ExperimentConfig c = parse_experiment_config_text(kTinyConfig);
  const ExperimentConfig back = parse_experiment_config(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.hash() == c.hash());
  CHECK(c.hash().size() == 16);
  ExperimentConfig d = c;
  override_seed(d, 9);
  CHECK(d.seed == 9);
  CHECK(d.train.seed == 9);
  CHECK(d.hash() != c.hash());
}

TEST_CASE("model save and load are lossless") {
  const fs::path dir = scratch("io");
  RngStream rng(77, 0);
  Mat u(100, 2);
  for (Index i = 0; i < u.size(); ++i) u.data()[i] = 2.0 * rng.normal();
  for (BaseKind b : {BaseKind::kGaussian, BaseKind::kMoG, BaseKind::kRSB, BaseKind::kCRSB})
    for (CouplingKind f : {CouplingKind::kAffine, CouplingKind::kSpline}) {
      const FlowModel m = tiny_model(b, f, 5);
      const std::string path = (dir / "m.json").string();
      save_model(m, path);
      const FlowModel back = load_model(path);
      const Mat a = m.log_prob_all(u), c = back.log_prob_all(u);
      CHECK((a.array() == c.array()).all());
      CHECK(back.prior.probs() == m.prior.probs());
      CHECK(back.provenance.config_hash == "0123456789abcdef");
      CHECK(back.provenance.steps == 42);
      CHECK(back.provenance.objective == "ib");
      if (m.base.is_resampled()) {
        CHECK(back.base.resampled().z == m.base.resampled().z);
        CHECK(back.base.resampled().z_samples == m.base.resampled().z_samples);
      }
      CHECK(serialize_model(back) == serialize_model(m));
    }
}

TEST_CASE("model files with problems are rejected") {
  const std::string text = serialize_model(tiny_model(BaseKind::kCRSB, CouplingKind::kAffine, 1));
  ErrorCode code{};
  std::string msg = message_of([&] { deserialize_model(text.substr(0, text.size() / 2)); }, &code);
  CHECK(code == ErrorCode::kParse);
  CHECK(msg.find("byte") != std::string::npos);

  std::string wrong = text;
  wrong.replace(wrong.find(kModelFormatTag), std::string(kModelFormatTag).size(), "flowtopo-model-v0");
  msg = message_of([&] { deserialize_model(wrong); }, &code);
  CHECK(code == ErrorCode::kVersion);
  CHECK(msg.find("flowtopo-model-v0") != std::string::npos);

  message_of([] { load_model("/nonexistent/model.json"); }, &code);
  CHECK(code == ErrorCode::kIo);
}

TEST_CASE("exit codes") {
  CHECK(exit_code_for(ErrorCode::kConfig) == 2);
  CHECK(exit_code_for(ErrorCode::kUsage) == 2);
  CHECK(exit_code_for(ErrorCode::kInvalidInput) == 2);
  CHECK(exit_code_for(ErrorCode::kNumeric) == 3);
  CHECK(exit_code_for(ErrorCode::kIo) == 4);
  CHECK(exit_code_for(ErrorCode::kParse) == 4);
  CHECK(exit_code_for(ErrorCode::kVersion) == 4);
}

TEST_CASE("train, eval and render commands" * doctest::timeout(300)) {
  const fs::path dir = scratch("cmd");
  const fs::path cfg = dir / "tiny.json";
  write(cfg, kTinyConfig);
  const std::string model = (dir / "model.json").string();

  SUBCASE("zero steps writes an untrained model") {
    write(dir / "zero.json", R"({"dataset": {"n_train": 100}, "train": {"steps": 0, "z_samples": 1000},
                                "base": {"kind": "gaussian"}})");
    const TrainSummary s = cmd_train((dir / "zero.json").string(), model);
    CHECK(s.steps == 0);
    CHECK(fs::exists(model));
    CHECK(read_file(history_path_for(model)) == "step,loss,ci_uz,ci_zy,z_min,z_max\n");
  }

  SUBCASE("training writes model, history and provenance") {
    const TrainSummary s = cmd_train(cfg.string(), model);
    CHECK(s.steps == 20);
    CHECK(std::isfinite(s.final_loss));
    CHECK(std::isfinite(s.val_nll));
    CHECK(s.z_min > 0.0);
    CHECK(s.z_max <= 1.0);
    const FlowModel m = load_model(model);
    CHECK(m.provenance.config_hash == load_experiment_config(cfg.string()).hash());
    CHECK(m.provenance.seed == 3);
    CHECK(m.provenance.objective == "ib");
    // Same seed, same bytes.
    const std::string first = read_file(model);
    cmd_train(cfg.string(), model);
    CHECK(read_file(model) == first);
    cmd_train(cfg.string(), model, 4);
    CHECK(read_file(model) != first);
  }

  SUBCASE("evaluation appends identical rows for identical inputs") {
    cmd_train(cfg.string(), model);
    const std::string csv = (dir / "metrics.csv").string();
    const MetricReport a = cmd_eval(model, cfg.string(), csv);
    const MetricReport b = cmd_eval(model, cfg.string(), csv);
    CHECK(a.csv_row() == b.csv_row());
    std::stringstream ss(read_file(csv));
    std::string header, r1, r2, extra;
    std::getline(ss, header);
    std::getline(ss, r1);
    std::getline(ss, r2);
    CHECK(header == MetricReport::csv_header());
    CHECK(r1 == r2);
    CHECK_FALSE(std::getline(ss, extra));
    CHECK(parse_metric_row(r1).csv_row() == r1);
    CHECK(a.auroc >= 0.0);
    CHECK(a.auroc <= 1.0);

    // A corrupted model leaves the metrics file untouched.
    const std::string before = read_file(csv);
    std::string text = read_file(model);
    write(dir / "bad.json", text.substr(0, text.size() - 10));
    ErrorCode code{};
    message_of([&] { cmd_eval((dir / "bad.json").string(), cfg.string(), csv); }, &code);
    CHECK(code == ErrorCode::kParse);
    CHECK(read_file(csv) == before);

    // Dataset shape mismatch.
    write(dir / "gauss.json", R"({"dataset": {"name": "gaussian"}})");
    message_of([&] { cmd_eval(model, (dir / "gauss.json").string(), csv); }, &code);
    CHECK(code == ErrorCode::kConfig);
  }

  SUBCASE("render is deterministic and strips extensions") {
    cmd_train(cfg.string(), model);
    RenderRequest req;
    req.grid.resolution = 32;
    const DensityGrid g = cmd_render(model, req, (dir / "d.pgm").string());
    CHECK(fs::exists(dir / "d.pgm"));
    CHECK(fs::exists(dir / "d.csv"));
    const std::string first = read_file((dir / "d.pgm").string());
    cmd_render(model, req, (dir / "d").string());
    CHECK(read_file((dir / "d.pgm").string()) == first);
    CHECK(g.values.size() == 32u * 32u);

    req.mode = RenderMode::kAcceptance;
    req.y = 1;
    const DensityGrid a = cmd_render(model, req, (dir / "a").string());
    for (double v : a.values) CHECK(v >= 1e-3);

    CHECK(parse_render_mode("acceptance") == RenderMode::kAcceptance);
    ErrorCode code{};
    message_of([] { parse_render_mode("heat"); }, &code);
    CHECK(code == ErrorCode::kUsage);
  }

  SUBCASE("acceptance rendering needs a resampled base") {
    write(dir / "g.json", R"({"dataset": {"n_train": 100}, "train": {"steps": 2, "batch": 16},
                             "base": {"kind": "gaussian"}, "flow": {"hidden": [4]}})");
    cmd_train((dir / "g.json").string(), model);
    RenderRequest req;
    req.mode = RenderMode::kAcceptance;
    req.grid.resolution = 8;
    ErrorCode code{};
    message_of([&] { cmd_render(model, req, (dir / "x").string()); }, &code);
    CHECK(code == ErrorCode::kInvalidInput);
    CHECK_FALSE(fs::exists(dir / "x.pgm"));
  }
}

TEST_CASE("metric summaries") {
  std::vector<MetricReport> rows;
  for (double k : {0.1, 0.2, 0.6}) {
    MetricReport r;
    r.dataset = "two_rings";
    r.flow = "nsf";
    r.base = "crsb";
    r.objective = "ib";
    r.kld = k;
    rows.push_back(r);
  }
  MetricReport single = rows[0];
  single.dataset = "two_moons";
  single.base = "mog";
  rows.push_back(single);
  // Mean 0.3; sample sd sqrt(((0.2)^2 + (0.1)^2 + (0.3)^2) / 2) = sqrt(0.07).
  const std::string s = summarize_metrics(rows);
  std::stringstream ss(s);
  std::string header, moons, rings;
  std::getline(ss, header);
  std::getline(ss, moons);
  std::getline(ss, rings);
  CHECK(header == "dataset,nsf_crsb_ib_mean,nsf_crsb_ib_sd,nsf_mog_ib_mean,nsf_mog_ib_sd");
  CHECK(moons == "two_moons,,,0.1,");
  char buf[128];
  std::snprintf(buf, sizeof buf, "two_rings,%.9g,%.9g,,", (0.1 + 0.2 + 0.6) / 3.0, std::sqrt(0.07));
  CHECK(rings == buf);
  CHECK_THROWS_AS(parse_metric_row("a,b,c"), Error);
}

TEST_CASE("sweep" * doctest::timeout(600)) {
  const fs::path dir = scratch("sweep");
  write(dir / "tiny.json", kTinyConfig);

  SUBCASE("one cell matches train + eval") {
    write(dir / "one.json", R"({"configs": ["tiny.json"], "seeds": [3]})");
    const SweepOutcome o = cmd_sweep((dir / "one.json").string(), (dir / "out").string());
    REQUIRE(o.cells.size() == 1);
    CHECK(o.failures.empty());
    const std::string model = (dir / "m.json").string(), csv = (dir / "m.csv").string();
    cmd_train((dir / "tiny.json").string(), model);
    cmd_eval(model, (dir / "tiny.json").string(), csv);
    CHECK(read_file(fs::path(o.cells[0].dir) / "model.json") == read_file(model));
    CHECK(read_file(fs::path(o.cells[0].dir) / "metrics.csv") == read_file(csv));
    CHECK(o.cells[0].label == "two_moons__realnvp_crsb_ib");
    CHECK(fs::exists(dir / "out" / "summary.csv"));
    CHECK_FALSE(fs::exists(dir / "out" / "failures.csv"));
  }

  SUBCASE("seeds aggregate with a sample sd and order does not matter") {
    write(dir / "three.json", R"({"configs": ["tiny.json"], "seeds": [1, 2, 3], "jobs": 1})");
    write(dir / "three_rev.json", R"({"configs": ["tiny.json"], "seeds": [3, 1, 2]})");
    const SweepOutcome o = cmd_sweep((dir / "three.json").string(), (dir / "a").string());
    cmd_sweep((dir / "three_rev.json").string(), (dir / "b").string(), 2);
    CHECK(read_file((dir / "a" / "summary.csv").string()) == read_file((dir / "b" / "summary.csv").string()));
    std::vector<double> k;
    for (const SweepCell& c : o.cells) {
      std::stringstream ss(read_file(fs::path(c.dir) / "metrics.csv"));
      std::string line;
      std::getline(ss, line);
      std::getline(ss, line);
      k.push_back(parse_metric_row(line).kld);
    }
    const double mean = (k[0] + k[1] + k[2]) / 3.0;
    const double sd = std::sqrt(((k[0] - mean) * (k[0] - mean) + (k[1] - mean) * (k[1] - mean) +
                                 (k[2] - mean) * (k[2] - mean)) / 2.0);
    char buf[128];
    std::snprintf(buf, sizeof buf, "two_moons,%.9g,%.9g", mean, sd);
    const std::string summary = read_file((dir / "a" / "summary.csv").string());
    CHECK(summary.find(buf) != std::string::npos);
  }

  SUBCASE("failing cells are listed and do not stop the others") {
    write(dir / "mixed.json", R"({"configs": ["tiny.json", {"dataset": {"n_train": 100}, "train":
        {"steps": 2, "batch": 16, "lr": 1e300}, "base": {"kind": "gaussian"}, "flow": {"hidden": [4]}}],
        "seeds": [1]})");
    const SweepOutcome o = cmd_sweep((dir / "mixed.json").string(), (dir / "c").string());
    CHECK(o.failures.size() == 1);
    CHECK(fs::exists(dir / "c" / "failures.csv"));
    CHECK(fs::exists(fs::path(o.cells[0].dir) / "metrics.csv"));
  }

  SUBCASE("spec errors") {
    write(dir / "bad.json", R"({"configs": ["tiny.json"], "seeds": [1], "extra": 0})");
    ErrorCode code{};
    const std::string msg = message_of([&] { cmd_sweep((dir / "bad.json").string(), (dir / "d").string()); }, &code);
    CHECK(code == ErrorCode::kConfig);
    CHECK(starts_with(msg, "extra"));
    write(dir / "bad2.json", R"({"configs": [{"train": {"beta": -2}}], "seeds": [1]})");
    CHECK(message_of([&] { cmd_sweep((dir / "bad2.json").string(), (dir / "d").string()); }).find("train.beta") !=
          std::string::npos);
  }
}
