#include "flowtopo/config.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "flowtopo/error.hpp"

namespace flowtopo {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw_error(ErrorCode::kConfig, path + ": " + what);
}

std::string join(const std::string& parent, const std::string& key) {
  return parent.empty() ? key : parent + "." + key;
}

// Reader over one JSON object that tracks which keys were consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json* get(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  double number(const std::string& key, double fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_number()) fail(join(path_, key), "expected a number");
    return v->get<double>();
  }

  long long integer(const std::string& key, long long fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_number_integer()) fail(join(path_, key), "expected an integer");
    return v->get<long long>();
  }

  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() && v->get<long long>() < 0))
      fail(join(path_, key), "expected a non-negative integer");
    return v->get<std::uint64_t>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_string()) fail(join(path_, key), "expected a string");
    return v->get<std::string>();
  }

  std::vector<int> widths(const std::string& key, std::vector<int> fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_array()) fail(join(path_, key), "expected an array of positive integers");
    std::vector<int> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
      const json& e = (*v)[i];
      if (!e.is_number_integer() || e.get<long long>() < 1 || e.get<long long>() > 4096)
        fail(join(path_, key) + "[" + std::to_string(i) + "]", "expected an integer in [1, 4096]");
      out.push_back(e.get<int>());
    }
    return out;
  }

  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_array()) fail(join(path_, key), "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
      if (!(*v)[i].is_number()) fail(join(path_, key) + "[" + std::to_string(i) + "]", "expected a number");
      out.push_back((*v)[i].get<double>());
    }
    return out;
  }

  std::optional<Section> child(const std::string& key) {
    const json* v = get(key);
    if (!v) return std::nullopt;
    return Section(*v, join(path_, key));
  }

  const std::string& path() const { return path_; }

  /// Rejects keys that were never read.
  void close() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) fail(join(path_, it.key()), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class F>
auto parse_enum(const std::string& path, const std::string& value, F&& parse) {
  try {
    return parse(value);
  } catch (const Error&) {
    fail(path, "unsupported value '" + value + "'");
  }
}

void check(bool ok, const std::string& path, const std::string& what) {
  if (!ok) fail(path, what);
}

}  // namespace

ExperimentConfig parse_experiment_config(const json& j) {
  ExperimentConfig cfg;
  Section root(j, "");
  cfg.seed = root.unsigned_integer("seed", 0);

  // dataset
  if (auto ds = root.child("dataset")) {
    const std::string name = ds->string("name", "two_moons");
    cfg.dataset.task = SyntheticTask::defaults(parse_enum("dataset.name", name, parse_task_name));
    SyntheticTask& t = cfg.dataset.task;
    cfg.dataset.n_train = ds->integer("n_train", 10000);
    check(cfg.dataset.n_train >= 1, "dataset.n_train", "must be >= 1");
    cfg.dataset.n_val = ds->integer("n_val", 1000);
    check(cfg.dataset.n_val >= 0, "dataset.n_val", "must be >= 0");
    t.noise = ds->number("noise", t.noise);
    check(t.noise >= 0.0, "dataset.noise", "must be >= 0");
    if (auto geo = ds->child("geometry")) {
      t.radii = geo->numbers("radii", t.radii);
      for (double r : t.radii) check(r > 0.0, "dataset.geometry.radii", "radii must be > 0");
      check(!t.radii.empty(), "dataset.geometry.radii", "must not be empty");
      t.circle_radius = geo->number("radius", t.circle_radius);
      check(t.circle_radius > 0.0, "dataset.geometry.radius", "must be > 0");
      t.components = static_cast<int>(geo->integer("components", t.components));
      check(t.components >= 2 && t.components % 2 == 0, "dataset.geometry.components", "must be even and >= 2");
      t.mean = geo->numbers("mean", t.mean);
      check(t.mean.size() == 2, "dataset.geometry.mean", "must have 2 entries");
      geo->close();
    }
    ds->close();
  }
  cfg.model.dim = cfg.dataset.task.dim();
  cfg.model.classes = cfg.dataset.task.classes();

  // base first: the flow's default depth depends on it.
  BaseSpec& b = cfg.model.base;
  if (auto bs = root.child("base")) {
    b.kind = parse_enum("base.kind", bs->string("kind", "crsb"), parse_base_kind);
    b.truncation = static_cast<int>(bs->integer("T", b.truncation));
    check(b.truncation >= 1, "base.T", "must be >= 1");
    b.acceptance_hidden = bs->widths("acceptance_hidden", b.acceptance_hidden);
    b.activation = parse_enum("base.activation", bs->string("activation", "tanh"), parse_activation);
    b.accept_floor = bs->number("eps_a", b.accept_floor);
    check(b.accept_floor >= 0.0 && b.accept_floor < 1.0, "base.eps_a", "must be in [0, 1)");
    bs->close();
  } else {
    b.kind = BaseKind::kCRSB;
  }
  const bool resampled = b.kind == BaseKind::kRSB || b.kind == BaseKind::kCRSB;

  FlowSpec& f = cfg.model.flow;
  f.layers = resampled ? 4 : 5;
  if (auto fs = root.child("flow")) {
    const std::string kind = fs->string("kind", "realnvp");
    check(kind == "realnvp" || kind == "nsf", "flow.kind", "unsupported value '" + kind + "'");
    f.kind = kind == "realnvp" ? CouplingKind::kAffine : CouplingKind::kSpline;
    f.layers = static_cast<int>(fs->integer("layers", f.layers));
    check(f.layers >= 0 && f.layers <= 64, "flow.layers", "must be in [0, 64]");
    f.hidden = fs->widths("hidden", f.hidden);
    f.activation = parse_enum("flow.activation", fs->string("activation", "tanh"), parse_activation);
    f.bins = static_cast<int>(fs->integer("bins", f.bins));
    check(f.bins >= 1 && f.bins <= 32, "flow.bins", "must be in [1, 32]");
    f.tail_bound = fs->number("tail_bound", f.tail_bound);
    check(f.tail_bound > 0.0, "flow.tail_bound", "must be > 0");
    f.scale_cap = fs->number("scale_cap", f.scale_cap);
    check(f.scale_cap > 0.0, "flow.scale_cap", "must be > 0");
    fs->close();
  }

  TrainConfig& tr = cfg.train;
  if (auto ts = root.child("train")) {
    tr.objective = parse_enum("train.objective", ts->string("objective", "ib"), parse_objective);
    tr.beta = ts->number("beta", tr.beta);
    check(tr.beta >= 0.0, "train.beta", "must be >= 0");
    tr.sigma = ts->number("sigma", tr.sigma);
    check(tr.sigma > 0.0, "train.sigma", "must be > 0");
    tr.lr = ts->number("lr", tr.lr);
    check(tr.lr > 0.0, "train.lr", "must be > 0");
    tr.batch = static_cast<int>(ts->integer("batch", tr.batch));
    check(tr.batch >= 2, "train.batch", "must be >= 2");
    tr.steps = ts->integer("steps", tr.steps);
    check(tr.steps >= 0, "train.steps", "must be >= 0");
    tr.z_batch_samples = static_cast<int>(ts->integer("S", tr.z_batch_samples));
    check(tr.z_batch_samples >= 1, "train.S", "must be >= 1");
    tr.ema_decay = ts->number("ema_decay", tr.ema_decay);
    check(tr.ema_decay >= 0.0 && tr.ema_decay < 1.0, "train.ema_decay", "must be in [0, 1)");
    tr.z_final_samples = ts->integer("z_samples", tr.z_final_samples);
    check(tr.z_final_samples >= 1, "train.z_samples", "must be >= 1");
    ts->close();
  }
  tr.seed = cfg.seed;

  if (auto es = root.child("eval")) {
    cfg.eval.kld_samples = es->integer("kld_samples", cfg.eval.kld_samples);
    check(cfg.eval.kld_samples >= 1000, "eval.kld_samples", "must be >= 1000");
    if (auto os = es->child("ood")) {
      cfg.eval.ood.kind = parse_enum("eval.ood.kind", os->string("kind", "uniform_box"), parse_ood_kind);
      cfg.eval.ood_n = os->integer("n", cfg.eval.ood_n);
      check(cfg.eval.ood_n >= 1, "eval.ood.n", "must be >= 1");
      cfg.eval.ood.box_half_width = os->number("box_half_width", cfg.eval.ood.box_half_width);
      check(cfg.eval.ood.box_half_width > 0.0, "eval.ood.box_half_width", "must be > 0");
      cfg.eval.ood.ring_radius = os->number("ring_radius", cfg.eval.ood.ring_radius);
      check(cfg.eval.ood.ring_radius > 0.0, "eval.ood.ring_radius", "must be > 0");
      cfg.eval.ood.ring_noise = os->number("ring_noise", cfg.eval.ood.ring_noise);
      check(cfg.eval.ood.ring_noise >= 0.0, "eval.ood.ring_noise", "must be >= 0");
      os->close();
    }
    es->close();
  }
  root.close();
  return cfg;
}

ExperimentConfig parse_experiment_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    // Translate the byte offset into a line/column for the diagnostic.
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw_error(ErrorCode::kConfig, "config parse error at line " + std::to_string(line) + ", column " +
                                        std::to_string(col) + ": " + e.what());
  }
  return parse_experiment_config(j);
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw_error(ErrorCode::kConfig, e.what());
  }
  return parse_experiment_config_text(text);
}

void override_seed(ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.train.seed = seed;
}

json ExperimentConfig::to_json() const {
  const SyntheticTask& t = dataset.task;
  json j;
  j["seed"] = seed;
  j["dataset"] = {{"name", task_name(t.name)},
                  {"n_train", dataset.n_train},
                  {"n_val", dataset.n_val},
                  {"noise", t.noise},
                  {"geometry",
                   {{"radii", t.radii}, {"radius", t.circle_radius}, {"components", t.components}, {"mean", t.mean}}}};
  const FlowSpec& f = model.flow;
  j["flow"] = {{"kind", coupling_kind_name(f.kind)}, {"layers", f.layers},       {"hidden", f.hidden},
               {"activation", activation_name(f.activation)}, {"bins", f.bins}, {"tail_bound", f.tail_bound},
               {"scale_cap", f.scale_cap}};
  const BaseSpec& b = model.base;
  j["base"] = {{"kind", base_kind_name(b.kind)},
               {"T", b.truncation},
               {"acceptance_hidden", b.acceptance_hidden},
               {"activation", activation_name(b.activation)},
               {"eps_a", b.accept_floor}};
  j["train"] = {{"objective", objective_name(train.objective)},
                {"beta", train.beta},
                {"sigma", train.sigma},
                {"lr", train.lr},
                {"batch", train.batch},
                {"steps", train.steps},
                {"S", train.z_batch_samples},
                {"ema_decay", train.ema_decay},
                {"z_samples", train.z_final_samples}};
  j["eval"] = {{"kld_samples", eval.kld_samples},
               {"ood",
                {{"kind", ood_kind_name(eval.ood.kind)},
                 {"n", eval.ood_n},
                 {"box_half_width", eval.ood.box_half_width},
                 {"ring_radius", eval.ood.ring_radius},
                 {"ring_noise", eval.ood.ring_noise}}}};
  return j;
}

std::string ExperimentConfig::hash() const {
  const std::string canon = to_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : canon) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_error(ErrorCode::kIo, "cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& contents) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
  }
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw_error(ErrorCode::kIo, "cannot open '" + tmp.string() + "' for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw_error(ErrorCode::kIo, "write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw_error(ErrorCode::kIo, "cannot move '" + tmp.string() + "' to '" + path + "': " + ec.message());
}

}  // namespace flowtopo
