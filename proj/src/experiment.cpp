#include "flowtopo/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "flowtopo/error.hpp"
#include "flowtopo/model_io.hpp"

namespace flowtopo {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNumeric: return 3;
    case ErrorCode::kIo:
    case ErrorCode::kVersion:
    case ErrorCode::kParse: return 4;
    default: return 2;
  }
}

TrainResult run_training(const ExperimentConfig& cfg) {
  cfg.dataset.task.validate();
  RngStream data_rng(cfg.seed, streams::kTrainData);
  const Dataset data = task_sample(cfg.dataset.task, cfg.dataset.n_train, data_rng);
  RngStream init_rng(cfg.seed, streams::kInit);
  FlowModel model(cfg.model, ClassPrior::from_labels(data.y, data.classes), init_rng);
  model.provenance.config_hash = cfg.hash();
  model.provenance.objective = objective_name(cfg.train.objective);
  return train(std::move(model), cfg.train, data);
}

TrainSummary summarize_training(const ExperimentConfig& cfg, const TrainResult& result) {
  TrainSummary s;
  s.steps = static_cast<long long>(result.history.rows.size());
  s.final_loss = result.history.rows.empty() ? std::numeric_limits<double>::quiet_NaN()
                                             : result.history.rows.back().loss;
  if (result.model.base.is_resampled()) {
    const auto& z = result.model.base.resampled().z;
    s.z_min = *std::min_element(z.begin(), z.end());
    s.z_max = *std::max_element(z.begin(), z.end());
  }
  s.val_nll = std::numeric_limits<double>::quiet_NaN();
  if (cfg.dataset.n_val > 0) {
    RngStream rng(cfg.seed, streams::kValData);
    const Dataset val = task_sample(cfg.dataset.task, cfg.dataset.n_val, rng);
    s.val_nll = -result.model.log_prob(val.u).mean();
  }
  return s;
}

MetricReport run_evaluation(const FlowModel& model, const ExperimentConfig& cfg) {
  const SyntheticTask& task = cfg.dataset.task;
  require(model.dim() == task.dim() && model.classes() == task.classes(), ErrorCode::kConfig,
          "eval: model shape (d=" + std::to_string(model.dim()) + ", C=" + std::to_string(model.classes()) +
              ") does not match dataset." + std::string(task_name(task.name)));
  MetricReport r;
  r.dataset = task_name(task.name);
  r.flow = coupling_kind_name(model.spec().flow.kind);
  r.base = base_kind_name(model.spec().base.kind);
  r.objective = model.provenance.objective.empty() ? "unknown" : model.provenance.objective;
  r.seed = cfg.seed;

  RngStream kld_rng(cfg.seed, streams::kEvalData);
  const KldEstimate k = estimate_kld(model, task, cfg.eval.kld_samples, kld_rng);
  r.kld = k.kld;
  r.kld_se = k.stderr_;
  r.kld_samples = k.samples;

  RngStream id_rng(cfg.seed, streams::kOodId);
  RngStream ood_rng(cfg.seed, streams::kOod);
  const Dataset id = task_sample(task, cfg.eval.ood_n, id_rng);
  const Mat ood = ood_sample(cfg.eval.ood, cfg.eval.ood_n, ood_rng);
  const Vec s_id = ood_scores(model, id.u);
  const Vec s_ood = ood_scores(model, ood);
  const std::span<const double> a(s_id.data(), static_cast<std::size_t>(s_id.size()));
  const std::span<const double> b(s_ood.data(), static_cast<std::size_t>(s_ood.size()));
  r.auroc = auroc(a, b);
  r.tpr05 = tpr_at_fpr(a, b, 0.05);
  r.tpr10 = tpr_at_fpr(a, b, 0.10);
  r.tpr20 = tpr_at_fpr(a, b, 0.20);
  return r;
}

std::string history_path_for(const std::string& model_path) {
  fs::path p(model_path);
  return (p.parent_path() / (p.stem().string() + ".history.csv")).string();
}

std::string checkpoint_path_for(const std::string& model_path) {
  fs::path p(model_path);
  return (p.parent_path() / (p.stem().string() + ".checkpoint.json")).string();
}

namespace {

TrainSummary train_to_files(const ExperimentConfig& cfg, const std::string& out_path) {
  TrainResult result;
  try {
    result = run_training(cfg);
  } catch (const TrainingAborted& e) {
    save_model(e.last_good(), checkpoint_path_for(out_path));
    write_file_atomic(history_path_for(out_path), e.history().to_csv());
    throw Error(ErrorCode::kNumeric,
                std::string(e.what()) + " (checkpoint written to " + checkpoint_path_for(out_path) + ")");
  }
  save_model(result.model, out_path);
  write_file_atomic(history_path_for(out_path), result.history.to_csv());
  return summarize_training(cfg, result);
}

MetricReport eval_to_file(const std::string& model_path, const ExperimentConfig& cfg, const std::string& out_csv) {
  const FlowModel model = load_model(model_path);
  const MetricReport r = run_evaluation(model, cfg);
  std::string existing;
  if (fs::exists(out_csv)) existing = read_file(out_csv);
  if (existing.empty()) existing = std::string(MetricReport::csv_header()) + "\n";
  else if (existing.back() != '\n') existing += '\n';
  write_file_atomic(out_csv, existing + r.csv_row() + "\n");
  return r;
}

ExperimentConfig load_with_seed(const std::string& config_path, std::optional<std::uint64_t> seed) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  if (seed) override_seed(cfg, *seed);
  return cfg;
}

}  // namespace

TrainSummary cmd_train(const std::string& config_path, const std::string& out_path, std::optional<std::uint64_t> seed) {
  return train_to_files(load_with_seed(config_path, seed), out_path);
}

MetricReport cmd_eval(const std::string& model_path, const std::string& config_path, const std::string& out_csv,
                      std::optional<std::uint64_t> seed) {
  return eval_to_file(model_path, load_with_seed(config_path, seed), out_csv);
}

RenderMode parse_render_mode(const std::string& s) {
  if (s == "density") return RenderMode::kDensity;
  if (s == "acceptance") return RenderMode::kAcceptance;
  throw_error(ErrorCode::kUsage, "unknown render mode '" + s + "' (expected density or acceptance)");
}

DensityGrid cmd_render(const std::string& model_path, const RenderRequest& request, const std::string& out) {
  validate_grid_spec(request.grid);
  const FlowModel model = load_model(model_path);
  DensityGrid g;
  if (request.mode == RenderMode::kDensity) {
    if (request.y)
      require(*request.y >= 0 && *request.y < model.classes(), ErrorCode::kInvalidInput, "render: class out of range");
    g = render_density_grid(model, request.grid, request.y);
  } else {
    g = render_acceptance_grid(model.base, request.y.value_or(0), request.grid);
  }
  std::string stem = out;
  for (const char* ext : {".pgm", ".csv"}) {
    const std::string e(ext);
    if (stem.size() > e.size() && stem.compare(stem.size() - e.size(), e.size(), e) == 0)
      stem.resize(stem.size() - e.size());
  }
  write_file_atomic(stem + ".pgm", g.to_pgm());
  write_file_atomic(stem + ".csv", g.to_csv());
  return g;
}

MetricReport parse_metric_row(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) f.push_back(cell);
  if (f.size() != 11) throw_error(ErrorCode::kParse, "metric row: expected 11 fields, got " + std::to_string(f.size()));
  MetricReport r;
  r.dataset = f[0];
  r.flow = f[1];
  r.base = f[2];
  r.objective = f[3];
  try {
    r.seed = std::stoull(f[4]);
    r.kld = std::stod(f[5]);
    r.kld_se = std::stod(f[6]);
    r.auroc = std::stod(f[7]);
    r.tpr05 = std::stod(f[8]);
    r.tpr10 = std::stod(f[9]);
    r.tpr20 = std::stod(f[10]);
  } catch (const std::exception&) {
    throw_error(ErrorCode::kParse, "metric row: malformed number in '" + line + "'");
  }
  return r;
}

std::string summarize_metrics(const std::vector<MetricReport>& rows) {
  std::map<std::string, std::map<std::string, std::vector<double>>> table;
  std::set<std::string> columns;
  for (const MetricReport& r : rows) {
    const std::string col = r.flow + "_" + r.base + "_" + r.objective;
    columns.insert(col);
    table[r.dataset][col].push_back(r.kld);
  }
  std::string out = "dataset";
  for (const std::string& c : columns) out += "," + c + "_mean," + c + "_sd";
  out += "\n";
  char buf[64];
  for (const auto& [dataset, cells] : table) {
    out += dataset;
    for (const std::string& c : columns) {
      auto it = cells.find(c);
      if (it == cells.end()) {
        out += ",,";
        continue;
      }
      const std::vector<double>& v = it->second;
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      std::snprintf(buf, sizeof buf, ",%.9g", mean);
      out += buf;
      if (v.size() < 2) {
        out += ",";
        continue;
      }
      double ss2 = 0.0;
      for (double x : v) ss2 += (x - mean) * (x - mean);
      std::snprintf(buf, sizeof buf, ",%.9g", std::sqrt(ss2 / static_cast<double>(v.size() - 1)));
      out += buf;
    }
    out += "\n";
  }
  return out;
}

SweepOutcome cmd_sweep(const std::string& sweep_path, const std::string& out_dir, int jobs) {
  json spec;
  try {
    spec = json::parse(read_file(sweep_path));
  } catch (const json::parse_error& e) {
    throw_error(ErrorCode::kConfig, "sweep spec parse error at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  if (!spec.is_object()) throw_error(ErrorCode::kConfig, "<root>: expected an object");
  for (auto it = spec.begin(); it != spec.end(); ++it)
    if (it.key() != "configs" && it.key() != "seeds" && it.key() != "jobs")
      throw_error(ErrorCode::kConfig, it.key() + ": unknown key");
  if (!spec.contains("configs") || !spec["configs"].is_array() || spec["configs"].empty())
    throw_error(ErrorCode::kConfig, "configs: expected a non-empty array");
  if (!spec.contains("seeds") || !spec["seeds"].is_array() || spec["seeds"].empty())
    throw_error(ErrorCode::kConfig, "seeds: expected a non-empty array");
  if (jobs <= 0) {
    jobs = 1;
    if (spec.contains("jobs")) {
      if (!spec["jobs"].is_number_integer() || spec["jobs"].get<int>() < 1)
        throw_error(ErrorCode::kConfig, "jobs: expected a positive integer");
      jobs = spec["jobs"].get<int>();
    }
  }

  const fs::path base_dir = fs::path(sweep_path).parent_path();
  std::vector<ExperimentConfig> configs;
  for (std::size_t i = 0; i < spec["configs"].size(); ++i) {
    const json& c = spec["configs"][i];
    const std::string where = "configs[" + std::to_string(i) + "]";
    try {
      if (c.is_string()) {
        fs::path p(c.get<std::string>());
        if (p.is_relative()) p = base_dir / p;
        configs.push_back(load_experiment_config(p.string()));
      } else {
        configs.push_back(parse_experiment_config(c));
      }
    } catch (const Error& e) {
      throw_error(ErrorCode::kConfig, where + ": " + e.what());
    }
  }
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < spec["seeds"].size(); ++i) {
    const json& s = spec["seeds"][i];
    if (!s.is_number_unsigned()) throw_error(ErrorCode::kConfig, "seeds[" + std::to_string(i) + "]: expected a non-negative integer");
    seeds.push_back(s.get<std::uint64_t>());
  }

  std::vector<std::string> labels;
  std::map<std::string, int> label_count;
  for (const ExperimentConfig& c : configs) {
    std::string l = std::string(task_name(c.dataset.task.name)) + "__" + coupling_kind_name(c.model.flow.kind) + "_" +
                    base_kind_name(c.model.base.kind) + "_" + objective_name(c.train.objective);
    labels.push_back(l);
    ++label_count[l];
  }
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (label_count[labels[i]] > 1) labels[i] += "__c" + std::to_string(i);

  SweepOutcome outcome;
  for (std::size_t i = 0; i < configs.size(); ++i)
    for (std::uint64_t s : seeds)
      outcome.cells.push_back({labels[i], i, s, (fs::path(out_dir) / labels[i] / ("seed_" + std::to_string(s))).string()});

  std::vector<std::string> errors(outcome.cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < outcome.cells.size(); k = next++) {
      const SweepCell& cell = outcome.cells[k];
      try {
        ExperimentConfig cfg = configs[cell.config_index];
        override_seed(cfg, cell.seed);
        fs::create_directories(cell.dir);
        const std::string model_path = (fs::path(cell.dir) / "model.json").string();
        const std::string metrics_path = (fs::path(cell.dir) / "metrics.csv").string();
        write_file_atomic((fs::path(cell.dir) / "config.json").string(), cfg.to_json().dump(1) + "\n");
        train_to_files(cfg, model_path);
        fs::remove(metrics_path);
        eval_to_file(model_path, cfg, metrics_path);
      } catch (const std::exception& e) {
        errors[k] = e.what();
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(outcome.cells.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::string failures = "cell,seed,message\n";
  std::vector<MetricReport> rows;
  for (std::size_t k = 0; k < outcome.cells.size(); ++k) {
    const SweepCell& cell = outcome.cells[k];
    if (!errors[k].empty()) {
      outcome.failures.push_back(cell.label + " " + std::to_string(cell.seed) + ": " + errors[k]);
      std::string msg = errors[k];
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      failures += cell.label + "," + std::to_string(cell.seed) + "," + msg + "\n";
      continue;
    }
    std::stringstream ss(read_file((fs::path(cell.dir) / "metrics.csv").string()));
    std::string line;
    std::getline(ss, line);  // header
    while (std::getline(ss, line))
      if (!line.empty()) rows.push_back(parse_metric_row(line));
  }
  write_file_atomic((fs::path(out_dir) / "summary.csv").string(), summarize_metrics(rows));
  const fs::path failures_path = fs::path(out_dir) / "failures.csv";
  if (!outcome.failures.empty()) write_file_atomic(failures_path.string(), failures);
  else fs::remove(failures_path);
  return outcome;
}

}  // namespace flowtopo
