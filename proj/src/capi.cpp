#include "flowtopo/flowtopo.h"

#include <string>

#include "flowtopo/experiment.hpp"
#include "flowtopo/model_io.hpp"

struct flowtopo_model {
  flowtopo::FlowModel model;
};

namespace {

thread_local std::string g_last_error;

flowtopo_status set_error(flowtopo_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <class F>
flowtopo_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return FLOWTOPO_OK;
  } catch (const flowtopo::Error& e) {
    return set_error(static_cast<flowtopo_status>(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return set_error(FLOWTOPO_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(FLOWTOPO_ERR_INTERNAL, e.what());
  }
}

void need(const void* p, const char* what) {
  if (!p) flowtopo::throw_error(flowtopo::ErrorCode::kInvalidInput, std::string(what) + " must not be NULL");
}

}  // namespace

extern "C" {

const char* flowtopo_version(void) { return "1.0.0"; }

const char* flowtopo_last_error(void) { return g_last_error.c_str(); }

const char* flowtopo_status_name(flowtopo_status status) {
  if (status == FLOWTOPO_OK) return "ok";
  if (status == FLOWTOPO_ERR_INTERNAL) return "internal";
  return flowtopo::error_code_name(static_cast<flowtopo::ErrorCode>(status));
}

int flowtopo_exit_code(flowtopo_status status) {
  if (status == FLOWTOPO_OK) return 0;
  if (status == FLOWTOPO_ERR_INTERNAL) return 1;
  return flowtopo::exit_code_for(static_cast<flowtopo::ErrorCode>(status));
}

flowtopo_status flowtopo_model_load(const char* path, flowtopo_model** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    auto* h = new flowtopo_model{flowtopo::load_model(path)};
    *out = h;
  });
}

flowtopo_status flowtopo_model_save(const flowtopo_model* model, const char* path) {
  return guarded([&] {
    need(model, "model");
    need(path, "path");
    flowtopo::save_model(model->model, path);
  });
}

void flowtopo_model_free(flowtopo_model* model) { delete model; }

flowtopo_status flowtopo_model_shape(const flowtopo_model* model, int* dim, int* classes) {
  return guarded([&] {
    need(model, "model");
    if (dim) *dim = model->model.dim();
    if (classes) *classes = model->model.classes();
  });
}

flowtopo_status flowtopo_model_logprob(const flowtopo_model* model, const double* u, size_t n, int y, double* out) {
  return guarded([&] {
    need(model, "model");
    if (n == 0) return;
    need(u, "u");
    need(out, "out");
    const int d = model->model.dim();
    flowtopo::require(y < model->model.classes(), flowtopo::ErrorCode::kInvalidInput, "class index out of range");
    flowtopo::Mat m(static_cast<flowtopo::Index>(n), d);
    for (size_t i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) m(static_cast<flowtopo::Index>(i), j) = u[i * static_cast<size_t>(d) + j];
    std::optional<int> cls;
    if (y >= 0) cls = y;
    const flowtopo::Vec lp = model->model.log_prob(m, cls);
    for (size_t i = 0; i < n; ++i) out[i] = lp(static_cast<flowtopo::Index>(i));
  });
}

flowtopo_status flowtopo_model_normalizers(const flowtopo_model* model, double* out, size_t cap, size_t* count) {
  return guarded([&] {
    need(model, "model");
    need(count, "count");
    *count = 0;
    if (!model->model.base.is_resampled()) return;
    const auto& z = model->model.base.resampled().z;
    *count = z.size();
    if (cap > 0) need(out, "out");
    for (size_t i = 0; i < z.size() && i < cap; ++i) out[i] = z[i];
  });
}

flowtopo_status flowtopo_train(const char* config_path, const char* out_path, const uint64_t* seed,
                               flowtopo_train_summary* summary) {
  return guarded([&] {
    need(config_path, "config_path");
    need(out_path, "out_path");
    std::optional<std::uint64_t> s;
    if (seed) s = *seed;
    const flowtopo::TrainSummary r = flowtopo::cmd_train(config_path, out_path, s);
    if (summary) *summary = {r.steps, r.final_loss, r.z_min, r.z_max, r.val_nll};
  });
}

flowtopo_status flowtopo_eval(const char* model_path, const char* config_path, const char* out_csv,
                              const uint64_t* seed, flowtopo_metrics* metrics) {
  return guarded([&] {
    need(model_path, "model_path");
    need(config_path, "config_path");
    need(out_csv, "out_csv");
    std::optional<std::uint64_t> s;
    if (seed) s = *seed;
    const flowtopo::MetricReport r = flowtopo::cmd_eval(model_path, config_path, out_csv, s);
    if (metrics) *metrics = {r.kld, r.kld_se, r.auroc, r.tpr05, r.tpr10, r.tpr20};
  });
}

flowtopo_status flowtopo_render(const char* model_path, const char* mode, int cls, int resolution, double lo,
                                double hi, const char* out_prefix) {
  return guarded([&] {
    need(model_path, "model_path");
    need(mode, "mode");
    need(out_prefix, "out_prefix");
    flowtopo::RenderRequest req;
    req.mode = flowtopo::parse_render_mode(mode);
    if (cls >= 0) req.y = cls;
    req.grid = {lo, hi, resolution};
    flowtopo::cmd_render(model_path, req, out_prefix);
  });
}

flowtopo_status flowtopo_sweep(const char* sweep_path, const char* out_dir, int jobs, int* failed_cells) {
  return guarded([&] {
    need(sweep_path, "sweep_path");
    need(out_dir, "out_dir");
    const flowtopo::SweepOutcome o = flowtopo::cmd_sweep(sweep_path, out_dir, jobs);
    if (failed_cells) *failed_cells = static_cast<int>(o.failures.size());
    if (!o.failures.empty()) {
      std::string msg = std::to_string(o.failures.size()) + " sweep cell(s) failed";
      for (const std::string& f : o.failures) msg += "\n  " + f;
      flowtopo::throw_error(flowtopo::ErrorCode::kNumeric, msg);
    }
  });
}

}  // extern "C"
