#include "flowtopo/model_io.hpp"

#include <json.hpp>

#include "flowtopo/config.hpp"
#include "flowtopo/error.hpp"

namespace flowtopo {

using nlohmann::json;

namespace {

json params_to_json(const std::vector<ParamBlock*>& blocks) {
  json arr = json::array();
  for (const ParamBlock* p : blocks) {
    std::vector<double> data(static_cast<std::size_t>(p->value.size()));
    // Row-major on disk regardless of Eigen's storage order.
    std::size_t k = 0;
    for (Index r = 0; r < p->value.rows(); ++r)
      for (Index c = 0; c < p->value.cols(); ++c) data[k++] = p->value(r, c);
    arr.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}, {"data", data}});
  }
  return arr;
}

void params_from_json(const json& arr, const std::vector<ParamBlock*>& blocks) {
  if (!arr.is_array() || arr.size() != blocks.size())
    throw_error(ErrorCode::kParse, "model file: expected " + std::to_string(blocks.size()) + " parameter blocks");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    ParamBlock& p = *blocks[i];
    const json& e = arr[i];
    const std::string name = e.at("name").get<std::string>();
    if (name != p.name)
      throw_error(ErrorCode::kParse, "model file: parameter " + std::to_string(i) + " is '" + name + "', expected '" +
                                         p.name + "'");
    const auto rows = e.at("rows").get<Index>(), cols = e.at("cols").get<Index>();
    if (rows != p.value.rows() || cols != p.value.cols())
      throw_error(ErrorCode::kParse, "model file: shape mismatch for '" + name + "'");
    const json& data = e.at("data");
    if (!data.is_array() || static_cast<Index>(data.size()) != rows * cols)
      throw_error(ErrorCode::kParse, "model file: wrong value count for '" + name + "'");
    std::size_t k = 0;
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) p.value(r, c) = data[k++].get<double>();
  }
}

}  // namespace

std::string serialize_model(const FlowModel& model) {
  const ModelSpec& s = model.spec();
  auto& mut = const_cast<FlowModel&>(model);
  std::vector<ParamBlock*> flow_params, base_params;
  mut.flow.collect(flow_params);
  mut.base.collect(base_params);

  json j;
  j["format"] = kModelFormatTag;
  j["dim"] = s.dim;
  j["classes"] = s.classes;
  j["flow"] = {{"kind", coupling_kind_name(s.flow.kind)},
               {"layers", s.flow.layers},
               {"hidden", s.flow.hidden},
               {"activation", activation_name(s.flow.activation)},
               {"bins", s.flow.bins},
               {"tail_bound", s.flow.tail_bound},
               {"scale_cap", s.flow.scale_cap},
               {"params", params_to_json(flow_params)}};
  json base = {{"kind", base_kind_name(s.base.kind)},
               {"T", s.base.truncation},
               {"acceptance_hidden", s.base.acceptance_hidden},
               {"activation", activation_name(s.base.activation)},
               {"eps_a", s.base.accept_floor},
               {"params", params_to_json(base_params)}};
  if (model.base.is_resampled()) {
    base["z"] = model.base.resampled().z;
    base["z_samples"] = model.base.resampled().z_samples;
  }
  j["base"] = base;
  j["prior"] = model.prior.probs();
  j["provenance"] = {{"config_hash", model.provenance.config_hash},
                     {"seed", model.provenance.seed},
                     {"steps", model.provenance.steps},
                     {"objective", model.provenance.objective}};
  return j.dump(1) + "\n";
}

FlowModel deserialize_model(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw_error(ErrorCode::kParse, "model file is truncated or malformed at byte " + std::to_string(e.byte) + ": " +
                                       e.what());
  }
  if (!j.is_object()) throw_error(ErrorCode::kParse, "model file: top level must be an object");
  const std::string tag = j.contains("format") && j["format"].is_string() ? j["format"].get<std::string>() : "<none>";
  if (tag != kModelFormatTag)
    throw_error(ErrorCode::kVersion,
                std::string("model file format mismatch: expected '") + kModelFormatTag + "', found '" + tag + "'");

  try {
    ModelSpec s;
    s.dim = j.at("dim").get<int>();
    s.classes = j.at("classes").get<int>();
    const json& f = j.at("flow");
    const std::string fk = f.at("kind").get<std::string>();
    if (fk != "realnvp" && fk != "nsf") throw_error(ErrorCode::kParse, "model file: unknown flow kind '" + fk + "'");
    s.flow.kind = fk == "realnvp" ? CouplingKind::kAffine : CouplingKind::kSpline;
    s.flow.layers = f.at("layers").get<int>();
    s.flow.hidden = f.at("hidden").get<std::vector<int>>();
    s.flow.activation = parse_activation(f.at("activation").get<std::string>());
    s.flow.bins = f.at("bins").get<int>();
    s.flow.tail_bound = f.at("tail_bound").get<double>();
    s.flow.scale_cap = f.at("scale_cap").get<double>();
    const json& b = j.at("base");
    s.base.kind = parse_base_kind(b.at("kind").get<std::string>());
    s.base.truncation = b.at("T").get<int>();
    s.base.acceptance_hidden = b.at("acceptance_hidden").get<std::vector<int>>();
    s.base.activation = parse_activation(b.at("activation").get<std::string>());
    s.base.accept_floor = b.at("eps_a").get<double>();

    RngStream scratch(0, 0);
    FlowModel model(s, ClassPrior(j.at("prior").get<std::vector<double>>()), scratch);
    std::vector<ParamBlock*> flow_params, base_params;
    model.flow.collect(flow_params);
    model.base.collect(base_params);
    params_from_json(f.at("params"), flow_params);
    params_from_json(b.at("params"), base_params);
    if (model.base.is_resampled()) {
      ResampledBase& r = model.base.resampled();
      r.z = b.at("z").get<std::vector<double>>();
      r.z_samples = b.at("z_samples").get<std::vector<long long>>();
      if (r.z.size() != static_cast<std::size_t>(r.outputs()) || r.z_samples.size() != r.z.size())
        throw_error(ErrorCode::kParse, "model file: normalizer has wrong length");
    }
    const json& p = j.at("provenance");
    model.provenance.config_hash = p.at("config_hash").get<std::string>();
    model.provenance.seed = p.at("seed").get<std::uint64_t>();
    model.provenance.steps = p.at("steps").get<long long>();
    model.provenance.objective = p.value("objective", std::string());
    return model;
  } catch (const json::exception& e) {
    throw_error(ErrorCode::kParse, std::string("model file: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kParse) throw;
    throw_error(ErrorCode::kParse, std::string("model file: ") + e.what());
  }
}

void save_model(const FlowModel& model, const std::string& path) { write_file_atomic(path, serialize_model(model)); }

FlowModel load_model(const std::string& path) { return deserialize_model(read_file(path)); }

}  // namespace flowtopo
