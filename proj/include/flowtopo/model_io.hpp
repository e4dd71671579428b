#pragma once

#include <string>

#include "flowtopo/model.hpp"

namespace flowtopo {

inline constexpr const char* kModelFormatTag = "flowtopo-model-v1";

/// JSON model file. Every double is written as the shortest decimal that
/// parses back to the same bits, so save/load is lossless.
std::string serialize_model(const FlowModel& model);
FlowModel deserialize_model(const std::string& text);

void save_model(const FlowModel& model, const std::string& path);
FlowModel load_model(const std::string& path);

}  // namespace flowtopo
