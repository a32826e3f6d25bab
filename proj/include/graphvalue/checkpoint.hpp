#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "graphvalue/errors.hpp"
#include "graphvalue/tensor.hpp"

namespace graphvalue {

inline constexpr const char* kCheckpointFormat = "graphvalue-checkpoint-v1";

// Serializes parameters plus a model-specific hyperparameter object. Doubles
// round-trip exactly (shortest-representation printing on save, strtod on
// load), so save -> load -> save is byte-stable.
inline nlohmann::json checkpoint_to_json(const ParamStore& params, const nlohmann::json& hyper) {
  nlohmann::json tensors = nlohmann::json::array();
  for (int i = 0; i < params.size(); ++i) {
    const Tensor& t = params[i];
    nlohmann::json shape = nlohmann::json::array();
    for (int d = 0; d < t.shape.rank; ++d) shape.push_back(t.shape.dims[d]);
    tensors.push_back({{"name", params.names[static_cast<std::size_t>(i)]},
                       {"shape", shape},
                       {"data", t.data}});
  }
  return nlohmann::json{{"format", kCheckpointFormat}, {"hyper", hyper}, {"tensors", tensors}};
}

struct Checkpoint {
  ParamStore params;
  nlohmann::json hyper;
};

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("format") || !j["format"].is_string() ||
      j["format"].get<std::string>() != kCheckpointFormat)
    throw ParseError(std::string("checkpoint: missing or unknown format marker (expected \"") + kCheckpointFormat +
                     "\")");
  if (!j.contains("hyper") || !j.contains("tensors") || !j["tensors"].is_array())
    throw ParseError("checkpoint: expected 'hyper' object and 'tensors' array");
  Checkpoint c;
  c.hyper = j["hyper"];
  for (const nlohmann::json& tj : j["tensors"]) {
    if (!tj.is_object() || !tj.contains("name") || !tj.contains("shape") || !tj.contains("data"))
      throw ParseError("checkpoint: tensor entry missing name/shape/data");
    Shape s;
    if (!tj["shape"].is_array() || tj["shape"].empty() || tj["shape"].size() > 3)
      throw ParseError("checkpoint: tensor '" + tj["name"].get<std::string>() + "' has unsupported shape");
    s.rank = static_cast<int>(tj["shape"].size());
    for (int d = 0; d < s.rank; ++d) s.dims[d] = tj["shape"][static_cast<std::size_t>(d)].get<int>();
    std::vector<double> data = tj["data"].get<std::vector<double>>();
    if (static_cast<int>(data.size()) != s.numel())
      throw ParseError("checkpoint: tensor '" + tj["name"].get<std::string>() + "' has " +
                       std::to_string(data.size()) + " values for shape " + s.str());
    Tensor t(s, std::move(data));
    check_finite(t, tj["name"].get<std::string>().c_str());
    c.params.add(tj["name"].get<std::string>(), std::move(t));
  }
  return c;
}

inline void save_checkpoint(const std::string& path, const ParamStore& params, const nlohmann::json& hyper) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open checkpoint file for writing: " + path);
  out << checkpoint_to_json(params, hyper).dump(2) << "\n";
  if (!out) throw Error("failed writing checkpoint file: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint '" + path + "' is not valid JSON: " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace graphvalue
