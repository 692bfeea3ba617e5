#include "gtnp/checkpoint.hpp"

#include <fstream>
#include <set>

namespace gtnp {

namespace {

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint '" + path + "': " + e.what());
  }
  if (j.value("format", "") != "gtnp-checkpoint") throw FormatError("'" + path + "' is not a checkpoint");
  if (j.value("version", -1) != kCheckpointVersion) {
    throw FormatError("checkpoint '" + path + "' has version " + j.value("version", nlohmann::json(-1)).dump() +
                      ", expected " + std::to_string(kCheckpointVersion));
  }
  return j;
}

}  // namespace

template <std::floating_point T>
nlohmann::json params_to_json(const ParamStore<T>& store) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : store.params()) {
    std::vector<double> values(p.tensor.data().begin(), p.tensor.data().end());
    arr.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"values", values}});
  }
  return arr;
}

template <std::floating_point T>
void params_from_json(const nlohmann::json& params, ParamStore<T>& store) {
  std::set<std::string> seen;
  for (const auto& entry : params) {
    const auto name = entry.at("name").get<std::string>();
    if (!store.contains(name)) throw FormatError("checkpoint parameter '" + name + "' not present in model");
    auto tensor = store.get(name).tensor;
    const auto shape = entry.at("shape").get<Shape>();
    if (shape != tensor.shape()) {
      throw FormatError("checkpoint parameter '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                        shape_str(tensor.shape()));
    }
    const auto values = entry.at("values").get<std::vector<double>>();
    if (values.size() != tensor.numel()) throw FormatError("checkpoint parameter '" + name + "' is truncated");
    auto dst = tensor.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) dst[i] = T(values[i]);
    seen.insert(name);
  }
  if (seen.size() != store.size()) throw FormatError("checkpoint is missing model parameters");
}

template <std::floating_point T>
void save_checkpoint(const std::string& path, const ParamStore<T>& store, const nlohmann::json& model_config) {
  nlohmann::json j;
  j["format"] = "gtnp-checkpoint";
  j["version"] = kCheckpointVersion;
  j["dtype"] = sizeof(T) == 4 ? "float32" : "float64";
  j["model"] = model_config;
  j["params"] = params_to_json(store);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out << j.dump();
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

nlohmann::json read_checkpoint(const std::string& path) { return read_json(path); }

nlohmann::json read_checkpoint_model(const std::string& path) { return read_json(path).at("model"); }

template <std::floating_point T>
void load_checkpoint(const std::string& path, ParamStore<T>& store) {
  params_from_json(read_json(path).at("params"), store);
}

template void save_checkpoint(const std::string&, const ParamStore<float>&, const nlohmann::json&);
template void save_checkpoint(const std::string&, const ParamStore<double>&, const nlohmann::json&);
template void load_checkpoint(const std::string&, ParamStore<float>&);
template void load_checkpoint(const std::string&, ParamStore<double>&);
template nlohmann::json params_to_json(const ParamStore<float>&);
template nlohmann::json params_to_json(const ParamStore<double>&);
template void params_from_json(const nlohmann::json&, ParamStore<float>&);
template void params_from_json(const nlohmann::json&, ParamStore<double>&);

}  // namespace gtnp
