#pragma once

#include <string>

#include "gtnp/nn.hpp"
#include "json.hpp"

namespace gtnp {

inline constexpr int kCheckpointVersion = 1;

/// JSON checkpoint: {"format", "version", "dtype", "model", "params": [{name, shape, values}]}.
template <std::floating_point T>
void save_checkpoint(const std::string& path, const ParamStore<T>& store, const nlohmann::json& model_config);

/// Whole checkpoint document after format and version checks.
nlohmann::json read_checkpoint(const std::string& path);

/// Reads the model section without touching any parameters.
nlohmann::json read_checkpoint_model(const std::string& path);

/// Copies stored values into an already-built store. Names and shapes must match exactly.
template <std::floating_point T>
void load_checkpoint(const std::string& path, ParamStore<T>& store);

template <std::floating_point T>
nlohmann::json params_to_json(const ParamStore<T>& store);
template <std::floating_point T>
void params_from_json(const nlohmann::json& params, ParamStore<T>& store);

}  // namespace gtnp
