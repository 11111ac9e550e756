#pragma once

// Checkpoint persistence: {"version":1, "params": {name: {"shape":[...],
// "data":[...]}}} with an optional "config" object carried alongside so a
// checkpoint is self-describing.

#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "sgtr/tensor.hpp"

namespace sgtr {

void save_params(const std::map<std::string, DiffValue>& params,
                 const nlohmann::json& config, const std::string& path);

// Loaded tensors are params (requires_grad). Throws on version mismatch or
// malformed files.
std::map<std::string, DiffValue> load_params(const std::string& path,
                                             nlohmann::json* config_out = nullptr);

// Atomic file write: temp file in the same directory, then rename.
void write_file_atomic(const std::string& path, const std::string& contents);

}  // namespace sgtr
