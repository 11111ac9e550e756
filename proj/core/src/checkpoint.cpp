#include "sgtr/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sgtr {

using nlohmann::json;

void write_file_atomic(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp + " for writing");
    os << contents;
    if (!os) throw std::runtime_error("write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("rename " + tmp + " -> " + path + " failed");
}

void save_params(const std::map<std::string, DiffValue>& params, const json& config,
                 const std::string& path) {
  json j;
  j["version"] = 1;
  json p = json::object();
  for (const auto& [name, v] : params) {
    p[name] = {{"shape", v.shape()}, {"data", v.data()}};
  }
  j["params"] = std::move(p);
  if (!config.is_null()) j["config"] = config;
  write_file_atomic(path, j.dump());
}

std::map<std::string, DiffValue> load_params(const std::string& path, json* config_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed checkpoint " + path + ": " + e.what());
  }
  if (!j.contains("version") || j["version"].get<int>() != 1)
    throw std::runtime_error("checkpoint " + path + ": unsupported version");
  std::map<std::string, DiffValue> out;
  for (auto& [name, item] : j.at("params").items()) {
    Shape shape = item.at("shape").get<Shape>();
    std::vector<double> data = item.at("data").get<std::vector<double>>();
    out.emplace(name, DiffValue::param(std::move(shape), std::move(data)));
  }
  if (config_out) *config_out = j.contains("config") ? j["config"] : json();
  return out;
}

}  // namespace sgtr
