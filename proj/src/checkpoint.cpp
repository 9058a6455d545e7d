#include "cdsp/checkpoint.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "cdsp/io.hpp"

namespace cdsp {

namespace fs = std::filesystem;

void save_checkpoint(const std::string& dir, const ParamMap& params) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  nlohmann::json manifest;
  manifest["params"] = nlohmann::json::array();
  int idx = 0;
  for (const auto& [name, tensor] : params) {
    char file[32];
    std::snprintf(file, sizeof(file), "p%03d.tensor", idx++);
    save_tensor((fs::path(dir) / file).string(), tensor);
    manifest["params"].push_back(
        {{"name", name}, {"shape", tensor.shape}, {"file", file}});
  }
  std::ofstream f(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!f) fail(errc::io, "cannot write manifest in '", dir, "'");
  f << manifest.dump(2) << "\n";
}

ParamMap load_checkpoint(const std::string& dir) {
  const auto path = fs::path(dir) / "manifest.json";
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(errc::io, "cannot open checkpoint manifest '", path.string(), "'");
  nlohmann::json manifest;
  try {
    f >> manifest;
  } catch (const nlohmann::json::exception& e) {
    fail(errc::invalid, "malformed checkpoint manifest: ", e.what());
  }
  ParamMap out;
  for (const auto& entry : manifest.at("params")) {
    const auto name = entry.at("name").get<std::string>();
    const auto file = entry.at("file").get<std::string>();
    auto tensor = load_tensor<float>((fs::path(dir) / file).string());
    const auto shape = entry.at("shape").get<std::vector<int>>();
    CDSP_CHECK(tensor.shape == shape, "checkpoint tensor '", name,
               "' shape does not match its manifest entry");
    out.emplace_back(name, std::move(tensor));
  }
  return out;
}

const TensorData<float>& checkpoint_get(const ParamMap& params, const std::string& name) {
  for (const auto& [n, t] : params)
    if (n == name) return t;
  fail(errc::invalid, "checkpoint has no parameter '", name, "'");
}

}  // namespace cdsp
