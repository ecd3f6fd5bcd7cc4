#include <cstring>
#include <fstream>

#include "llts/detector.hpp"
#include "llts/errors.hpp"
#include "llts/serialize.hpp"

namespace llts {

namespace {
constexpr char kMagic[8] = {'L', 'L', 'T', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const DetectorModel& m, const nlohmann::json& extra) {
  const ParamList params = m.params();
  nlohmann::json manifest;
  manifest["version"] = kVersion;
  manifest["config"] = m.cfg.to_json();
  nlohmann::json list = nlohmann::json::array();
  for (const auto& p : params) list.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  manifest["params"] = list;
  manifest["extra"] = extra;
  const std::string text = manifest.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof kMagic);
  write_u32_le(os, kVersion);
  write_u32_le(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params) write_tensor(os, p.tensor);
  if (!os) throw DataError("failed writing checkpoint " + path.string());
}

DetectorModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  char magic[8] = {};
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw DataError(path.string() + " is not a checkpoint");
  const std::uint32_t version = read_u32_le(is);
  if (version != kVersion)
    throw DataError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kVersion) + ")");
  const std::uint32_t len = read_u32_le(is);
  std::string text(len, '\0');
  is.read(text.data(), len);
  if (!is) throw DataError("truncated checkpoint manifest in " + path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint manifest: " + std::string(e.what()));
  }

  DetectorModel m = make_model(ModelConfig::from_json(manifest.at("config")), 0);
  ParamList params = m.params();
  const auto& listed = manifest.at("params");
  if (listed.size() != params.size())
    throw DataError("checkpoint lists " + std::to_string(listed.size()) + " tensors, model has " +
                    std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (listed[i].at("name").get<std::string>() != params[i].name)
      throw DataError("checkpoint tensor " + std::to_string(i) + " is '" + listed[i].at("name").get<std::string>() +
                      "', model expects '" + params[i].name + "'");
    Tensor t = read_tensor(is);
    if (t.shape() != params[i].tensor.shape())
      throw DataError("checkpoint tensor " + params[i].name + " has shape " + shape_str(t.shape()) + ", expected " +
                      shape_str(params[i].tensor.shape()));
    std::copy(t.data().begin(), t.data().end(), params[i].tensor.mutable_data().begin());
  }
  return m;
}

}  // namespace llts
