#include "tfda/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "tfda/error.hpp"

namespace tfda {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written in host order; big-endian hosts need byte swaps");

namespace {

std::string crc_hex(const void* data, size_t size) {
  const auto crc = crc32(0L, static_cast<const Bytef*>(data), static_cast<uInt>(size));
  char buf[12];
  std::snprintf(buf, sizeof(buf), "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

}  // namespace

void checkpoint_save(const Checkpoint& checkpoint, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "arrays", ec);
  if (ec) fail(ErrorCode::kIo, "cannot create " + (dir / "arrays").string() + ": " + ec.message());

  json manifest{{"version", checkpoint.version},
                {"config_hash", checkpoint.config_hash},
                {"config", json::parse(checkpoint.config_json.empty() ? "{}" : checkpoint.config_json)},
                {"alternation", checkpoint.alternation},
                {"lambda_s", checkpoint.lambda_s},
                {"lambda_t", checkpoint.lambda_t},
                {"history", json::parse(checkpoint.history_json)},
                {"arrays", json::array()}};
  int index = 0;
  for (const auto& [name, tensor] : checkpoint.arrays) {
    const auto data = tensor.detach().to(torch::kFloat32).contiguous();
    char file[32];
    std::snprintf(file, sizeof(file), "arrays/%05d.f32", index++);
    const size_t bytes = static_cast<size_t>(data.numel()) * sizeof(float);
    std::ofstream out(dir / file, std::ios::binary);
    out.write(static_cast<const char*>(data.data_ptr()), static_cast<std::streamsize>(bytes));
    out.close();
    if (!out) fail(ErrorCode::kIo, "cannot write " + (dir / file).string());
    manifest["arrays"].push_back({{"name", name},
                                  {"file", file},
                                  {"shape", data.sizes().vec()},
                                  {"dtype", "float32-le"},
                                  {"crc32", crc_hex(data.data_ptr(), bytes)}});
  }
  const fs::path path = dir / "checkpoint.json";
  std::ofstream out(path);
  out << manifest.dump(2) << '\n';
  out.close();
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
}

Checkpoint checkpoint_load(const fs::path& dir) {
  const fs::path path = dir / "checkpoint.json";
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kValidation, "missing checkpoint manifest " + path.string());
  Checkpoint cp;
  try {
    const json manifest = json::parse(in);
    cp.version = manifest.at("version").get<int>();
    if (cp.version != kCheckpointVersion) {
      fail(ErrorCode::kValidation, "checkpoint version " + std::to_string(cp.version) +
                                       " unsupported (expected " +
                                       std::to_string(kCheckpointVersion) + ")");
    }
    cp.config_hash = manifest.at("config_hash").get<std::string>();
    cp.config_json = manifest.at("config").dump();
    cp.alternation = manifest.at("alternation").get<int>();
    cp.lambda_s = manifest.at("lambda_s").get<double>();
    cp.lambda_t = manifest.at("lambda_t").get<double>();
    cp.history_json = manifest.at("history").dump();
    for (const json& entry : manifest.at("arrays")) {
      const auto name = entry.at("name").get<std::string>();
      const fs::path file = dir / entry.at("file").get<std::string>();
      const auto shape = entry.at("shape").get<std::vector<int64_t>>();
      if (entry.at("dtype").get<std::string>() != "float32-le") {
        fail(ErrorCode::kValidation, "array " + name + ": unsupported dtype");
      }
      auto tensor = torch::empty(shape, torch::kFloat32);
      const size_t bytes = static_cast<size_t>(tensor.numel()) * sizeof(float);
      std::ifstream blob(file, std::ios::binary);
      if (!blob) fail(ErrorCode::kValidation, "missing array file " + file.string());
      blob.read(static_cast<char*>(tensor.data_ptr()), static_cast<std::streamsize>(bytes));
      if (static_cast<size_t>(blob.gcount()) != bytes || blob.peek() != EOF) {
        fail(ErrorCode::kValidation, "array file " + file.string() + " has the wrong size");
      }
      if (crc_hex(tensor.data_ptr(), bytes) != entry.at("crc32").get<std::string>()) {
        fail(ErrorCode::kValidation, "checksum mismatch in " + file.string());
      }
      cp.arrays.emplace(name, tensor);
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kValidation, "malformed checkpoint " + path.string() + ": " + e.what());
  }
  return cp;
}

void collect_arrays(const std::string& prefix, const torch::nn::Module& module,
                    std::map<std::string, torch::Tensor>& arrays) {
  for (const auto& item : module.named_parameters()) {
    arrays[prefix + "/" + item.key()] = item.value().detach().clone();
  }
}

void restore_arrays(const std::string& prefix, torch::nn::Module& module,
                    const std::map<std::string, torch::Tensor>& arrays) {
  torch::NoGradGuard guard;
  for (auto& item : module.named_parameters()) {
    const auto name = prefix + "/" + item.key();
    auto it = arrays.find(name);
    if (it == arrays.end()) fail(ErrorCode::kValidation, "checkpoint is missing array " + name);
    if (it->second.sizes() != item.value().sizes()) {
      fail(ErrorCode::kValidation, "checkpoint array " + name + " has the wrong shape");
    }
    item.value().copy_(it->second);
  }
}

bool has_prefix(const std::map<std::string, torch::Tensor>& arrays, const std::string& prefix) {
  auto it = arrays.lower_bound(prefix + "/");
  return it != arrays.end() && it->first.rfind(prefix + "/", 0) == 0;
}

}  // namespace tfda
