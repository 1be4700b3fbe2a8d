#include "catseg/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <set>

#include "catseg/corpus_io.hpp"
#include "catseg/errors.hpp"

namespace catseg {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "float32";
    case torch::kFloat64: return "float64";
    default: throw ShapeError("unsupported checkpoint dtype");
  }
}

torch::ScalarType dtype_from(const std::string& s) {
  if (s == "float32") return torch::kFloat32;
  if (s == "float64") return torch::kFloat64;
  throw ShapeError("unsupported checkpoint dtype '" + s + "'");
}

std::vector<std::pair<std::string, torch::Tensor>> named_state(const torch::nn::Module& module) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& p : module.named_parameters(true)) out.emplace_back(p.key(), p.value());
  for (const auto& b : module.named_buffers(true)) out.emplace_back(b.key(), b.value());
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const torch::nn::Module& module,
                     const nlohmann::json& config) {
  std::filesystem::create_directories(dir);
  std::ofstream blob(dir / "weights.bin", std::ios::binary);
  if (!blob) throw InputError("cannot write " + (dir / "weights.bin").string());

  nlohmann::json tensors = nlohmann::json::array();
  std::int64_t offset = 0;
  for (const auto& [name, tensor] : named_state(module)) {
    const auto t = tensor.detach().cpu().contiguous();
    const auto bytes = static_cast<std::int64_t>(t.numel() * t.element_size());
    blob.write(static_cast<const char*>(t.data_ptr()), bytes);
    tensors.push_back({{"name", name},
                       {"dtype", dtype_name(t.scalar_type())},
                       {"shape", t.sizes().vec()},
                       {"offset", offset},
                       {"bytes", bytes}});
    offset += bytes;
  }
  if (!blob) throw InputError("failed writing " + (dir / "weights.bin").string());
  io::write_json(dir / "manifest.json", {{"tensors", tensors}, {"config", config}});
}

void load_checkpoint(const std::filesystem::path& dir, torch::nn::Module& module) {
  const nlohmann::json manifest = io::read_json(dir / "manifest.json");
  std::ifstream blob(dir / "weights.bin", std::ios::binary);
  if (!blob) throw InputError("cannot read " + (dir / "weights.bin").string());

  auto state = named_state(module);
  std::set<std::string> seen;
  torch::NoGradGuard no_grad;
  for (const auto& entry : manifest.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    auto it = std::find_if(state.begin(), state.end(), [&](const auto& p) { return p.first == name; });
    if (it == state.end()) throw ShapeError("checkpoint tensor '" + name + "' has no counterpart");
    const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
    if (it->second.sizes().vec() != shape) {
      throw ShapeError("checkpoint tensor '" + name + "' has a different shape");
    }
    auto loaded = torch::empty(shape, torch::TensorOptions().dtype(dtype_from(entry.at("dtype"))));
    const auto bytes = entry.at("bytes").get<std::int64_t>();
    if (bytes != static_cast<std::int64_t>(loaded.numel() * loaded.element_size())) {
      throw ShapeError("checkpoint tensor '" + name + "' has an inconsistent byte count");
    }
    blob.seekg(entry.at("offset").get<std::int64_t>());
    blob.read(static_cast<char*>(loaded.data_ptr()), bytes);
    if (blob.gcount() != bytes) throw ShapeError("checkpoint blob truncated at '" + name + "'");
    it->second.copy_(loaded);
    seen.insert(name);
  }
  for (const auto& [name, _] : state) {
    if (!seen.count(name)) throw ShapeError("checkpoint lacks tensor '" + name + "'");
  }
}

nlohmann::json read_checkpoint_config(const std::filesystem::path& dir) {
  return io::read_json(dir / "manifest.json").value("config", nlohmann::json::object());
}

}  // namespace catseg
