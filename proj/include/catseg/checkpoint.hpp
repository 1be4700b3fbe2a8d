#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

// Checkpoint directory:
//   weights.bin    concatenated raw little-endian tensor bytes
//   manifest.json  {"tensors": [{name, dtype, shape, offset, bytes}], "config": {...}}
// Tensors are written in module registration order; nothing time-dependent
// is recorded, so identical parameters give identical bytes.
namespace catseg {

void save_checkpoint(const std::filesystem::path& dir, const torch::nn::Module& module,
                     const nlohmann::json& config);

/// Loads every manifest tensor into the same-named parameter or buffer.
/// Missing names, extra names and shape mismatches throw ShapeError.
void load_checkpoint(const std::filesystem::path& dir, torch::nn::Module& module);

nlohmann::json read_checkpoint_config(const std::filesystem::path& dir);

}  // namespace catseg
