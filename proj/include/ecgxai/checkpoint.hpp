#pragma once

#include <filesystem>

#include "ecgxai/io_util.hpp"
#include "ecgxai/nn.hpp"

namespace ecgxai {

io::Json spec_to_json(const nn::ModelSpec& spec);
nn::ModelSpec spec_from_json(const io::Json& j);

/// Writes manifest.json plus one little-endian float64 file per parameter.
/// Keys of `extra` (training config, metrics, label names) are merged into
/// the manifest.
void save_checkpoint(const nn::Model& model, const std::filesystem::path& dir,
                     const io::Json& extra = io::Json::object());

struct Checkpoint {
  nn::Model model;
  io::Json manifest;
};

Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace ecgxai
