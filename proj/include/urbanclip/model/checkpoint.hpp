#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "urbanclip/model/config.hpp"
#include "urbanclip/nn/parameters.hpp"

namespace urbanclip::model {

// ".uckpt": u64 LE header length, UTF-8 JSON header {format, kind, config,
// vocab_hash, meta, tensors:[{name, dtype, shape, byte_offset, byte_len}]},
// then the concatenated little-endian float32 payloads (offsets are relative
// to the first payload byte).
struct Checkpoint {
  std::string kind = "urbanclip";
  ModelConfig config;
  std::string vocab_hash;
  nlohmann::json meta = nlohmann::json::object();
  nn::ParameterSet<float> params;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
// Validates tensor sizes against the directory; shape validation against the
// config happens when a model is constructed from the parameters.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace urbanclip::model
