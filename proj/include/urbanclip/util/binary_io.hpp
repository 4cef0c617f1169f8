#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace urbanclip::util {

// 16-byte header "URBC" + u32 LE H, W, C, then H*W*C LE float32.
struct Float32Blob {
  std::uint32_t h = 0;
  std::uint32_t w = 0;
  std::uint32_t c = 0;
  std::vector<float> data;
};

void write_f32_blob(const std::filesystem::path& path, const Float32Blob& blob);
Float32Blob read_f32_blob(const std::filesystem::path& path);

// In-memory variants (HTTP bodies).
std::string encode_f32_blob(const Float32Blob& blob);
Float32Blob decode_f32_blob(const std::string& bytes);

std::string read_file(const std::filesystem::path& path);
// Writes via a temporary sibling and rename so readers never see partial files.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace urbanclip::util
