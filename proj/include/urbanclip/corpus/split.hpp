#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace urbanclip::corpus {

struct CorpusSplit {
  std::uint64_t seed = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::vector<std::string> test_ids;
  bool operator==(const CorpusSplit&) const = default;
};

// Seeded shuffle, then floor(0.6 n) train, floor(0.2 n) val, rest test.
// Needs at least 5 unique ids.
CorpusSplit split_corpus(const std::vector<std::string>& ids, std::uint64_t seed);

void write_split(const CorpusSplit& split, const std::filesystem::path& path);
CorpusSplit read_split(const std::filesystem::path& path);

}  // namespace urbanclip::corpus
