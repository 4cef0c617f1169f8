#include "urbanclip/corpus/split.hpp"

#include <algorithm>
#include <random>
#include <set>

#include "json.hpp"

#include "urbanclip/errors.hpp"
#include "urbanclip/util/binary_io.hpp"

namespace urbanclip::corpus {

CorpusSplit split_corpus(const std::vector<std::string>& ids, std::uint64_t seed) {
  if (ids.size() < 5) {
    throw DomainError("need at least 5 ids to form three non-empty splits, got " +
                      std::to_string(ids.size()));
  }
  if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size()) {
    throw DomainError("split ids must be unique");
  }
  std::vector<std::string> order = ids;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n = order.size();
  const std::size_t n_train = n * 6 / 10;
  const std::size_t n_val = n * 2 / 10;
  CorpusSplit s;
  s.seed = seed;
  s.train_ids.assign(order.begin(), order.begin() + std::ptrdiff_t(n_train));
  s.val_ids.assign(order.begin() + std::ptrdiff_t(n_train),
                   order.begin() + std::ptrdiff_t(n_train + n_val));
  s.test_ids.assign(order.begin() + std::ptrdiff_t(n_train + n_val), order.end());
  return s;
}

void write_split(const CorpusSplit& split, const std::filesystem::path& path) {
  const nlohmann::json j = {{"seed", split.seed},
                            {"train", split.train_ids},
                            {"val", split.val_ids},
                            {"test", split.test_ids}};
  util::write_file_atomic(path, j.dump(1) + "\n");
}

CorpusSplit read_split(const std::filesystem::path& path) {
  const auto j = nlohmann::json::parse(util::read_file(path));
  CorpusSplit s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.train_ids = j.at("train").get<std::vector<std::string>>();
  s.val_ids = j.at("val").get<std::vector<std::string>>();
  s.test_ids = j.at("test").get<std::vector<std::string>>();
  return s;
}

}  // namespace urbanclip::corpus
