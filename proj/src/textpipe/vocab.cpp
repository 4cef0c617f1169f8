#include "urbanclip/textpipe/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include "json.hpp"

#include "urbanclip/errors.hpp"
#include "urbanclip/util/binary_io.hpp"
#include "urbanclip/util/hash.hpp"

namespace urbanclip::textpipe {
namespace {

const std::vector<std::string> kSpecials = {"[PAD]", "[BOS]", "[EOS]",
                                            "[CLS]", "[UNK]", "[MASK]"};

}  // namespace

Vocab::Vocab() : Vocab(kSpecials) {}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < kSpecials.size() ||
      !std::equal(kSpecials.begin(), kSpecials.end(), tokens_.begin())) {
    throw ConfigError("vocab must start with the six special tokens");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], int(i)).second) {
      throw ConfigError("duplicate vocab token '" + tokens_[i] + "'");
    }
  }
}

int Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const {
  return index_.count(std::string(token)) != 0;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw NotFoundError("token id " + std::to_string(id));
  return tokens_[std::size_t(id)];
}

std::string Vocab::hash() const {
  std::uint64_t h = util::fnv1a("");
  for (const auto& t : tokens_) {
    h = util::fnv1a(t, h);
    h = util::fnv1a(std::string_view("\n", 1), h);
  }
  return fmt::format("{:016x}", h);
}

void Vocab::save(const std::filesystem::path& path) const {
  util::write_file_atomic(path, nlohmann::json(tokens_).dump(1) + "\n");
}

Vocab Vocab::load(const std::filesystem::path& path) {
  return Vocab(nlohmann::json::parse(util::read_file(path)).get<std::vector<std::string>>());
}

std::vector<std::string> normalize_words(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream ss{std::string(text)};
  for (std::string raw; ss >> raw;) {
    const bool final_period = raw.back() == '.';
    std::string w;
    for (char c : raw) {
      const auto u = static_cast<unsigned char>(c);
      if (std::isalnum(u)) w += char(std::tolower(u));
    }
    if (!w.empty()) out.push_back(std::move(w));
    if (final_period) out.emplace_back(".");
  }
  return out;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty() && w != ".") out += ' ';
    out += w;
  }
  return out;
}

std::string normalize_text(std::string_view text) {
  return join_words(normalize_words(text));
}

Vocab build_vocab(const std::vector<std::string>& captions, int max_size) {
  if (max_size < kNumSpecials) {
    throw ConfigError("vocab max size must be at least " + std::to_string(kNumSpecials));
  }
  std::map<std::string, long> freq;
  for (const auto& c : captions) {
    for (auto& w : normalize_words(c)) ++freq[w];
  }
  std::vector<std::pair<std::string, long>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = kSpecials;
  const std::size_t budget = std::size_t(max_size - kNumSpecials);
  for (std::size_t i = 0; i < ranked.size() && i < budget; ++i) {
    tokens.push_back(ranked[i].first);
  }
  return Vocab(std::move(tokens));
}

TokenSequence tokenize(std::string_view text, const Vocab& vocab, int max_text_len) {
  if (max_text_len < 4) {
    throw ConfigError("max_text_len must be at least 4, got " + std::to_string(max_text_len));
  }
  const auto words = normalize_words(text);
  const std::size_t room = std::size_t(max_text_len - 3);
  TokenSequence seq;
  seq.ids.push_back(kBos);
  for (std::size_t i = 0; i < words.size() && i < room; ++i) seq.ids.push_back(vocab.id(words[i]));
  seq.ids.push_back(kEos);
  seq.ids.push_back(kCls);
  seq.length = int(seq.ids.size());
  seq.mask.assign(seq.ids.size(), true);
  seq.ids.resize(std::size_t(max_text_len), kPad);
  seq.mask.resize(std::size_t(max_text_len), false);
  return seq;
}

std::string detokenize(const std::vector<int>& ids, const Vocab& vocab) {
  std::vector<std::string> words;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id == kBos && i == 0) continue;
    if (id == kEos || id == kPad || id == kCls) break;
    if (id < kNumSpecials) continue;
    words.push_back(vocab.token(id));
  }
  return join_words(words);
}

}  // namespace urbanclip::textpipe
