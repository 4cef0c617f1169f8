#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace urbanclip::textpipe {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kCls = 3;
inline constexpr int kUnk = 4;
inline constexpr int kMask = 5;
inline constexpr int kNumSpecials = 6;

class Vocab {
 public:
  Vocab();  // specials only
  explicit Vocab(std::vector<std::string> tokens);  // specials must lead

  int size() const { return int(tokens_.size()); }
  int id(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  // Stable digest of the token list, used to pair checkpoints with vocabs.
  std::string hash() const;

  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);
  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Lowercases, strips punctuation except a sentence-final period (its own
// token), splits on whitespace.
std::vector<std::string> normalize_words(std::string_view text);
// Words joined by spaces with periods attached to the preceding word.
std::string join_words(const std::vector<std::string>& words);
std::string normalize_text(std::string_view text);

// Frequency-ranked (ties lexicographic), truncated to max_size - 6 words.
Vocab build_vocab(const std::vector<std::string>& captions, int max_size = 2048);

struct TokenSequence {
  std::vector<int> ids;
  std::vector<bool> mask;  // true = real token
  int length = 0;          // real tokens including BOS, EOS and CLS

  int cls_position() const { return length - 1; }
};

// [BOS] words [EOS] [CLS] [PAD]...; excess words are dropped, never specials.
TokenSequence tokenize(std::string_view text, const Vocab& vocab, int max_text_len);

// Words between BOS and EOS (or up to the first special); specials skipped.
std::string detokenize(const std::vector<int>& ids, const Vocab& vocab);

}  // namespace urbanclip::textpipe
