#pragma once

// Word-level (default) or byte-level tokenization with a frequency-ordered
// vocabulary. Word mode keeps punctuation as standalone tokens and treats
// non-ASCII bytes as word characters so UTF-8 words survive intact.

#include <string_view>
#include <unordered_map>

#include "common.hpp"

namespace backpack {

enum class TokenizerMode { Word, Byte };

inline const char* to_string(TokenizerMode m) { return m == TokenizerMode::Word ? "word" : "byte"; }

inline TokenizerMode tokenizer_mode_from(const std::string& s) {
  if (s == "word") return TokenizerMode::Word;
  if (s == "byte") return TokenizerMode::Byte;
  throw UsageError("unknown tokenizer mode: " + s);
}

class Vocabulary {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kBos = 1;
  static constexpr const char* kUnkToken = "<unk>";
  static constexpr const char* kBosToken = "<bos>";

  static std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
      if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
    };
    for (unsigned char c : text) {
      bool wordish = std::isalnum(c) || c >= 0x80 || c == '\'' || c == '-' || c == '_';
      if (wordish) {
        cur.push_back(static_cast<char>(c));
      } else if (std::isspace(c)) {
        flush();
      } else {
        flush();
        out.emplace_back(1, static_cast<char>(c));  // punctuation is its own token
      }
    }
    flush();
    return out;
  }

  // Frequency-descending order, lexicographic tie-break; max_size counts the
  // two special tokens.
  static Vocabulary build(std::string_view corpus, int min_freq = 1,
                          int max_size = 1 << 30, TokenizerMode mode = TokenizerMode::Word) {
    if (corpus.empty()) throw DataError("build_vocab: empty corpus");
    if (min_freq < 1) throw UsageError("build_vocab: min_freq must be >= 1");
    if (max_size < 3) throw UsageError("build_vocab: max_size leaves no room beyond specials");
    Vocabulary v;
    v.mode_ = mode;
    v.id2word_ = {kUnkToken, kBosToken};
    if (mode == TokenizerMode::Byte) {
      for (int b = 0; b < 256; ++b) v.id2word_.emplace_back(1, static_cast<char>(b));
    } else {
      std::unordered_map<std::string, long> freq;
      for (std::string& t : tokenize(corpus)) ++freq[std::move(t)];
      if (freq.empty()) throw DataError("build_vocab: corpus contains no tokens");
      std::vector<std::pair<std::string, long>> order(freq.begin(), freq.end());
      std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
      });
      int cap = max_size - 2;
      for (const auto& [word, count] : order) {
        if (count < min_freq || static_cast<int>(v.id2word_.size()) - 2 >= cap) break;
        v.id2word_.push_back(word);
      }
    }
    v.rebuild_index();
    return v;
  }

  // Reassembles a vocabulary from checkpoint data.
  static Vocabulary from_tokens(std::vector<std::string> id2word, TokenizerMode mode) {
    if (id2word.size() < 2 || id2word[0] != kUnkToken || id2word[1] != kBosToken)
      throw DataError("vocabulary: special tokens missing or misplaced");
    Vocabulary v;
    v.mode_ = mode;
    v.id2word_ = std::move(id2word);
    v.rebuild_index();
    return v;
  }

  TokenizerMode mode() const { return mode_; }
  int size() const { return static_cast<int>(id2word_.size()); }

  int id(std::string_view token) const {
    auto it = word2id_.find(std::string(token));
    return it == word2id_.end() ? kUnk : it->second;
  }

  bool contains(std::string_view token) const {
    return word2id_.find(std::string(token)) != word2id_.end();
  }

  const std::string& word(int id) const {
    if (id < 0 || id >= size()) throw DimensionError("vocabulary: id out of range");
    return id2word_[static_cast<size_t>(id)];
  }

  const std::vector<std::string>& tokens() const { return id2word_; }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> ids;
    if (mode_ == TokenizerMode::Byte) {
      ids.reserve(text.size());
      for (unsigned char c : text) ids.push_back(2 + static_cast<int>(c));
      return ids;
    }
    for (const std::string& t : tokenize(text)) ids.push_back(id(t));
    return ids;
  }

  std::string decode(std::span<const int> ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
      const std::string& w = word(ids[i]);
      if (mode_ == TokenizerMode::Word && i > 0) out += ' ';
      out += w;
    }
    return out;
  }

 private:
  void rebuild_index() {
    word2id_.clear();
    for (size_t i = 0; i < id2word_.size(); ++i) {
      if (!word2id_.emplace(id2word_[i], static_cast<int>(i)).second)
        throw DataError("vocabulary: duplicate token '" + id2word_[i] + "'");
    }
  }

  TokenizerMode mode_ = TokenizerMode::Word;
  std::vector<std::string> id2word_;
  std::unordered_map<std::string, int> word2id_;
};

}  // namespace backpack
