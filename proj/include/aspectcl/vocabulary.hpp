#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace aspectcl {

// Word-piece vocabulary. Whole words map to one id when known; other words
// are split greedily into the longest known pieces, with continuation
// pieces spelled "##<piece>". Unknown characters become <unk>.
class Vocabulary {
 public:
  static constexpr int kPad = 0;  // also the decoder start symbol
  static constexpr int kEos = 1;
  static constexpr int kUnk = 2;

  Vocabulary();

  // Known words (frequency-ranked, at most `max_words`, ties alphabetical)
  // plus every character seen, both as a start and a continuation piece.
  static Vocabulary build(std::span<const std::vector<std::string>> sentences, std::size_t max_words = 0);

  // Appends `token` unless present; returns its id.
  int add(std::string_view token);
  bool contains(std::string_view token) const { return index_.contains(std::string(token)); }
  int id(std::string_view token) const;  // kUnk when absent
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode_word(std::string_view word) const;

  // Pieces of all words plus, per word, the index of its first piece.
  // Throws AlignmentFailure when a word produces no piece.
  struct Encoding {
    std::vector<int> ids;
    std::vector<int> first_piece;
  };
  Encoding encode_words(std::span<const std::string> words) const;

  std::vector<int> encode_text(std::string_view text) const;
  // Inverse of encode_text for texts whose characters are all known.
  std::string decode(std::span<const int> ids) const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace aspectcl
