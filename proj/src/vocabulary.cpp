#include "aspectcl/vocabulary.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "aspectcl/errors.hpp"
#include "aspectcl/types.hpp"

namespace aspectcl {

namespace {

constexpr std::string_view kContinuation = "##";

// Byte length of the UTF-8 sequence starting with `lead`.
std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;
}

std::vector<std::string_view> characters(std::string_view word) {
  std::vector<std::string_view> chars;
  for (std::size_t i = 0; i < word.size();) {
    std::size_t len = std::min(utf8_length(static_cast<unsigned char>(word[i])), word.size() - i);
    chars.push_back(word.substr(i, len));
    i += len;
  }
  return chars;
}

}  // namespace

Vocabulary::Vocabulary() {
  add("<pad>");
  add("</s>");
  add("<unk>");
}

Vocabulary Vocabulary::build(std::span<const std::vector<std::string>> sentences, std::size_t max_words) {
  std::map<std::string, std::size_t> counts;
  std::set<std::string> chars;
  for (const auto& words : sentences) {
    for (const auto& w : words) {
      ++counts[w];
      for (auto c : characters(w)) chars.emplace(c);
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (max_words > 0 && ranked.size() > max_words) ranked.resize(max_words);

  Vocabulary vocab;
  for (const auto& c : chars) {
    vocab.add(c);
    vocab.add(std::string(kContinuation) + c);
  }
  for (const auto& [w, n] : ranked) vocab.add(w);
  return vocab;
}

int Vocabulary::add(std::string_view token) {
  auto [it, inserted] = index_.try_emplace(std::string(token), static_cast<int>(tokens_.size()));
  if (inserted) tokens_.emplace_back(token);
  return it->second;
}

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Vocabulary::encode_word(std::string_view word) const {
  std::vector<int> ids;
  if (word.empty()) return ids;
  if (auto it = index_.find(std::string(word)); it != index_.end()) return {it->second};

  const auto chars = characters(word);
  std::size_t start = 0;
  while (start < chars.size()) {
    int found = -1;
    std::size_t end = chars.size();
    for (; end > start; --end) {
      std::string piece = start > 0 ? std::string(kContinuation) : std::string();
      for (std::size_t k = start; k < end; ++k) piece += chars[k];
      if (auto it = index_.find(piece); it != index_.end()) {
        found = it->second;
        break;
      }
    }
    if (found < 0) {
      ids.push_back(kUnk);
      ++start;
    } else {
      ids.push_back(found);
      start = end;
    }
  }
  return ids;
}

Vocabulary::Encoding Vocabulary::encode_words(std::span<const std::string> words) const {
  Encoding enc;
  for (std::size_t i = 0; i < words.size(); ++i) {
    auto pieces = encode_word(words[i]);
    if (pieces.empty()) {
      throw AlignmentFailure("word " + std::to_string(i) + " ('" + words[i] + "') maps to no sub-token");
    }
    enc.first_piece.push_back(static_cast<int>(enc.ids.size()));
    enc.ids.insert(enc.ids.end(), pieces.begin(), pieces.end());
  }
  return enc;
}

std::vector<int> Vocabulary::encode_text(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : split_whitespace(text)) {
    auto pieces = encode_word(w);
    ids.insert(ids.end(), pieces.begin(), pieces.end());
  }
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kPad || id == kEos) continue;
    const std::string& tok = token(id);
    if (tok.starts_with(kContinuation) && tok.size() > kContinuation.size() && !out.empty()) {
      out += tok.substr(kContinuation.size());
    } else {
      if (!out.empty()) out += ' ';
      out += tok;
    }
  }
  return out;
}

}  // namespace aspectcl
