#include "aspectcl/types.hpp"

namespace aspectcl {

std::string_view to_string(Sentiment s) {
  switch (s) {
    case Sentiment::kPositive: return "POS";
    case Sentiment::kNeutral: return "NEU";
    case Sentiment::kNegative: return "NEG";
  }
  return "NEU";
}

std::optional<Sentiment> sentiment_from_string(std::string_view code) {
  if (code == "POS") return Sentiment::kPositive;
  if (code == "NEU") return Sentiment::kNeutral;
  if (code == "NEG") return Sentiment::kNegative;
  return std::nullopt;
}

std::vector<Tuple> to_tuples(const std::vector<Triplet>& triplets) {
  std::vector<Tuple> out;
  out.reserve(triplets.size());
  for (const auto& t : triplets) out.push_back(to_tuple(t));
  return out;
}

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t' || text[i] == '\n' || text[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < text.size() && !(text[j] == ' ' || text[j] == '\t' || text[j] == '\n' || text[j] == '\r')) ++j;
    if (j > i) words.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

std::string join(const std::vector<std::string>& words, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += sep;
    out += words[i];
  }
  return out;
}

}  // namespace aspectcl
