#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace aspectcl {

enum class Sentiment { kPositive, kNeutral, kNegative };

inline constexpr int kNumSentiments = 3;

// "POS" / "NEU" / "NEG".
std::string_view to_string(Sentiment s);
std::optional<Sentiment> sentiment_from_string(std::string_view code);

// A surface term plus the word indices it was resolved from. Terms produced
// by the generation parser carry no indices.
struct Term {
  std::string text;
  std::vector<int> indices;

  bool operator==(const Term&) const = default;
};

struct Triplet {
  Term aspect;
  Term opinion;
  Sentiment sentiment = Sentiment::kPositive;
  std::optional<std::string> category;

  bool operator==(const Triplet&) const = default;
};

// Index-free view of an extracted tuple, used by templates and metrics.
// Fields absent from a task schema stay empty.
struct Tuple {
  std::optional<std::string> category;
  std::string aspect;
  std::string opinion;
  Sentiment sentiment = Sentiment::kPositive;

  auto operator<=>(const Tuple&) const = default;
};

inline Tuple to_tuple(const Triplet& t) {
  return Tuple{t.category, t.aspect.text, t.opinion.text, t.sentiment};
}

std::vector<Tuple> to_tuples(const std::vector<Triplet>& triplets);

// Whitespace split; runs of blanks collapse.
std::vector<std::string> split_whitespace(std::string_view text);
std::string join(const std::vector<std::string>& words, std::string_view sep = " ");

}  // namespace aspectcl
