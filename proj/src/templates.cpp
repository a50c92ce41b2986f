#include "aspectcl/templates.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <set>

#include "aspectcl/errors.hpp"

namespace aspectcl {

namespace {

constexpr std::array kAsteSchema{Field::kAspect, Field::kOpinion, Field::kSentiment};
constexpr std::array kAcosSchema{Field::kCategory, Field::kAspect, Field::kOpinion, Field::kSentiment};
constexpr std::array kTasdSchema{Field::kCategory, Field::kAspect, Field::kSentiment};
constexpr std::array kAescSchema{Field::kAspect, Field::kSentiment};

bool is_placeholder(std::string_view token) {
  return token == kAspectToken || token == kOpinionToken || token == kSentimentToken ||
         token == kCategoryToken;
}

std::string normalize_value(std::string_view value) { return join(split_whitespace(value)); }

std::string field_value(const Tuple& t, Field f) {
  switch (f) {
    case Field::kCategory: return t.category.value_or("");
    case Field::kAspect: return t.aspect;
    case Field::kOpinion: return t.opinion;
    case Field::kSentiment: return std::string(to_string(t.sentiment));
  }
  return {};
}

std::string_view field_name(Field f) {
  switch (f) {
    case Field::kCategory: return "category";
    case Field::kAspect: return "aspect";
    case Field::kOpinion: return "opinion";
    case Field::kSentiment: return "sentiment";
  }
  return "";
}

enum class SegmentStatus { kValid, kMalformed, kUnknownSentiment };

SegmentStatus parse_segment(std::span<const std::string> tokens, TaskKind task, Tuple& out) {
  const auto fields = schema(task);
  std::size_t pos = 0;
  for (Field f : fields) {
    if (pos >= tokens.size() || tokens[pos] != placeholder(f)) return SegmentStatus::kMalformed;
    ++pos;
    std::vector<std::string> words;
    while (pos < tokens.size() && !is_reserved_token(tokens[pos])) words.push_back(tokens[pos++]);
    if (words.empty()) return SegmentStatus::kMalformed;
    std::string value = join(words);
    switch (f) {
      case Field::kCategory: out.category = std::move(value); break;
      case Field::kAspect: out.aspect = std::move(value); break;
      case Field::kOpinion: out.opinion = std::move(value); break;
      case Field::kSentiment: {
        // Structure must still be complete for this to count as a sentiment
        // failure rather than a malformed segment.
        auto s = sentiment_from_string(value);
        if (pos != tokens.size()) return SegmentStatus::kMalformed;
        if (!s) return SegmentStatus::kUnknownSentiment;
        out.sentiment = *s;
        break;
      }
    }
  }
  return pos == tokens.size() ? SegmentStatus::kValid : SegmentStatus::kMalformed;
}

}  // namespace

std::string_view to_string(TaskKind task) {
  switch (task) {
    case TaskKind::kASTE: return "ASTE";
    case TaskKind::kACOS: return "ACOS";
    case TaskKind::kTASD: return "TASD";
    case TaskKind::kAESC: return "AESC";
  }
  return "ASTE";
}

TaskKind task_from_string(std::string_view name) {
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (upper == "ASTE") return TaskKind::kASTE;
  if (upper == "ACOS") return TaskKind::kACOS;
  if (upper == "TASD") return TaskKind::kTASD;
  if (upper == "AESC") return TaskKind::kAESC;
  throw InvalidArgument("unknown task kind '" + std::string(name) + "'");
}

std::span<const Field> schema(TaskKind task) {
  switch (task) {
    case TaskKind::kASTE: return kAsteSchema;
    case TaskKind::kACOS: return kAcosSchema;
    case TaskKind::kTASD: return kTasdSchema;
    case TaskKind::kAESC: return kAescSchema;
  }
  return kAsteSchema;
}

std::string_view placeholder(Field field) {
  switch (field) {
    case Field::kCategory: return kCategoryToken;
    case Field::kAspect: return kAspectToken;
    case Field::kOpinion: return kOpinionToken;
    case Field::kSentiment: return kSentimentToken;
  }
  return kAspectToken;
}

bool is_reserved_token(std::string_view token) {
  return is_placeholder(token) || token == kSeparatorToken;
}

LinearizedTarget linearize(std::span<const Tuple> tuples, TaskKind task) {
  LinearizedTarget target{{}, task};
  for (std::size_t i = 0; i < tuples.size(); ++i) {
    if (i) target.text += " " + std::string(kSeparatorToken) + " ";
    bool first = true;
    for (Field f : schema(task)) {
      std::string value = normalize_value(field_value(tuples[i], f));
      if (value.empty()) {
        throw MissingField("tuple " + std::to_string(i) + " has no " + std::string(field_name(f)) +
                           " required by " + std::string(to_string(task)));
      }
      for (const auto& word : split_whitespace(value)) {
        if (is_reserved_token(word)) {
          throw InvalidArgument("value '" + value + "' contains reserved token " + word);
        }
      }
      if (!first) target.text += ' ';
      target.text += placeholder(f);
      target.text += ' ';
      target.text += value;
      first = false;
    }
  }
  return target;
}

LinearizedTarget linearize(std::span<const Triplet> triplets, TaskKind task) {
  std::vector<Tuple> tuples;
  tuples.reserve(triplets.size());
  for (const auto& t : triplets) tuples.push_back(to_tuple(t));
  return linearize(std::span<const Tuple>(tuples), task);
}

ParseResult parse(std::string_view text, TaskKind task) {
  ParseResult result;
  const auto tokens = split_whitespace(text);
  if (tokens.empty()) return result;

  std::set<Tuple> seen;
  auto begin = tokens.begin();
  while (true) {
    auto end = std::find(begin, tokens.end(), kSeparatorToken);
    ++result.diagnostics.segments;
    Tuple tuple;
    switch (parse_segment(std::span<const std::string>(tokens.data() + (begin - tokens.begin()),
                                                    static_cast<std::size_t>(end - begin)),
                          task, tuple)) {
      case SegmentStatus::kValid:
        ++result.diagnostics.valid_segments;
        if (seen.insert(tuple).second) {
          result.tuples.push_back(std::move(tuple));
        } else {
          ++result.diagnostics.duplicates_removed;
        }
        break;
      case SegmentStatus::kUnknownSentiment:
        ++result.diagnostics.unknown_sentiment;
        [[fallthrough]];
      case SegmentStatus::kMalformed:
        ++result.diagnostics.malformed_segments;
        break;
    }
    if (end == tokens.end()) break;
    begin = end + 1;
  }
  return result;
}

std::string build_prompt(std::string_view aspect) {
  std::string value = normalize_value(aspect);
  if (value.empty()) throw EmptyAspect("prompt aspect is empty");
  return std::string(kAspectToken) + " " + value + " " + std::string(kSentimentToken) + " " +
         std::string(kMaskToken);
}

std::vector<std::string> special_tokens(TaskKind task) {
  std::vector<std::string> tokens;
  for (Field f : schema(task)) tokens.emplace_back(placeholder(f));
  tokens.emplace_back(kSeparatorToken);
  tokens.emplace_back(kMaskToken);
  return tokens;
}

}  // namespace aspectcl
