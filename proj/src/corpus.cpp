#include "aspectcl/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include <spdlog/spdlog.h>

#include "aspectcl/errors.hpp"
#include "aspectcl/templates.hpp"

namespace aspectcl {

namespace {

constexpr std::string_view kSeparator = "####";
constexpr std::string_view kImplicitTerm = "NULL";

// Recursive-descent reader for the annotation literal. The grammar is the
// subset of Python literals the released files use.
class AnnotationReader {
 public:
  explicit AnnotationReader(std::string_view text) : text_(text) {}

  struct RawTuple {
    std::vector<int> aspect;
    std::vector<int> opinion;
    std::string sentiment;
    std::optional<std::string> category;
  };

  std::vector<RawTuple> read() {
    std::vector<RawTuple> tuples;
    expect('[');
    if (!try_consume(']')) {
      do {
        tuples.push_back(read_tuple());
      } while (try_consume(','));
      expect(']');
    }
    skip_blank();
    if (pos_ != text_.size()) fail("trailing characters after annotation list");
    return tuples;
  }

 private:
  RawTuple read_tuple() {
    RawTuple t;
    expect('(');
    t.aspect = read_int_list();
    expect(',');
    t.opinion = read_int_list();
    expect(',');
    t.sentiment = read_string();
    if (try_consume(',')) {
      skip_blank();
      if (peek() != ')') t.category = read_string();
    }
    expect(')');
    return t;
  }

  std::vector<int> read_int_list() {
    std::vector<int> values;
    expect('[');
    if (try_consume(']')) return values;
    do {
      values.push_back(read_int());
    } while (try_consume(','));
    expect(']');
    return values;
  }

  int read_int() {
    skip_blank();
    std::size_t start = pos_;
    if (pos_ < text_.size() && text_[pos_] == '-') ++pos_;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    if (pos_ == start || (pos_ == start + 1 && text_[start] == '-')) fail("expected integer");
    if (pos_ - start > 9) fail("integer out of range");
    return std::stoi(std::string(text_.substr(start, pos_ - start)));
  }

  std::string read_string() {
    skip_blank();
    char quote = peek();
    if (quote != '\'' && quote != '"') fail("expected quoted string");
    ++pos_;
    std::string value;
    while (pos_ < text_.size() && text_[pos_] != quote) {
      if (text_[pos_] == '\\' && pos_ + 1 < text_.size()) ++pos_;
      value += text_[pos_++];
    }
    if (pos_ >= text_.size()) fail("unterminated string");
    ++pos_;
    return value;
  }

  void skip_blank() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  char peek() { return pos_ < text_.size() ? text_[pos_] : '\0'; }

  bool try_consume(char c) {
    skip_blank();
    if (peek() != c) return false;
    ++pos_;
    return true;
  }

  void expect(char c) {
    if (!try_consume(c)) fail(std::string("expected '") + c + "'");
  }

  [[noreturn]] void fail(const std::string& what) {
    throw MalformedLine("unparsable annotation literal: " + what + " at offset " + std::to_string(pos_));
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

Term resolve_term(const std::vector<int>& indices, const std::vector<std::string>& tokens, bool allow_implicit,
                  std::string_view role) {
  if (indices.empty()) {
    if (!allow_implicit) throw MalformedLine("empty " + std::string(role) + " index list");
    return Term{std::string(kImplicitTerm), {}};
  }
  std::vector<std::string> words;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    int i = indices[k];
    if (i < 0 || static_cast<std::size_t>(i) >= tokens.size()) {
      throw MalformedLine(std::string(role) + " index " + std::to_string(i) + " out of range for " +
                          std::to_string(tokens.size()) + " tokens");
    }
    if (k > 0 && i != indices[k - 1] + 1) {
      throw MalformedLine(std::string(role) + " span is not contiguous and ascending");
    }
    words.push_back(tokens[static_cast<std::size_t>(i)]);
  }
  return Term{join(words), indices};
}

std::string format_indices(const std::vector<int>& indices) {
  std::string out = "[";
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(indices[i]);
  }
  return out + "]";
}

nlohmann::json term_to_json(const Term& t) { return {{"text", t.text}, {"indices", t.indices}}; }

Term term_from_json(const nlohmann::json& j) {
  return Term{j.at("text").get<std::string>(), j.at("indices").get<std::vector<int>>()};
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  return "train";
}

std::string_view to_string(Domain domain) {
  return domain == Domain::kLaptop ? "laptop" : "restaurant";
}

Split split_from_string(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "dev") return Split::kDev;
  if (name == "test") return Split::kTest;
  throw InvalidArgument("unknown split '" + std::string(name) + "'");
}

Domain domain_from_string(std::string_view name) {
  if (name == "restaurant") return Domain::kRestaurant;
  if (name == "laptop") return Domain::kLaptop;
  throw InvalidArgument("unknown domain '" + std::string(name) + "'");
}

AnnotatedSentence parse_aste_v2_line(std::string_view line, Split split, Domain domain) {
  while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.remove_suffix(1);
  if (line.empty()) throw MalformedLine("empty line");
  const auto sep = line.find(kSeparator);
  if (sep == std::string_view::npos) throw MalformedLine("missing '####' separator");

  AnnotatedSentence sentence;
  sentence.raw_text = std::string(line.substr(0, sep));
  sentence.tokens = split_whitespace(sentence.raw_text);
  sentence.split = split;
  sentence.domain = domain;

  AnnotationReader reader(line.substr(sep + kSeparator.size()));
  for (auto& raw : reader.read()) {
    auto sentiment = sentiment_from_string(raw.sentiment);
    if (!sentiment) throw MalformedLine("unknown sentiment code '" + raw.sentiment + "'");
    const bool implicit_ok = raw.category.has_value();
    Triplet t{resolve_term(raw.aspect, sentence.tokens, implicit_ok, "aspect"),
              resolve_term(raw.opinion, sentence.tokens, implicit_ok, "opinion"), *sentiment,
              std::move(raw.category)};
    if (std::find(sentence.triplets.begin(), sentence.triplets.end(), t) == sentence.triplets.end()) {
      sentence.triplets.push_back(std::move(t));
    }
  }
  return sentence;
}

std::string to_aste_v2_line(const AnnotatedSentence& sentence) {
  std::string out = sentence.raw_text;
  out += kSeparator;
  out += '[';
  for (std::size_t i = 0; i < sentence.triplets.size(); ++i) {
    const auto& t = sentence.triplets[i];
    if (i) out += ", ";
    out += '(' + format_indices(t.aspect.indices) + ", " + format_indices(t.opinion.indices) + ", '" +
           std::string(to_string(t.sentiment)) + '\'';
    if (t.category) out += ", '" + *t.category + '\'';
    out += ')';
  }
  out += ']';
  return out;
}

SplitStats compute_stats(const std::vector<AnnotatedSentence>& sentences) {
  SplitStats stats;
  stats.sentences = sentences.size();
  for (const auto& s : sentences) {
    for (const auto& t : s.triplets) {
      switch (t.sentiment) {
        case Sentiment::kPositive: ++stats.positive; break;
        case Sentiment::kNeutral: ++stats.neutral; break;
        case Sentiment::kNegative: ++stats.negative; break;
      }
    }
  }
  return stats;
}

LoadedSplit load_split(const std::filesystem::path& path, Split split, Domain domain) {
  std::ifstream in(path);
  if (!in) throw IOFailure("cannot open " + path.string());
  LoadedSplit loaded;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (split_whitespace(line).empty()) continue;
    try {
      loaded.sentences.push_back(parse_aste_v2_line(line, split, domain));
    } catch (const MalformedLine& e) {
      throw MalformedLine(e.detail(), line_no, path.string());
    }
  }
  if (in.bad()) throw IOFailure("read error on " + path.string());
  loaded.stats = compute_stats(loaded.sentences);
  return loaded;
}

PromptDerivation derive_prompt_examples(const std::vector<AnnotatedSentence>& sentences) {
  PromptDerivation out;
  for (std::size_t si = 0; si < sentences.size(); ++si) {
    std::vector<std::string> order;
    std::map<std::string, std::set<Sentiment>> labels;
    for (const auto& t : sentences[si].triplets) {
      auto [it, inserted] = labels.try_emplace(t.aspect.text);
      if (inserted) order.push_back(t.aspect.text);
      it->second.insert(t.sentiment);
    }
    for (const auto& aspect : order) {
      const auto& sentiments = labels.at(aspect);
      if (sentiments.size() > 1) {
        spdlog::warn("sentence {}: aspect '{}' carries conflicting sentiments; prompt skipped", si, aspect);
        out.conflicts.push_back({si, aspect});
        continue;
      }
      out.examples.push_back({si, aspect, build_prompt(aspect), *sentiments.begin()});
    }
  }
  return out;
}

char to_char(BioTag tag) {
  switch (tag) {
    case BioTag::kB: return 'B';
    case BioTag::kI: return 'I';
    case BioTag::kO: return 'O';
  }
  return 'O';
}

std::vector<std::pair<int, int>> merged_opinion_spans(const AnnotatedSentence& sentence) {
  std::vector<std::pair<int, int>> spans;
  for (const auto& t : sentence.triplets) {
    if (t.opinion.indices.empty()) continue;
    spans.emplace_back(t.opinion.indices.front(), t.opinion.indices.back() + 1);
  }
  std::sort(spans.begin(), spans.end());
  std::vector<std::pair<int, int>> merged;
  for (const auto& span : spans) {
    if (!merged.empty() && span.first < merged.back().second) {
      merged.back().second = std::max(merged.back().second, span.second);
    } else {
      merged.push_back(span);
    }
  }
  return merged;
}

BioSequence build_bio_labels(const AnnotatedSentence& sentence) {
  BioSequence bio{std::vector<BioTag>(sentence.tokens.size(), BioTag::kO)};
  for (const auto& [begin, end] : merged_opinion_spans(sentence)) {
    bio.tags[static_cast<std::size_t>(begin)] = BioTag::kB;
    for (int i = begin + 1; i < end; ++i) bio.tags[static_cast<std::size_t>(i)] = BioTag::kI;
  }
  return bio;
}

std::vector<std::pair<int, int>> decode_bio(const BioSequence& bio) {
  std::vector<std::pair<int, int>> spans;
  const int n = static_cast<int>(bio.tags.size());
  int start = -1;
  for (int i = 0; i < n; ++i) {
    BioTag tag = bio.tags[static_cast<std::size_t>(i)];
    if (tag == BioTag::kB || (tag == BioTag::kI && start < 0)) {
      if (start >= 0) spans.emplace_back(start, i);
      start = i;
    } else if (tag == BioTag::kO && start >= 0) {
      spans.emplace_back(start, i);
      start = -1;
    }
  }
  if (start >= 0) spans.emplace_back(start, n);
  return spans;
}

std::size_t triplet_count_label(const AnnotatedSentence& sentence) { return sentence.triplets.size(); }

std::vector<SentenceExample> derive_sentence_level_examples(const std::vector<AnnotatedSentence>& sentences) {
  std::vector<SentenceExample> out;
  for (std::size_t si = 0; si < sentences.size(); ++si) {
    const auto& triplets = sentences[si].triplets;
    if (triplets.empty()) continue;
    const Sentiment first = triplets.front().sentiment;
    const bool uniform = std::all_of(triplets.begin(), triplets.end(),
                                     [first](const Triplet& t) { return t.sentiment == first; });
    if (uniform) out.push_back({si, first});
  }
  return out;
}

nlohmann::json corpus_to_json(const std::vector<AnnotatedSentence>& sentences) {
  nlohmann::json doc;
  doc["format_version"] = kCorpusFormatVersion;
  auto& rows = doc["sentences"] = nlohmann::json::array();
  for (std::size_t si = 0; si < sentences.size(); ++si) {
    const auto& s = sentences[si];
    nlohmann::json triplets = nlohmann::json::array();
    for (const auto& t : s.triplets) {
      nlohmann::json jt{{"aspect", term_to_json(t.aspect)},
                        {"opinion", term_to_json(t.opinion)},
                        {"sentiment", to_string(t.sentiment)}};
      if (t.category) jt["category"] = *t.category;
      triplets.push_back(std::move(jt));
    }
    std::string bio;
    for (BioTag tag : build_bio_labels(s).tags) bio += to_char(tag);
    rows.push_back({{"id", si},
                    {"raw_text", s.raw_text},
                    {"tokens", s.tokens},
                    {"split", to_string(s.split)},
                    {"domain", to_string(s.domain)},
                    {"triplets", std::move(triplets)},
                    {"bio", bio},
                    {"triplet_count", triplet_count_label(s)}});
  }
  auto& prompts = doc["prompt_examples"] = nlohmann::json::array();
  for (const auto& p : derive_prompt_examples(sentences).examples) {
    prompts.push_back({{"sentence", p.sentence_index},
                       {"aspect", p.aspect},
                       {"prompt", p.prompt},
                       {"label", to_string(p.label)}});
  }
  auto& sentence_level = doc["sentence_level_examples"] = nlohmann::json::array();
  for (const auto& e : derive_sentence_level_examples(sentences)) {
    sentence_level.push_back({{"sentence", e.sentence_index}, {"label", to_string(e.label)}});
  }
  const auto stats = compute_stats(sentences);
  doc["stats"] = {{"sentences", stats.sentences},
                  {"POS", stats.positive},
                  {"NEU", stats.neutral},
                  {"NEG", stats.negative}};
  return doc;
}

std::vector<AnnotatedSentence> corpus_from_json(const nlohmann::json& doc) {
  if (doc.value("format_version", 0) != kCorpusFormatVersion) {
    throw InvalidArgument("unsupported corpus format_version");
  }
  std::vector<AnnotatedSentence> sentences;
  for (const auto& row : doc.at("sentences")) {
    AnnotatedSentence s;
    s.raw_text = row.at("raw_text").get<std::string>();
    s.tokens = row.at("tokens").get<std::vector<std::string>>();
    s.split = split_from_string(row.at("split").get<std::string>());
    s.domain = domain_from_string(row.at("domain").get<std::string>());
    for (const auto& jt : row.at("triplets")) {
      auto sentiment = sentiment_from_string(jt.at("sentiment").get<std::string>());
      if (!sentiment) throw InvalidArgument("bad sentiment in corpus dump");
      Triplet t{term_from_json(jt.at("aspect")), term_from_json(jt.at("opinion")), *sentiment, std::nullopt};
      if (jt.contains("category")) t.category = jt.at("category").get<std::string>();
      s.triplets.push_back(std::move(t));
    }
    sentences.push_back(std::move(s));
  }
  return sentences;
}

}  // namespace aspectcl
