#pragma once

// Placeholder-template targets: linearization of tuple sets into decoder
// target strings and the inverse parser used to score generations.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "aspectcl/types.hpp"

namespace aspectcl {

enum class TaskKind { kASTE, kACOS, kTASD, kAESC };

std::string_view to_string(TaskKind task);
// Accepts "ASTE", "ACOS", "TASD", "AESC" (case-insensitive).
TaskKind task_from_string(std::string_view name);

inline constexpr std::string_view kAspectToken = "<aspect>";
inline constexpr std::string_view kOpinionToken = "<opinion>";
inline constexpr std::string_view kSentimentToken = "<sentiment>";
inline constexpr std::string_view kCategoryToken = "<category>";
inline constexpr std::string_view kSeparatorToken = "[SSEP]";
inline constexpr std::string_view kMaskToken = "[MASK]";

enum class Field { kCategory, kAspect, kOpinion, kSentiment };

// Ordered placeholder schema of a task.
std::span<const Field> schema(TaskKind task);
std::string_view placeholder(Field field);

struct LinearizedTarget {
  std::string text;
  TaskKind task = TaskKind::kASTE;

  bool operator==(const LinearizedTarget&) const = default;
};

// Tuples joined by " [SSEP] ", each rendered as its schema's placeholders
// followed by their values. Input order is preserved. An empty input yields
// an empty target. Throws MissingField when a schema field is blank.
LinearizedTarget linearize(std::span<const Tuple> tuples, TaskKind task);
LinearizedTarget linearize(std::span<const Triplet> triplets, TaskKind task);

struct ParseDiagnostics {
  std::size_t segments = 0;
  std::size_t valid_segments = 0;
  std::size_t malformed_segments = 0;
  // Subset of malformed_segments rejected only for the sentiment value.
  std::size_t unknown_sentiment = 0;
  std::size_t duplicates_removed = 0;

  bool operator==(const ParseDiagnostics&) const = default;
};

struct ParseResult {
  std::vector<Tuple> tuples;
  ParseDiagnostics diagnostics;
};

// Total inverse of linearize. Never throws on content.
ParseResult parse(std::string_view text, TaskKind task);

// "<aspect> {aspect} <sentiment> [MASK]". Throws EmptyAspect.
std::string build_prompt(std::string_view aspect);

// Task placeholders in schema order, then "[SSEP]" and "[MASK]".
std::vector<std::string> special_tokens(TaskKind task);

bool is_reserved_token(std::string_view token);

}  // namespace aspectcl
