#pragma once

// Exact-match scoring of extracted tuples. Every corpus-level score is
// micro-averaged: match counts are summed over sentences before the ratios
// are taken. Strings are compared verbatim after single-space joining.

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "aspectcl/corpus.hpp"
#include "aspectcl/templates.hpp"
#include "aspectcl/types.hpp"

namespace aspectcl {

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t gold = 0;
  std::size_t predicted = 0;
  std::size_t matched = 0;
};

Prf prf_from_counts(std::size_t matched, std::size_t predicted, std::size_t gold);

// Keeps only the fields of the task schema and whitespace-normalizes them.
Tuple project(const Tuple& tuple, TaskKind task);

// Both sides are deduplicated before counting.
Prf exact_match_prf(const std::vector<Tuple>& pred, const std::vector<Tuple>& gold);

// One tuple list per sentence; pred and gold must have equal length.
using CorpusTuples = std::vector<std::vector<Tuple>>;

Prf corpus_prf(const CorpusTuples& preds, const CorpusTuples& golds);

enum class Element { kAspect, kOpinion };

Prf element_prf(const CorpusTuples& preds, const CorpusTuples& golds, Element element);
inline double element_f1(const CorpusTuples& preds, const CorpusTuples& golds, Element element) {
  return element_prf(preds, golds, element).f1;
}

struct SentimentAccuracy {
  double accuracy = 0.0;
  std::size_t pairs = 0;    // predicted tuples whose non-sentiment fields match gold
  std::size_t correct = 0;  // ... and whose sentiment matches too
  bool undefined = false;   // no pair matched; accuracy reported as 0
};

SentimentAccuracy sentiment_accuracy(const CorpusTuples& preds, const CorpusTuples& golds);

struct SentenceDiagnostic {
  std::size_t index = 0;
  std::string sentence;
  std::string generated;
  std::vector<Tuple> predicted;
  std::vector<Tuple> gold;
  std::size_t matched = 0;
  ParseDiagnostics parse;
};

struct EvalReport {
  TaskKind task = TaskKind::kASTE;
  Prf triplet;
  double aspect_f1 = 0.0;
  double opinion_f1 = 0.0;
  SentimentAccuracy sentiment;
  std::vector<SentenceDiagnostic> sentences;
};

// Maps a sentence to generated target text.
using Predictor = std::function<std::string(const AnnotatedSentence&)>;

// Gold tuples of a sentence, projected onto the task schema.
std::vector<Tuple> gold_tuples(const AnnotatedSentence& sentence, TaskKind task);

EvalReport evaluate(const std::vector<AnnotatedSentence>& dataset, TaskKind task, const Predictor& predictor);

// A predictor that replays the linearized gold target.
Predictor gold_replay(TaskKind task);

// Lower median: the element at index (n - 1) / 2 of the sorted values.
// Throws InvalidArgument on an empty input.
double median_lower(std::vector<double> values);

struct ScoreSummary {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double aspect_f1 = 0.0;
  double opinion_f1 = 0.0;
  double sentiment_accuracy = 0.0;

  bool operator==(const ScoreSummary&) const = default;
};

ScoreSummary summarize(const EvalReport& report);
// Field-wise lower median over seeds.
ScoreSummary median_over_seeds(const std::vector<ScoreSummary>& runs);
// Field-wise mean, used to average over datasets.
ScoreSummary mean_of(const std::vector<ScoreSummary>& rows);

nlohmann::json summary_to_json(const ScoreSummary& s);
nlohmann::json report_to_json(const EvalReport& report, bool include_sentences = false);
// Aligned P / R / F1 table with one row per (name, report).
std::string format_table(const std::vector<std::pair<std::string, ScoreSummary>>& rows);
// sentence, generated, gold, missing, spurious; one row per sentence with an error.
std::string errors_csv(const EvalReport& report);

}  // namespace aspectcl
