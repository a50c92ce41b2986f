#include "aspectcl/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <tuple>

#include "aspectcl/errors.hpp"

namespace aspectcl {

namespace {

std::set<Tuple> as_set(const std::vector<Tuple>& tuples) { return {tuples.begin(), tuples.end()}; }

std::size_t intersection_size(const std::set<Tuple>& a, const std::set<Tuple>& b) {
  std::size_t n = 0;
  for (const auto& t : a) n += b.count(t);
  return n;
}

void check_sizes(const CorpusTuples& preds, const CorpusTuples& golds) {
  if (preds.size() != golds.size()) throw InvalidArgument("prediction and gold corpora differ in length");
}

// Everything but the sentiment.
using PairKey = std::tuple<std::optional<std::string>, std::string, std::string>;

PairKey pair_key(const Tuple& t) { return {t.category, t.aspect, t.opinion}; }

std::string tuple_text(const Tuple& t) {
  std::string s = "(";
  if (t.category) s += *t.category + ", ";
  s += t.aspect;
  if (!t.opinion.empty()) s += ", " + t.opinion;
  s += ", ";
  s += to_string(t.sentiment);
  return s + ")";
}

std::string tuples_text(const std::vector<Tuple>& tuples) {
  std::string s;
  for (const auto& t : tuples) {
    if (!s.empty()) s += ' ';
    s += tuple_text(t);
  }
  return s;
}

std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\n") == std::string::npos) return value;
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

nlohmann::json tuple_json(const Tuple& t) {
  nlohmann::json j = {{"aspect", t.aspect}, {"sentiment", to_string(t.sentiment)}};
  if (!t.opinion.empty()) j["opinion"] = t.opinion;
  if (t.category) j["category"] = *t.category;
  return j;
}

}  // namespace

Prf prf_from_counts(std::size_t matched, std::size_t predicted, std::size_t gold) {
  Prf r;
  r.matched = matched;
  r.predicted = predicted;
  r.gold = gold;
  r.precision = predicted ? static_cast<double>(matched) / static_cast<double>(predicted) : 0.0;
  r.recall = gold ? static_cast<double>(matched) / static_cast<double>(gold) : 0.0;
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

Tuple project(const Tuple& tuple, TaskKind task) {
  Tuple out;
  out.sentiment = tuple.sentiment;
  for (Field f : schema(task)) {
    switch (f) {
      case Field::kCategory: out.category = join(split_whitespace(tuple.category.value_or(""))); break;
      case Field::kAspect: out.aspect = join(split_whitespace(tuple.aspect)); break;
      case Field::kOpinion: out.opinion = join(split_whitespace(tuple.opinion)); break;
      case Field::kSentiment: break;
    }
  }
  return out;
}

Prf exact_match_prf(const std::vector<Tuple>& pred, const std::vector<Tuple>& gold) {
  const auto p = as_set(pred);
  const auto g = as_set(gold);
  return prf_from_counts(intersection_size(p, g), p.size(), g.size());
}

Prf corpus_prf(const CorpusTuples& preds, const CorpusTuples& golds) {
  check_sizes(preds, golds);
  std::size_t matched = 0, predicted = 0, gold = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto r = exact_match_prf(preds[i], golds[i]);
    matched += r.matched;
    predicted += r.predicted;
    gold += r.gold;
  }
  return prf_from_counts(matched, predicted, gold);
}

Prf element_prf(const CorpusTuples& preds, const CorpusTuples& golds, Element element) {
  check_sizes(preds, golds);
  auto strings = [element](const std::vector<Tuple>& tuples) {
    std::set<std::string> out;
    for (const auto& t : tuples) {
      const auto& s = element == Element::kAspect ? t.aspect : t.opinion;
      if (!s.empty()) out.insert(s);
    }
    return out;
  };
  std::size_t matched = 0, predicted = 0, gold = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto p = strings(preds[i]);
    const auto g = strings(golds[i]);
    for (const auto& s : p) matched += g.count(s);
    predicted += p.size();
    gold += g.size();
  }
  return prf_from_counts(matched, predicted, gold);
}

SentimentAccuracy sentiment_accuracy(const CorpusTuples& preds, const CorpusTuples& golds) {
  check_sizes(preds, golds);
  SentimentAccuracy acc;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto g = as_set(golds[i]);
    std::set<PairKey> gold_pairs;
    for (const auto& t : g) gold_pairs.insert(pair_key(t));
    for (const auto& t : as_set(preds[i])) {
      if (!gold_pairs.contains(pair_key(t))) continue;
      ++acc.pairs;
      if (g.contains(t)) ++acc.correct;
    }
  }
  acc.undefined = acc.pairs == 0;
  acc.accuracy = acc.pairs ? static_cast<double>(acc.correct) / static_cast<double>(acc.pairs) : 0.0;
  return acc;
}

std::vector<Tuple> gold_tuples(const AnnotatedSentence& sentence, TaskKind task) {
  std::vector<Tuple> out;
  for (const auto& t : sentence.triplets) out.push_back(project(to_tuple(t), task));
  return out;
}

EvalReport evaluate(const std::vector<AnnotatedSentence>& dataset, TaskKind task, const Predictor& predictor) {
  EvalReport report;
  report.task = task;
  CorpusTuples preds, golds;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    SentenceDiagnostic d;
    d.index = i;
    d.sentence = dataset[i].raw_text.empty() ? join(dataset[i].tokens) : dataset[i].raw_text;
    d.generated = predictor(dataset[i]);
    auto parsed = parse(d.generated, task);
    for (const auto& t : parsed.tuples) d.predicted.push_back(project(t, task));
    d.gold = gold_tuples(dataset[i], task);
    d.matched = exact_match_prf(d.predicted, d.gold).matched;
    d.parse = parsed.diagnostics;
    preds.push_back(d.predicted);
    golds.push_back(d.gold);
    report.sentences.push_back(std::move(d));
  }
  report.triplet = corpus_prf(preds, golds);
  report.aspect_f1 = element_f1(preds, golds, Element::kAspect);
  report.opinion_f1 = element_f1(preds, golds, Element::kOpinion);
  report.sentiment = sentiment_accuracy(preds, golds);
  return report;
}

Predictor gold_replay(TaskKind task) {
  return [task](const AnnotatedSentence& s) {
    std::vector<Tuple> tuples;
    for (const auto& t : s.triplets) tuples.push_back(to_tuple(t));
    return linearize(tuples, task).text;
  };
}

double median_lower(std::vector<double> values) {
  if (values.empty()) throw InvalidArgument("median of an empty list");
  std::sort(values.begin(), values.end());
  return values[(values.size() - 1) / 2];
}

ScoreSummary summarize(const EvalReport& report) {
  return {report.triplet.precision, report.triplet.recall, report.triplet.f1,
          report.aspect_f1,         report.opinion_f1,     report.sentiment.accuracy};
}

namespace {

template <typename Reduce>
ScoreSummary reduce_fields(const std::vector<ScoreSummary>& rows, Reduce reduce) {
  auto column = [&rows](double ScoreSummary::*field) {
    std::vector<double> v;
    for (const auto& r : rows) v.push_back(r.*field);
    return v;
  };
  return {reduce(column(&ScoreSummary::precision)), reduce(column(&ScoreSummary::recall)),
          reduce(column(&ScoreSummary::f1)),        reduce(column(&ScoreSummary::aspect_f1)),
          reduce(column(&ScoreSummary::opinion_f1)), reduce(column(&ScoreSummary::sentiment_accuracy))};
}

}  // namespace

ScoreSummary median_over_seeds(const std::vector<ScoreSummary>& runs) {
  return reduce_fields(runs, [](std::vector<double> v) { return median_lower(std::move(v)); });
}

ScoreSummary mean_of(const std::vector<ScoreSummary>& rows) {
  if (rows.empty()) throw InvalidArgument("mean of an empty list");
  return reduce_fields(rows, [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  });
}

nlohmann::json summary_to_json(const ScoreSummary& s) {
  return {{"precision", s.precision},   {"recall", s.recall},         {"f1", s.f1},
          {"aspect_f1", s.aspect_f1}, {"opinion_f1", s.opinion_f1}, {"sentiment_accuracy", s.sentiment_accuracy}};
}

nlohmann::json report_to_json(const EvalReport& report, bool include_sentences) {
  nlohmann::json j = {
      {"task", to_string(report.task)},
      {"triplet", {{"precision", report.triplet.precision}, {"recall", report.triplet.recall}, {"f1", report.triplet.f1}}},
      {"aspect_f1", report.aspect_f1},
      {"opinion_f1", report.opinion_f1},
      {"sentiment_accuracy_on_correct_pairs", report.sentiment.accuracy},
      {"sentiment_accuracy_undefined", report.sentiment.undefined},
      {"counts", {{"gold", report.triplet.gold}, {"predicted", report.triplet.predicted}, {"matched", report.triplet.matched}}},
  };
  if (include_sentences) {
    auto& rows = j["sentences"] = nlohmann::json::array();
    for (const auto& d : report.sentences) {
      nlohmann::json pred = nlohmann::json::array(), gold = nlohmann::json::array();
      for (const auto& t : d.predicted) pred.push_back(tuple_json(t));
      for (const auto& t : d.gold) gold.push_back(tuple_json(t));
      rows.push_back({{"index", d.index},
                      {"sentence", d.sentence},
                      {"generated", d.generated},
                      {"predicted", pred},
                      {"gold", gold},
                      {"matched", d.matched},
                      {"malformed_segments", d.parse.malformed_segments}});
    }
  }
  return j;
}

std::string format_table(const std::vector<std::pair<std::string, ScoreSummary>>& rows) {
  std::size_t width = 5;
  for (const auto& [name, _] : rows) width = std::max(width, name.size());
  auto line = [width](const std::string& name, const std::vector<std::string>& cells) {
    std::string out = name + std::string(width - name.size(), ' ');
    for (const auto& c : cells) out += "  " + std::string(c.size() < 8 ? 8 - c.size() : 0, ' ') + c;
    return out + "\n";
  };
  auto num = [](double v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return std::string(buf);
  };
  std::string out = line("", {"P", "R", "F1", "Asp-F1", "Opn-F1", "Sent-Acc"});
  for (const auto& [name, s] : rows) {
    out += line(name, {num(s.precision), num(s.recall), num(s.f1), num(s.aspect_f1), num(s.opinion_f1),
                       num(s.sentiment_accuracy)});
  }
  return out;
}

std::string errors_csv(const EvalReport& report) {
  std::string out = "index,sentence,generated,gold,missing,spurious\n";
  for (const auto& d : report.sentences) {
    const auto p = as_set(d.predicted);
    const auto g = as_set(d.gold);
    std::vector<Tuple> missing, spurious;
    for (const auto& t : g) {
      if (!p.contains(t)) missing.push_back(t);
    }
    for (const auto& t : p) {
      if (!g.contains(t)) spurious.push_back(t);
    }
    if (missing.empty() && spurious.empty()) continue;
    out += std::to_string(d.index) + "," + csv_field(d.sentence) + "," + csv_field(d.generated) + "," +
           csv_field(tuples_text(d.gold)) + "," + csv_field(tuples_text(missing)) + "," +
           csv_field(tuples_text(spurious)) + "\n";
  }
  return out;
}

}  // namespace aspectcl
