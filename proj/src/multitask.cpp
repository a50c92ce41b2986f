#include "aspectcl/multitask.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "aspectcl/errors.hpp"
#include "aspectcl/io.hpp"
#include "aspectcl/optimizer.hpp"

namespace aspectcl {

using ag::Matrix;
using ag::Var;

namespace {

std::string_view to_string(TooLongPolicy p) { return p == TooLongPolicy::kSkip ? "skip" : "truncate"; }

TooLongPolicy too_long_from_string(std::string_view name) {
  if (name == "truncate") return TooLongPolicy::kTruncate;
  if (name == "skip") return TooLongPolicy::kSkip;
  throw InvalidConfig("unknown too_long policy '" + std::string(name) + "'");
}

int length_limit(const ModelBundle& model, int max_length) {
  return std::min(max_length, model.config().max_positions);
}

Var generation_loss_from(ModelBundle& model, const Var& memory, std::span<const int> target) {
  std::vector<int> input{Vocabulary::kPad};
  input.insert(input.end(), target.begin(), target.end());
  std::vector<int> labels(target.begin(), target.end());
  labels.push_back(Vocabulary::kEos);
  return ag::cross_entropy(model.lm_logits(model.decode(memory, input)), labels, ag::Reduction::kSum);
}

Var otd_loss_from(ModelBundle& model, const Var& memory, const Vocabulary::Encoding& enc, const BioSequence& bio) {
  std::vector<int> labels(enc.ids.size(), -1);
  for (std::size_t w = 0; w < bio.tags.size(); ++w) {
    labels[static_cast<std::size_t>(enc.first_piece[w])] = static_cast<int>(bio.tags[w]);
  }
  return ag::cross_entropy(model.otd_logits(memory), labels, ag::Reduction::kMean);
}

void check_bio(const std::vector<std::string>& sentence, const BioSequence& bio) {
  if (sentence.size() != bio.tags.size()) throw InvalidArgument("BIO tag count differs from word count");
}

// Log-probabilities of the next token after `prefix`.
Eigen::VectorXd next_log_probs(ModelBundle& model, const Var& memory, const std::vector<int>& prefix) {
  Var states = model.decode(memory, prefix);
  Var last = ag::slice_rows(states, states.rows() - 1, 1);
  const Matrix logits = model.lm_logits(last).value();
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return (logits.row(0).array() - lse).transpose();
}

std::vector<int> greedy_decode(ModelBundle& model, const Var& memory, int max_steps) {
  std::vector<int> prefix{Vocabulary::kPad};
  for (int step = 0; step < max_steps; ++step) {
    Eigen::Index best = 0;
    next_log_probs(model, memory, prefix).maxCoeff(&best);
    if (best == Vocabulary::kEos) break;
    prefix.push_back(static_cast<int>(best));
  }
  return {prefix.begin() + 1, prefix.end()};
}

std::vector<int> beam_decode(ModelBundle& model, const Var& memory, int max_steps, int width) {
  struct Beam {
    std::vector<int> ids;
    double score;
    bool done;
  };
  std::vector<Beam> beams{{{Vocabulary::kPad}, 0.0, false}};
  for (int step = 0; step < max_steps; ++step) {
    std::vector<Beam> candidates;
    bool any_open = false;
    for (const auto& b : beams) {
      if (b.done) {
        candidates.push_back(b);
        continue;
      }
      any_open = true;
      const Eigen::VectorXd lp = next_log_probs(model, memory, b.ids);
      std::vector<int> order(static_cast<std::size_t>(lp.size()));
      std::iota(order.begin(), order.end(), 0);
      const auto k = std::min<std::size_t>(static_cast<std::size_t>(width), order.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                        [&lp](int a, int c) { return lp(a) > lp(c) || (lp(a) == lp(c) && a < c); });
      for (std::size_t r = 0; r < k; ++r) {
        Beam next = b;
        next.score += lp(order[r]);
        if (order[r] == Vocabulary::kEos) {
          next.done = true;
        } else {
          next.ids.push_back(order[r]);
        }
        candidates.push_back(std::move(next));
      }
    }
    if (!any_open) break;
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Beam& a, const Beam& b) { return a.score > b.score; });
    if (candidates.size() > static_cast<std::size_t>(width)) candidates.resize(static_cast<std::size_t>(width));
    beams = std::move(candidates);
  }
  const auto& best = *std::max_element(beams.begin(), beams.end(),
                                       [](const Beam& a, const Beam& b) { return a.score < b.score; });
  return {best.ids.begin() + 1, best.ids.end()};
}

void check_finite(double value, std::string_view what) {
  if (!std::isfinite(value)) throw NonFiniteComponent(std::string(what) + " loss is not finite");
}

}  // namespace

void FinetuneConfig::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw InvalidConfig("alpha and beta must be >= 0");
  if (!(learning_rate > 0.0)) throw InvalidConfig("learning_rate must be > 0");
  if (weight_decay < 0.0) throw InvalidConfig("weight_decay must be >= 0");
  if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
  if (epochs < 0) throw InvalidConfig("epochs must be >= 0");
  if (max_target_length < 1) throw InvalidConfig("max_target_length must be >= 1");
  if (decoding.beam_width < 1) throw InvalidConfig("beam_width must be >= 1");
  if (decoding.max_length < 1) throw InvalidConfig("decoding max_length must be >= 1");
  if (eval_every < 1) throw InvalidConfig("eval_every must be >= 1");
}

void to_json(nlohmann::json& j, const FinetuneConfig& c) {
  j = {{"alpha", c.alpha},
       {"beta", c.beta},
       {"learning_rate", c.learning_rate},
       {"weight_decay", c.weight_decay},
       {"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"task", to_string(c.task)},
       {"seed", c.seed},
       {"max_target_length", c.max_target_length},
       {"too_long", to_string(c.too_long)},
       {"beam_width", c.decoding.beam_width},
       {"max_decode_length", c.decoding.max_length},
       {"eval_every", c.eval_every},
       {"stop_at_dev_f1", c.stop_at_dev_f1 ? nlohmann::json(*c.stop_at_dev_f1) : nlohmann::json(nullptr)}};
}

void from_json(const nlohmann::json& j, FinetuneConfig& c) {
  FinetuneConfig d;
  c.alpha = j.value("alpha", d.alpha);
  c.beta = j.value("beta", d.beta);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.task = task_from_string(j.value("task", std::string(to_string(d.task))));
  c.seed = j.value("seed", d.seed);
  c.max_target_length = j.value("max_target_length", d.max_target_length);
  c.too_long = too_long_from_string(j.value("too_long", std::string(to_string(d.too_long))));
  c.decoding.beam_width = j.value("beam_width", d.decoding.beam_width);
  c.decoding.max_length = j.value("max_decode_length", d.decoding.max_length);
  c.eval_every = j.value("eval_every", d.eval_every);
  c.stop_at_dev_f1.reset();
  if (j.contains("stop_at_dev_f1") && !j.at("stop_at_dev_f1").is_null()) {
    c.stop_at_dev_f1 = j.at("stop_at_dev_f1").get<double>();
  }
}

std::vector<std::string> target_tokens(TaskKind task) {
  auto tokens = special_tokens(task);
  for (int s = 0; s < kNumSentiments; ++s) tokens.emplace_back(to_string(static_cast<Sentiment>(s)));
  return tokens;
}

std::vector<int> target_ids(const Vocabulary& vocab, const LinearizedTarget& target) {
  return vocab.encode_text(target.text);
}

Var generation_loss(ModelBundle& model, const std::vector<std::string>& sentence, const LinearizedTarget& target,
                    int max_length) {
  const auto ids = target_ids(model.vocab(), target);
  const int limit = length_limit(model, max_length);
  if (static_cast<int>(ids.size()) + 1 > limit) {
    throw TargetTooLong("target has " + std::to_string(ids.size() + 1) + " tokens, limit " + std::to_string(limit));
  }
  Var memory = model.encode(model.vocab().encode_words(sentence).ids);
  return generation_loss_from(model, memory, ids);
}

Var otd_loss(ModelBundle& model, const std::vector<std::string>& sentence, const BioSequence& bio) {
  check_bio(sentence, bio);
  const auto enc = model.vocab().encode_words(sentence);
  Var memory = model.encode(enc.ids);
  return otd_loss_from(model, memory, enc, bio);
}

Var tce_loss(ModelBundle& model, const std::vector<std::string>& sentence, std::size_t count) {
  Var memory = model.encode(model.vocab().encode_words(sentence).ids);
  return ag::squared_error(model.tce_predict(memory), static_cast<double>(count));
}

double joint_loss(double ed, double otd, double tce, double alpha, double beta) {
  check_finite(ed, "generation");
  check_finite(otd, "OTD");
  check_finite(tce, "TCE");
  return ed + alpha * otd + beta * tce;
}

Var joint_loss(const Var& ed, const Var& otd, const Var& tce, double alpha, double beta) {
  check_finite(ed.item(), "generation");
  check_finite(otd.item(), "OTD");
  check_finite(tce.item(), "TCE");
  Var total = ed;
  // Zero-weighted terms stay out of the graph so their heads get no gradient.
  if (alpha != 0.0) total = ag::add(total, ag::scale(otd, alpha));
  if (beta != 0.0) total = ag::add(total, ag::scale(tce, beta));
  return total;
}

std::optional<TrainingExample> make_training_example(const Vocabulary& vocab, const AnnotatedSentence& sentence,
                                                     const FinetuneConfig& config) {
  TrainingExample ex;
  ex.sentence = sentence.tokens;
  ex.target = target_ids(vocab, linearize(sentence.triplets, config.task));
  ex.bio = build_bio_labels(sentence);
  ex.count = triplet_count_label(sentence);
  const auto limit = static_cast<std::size_t>(config.max_target_length);
  if (ex.target.size() + 1 > limit) {
    if (config.too_long == TooLongPolicy::kSkip) {
      spdlog::warn("skipping example with {} target tokens (limit {}): {}", ex.target.size() + 1, limit,
                   join(sentence.tokens));
      return std::nullopt;
    }
    spdlog::warn("truncating target from {} to {} tokens: {}", ex.target.size() + 1, limit, join(sentence.tokens));
    ex.target.resize(limit - 1);
  }
  return ex;
}

ComponentLosses component_losses(ModelBundle& model, const TrainingExample& example) {
  check_bio(example.sentence, example.bio);
  if (static_cast<int>(example.target.size()) + 1 > model.config().max_positions) {
    throw TargetTooLong("target exceeds the decoder position table");
  }
  const auto enc = model.vocab().encode_words(example.sentence);
  Var memory = model.encode(enc.ids);
  return {generation_loss_from(model, memory, example.target), otd_loss_from(model, memory, enc, example.bio),
          ag::squared_error(model.tce_predict(memory), static_cast<double>(example.count))};
}

FinetuneResult finetune(const std::vector<AnnotatedSentence>& train, const std::vector<AnnotatedSentence>& dev,
                        const FinetuneConfig& config, ModelBundle init,
                        const std::optional<std::filesystem::path>& checkpoint_dir) {
  config.validate();
  if (train.empty()) throw EmptyTrainSet("training set is empty");
  FinetuneResult result{std::move(init), {}, 0, std::nullopt, 0};
  if (config.epochs == 0) return result;

  ModelBundle& model = result.model;
  const auto tokens = target_tokens(config.task);
  model.add_special_tokens(tokens);

  std::vector<TrainingExample> examples;
  for (const auto& s : train) {
    if (auto ex = make_training_example(model.vocab(), s, config)) {
      examples.push_back(std::move(*ex));
    } else {
      ++result.skipped_examples;
    }
  }
  if (examples.empty()) throw EmptyTrainSet("every training example was skipped");
  if (checkpoint_dir) {
    write_file_atomic(*checkpoint_dir / "config.json", nlohmann::json(config).dump(2) + "\n");
  }

  std::mt19937_64 rng(config.seed);
  model.reseed(config.seed + 1);
  model.zero_grad();
  AdamW optimizer({config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay});
  std::optional<ModelBundle> best;
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    model.set_training(true);
    std::shuffle(order.begin(), order.end(), rng);
    FinetuneEpoch trace;
    trace.epoch = epoch;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size), ++batch_index) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const double weight = 1.0 / static_cast<double>(end - start);
      for (std::size_t k = start; k < end; ++k) {
        auto losses = component_losses(model, examples[order[k]]);
        Var total;
        try {
          total = joint_loss(losses.ed, losses.otd, losses.tce, config.alpha, config.beta);
        } catch (const NonFiniteComponent& e) {
          throw NonFiniteLoss(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                                  std::to_string(batch_index),
                              static_cast<std::size_t>(epoch), batch_index);
        }
        trace.ed += losses.ed.item();
        trace.otd += losses.otd.item();
        trace.tce += losses.tce.item();
        trace.total += total.item();
        ag::backward(total, weight);
      }
      optimizer.step(model.parameters());
    }
    const double n = static_cast<double>(examples.size());
    trace.ed /= n;
    trace.otd /= n;
    trace.tce /= n;
    trace.total /= n;
    model.set_training(false);

    const bool evaluate_now = !dev.empty() && (epoch % config.eval_every == 0 || epoch == config.epochs);
    if (evaluate_now) {
      trace.dev_f1 = evaluate(dev, config.task, model_predictor(model, config.task, config.decoding)).triplet.f1;
      if (!result.best_dev_f1 || *trace.dev_f1 > *result.best_dev_f1) {
        result.best_dev_f1 = trace.dev_f1;
        result.best_epoch = epoch;
        best = model;
        if (checkpoint_dir) save_checkpoint(model, *checkpoint_dir / "checkpoint");
      }
    }
    result.trace.push_back(trace);
    spdlog::info("finetune epoch {}: ed {:.4f} otd {:.4f} tce {:.4f} total {:.4f}{}", epoch, trace.ed, trace.otd,
                 trace.tce, trace.total, trace.dev_f1 ? fmt::format(" dev_f1 {:.4f}", *trace.dev_f1) : "");
    if (checkpoint_dir) write_file_atomic(*checkpoint_dir / "trace.csv", finetune_trace_csv(result.trace));
    if (config.stop_at_dev_f1 && trace.dev_f1 && *trace.dev_f1 >= *config.stop_at_dev_f1) break;
  }

  if (best) {
    result.model = std::move(*best);
  } else {
    result.best_epoch = result.trace.back().epoch;
    if (checkpoint_dir) save_checkpoint(model, *checkpoint_dir / "checkpoint");
  }
  result.model.set_training(false);
  result.model.zero_grad();
  return result;
}

std::string finetune_trace_csv(const std::vector<FinetuneEpoch>& trace) {
  std::string csv = "epoch,ed_loss,otd_loss,tce_loss,total_loss,dev_f1\n";
  for (const auto& e : trace) {
    csv += std::to_string(e.epoch) + "," + format_double(e.ed) + "," + format_double(e.otd) + "," +
           format_double(e.tce) + "," + format_double(e.total) + "," + (e.dev_f1 ? format_double(*e.dev_f1) : "") +
           "\n";
  }
  return csv;
}

LinearizedTarget generate(ModelBundle& model, const std::vector<std::string>& sentence, TaskKind task,
                          const DecodingConfig& decoding) {
  ag::NoGradGuard no_grad;
  const bool was_training = model.training();
  model.set_training(false);
  Var memory = model.encode(model.vocab().encode_words(sentence).ids);
  const int max_steps = std::min(decoding.max_length, model.config().max_positions - 1);
  const auto ids = decoding.beam_width <= 1 ? greedy_decode(model, memory, max_steps)
                                            : beam_decode(model, memory, max_steps, decoding.beam_width);
  model.set_training(was_training);
  return {model.vocab().decode(ids), task};
}

std::size_t tce_round(double prediction) {
  if (!(prediction > 0.0)) return 0;
  if (prediction >= static_cast<double>(std::numeric_limits<std::size_t>::max())) {
    return std::numeric_limits<std::size_t>::max();
  }
  const double whole = std::floor(prediction);
  return static_cast<std::size_t>(prediction - whole > 0.5 ? whole + 1.0 : whole);
}

double tce_predict_value(ModelBundle& model, const std::vector<std::string>& sentence) {
  ag::NoGradGuard no_grad;
  const bool was_training = model.training();
  model.set_training(false);
  const double value = model.tce_predict(model.encode(model.vocab().encode_words(sentence).ids)).item();
  model.set_training(was_training);
  return value;
}

Prediction predict(ModelBundle& model, const std::vector<std::string>& sentence, TaskKind task,
                   const DecodingConfig& decoding, bool log_count_disagreement) {
  Prediction p;
  p.sentence = join(sentence);
  p.generated_text = generate(model, sentence, task, decoding).text;
  p.parsed = parse(p.generated_text, task);
  p.tce_raw = tce_predict_value(model, sentence);
  p.tce_rounded = tce_round(p.tce_raw);
  if (log_count_disagreement && p.parsed.tuples.size() != p.tce_rounded) {
    spdlog::info("count estimate {} differs from {} parsed tuples: {}", p.tce_rounded, p.parsed.tuples.size(),
                 p.sentence);
  }
  return p;
}

nlohmann::json prediction_to_json(const Prediction& p) {
  nlohmann::json tuples = nlohmann::json::array();
  for (const auto& t : p.parsed.tuples) {
    nlohmann::json j = {{"aspect", t.aspect}, {"sentiment", to_string(t.sentiment)}};
    if (!t.opinion.empty()) j["opinion"] = t.opinion;
    if (t.category) j["category"] = *t.category;
    tuples.push_back(std::move(j));
  }
  const auto& d = p.parsed.diagnostics;
  return {{"sentence", p.sentence},
          {"generated_text", p.generated_text},
          {"parsed_tuples", tuples},
          {"tce_raw", p.tce_raw},
          {"tce_rounded", p.tce_rounded},
          {"diagnostics",
           {{"segments", d.segments},
            {"valid_segments", d.valid_segments},
            {"malformed_segments", d.malformed_segments},
            {"unknown_sentiment", d.unknown_sentiment},
            {"duplicates_removed", d.duplicates_removed}}}};
}

Predictor model_predictor(ModelBundle& model, TaskKind task, const DecodingConfig& decoding) {
  return [&model, task, decoding](const AnnotatedSentence& s) { return generate(model, s.tokens, task, decoding).text; };
}

}  // namespace aspectcl
