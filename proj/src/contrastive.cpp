#include "aspectcl/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include <spdlog/spdlog.h>

#include "aspectcl/errors.hpp"
#include "aspectcl/io.hpp"
#include "aspectcl/optimizer.hpp"
#include "aspectcl/templates.hpp"

namespace aspectcl {

using ag::Matrix;
using ag::Var;

std::string_view to_string(SclMode mode) {
  return mode == SclMode::kSentenceLevel ? "sentence_level" : "aspect_level";
}

SclMode scl_mode_from_string(std::string_view name) {
  if (name == "aspect_level") return SclMode::kAspectLevel;
  if (name == "sentence_level") return SclMode::kSentenceLevel;
  throw InvalidArgument("unknown contrastive mode '" + std::string(name) + "'");
}

void ContrastiveConfig::validate() const {
  if (!(temperature > 0.0)) throw InvalidConfig("temperature must be > 0");
  if (batch_size < 2) throw InvalidConfig("contrastive batch_size must be >= 2");
  if (epochs < 0) throw InvalidConfig("epochs must be >= 0");
  if (!(learning_rate > 0.0)) throw InvalidConfig("learning_rate must be > 0");
  if (weight_decay < 0.0) throw InvalidConfig("weight_decay must be >= 0");
}

void to_json(nlohmann::json& j, const ContrastiveConfig& c) {
  j = {{"temperature", c.temperature},
       {"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"learning_rate", c.learning_rate},
       {"weight_decay", c.weight_decay},
       {"mode", to_string(c.mode)},
       {"seed", c.seed},
       {"normalize_embeddings", c.normalize_embeddings}};
}

void from_json(const nlohmann::json& j, ContrastiveConfig& c) {
  ContrastiveConfig d;
  c.temperature = j.value("temperature", d.temperature);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.mode = scl_mode_from_string(j.value("mode", std::string(to_string(d.mode))));
  c.seed = j.value("seed", d.seed);
  c.normalize_embeddings = j.value("normalize_embeddings", d.normalize_embeddings);
}

SclResult scl_loss(const EmbeddingBatch& batch, double tau, bool normalize) {
  const Matrix& z = batch.embeddings;
  const Eigen::Index n = z.rows();
  if (n < 2) throw InvalidArgument("contrastive batch needs at least two rows");
  if (static_cast<Eigen::Index>(batch.labels.size()) != n) throw InvalidArgument("label count != row count");
  if (!(tau > 0.0)) throw InvalidArgument("temperature must be > 0");
  if (!z.allFinite()) throw InvalidArgument("embedding batch contains NaN or Inf");

  Eigen::VectorXd norms = Eigen::VectorXd::Ones(n);
  Matrix u = z;
  if (normalize) {
    norms = z.rowwise().norm().cwiseMax(1e-12);
    u = z.array().colwise() / norms.array();
  }
  const Matrix s = (u * u.transpose()) / tau;

  SclResult result;
  Matrix g = Matrix::Zero(n, n);  // d loss / d s
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<Eigen::Index> positives;
    double max_logit = -std::numeric_limits<double>::infinity();
    for (Eigen::Index a = 0; a < n; ++a) {
      if (a == i) continue;
      max_logit = std::max(max_logit, s(i, a));
      if (batch.labels[static_cast<std::size_t>(a)] == batch.labels[static_cast<std::size_t>(i)]) {
        positives.push_back(a);
      }
    }
    if (positives.empty()) {
      ++result.skipped_anchors;
      continue;
    }
    double denominator = 0.0;
    for (Eigen::Index a = 0; a < n; ++a) {
      if (a != i) denominator += std::exp(s(i, a) - max_logit);
    }
    const double log_denominator = max_logit + std::log(denominator);
    const double inv_pos = 1.0 / static_cast<double>(positives.size());
    double positive_mean = 0.0;
    for (Eigen::Index p : positives) positive_mean += s(i, p);
    result.loss += log_denominator - positive_mean * inv_pos;
    ++result.anchors;
    for (Eigen::Index a = 0; a < n; ++a) {
      if (a != i) g(i, a) += std::exp(s(i, a) - log_denominator);
    }
    for (Eigen::Index p : positives) g(i, p) -= inv_pos;
  }

  if (result.anchors == 0) {
    result.degenerate = true;
    result.grad = Matrix::Zero(n, z.cols());
    spdlog::debug("contrastive batch of {} rows has no positive pairs", n);
    return result;
  }
  result.mean_loss = result.loss / static_cast<double>(result.anchors);

  const Matrix du = ((g + g.transpose()) * u) / tau;
  if (normalize) {
    const Eigen::VectorXd radial = (u.array() * du.array()).rowwise().sum();
    result.grad = (du.array() - u.array().colwise() * radial.array()).colwise() / norms.array();
  } else {
    result.grad = du;
  }
  return result;
}

Var mask_embedding(ModelBundle& model, const std::vector<std::string>& sentence, std::string_view prompt) {
  const auto words = split_whitespace(prompt);
  const auto mask_count = std::count(words.begin(), words.end(), kMaskToken);
  if (mask_count == 0) throw NoMaskToken("prompt has no " + std::string(kMaskToken) + " token");
  if (mask_count > 1) throw MultipleMaskTokens("prompt has " + std::to_string(mask_count) + " mask tokens");
  if (!model.vocab().contains(kMaskToken)) throw InvalidArgument("model vocabulary lacks the mask token");

  const auto source = model.vocab().encode_words(sentence);
  const auto target = model.vocab().encode_words(words);
  const auto mask_word = static_cast<std::size_t>(std::find(words.begin(), words.end(), kMaskToken) - words.begin());

  std::vector<int> decoder_input{Vocabulary::kPad};
  decoder_input.insert(decoder_input.end(), target.ids.begin(), target.ids.end());
  Var memory = model.encode(source.ids);
  Var states = model.decode(memory, decoder_input);
  return ag::slice_rows(states, 1 + target.first_piece[mask_word], 1);
}

ag::RowVector extract_mask_embedding(ModelBundle& model, const std::vector<std::string>& sentence,
                                     std::string_view prompt) {
  ag::NoGradGuard no_grad;
  return mask_embedding(model, sentence, prompt).value().row(0);
}

Var sentence_embedding(ModelBundle& model, const std::vector<std::string>& sentence) {
  return ag::mean_rows(model.encode(model.vocab().encode_words(sentence).ids));
}

ag::RowVector mean_pooled_sentence_embedding(ModelBundle& model, const std::vector<std::string>& sentence) {
  ag::NoGradGuard no_grad;
  return sentence_embedding(model, sentence).value().row(0);
}

std::vector<ContrastiveItem> aspect_level_items(const std::vector<AnnotatedSentence>& sentences) {
  std::vector<ContrastiveItem> items;
  for (const auto& p : derive_prompt_examples(sentences).examples) {
    items.push_back({sentences[p.sentence_index].tokens, p.prompt, p.label});
  }
  return items;
}

std::vector<ContrastiveItem> sentence_level_items(const std::vector<AnnotatedSentence>& sentences) {
  std::vector<ContrastiveItem> items;
  for (const auto& e : derive_sentence_level_examples(sentences)) {
    items.push_back({sentences[e.sentence_index].tokens, {}, e.label});
  }
  return items;
}

std::vector<std::vector<std::size_t>> label_aware_batches(const std::vector<int>& labels, int batch_size,
                                                          std::mt19937_64& rng) {
  if (batch_size < 2) throw InvalidArgument("batch_size must be >= 2");
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i]].push_back(i);

  std::vector<std::vector<std::size_t>> chunks;
  for (auto& [label, indices] : by_label) {
    std::shuffle(indices.begin(), indices.end(), rng);
    for (std::size_t k = 0; k < indices.size(); k += 2) {
      chunks.emplace_back(indices.begin() + static_cast<std::ptrdiff_t>(k),
                          indices.begin() + static_cast<std::ptrdiff_t>(std::min(k + 2, indices.size())));
    }
  }
  std::shuffle(chunks.begin(), chunks.end(), rng);

  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> current;
  for (const auto& chunk : chunks) {
    for (std::size_t idx : chunk) {
      current.push_back(idx);
      if (static_cast<int>(current.size()) == batch_size) {
        batches.push_back(std::move(current));
        current.clear();
      }
    }
  }
  if (current.size() >= 2) batches.push_back(std::move(current));
  return batches;
}

std::string pretrain_trace_csv(const std::vector<PretrainEpoch>& trace) {
  std::string csv = "epoch,mean_loss,skipped_anchors\n";
  for (const auto& e : trace) {
    csv += std::to_string(e.epoch) + "," + format_double(e.mean_loss) + "," + std::to_string(e.skipped_anchors) + "\n";
  }
  return csv;
}

PretrainResult pretrain(const std::vector<ContrastiveItem>& corpus, const ContrastiveConfig& config,
                        ModelBundle init, const std::optional<std::filesystem::path>& checkpoint_dir) {
  config.validate();
  if (corpus.empty()) throw EmptyCorpus("contrastive corpus is empty");

  PretrainResult result{std::move(init), {}};
  ModelBundle& model = result.model;
  if (config.mode == SclMode::kAspectLevel) {
    const auto tokens = special_tokens(TaskKind::kASTE);
    model.add_special_tokens(tokens);
  }
  if (checkpoint_dir) {
    write_file_atomic(*checkpoint_dir / "config.json", nlohmann::json(config).dump(2) + "\n");
  }

  std::vector<int> labels;
  for (const auto& item : corpus) labels.push_back(static_cast<int>(item.label));

  std::mt19937_64 rng(config.seed);
  model.reseed(config.seed + 1);
  model.set_training(true);
  model.zero_grad();
  AdamW optimizer({config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay});

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    PretrainEpoch trace{epoch, 0.0, 0, 0, 0};
    double loss_sum = 0.0;
    const auto batches = label_aware_batches(labels, config.batch_size, rng);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<Var> rows;
      std::vector<int> batch_labels;
      for (std::size_t idx : batches[b]) {
        const auto& item = corpus[idx];
        rows.push_back(config.mode == SclMode::kAspectLevel ? mask_embedding(model, item.sentence, item.prompt)
                                                            : sentence_embedding(model, item.sentence));
        batch_labels.push_back(labels[idx]);
      }
      Var stacked = ag::concat_rows(rows);
      SclResult scl = scl_loss({stacked.value(), batch_labels}, config.temperature, config.normalize_embeddings);
      ++trace.batches;
      trace.skipped_anchors += scl.skipped_anchors;
      if (!std::isfinite(scl.loss)) {
        throw NonFiniteLoss("non-finite contrastive loss at epoch " + std::to_string(epoch) + ", batch " +
                                std::to_string(b),
                            static_cast<std::size_t>(epoch), b);
      }
      if (scl.degenerate) {
        ++trace.degenerate_batches;
        continue;
      }
      if (scl.skipped_anchors > 0) {
        spdlog::debug("epoch {} batch {}: {} anchors without positives", epoch, b, scl.skipped_anchors);
      }
      Var loss = ag::custom_scalar(std::span<const Var>(&stacked, 1), scl.loss, {std::move(scl.grad)});
      ag::backward(loss);
      optimizer.step(model.parameters());
      loss_sum += scl.mean_loss;
    }
    const std::size_t effective = trace.batches - trace.degenerate_batches;
    trace.mean_loss = effective > 0 ? loss_sum / static_cast<double>(effective) : 0.0;
    result.trace.push_back(trace);
    spdlog::info("pretrain epoch {}: mean loss {:.6f} over {} batches ({} anchors skipped)", epoch, trace.mean_loss,
                 trace.batches, trace.skipped_anchors);
    if (checkpoint_dir) {
      save_checkpoint(model, *checkpoint_dir / "checkpoint");
      write_file_atomic(*checkpoint_dir / "trace.csv", pretrain_trace_csv(result.trace));
    }
  }
  model.set_training(false);
  model.zero_grad();
  if (checkpoint_dir && config.epochs == 0) save_checkpoint(model, *checkpoint_dir / "checkpoint");
  return result;
}

double silhouette_score(const Matrix& points, const std::vector<int>& labels) {
  const Eigen::Index n = points.rows();
  if (static_cast<Eigen::Index>(labels.size()) != n) throw InvalidArgument("label count != point count");
  std::map<int, std::size_t> sizes;
  for (int l : labels) ++sizes[l];
  if (sizes.size() < 2) return 0.0;

  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int own = labels[static_cast<std::size_t>(i)];
    if (sizes[own] == 1) continue;
    std::map<int, double> sums;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      sums[labels[static_cast<std::size_t>(j)]] += (points.row(i) - points.row(j)).norm();
    }
    const double a = sums[own] / static_cast<double>(sizes[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [label, sum] : sums) {
      if (label != own) b = std::min(b, sum / static_cast<double>(sizes[label]));
    }
    const double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(n);
}

std::string embeddings_to_tsv(const std::vector<EmbeddingRow>& rows) {
  std::string out;
  for (const auto& row : rows) {
    out += row.id;
    out += '\t';
    out += to_string(row.label);
    out += '\t';
    for (Eigen::Index k = 0; k < row.vector.size(); ++k) {
      if (k) out += ',';
      out += format_double(row.vector(k));
    }
    out += '\n';
  }
  return out;
}

}  // namespace aspectcl
