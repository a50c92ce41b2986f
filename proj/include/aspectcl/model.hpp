#pragma once

// Encoder-decoder transformer with the two auxiliary heads used during
// multi-task fine-tuning:
//   - opinion tagger: linear B/I/O classifier over encoder token states;
//   - triplet counter: hidden -> 128 -> 1 regressor over the mean-pooled
//     encoder states.
// Pre-norm blocks with RMS normalisation, learned absolute positions and an
// untied output projection.

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "aspectcl/autograd.hpp"
#include "aspectcl/vocabulary.hpp"

namespace aspectcl {

struct ModelConfig {
  int d_model = 64;
  int num_heads = 4;
  int d_ff = 128;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int max_positions = 256;
  double dropout = 0.0;
  double init_std = 0.0;  // <= 0 selects 1/sqrt(d_model)
  int tce_hidden = 128;

  double effective_init_std() const;
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct NamedParameter {
  std::string name;
  ag::Var* var;
  bool decay;
};

class ModelBundle {
 public:
  ModelBundle() = default;
  // Fresh weights drawn from N(0, init_std) (norm gains start at 1, biases
  // at 0), fully determined by `seed`.
  ModelBundle(ModelConfig config, Vocabulary vocab, std::uint64_t seed);

  // Deep copies: the copy owns independent parameter storage.
  ModelBundle(const ModelBundle& other);
  ModelBundle& operator=(const ModelBundle& other);
  ModelBundle(ModelBundle&&) noexcept = default;
  ModelBundle& operator=(ModelBundle&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }

  // Adds missing tokens to the vocabulary, growing the embedding table and
  // output projection with rows drawn from the initializer distribution.
  void add_special_tokens(std::span<const std::string> tokens);

  std::vector<NamedParameter> parameters();
  void zero_grad();
  std::size_t parameter_count();

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }
  std::mt19937_64& rng() { return rng_; }
  void reseed(std::uint64_t seed) { rng_.seed(seed); }

  // Final encoder states (after the closing norm and dropout), one row per
  // input id. An empty input is replaced by a lone </s>.
  ag::Var encode(std::span<const int> ids);
  // Final decoder states for `decoder_ids` attending to `memory`.
  ag::Var decode(const ag::Var& memory, std::span<const int> decoder_ids);
  ag::Var lm_logits(const ag::Var& decoder_states);
  ag::Var otd_logits(const ag::Var& encoder_states);
  // 1x1 triplet-count prediction from the mean-pooled encoder states.
  ag::Var tce_predict(const ag::Var& encoder_states);

  // Checkpoint: model.json (config + vocabulary) and weights.bin, written
  // through temporary files and renamed into place.
  void save(const std::filesystem::path& dir) const;
  static ModelBundle load(const std::filesystem::path& dir);

  // Max |a - b| over all parameters; infinity when shapes differ.
  static double max_abs_difference(const ModelBundle& a, const ModelBundle& b);

 private:
  struct Attention {
    ag::Var wq, wk, wv, wo;
  };
  struct FeedForward {
    ag::Var w_in, w_out;
  };
  struct EncoderLayer {
    ag::Var norm_attn, norm_ff;
    Attention attn;
    FeedForward ff;
  };
  struct DecoderLayer {
    ag::Var norm_self, norm_cross, norm_ff;
    Attention self_attn, cross_attn;
    FeedForward ff;
  };

  void deep_copy_from(const ModelBundle& other);

  ag::Var attend(const Attention& a, const ag::Var& x, const ag::Var& memory, bool causal);
  ag::Var feed_forward(const FeedForward& f, const ag::Var& x);
  ag::Var drop(const ag::Var& x);
  ag::Var random_matrix(int rows, int cols, std::mt19937_64& gen) const;

  ModelConfig config_;
  Vocabulary vocab_;
  std::uint64_t seed_ = 0;
  std::mt19937_64 rng_;
  bool training_ = false;

  ag::Var token_embedding_;
  ag::Var encoder_positions_;
  ag::Var decoder_positions_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  ag::Var encoder_final_norm_;
  ag::Var decoder_final_norm_;
  ag::Var output_projection_;  // d_model x vocab
  ag::Var otd_weight_, otd_bias_;
  ag::Var tce_w1_, tce_b1_, tce_w2_, tce_b2_;
};

// Saves into `dir` by way of a sibling staging directory that replaces
// `dir` once complete.
void save_checkpoint(const ModelBundle& model, const std::filesystem::path& dir);

}  // namespace aspectcl
