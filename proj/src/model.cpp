#include "aspectcl/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>

#include "aspectcl/errors.hpp"
#include "aspectcl/io.hpp"

namespace aspectcl {

using ag::Matrix;
using ag::Var;

namespace {

constexpr char kWeightsMagic[4] = {'A', 'C', 'L', 'W'};
constexpr std::uint32_t kWeightsVersion = 1;
constexpr int kModelFormatVersion = 1;

Var ones(int cols) { return Var(Matrix::Ones(1, cols), true); }
Var zeros(int rows, int cols) { return Var(Matrix::Zero(rows, cols), true); }

template <class T>
void write_pod(std::string& out, T value) {
  out.append(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IOFailure("truncated weights file");
  return value;
}

}  // namespace

double ModelConfig::effective_init_std() const {
  return init_std > 0.0 ? init_std : 1.0 / std::sqrt(static_cast<double>(d_model));
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"d_model", c.d_model},
       {"num_heads", c.num_heads},
       {"d_ff", c.d_ff},
       {"encoder_layers", c.encoder_layers},
       {"decoder_layers", c.decoder_layers},
       {"max_positions", c.max_positions},
       {"dropout", c.dropout},
       {"init_std", c.init_std},
       {"tce_hidden", c.tce_hidden}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.d_model = j.value("d_model", d.d_model);
  c.num_heads = j.value("num_heads", d.num_heads);
  c.d_ff = j.value("d_ff", d.d_ff);
  c.encoder_layers = j.value("encoder_layers", d.encoder_layers);
  c.decoder_layers = j.value("decoder_layers", d.decoder_layers);
  c.max_positions = j.value("max_positions", d.max_positions);
  c.dropout = j.value("dropout", d.dropout);
  c.init_std = j.value("init_std", d.init_std);
  c.tce_hidden = j.value("tce_hidden", d.tce_hidden);
}

ModelBundle::ModelBundle(ModelConfig config, Vocabulary vocab, std::uint64_t seed)
    : config_(config), vocab_(std::move(vocab)), seed_(seed), rng_(seed ^ 0x9E3779B97F4A7C15ULL) {
  if (config_.d_model <= 0 || config_.num_heads <= 0 || config_.d_model % config_.num_heads != 0) {
    throw InvalidConfig("d_model must be a positive multiple of num_heads");
  }
  if (config_.d_ff <= 0 || config_.max_positions <= 0 || config_.tce_hidden <= 0 || config_.encoder_layers < 0 ||
      config_.decoder_layers < 0 || config_.dropout < 0.0 || config_.dropout >= 1.0) {
    throw InvalidConfig("invalid model dimensions");
  }
  std::mt19937_64 gen(seed);
  const int d = config_.d_model;
  const int v = static_cast<int>(vocab_.size());
  auto attention = [&] {
    return Attention{random_matrix(d, d, gen), random_matrix(d, d, gen), random_matrix(d, d, gen),
                     random_matrix(d, d, gen)};
  };
  auto feed_forward = [&] { return FeedForward{random_matrix(d, config_.d_ff, gen), random_matrix(config_.d_ff, d, gen)}; };

  token_embedding_ = random_matrix(v, d, gen);
  encoder_positions_ = random_matrix(config_.max_positions, d, gen);
  decoder_positions_ = random_matrix(config_.max_positions, d, gen);
  for (int l = 0; l < config_.encoder_layers; ++l) {
    EncoderLayer layer{ones(d), ones(d), {}, {}};
    layer.attn = attention();
    layer.ff = feed_forward();
    encoder_.push_back(std::move(layer));
  }
  for (int l = 0; l < config_.decoder_layers; ++l) {
    DecoderLayer layer{ones(d), ones(d), ones(d), {}, {}, {}};
    layer.self_attn = attention();
    layer.cross_attn = attention();
    layer.ff = feed_forward();
    decoder_.push_back(std::move(layer));
  }
  encoder_final_norm_ = ones(d);
  decoder_final_norm_ = ones(d);
  output_projection_ = random_matrix(d, v, gen);
  otd_weight_ = random_matrix(d, 3, gen);
  otd_bias_ = zeros(1, 3);
  tce_w1_ = random_matrix(d, config_.tce_hidden, gen);
  tce_b1_ = zeros(1, config_.tce_hidden);
  tce_w2_ = random_matrix(config_.tce_hidden, 1, gen);
  tce_b2_ = zeros(1, 1);
}

Var ModelBundle::random_matrix(int rows, int cols, std::mt19937_64& gen) const {
  std::normal_distribution<double> dist(0.0, config_.effective_init_std());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(gen);
  return Var(std::move(m), true);
}

ModelBundle::ModelBundle(const ModelBundle& other) { deep_copy_from(other); }

ModelBundle& ModelBundle::operator=(const ModelBundle& other) {
  if (this != &other) deep_copy_from(other);
  return *this;
}

void ModelBundle::deep_copy_from(const ModelBundle& other) {
  config_ = other.config_;
  vocab_ = other.vocab_;
  seed_ = other.seed_;
  rng_ = other.rng_;
  training_ = other.training_;
  token_embedding_ = other.token_embedding_;
  encoder_positions_ = other.encoder_positions_;
  decoder_positions_ = other.decoder_positions_;
  encoder_ = other.encoder_;
  decoder_ = other.decoder_;
  encoder_final_norm_ = other.encoder_final_norm_;
  decoder_final_norm_ = other.decoder_final_norm_;
  output_projection_ = other.output_projection_;
  otd_weight_ = other.otd_weight_;
  otd_bias_ = other.otd_bias_;
  tce_w1_ = other.tce_w1_;
  tce_b1_ = other.tce_b1_;
  tce_w2_ = other.tce_w2_;
  tce_b2_ = other.tce_b2_;
  // The member-wise copy above shares nodes; give every slot fresh storage.
  for (auto& p : parameters()) *p.var = Var(p.var->value(), true);
}

std::vector<NamedParameter> ModelBundle::parameters() {
  std::vector<NamedParameter> out;
  auto attention = [&out](const std::string& prefix, Attention& a) {
    out.push_back({prefix + ".wq", &a.wq, true});
    out.push_back({prefix + ".wk", &a.wk, true});
    out.push_back({prefix + ".wv", &a.wv, true});
    out.push_back({prefix + ".wo", &a.wo, true});
  };
  auto feed_forward = [&out](const std::string& prefix, FeedForward& f) {
    out.push_back({prefix + ".w_in", &f.w_in, true});
    out.push_back({prefix + ".w_out", &f.w_out, true});
  };
  out.push_back({"token_embedding", &token_embedding_, true});
  out.push_back({"encoder.positions", &encoder_positions_, true});
  out.push_back({"decoder.positions", &decoder_positions_, true});
  for (std::size_t l = 0; l < encoder_.size(); ++l) {
    const std::string p = "encoder." + std::to_string(l);
    out.push_back({p + ".norm_attn", &encoder_[l].norm_attn, false});
    out.push_back({p + ".norm_ff", &encoder_[l].norm_ff, false});
    attention(p + ".attn", encoder_[l].attn);
    feed_forward(p + ".ff", encoder_[l].ff);
  }
  for (std::size_t l = 0; l < decoder_.size(); ++l) {
    const std::string p = "decoder." + std::to_string(l);
    out.push_back({p + ".norm_self", &decoder_[l].norm_self, false});
    out.push_back({p + ".norm_cross", &decoder_[l].norm_cross, false});
    out.push_back({p + ".norm_ff", &decoder_[l].norm_ff, false});
    attention(p + ".self_attn", decoder_[l].self_attn);
    attention(p + ".cross_attn", decoder_[l].cross_attn);
    feed_forward(p + ".ff", decoder_[l].ff);
  }
  out.push_back({"encoder.final_norm", &encoder_final_norm_, false});
  out.push_back({"decoder.final_norm", &decoder_final_norm_, false});
  out.push_back({"output_projection", &output_projection_, true});
  out.push_back({"otd.weight", &otd_weight_, true});
  out.push_back({"otd.bias", &otd_bias_, false});
  out.push_back({"tce.w1", &tce_w1_, true});
  out.push_back({"tce.b1", &tce_b1_, false});
  out.push_back({"tce.w2", &tce_w2_, true});
  out.push_back({"tce.b2", &tce_b2_, false});
  return out;
}

void ModelBundle::zero_grad() {
  for (auto& p : parameters()) p.var->zero_grad();
}

std::size_t ModelBundle::parameter_count() {
  std::size_t n = 0;
  for (auto& p : parameters()) n += static_cast<std::size_t>(p.var->value().size());
  return n;
}

void ModelBundle::add_special_tokens(std::span<const std::string> tokens) {
  std::vector<std::string> missing;
  for (const auto& t : tokens) {
    if (!vocab_.contains(t)) missing.push_back(t);
  }
  if (missing.empty()) return;
  std::mt19937_64 gen(seed_ + 0x5EC1A1ULL * (vocab_.size() + 1));
  const int d = config_.d_model;
  Matrix embedding = token_embedding_.value();
  Matrix projection = output_projection_.value();
  const Eigen::Index old_size = embedding.rows();
  const auto added = static_cast<Eigen::Index>(missing.size());
  embedding.conservativeResize(old_size + added, Eigen::NoChange);
  projection.conservativeResize(Eigen::NoChange, old_size + added);
  const Matrix fresh_rows = random_matrix(static_cast<int>(added), d, gen).value();
  const Matrix fresh_cols = random_matrix(d, static_cast<int>(added), gen).value();
  embedding.bottomRows(added) = fresh_rows;
  projection.rightCols(added) = fresh_cols;
  for (const auto& t : missing) vocab_.add(t);
  token_embedding_ = Var(std::move(embedding), true);
  output_projection_ = Var(std::move(projection), true);
}

Var ModelBundle::drop(const Var& x) {
  if (!training_) return x;
  return ag::dropout(x, config_.dropout, rng_);
}

Var ModelBundle::attend(const Attention& a, const Var& x, const Var& memory, bool causal) {
  Var q = ag::matmul(x, a.wq);
  Var k = ag::matmul(memory, a.wk);
  Var v = ag::matmul(memory, a.wv);
  return ag::matmul(ag::attention(q, k, v, config_.num_heads, causal), a.wo);
}

Var ModelBundle::feed_forward(const FeedForward& f, const Var& x) {
  return ag::matmul(drop(ag::relu(ag::matmul(x, f.w_in))), f.w_out);
}

Var ModelBundle::encode(std::span<const int> ids) {
  std::vector<int> input(ids.begin(), ids.end());
  if (input.empty()) input.push_back(Vocabulary::kEos);
  if (static_cast<int>(input.size()) > config_.max_positions) {
    throw InvalidArgument("encoder input of " + std::to_string(input.size()) + " tokens exceeds " +
                          std::to_string(config_.max_positions) + " positions");
  }
  const auto n = static_cast<Eigen::Index>(input.size());
  Var x = ag::add(ag::gather_rows(token_embedding_, input), ag::slice_rows(encoder_positions_, 0, n));
  x = drop(x);
  for (auto& layer : encoder_) {
    Var h = ag::rms_norm(x, layer.norm_attn);
    x = ag::add(x, drop(attend(layer.attn, h, h, false)));
    h = ag::rms_norm(x, layer.norm_ff);
    x = ag::add(x, drop(feed_forward(layer.ff, h)));
  }
  return drop(ag::rms_norm(x, encoder_final_norm_));
}

Var ModelBundle::decode(const Var& memory, std::span<const int> decoder_ids) {
  if (decoder_ids.empty()) throw InvalidArgument("decoder input is empty");
  if (static_cast<int>(decoder_ids.size()) > config_.max_positions) {
    throw TargetTooLong("decoder input of " + std::to_string(decoder_ids.size()) + " tokens exceeds " +
                        std::to_string(config_.max_positions) + " positions");
  }
  const auto n = static_cast<Eigen::Index>(decoder_ids.size());
  Var y = ag::add(ag::gather_rows(token_embedding_, decoder_ids), ag::slice_rows(decoder_positions_, 0, n));
  y = drop(y);
  for (auto& layer : decoder_) {
    Var h = ag::rms_norm(y, layer.norm_self);
    y = ag::add(y, drop(attend(layer.self_attn, h, h, true)));
    h = ag::rms_norm(y, layer.norm_cross);
    y = ag::add(y, drop(attend(layer.cross_attn, h, memory, false)));
    h = ag::rms_norm(y, layer.norm_ff);
    y = ag::add(y, drop(feed_forward(layer.ff, h)));
  }
  return ag::rms_norm(y, decoder_final_norm_);
}

Var ModelBundle::lm_logits(const Var& decoder_states) { return ag::matmul(decoder_states, output_projection_); }

Var ModelBundle::otd_logits(const Var& encoder_states) {
  return ag::add_row(ag::matmul(encoder_states, otd_weight_), otd_bias_);
}

Var ModelBundle::tce_predict(const Var& encoder_states) {
  Var e = ag::mean_rows(encoder_states);
  Var hidden = ag::relu(ag::add_row(ag::matmul(e, tce_w1_), tce_b1_));
  return ag::add_row(ag::matmul(hidden, tce_w2_), tce_b2_);
}

void ModelBundle::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json meta{{"format_version", kModelFormatVersion},
                      {"config", config_},
                      {"seed", seed_},
                      {"vocabulary", vocab_.tokens()}};
  std::string blob(kWeightsMagic, sizeof(kWeightsMagic));
  write_pod(blob, kWeightsVersion);
  auto params = const_cast<ModelBundle*>(this)->parameters();
  write_pod(blob, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    const Matrix& m = p.var->value();
    write_pod(blob, static_cast<std::uint32_t>(p.name.size()));
    blob += p.name;
    write_pod(blob, static_cast<std::uint32_t>(m.rows()));
    write_pod(blob, static_cast<std::uint32_t>(m.cols()));
    blob.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
  }
  write_file_atomic(dir / "weights.bin", blob);
  write_file_atomic(dir / "model.json", meta.dump(2) + "\n");
}

ModelBundle ModelBundle::load(const std::filesystem::path& dir) {
  const nlohmann::json meta = nlohmann::json::parse(read_file(dir / "model.json"));
  if (meta.value("format_version", 0) != kModelFormatVersion) {
    throw IOFailure("unsupported model format in " + dir.string());
  }
  Vocabulary vocab;
  for (const auto& t : meta.at("vocabulary")) vocab.add(t.get<std::string>());
  if (vocab.size() != meta.at("vocabulary").size()) throw IOFailure("duplicate tokens in stored vocabulary");
  ModelBundle model(meta.at("config").get<ModelConfig>(), std::move(vocab), meta.at("seed").get<std::uint64_t>());

  std::ifstream in(dir / "weights.bin", std::ios::binary);
  if (!in) throw IOFailure("cannot open " + (dir / "weights.bin").string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kWeightsMagic, 4) != 0) throw IOFailure("bad weights magic");
  if (read_pod<std::uint32_t>(in) != kWeightsVersion) throw IOFailure("unsupported weights version");
  const auto count = read_pod<std::uint32_t>(in);
  std::map<std::string, Var*> slots;
  for (auto& p : model.parameters()) slots[p.name] = p.var;
  if (count != slots.size()) throw IOFailure("weights file parameter count mismatch");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(read_pod<std::uint32_t>(in), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    const auto rows = read_pod<std::uint32_t>(in);
    const auto cols = read_pod<std::uint32_t>(in);
    auto it = slots.find(name);
    if (it == slots.end()) throw IOFailure("unknown parameter '" + name + "' in weights file");
    Matrix m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw IOFailure("truncated weights file");
    if (m.rows() != it->second->rows() || m.cols() != it->second->cols()) {
      throw IOFailure("shape mismatch for parameter '" + name + "'");
    }
    *it->second = Var(std::move(m), true);
  }
  return model;
}

double ModelBundle::max_abs_difference(const ModelBundle& a, const ModelBundle& b) {
  auto pa = const_cast<ModelBundle&>(a).parameters();
  auto pb = const_cast<ModelBundle&>(b).parameters();
  if (pa.size() != pb.size()) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const Matrix& ma = pa[i].var->value();
    const Matrix& mb = pb[i].var->value();
    if (ma.rows() != mb.rows() || ma.cols() != mb.cols()) return std::numeric_limits<double>::infinity();
    if (ma.size() > 0) worst = std::max(worst, (ma - mb).cwiseAbs().maxCoeff());
  }
  return worst;
}

void save_checkpoint(const ModelBundle& model, const std::filesystem::path& dir) {
  std::filesystem::path staging = dir;
  staging += ".staging";
  std::filesystem::remove_all(staging);
  model.save(staging);
  std::filesystem::remove_all(dir);
  std::filesystem::rename(staging, dir);
}

}  // namespace aspectcl
