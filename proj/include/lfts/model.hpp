#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "lfts/ingest.hpp"
#include "lfts/tensor.hpp"

namespace lfts::model {

using tensor::Graph;
using tensor::Parameter;
using tensor::ParameterStore;
using tensor::Var;

class SizingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  std::size_t input_len = 256;   // L_x
  std::size_t pred_len = 64;     // L_y; also the length of the decoder start segment
  std::size_t d_model = 512;
  std::size_t n_heads = 2;
  std::size_t d_ff = 0;          // 0: 4 * d_model
  std::size_t encoder_layers = 8;  // recorded only; branch_blocks drives the encoder
  std::size_t decoder_layers = 10;
  double sparse_factor = 3.8;
  double dropout = 0.2;
  std::size_t enc_in = 5;
  std::size_t dec_in = 5;
  std::size_t d_out = 1;
  double alpha_embed = 1.0;
  std::vector<std::size_t> branch_blocks{3, 2, 1};  // attention blocks for the L, L/2, L/4 branches
  bool stacked = true;           // false: only the full-length branch
  std::size_t sample_threshold = 256;  // sampled-key sparsity measure above this key count

  std::size_t ff_dim() const { return d_ff ? d_ff : 4 * d_model; }
  std::size_t branch_count() const { return stacked ? 3 : 1; }
  /// Time length of the fused encoder map.
  std::size_t fused_len() const { return branch_count() * (input_len / 8); }
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

// ---- building blocks ----------------------------------------------------------

/// Fixed sinusoidal table [L x d_model]: column 2j is sin(pos / s_j), column
/// 2j+1 cos(pos / s_j), with s_j = (2 * scale_len)^(2j / d_model).
std::vector<double> positional_embedding(std::size_t length, std::size_t d_model, std::size_t scale_len);

/// M(q_i) = ln sum_l exp(q_i k_l / sqrt(d)) - mean_l(q_i k_l / sqrt(d)) - ln L_K
/// for row-major Q [L_Q x d] and K [L_K x d]. When `sample_keys` is nonzero the
/// sums run over that many keys drawn with `rng` instead of all L_K.
std::vector<double> sparsity_measure(std::span<const double> q, std::span<const double> k, std::size_t lq,
                                     std::size_t lk, std::size_t d, std::size_t sample_keys = 0,
                                     const tensor::CounterRng* rng = nullptr);

/// Indices of the `u` largest scores, ties resolved toward the lower index;
/// returned in ascending index order.
std::vector<std::size_t> top_u(std::span<const double> scores, std::size_t u);

/// Default active-query count ceil(factor * ln L), clamped to [1, L].
std::size_t active_queries(double factor, std::size_t length);

/// Softmax attention of one head; `causal` hides keys after each query.
Var dense_attention(Var q, Var k, Var v, bool causal = false);

struct SparseAttentionOptions {
  std::size_t u = 0;  // active queries per head; must be positive
  std::size_t sample_threshold = 256;
  double sparse_factor = 3.8;
  std::uint64_t seed = 0;
};

/// Multi-head ProbSparse attention on already projected Q, K, V [L x d_model].
/// Each head ranks its own queries; the top-u rows receive full attention,
/// the rest the mean of that head's values. Heads are concatenated (the
/// output projection is applied by the caller).
Var distributed_sparse_attention(Var q, Var k, Var v, std::size_t n_heads, const SparseAttentionOptions& opt,
                                 std::vector<std::vector<std::size_t>>* selected = nullptr);

/// Same layout as distributed_sparse_attention but every query is active.
Var multi_head_dense(Var q, Var k, Var v, std::size_t n_heads, bool causal);

struct Linear {
  const Parameter* w = nullptr;  // [in x out]
  const Parameter* b = nullptr;  // [out], may be null
  Var operator()(Graph& g, Var x) const;
};

struct LayerNorm {
  const Parameter* gain = nullptr;
  const Parameter* shift = nullptr;
  Var operator()(Graph& g, Var x) const;
};

struct AttentionLayer {
  Linear wq, wk, wv, wo;
};

struct EncoderLayer {
  AttentionLayer attn;
  LayerNorm norm1, norm2;
  Linear ff1, ff2;
};

struct DistilLayer {
  const Parameter* conv = nullptr;  // [(3 * d) x d]
  const Parameter* bias = nullptr;
};

struct Branch {
  std::vector<EncoderLayer> blocks;
  std::vector<DistilLayer> distil;  // blocks.size() - 1
  std::size_t extra_pools = 0;
  LayerNorm norm;
};

struct DecoderLayer {
  AttentionLayer self_attn, cross_attn;
  LayerNorm norm1, norm2, norm3;
  Linear ff1, ff2;
};

struct Embedding {
  const Parameter* token = nullptr;  // [(3 * d_in) x d_model]
  std::vector<const Parameter*> marks;  // one table per calendar field
};

struct StackedEncoderOutput {
  Var fused;  // after projection, [fused_len x d_model]
  std::vector<Var> branches;
  std::vector<std::size_t> branch_lengths;
};

class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const noexcept { return cfg_; }
  ParameterStore& params() noexcept { return store_; }
  const ParameterStore& params() const noexcept { return store_; }

  /// alpha * conv(x) + PE + sum of mark embeddings, x is [rows x d_in].
  Var embed(Graph& g, const Embedding& e, std::span<const double> x, std::size_t rows,
            std::span<const ingest::TimeMark> marks) const;
  Var embed_encoder(Graph& g, std::span<const double> x, std::span<const ingest::TimeMark> marks) const;
  /// Start segment (last pred_len input rows) followed by pred_len zero rows.
  Var embed_decoder(Graph& g, std::span<const double> x, std::span<const ingest::TimeMark> marks) const;

  Var encoder_layer(Graph& g, const EncoderLayer& layer, Var x) const;
  Var run_branch(Graph& g, const Branch& b, Var tokens) const;
  StackedEncoderOutput stacked_encode(Graph& g, Var tokens) const;
  /// Decoder stack over embedded decoder tokens; returns the last pred_len
  /// rows projected to d_out.
  Var decode(Graph& g, Var fused, Var dec_tokens) const;

  /// x: [input_len x enc_in] row-major; marks: input_len + pred_len rows
  /// (the input window followed by the forecast horizon).
  Var forward(Graph& g, std::span<const double> x, std::span<const ingest::TimeMark> marks) const;

  /// Shapes and parameter counts per layer.
  nlohmann::json summary() const;

  const Embedding& encoder_embedding() const noexcept { return enc_embed_; }
  const Embedding& decoder_embedding() const noexcept { return dec_embed_; }
  const std::vector<Branch>& branches() const noexcept { return branches_; }

 private:
  Var attention(Graph& g, const AttentionLayer& a, Var x, Var memory, bool self, bool causal) const;
  Linear linear(const std::string& name, std::size_t in, std::size_t out, bool bias = true);
  LayerNorm layer_norm(const std::string& name, std::size_t d);
  AttentionLayer attention_layer(const std::string& name);
  Embedding embedding(const std::string& name, std::size_t d_in);

  ModelConfig cfg_;
  std::uint64_t seed_;
  ParameterStore store_;
  Embedding enc_embed_, dec_embed_;
  std::vector<Branch> branches_;
  Linear fuse_;
  std::vector<DecoderLayer> decoder_;
  LayerNorm dec_norm_;
  Linear head_;
  std::vector<double> pe_;  // positional table covering input_len + pred_len rows
};

}  // namespace lfts::model
