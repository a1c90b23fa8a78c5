#include "lfts/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace lfts::model {

using tensor::ContractError;
using tensor::Shape;

namespace {

const char* const kMarkNames[ingest::kMarkDims] = {"minute", "hour", "weekday", "day", "month"};

}  // namespace

void ModelConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
    throw SizingError("d_model (" + std::to_string(d_model) + ") must be a positive multiple of n_heads (" +
                      std::to_string(n_heads) + ")");
  if (d_model % 2 != 0) throw SizingError("d_model must be even for the positional table");
  if (input_len == 0 || input_len % 8 != 0)
    throw SizingError("input length " + std::to_string(input_len) + " must be a positive multiple of 8");
  if (pred_len == 0 || input_len < 2 * pred_len)
    throw SizingError("input length " + std::to_string(input_len) + " must be at least twice the prediction length " +
                      std::to_string(pred_len));
  if (enc_in == 0 || dec_in == 0 || d_out == 0) throw SizingError("input and output widths must be positive");
  if (decoder_layers == 0) throw SizingError("need at least one decoder layer");
  if (!(sparse_factor > 0.0)) throw SizingError("sparse factor must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw SizingError("dropout must be in [0, 1)");
  if (branch_blocks.size() != 3) throw SizingError("branch_blocks needs one entry per branch (3)");
  for (std::size_t b = 0; b < branch_count(); ++b) {
    // Branch b starts at L / 2^b and must end at L / 8.
    const std::size_t halvings = 3 - b;
    if (branch_blocks[b] == 0) throw SizingError("every branch needs at least one attention block");
    if (branch_blocks[b] - 1 > halvings)
      throw SizingError("branch " + std::to_string(b) + " has more distilling layers than halvings to L/8");
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"input_len", c.input_len},
          {"pred_len", c.pred_len},
          {"d_model", c.d_model},
          {"n_heads", c.n_heads},
          {"d_ff", c.ff_dim()},
          {"encoder_layers", c.encoder_layers},
          {"decoder_layers", c.decoder_layers},
          {"sparse_factor", c.sparse_factor},
          {"dropout", c.dropout},
          {"enc_in", c.enc_in},
          {"dec_in", c.dec_in},
          {"d_out", c.d_out},
          {"alpha_embed", c.alpha_embed},
          {"branch_blocks", c.branch_blocks},
          {"stacked", c.stacked},
          {"sample_threshold", c.sample_threshold}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c) {
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  take("input_len", c.input_len);
  take("pred_len", c.pred_len);
  take("d_model", c.d_model);
  take("n_heads", c.n_heads);
  take("d_ff", c.d_ff);
  take("encoder_layers", c.encoder_layers);
  take("decoder_layers", c.decoder_layers);
  take("sparse_factor", c.sparse_factor);
  take("dropout", c.dropout);
  take("enc_in", c.enc_in);
  take("dec_in", c.dec_in);
  take("d_out", c.d_out);
  take("alpha_embed", c.alpha_embed);
  take("branch_blocks", c.branch_blocks);
  take("stacked", c.stacked);
  take("sample_threshold", c.sample_threshold);
  return c;
}

std::vector<double> positional_embedding(std::size_t length, std::size_t d_model, std::size_t scale_len) {
  if (d_model % 2 != 0) throw SizingError("positional embedding needs an even d_model");
  std::vector<double> pe(length * d_model);
  const double base = 2.0 * static_cast<double>(scale_len);
  for (std::size_t j = 0; j < d_model / 2; ++j) {
    const double s = std::pow(base, 2.0 * static_cast<double>(j) / static_cast<double>(d_model));
    for (std::size_t pos = 0; pos < length; ++pos) {
      const double a = static_cast<double>(pos) / s;
      pe[pos * d_model + 2 * j] = std::sin(a);
      pe[pos * d_model + 2 * j + 1] = std::cos(a);
    }
  }
  return pe;
}

std::vector<double> sparsity_measure(std::span<const double> q, std::span<const double> k, std::size_t lq,
                                     std::size_t lk, std::size_t d, std::size_t sample_keys,
                                     const tensor::CounterRng* rng) {
  if (q.size() != lq * d || k.size() != lk * d) throw tensor::ShapeError("sparsity_measure: Q or K size mismatch");
  if (lk == 0) throw tensor::ShapeError("sparsity_measure: no keys");
  std::vector<std::size_t> keys;
  if (sample_keys > 0 && sample_keys < lk) {
    if (!rng) throw ContractError("sparsity_measure: sampling needs a generator");
    for (std::size_t s = 0; s < sample_keys; ++s) keys.push_back(rng->bits(s) % lk);
  } else {
    keys.resize(lk);
    std::iota(keys.begin(), keys.end(), std::size_t{0});
  }
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  const double n = static_cast<double>(keys.size());
  std::vector<double> m(lq);
  std::vector<double> dots(keys.size());
  for (std::size_t i = 0; i < lq; ++i) {
    double mx = -std::numeric_limits<double>::infinity(), total = 0.0;
    for (std::size_t s = 0; s < keys.size(); ++s) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += q[i * d + c] * k[keys[s] * d + c];
      dots[s] = acc * inv;
      mx = std::max(mx, dots[s]);
      total += dots[s];
    }
    double se = 0.0;
    for (double v : dots) se += std::exp(v - mx);
    m[i] = mx + std::log(se) - total / n - std::log(n);
  }
  return m;
}

std::vector<std::size_t> top_u(std::span<const double> scores, std::size_t u) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  u = std::min(u, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(u), idx.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
  idx.resize(u);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::size_t active_queries(double factor, std::size_t length) {
  if (length <= 1) return length;
  const auto u = static_cast<std::size_t>(std::ceil(factor * std::log(static_cast<double>(length))));
  return std::clamp<std::size_t>(u, 1, length);
}

Var dense_attention(Var q, Var k, Var v, bool causal) {
  if (q.cols() != k.cols()) throw tensor::ShapeError("attention: Q " + q.shape().str() + " vs K " + k.shape().str());
  if (k.rows() != v.rows()) throw tensor::ShapeError("attention: K " + k.shape().str() + " vs V " + v.shape().str());
  Var s = tensor::scale(tensor::matmul_t(q, k), 1.0 / std::sqrt(static_cast<double>(q.cols())));
  if (causal) s = tensor::causal_mask(s);
  return tensor::matmul(tensor::softmax(s, 1), v);
}

Var distributed_sparse_attention(Var q, Var k, Var v, std::size_t n_heads, const SparseAttentionOptions& opt,
                                 std::vector<std::vector<std::size_t>>* selected) {
  if (opt.u == 0) throw ContractError("sparse attention: active query count must be positive");
  if (q.cols() % n_heads != 0) throw tensor::ShapeError("sparse attention: width not divisible by heads");
  const std::size_t dh = q.cols() / n_heads;
  const std::size_t lq = q.rows(), lk = k.rows();
  const std::size_t sample =
      lk > opt.sample_threshold ? active_queries(opt.sparse_factor, lk) : 0;
  if (selected) selected->clear();
  std::vector<Var> heads;
  for (std::size_t h = 0; h < n_heads; ++h) {
    Var qh = tensor::slice_cols(q, h * dh, (h + 1) * dh);
    Var kh = tensor::slice_cols(k, h * dh, (h + 1) * dh);
    Var vh = tensor::slice_cols(v, h * dh, (h + 1) * dh);
    if (opt.u >= lq) {
      if (selected) {
        selected->emplace_back(lq);
        std::iota(selected->back().begin(), selected->back().end(), std::size_t{0});
      }
      heads.push_back(dense_attention(qh, kh, vh));
      continue;
    }
    const tensor::CounterRng rng(opt.seed, h);
    const auto m = sparsity_measure(qh.value(), kh.value(), lq, lk, dh, sample, &rng);
    const auto active = q.graph->choose(top_u(m, opt.u));
    if (selected) selected->push_back(active);
    Var lazy = tensor::broadcast_rows(tensor::mean(vh, 0), lq);
    Var busy = dense_attention(tensor::gather_rows(qh, active), kh, vh);
    heads.push_back(tensor::scatter_rows(lazy, busy, active));
  }
  return heads.size() == 1 ? heads[0] : tensor::concat_cols(heads);
}

Var multi_head_dense(Var q, Var k, Var v, std::size_t n_heads, bool causal) {
  if (q.cols() % n_heads != 0) throw tensor::ShapeError("attention: width not divisible by heads");
  const std::size_t dh = q.cols() / n_heads;
  std::vector<Var> heads;
  for (std::size_t h = 0; h < n_heads; ++h)
    heads.push_back(dense_attention(tensor::slice_cols(q, h * dh, (h + 1) * dh),
                                    tensor::slice_cols(k, h * dh, (h + 1) * dh),
                                    tensor::slice_cols(v, h * dh, (h + 1) * dh), causal));
  return heads.size() == 1 ? heads[0] : tensor::concat_cols(heads);
}

Var Linear::operator()(Graph& g, Var x) const {
  Var y = tensor::matmul(x, g.param(*w));
  return b ? tensor::add(y, g.param(*b)) : y;
}

Var LayerNorm::operator()(Graph& g, Var x) const {
  return tensor::layer_norm(x, g.param(*gain), g.param(*shift));
}

// ---- Model --------------------------------------------------------------------

Linear Model::linear(const std::string& name, std::size_t in, std::size_t out, bool bias) {
  Linear l;
  l.w = &store_.add_xavier(name + ".w", in, out, seed_);
  if (bias) l.b = &store_.add(name + ".b", {out});
  return l;
}

LayerNorm Model::layer_norm(const std::string& name, std::size_t d) {
  LayerNorm n;
  Parameter& gain = store_.add(name + ".gain", {d});
  std::fill(gain.value.begin(), gain.value.end(), 1.0);
  n.gain = &gain;
  n.shift = &store_.add(name + ".shift", {d});
  return n;
}

AttentionLayer Model::attention_layer(const std::string& name) {
  const std::size_t d = cfg_.d_model;
  return {linear(name + ".q", d, d), linear(name + ".k", d, d), linear(name + ".v", d, d), linear(name + ".o", d, d)};
}

Embedding Model::embedding(const std::string& name, std::size_t d_in) {
  Embedding e;
  e.token = &store_.add_xavier(name + ".token", 3 * d_in, cfg_.d_model, seed_);
  for (std::size_t f = 0; f < ingest::kMarkDims; ++f) {
    Parameter& t = store_.add_xavier(name + ".mark." + kMarkNames[f], ingest::kMarkVocab[f], cfg_.d_model, seed_);
    t.centralize = false;  // lookup table rows are independent
    e.marks.push_back(&t);
  }
  return e;
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
  cfg_.validate();
  const std::size_t d = cfg_.d_model, ff = cfg_.ff_dim();
  enc_embed_ = embedding("enc.embed", cfg_.enc_in);
  for (std::size_t b = 0; b < cfg_.branch_count(); ++b) {
    const std::string bn = "enc.branch" + std::to_string(b);
    Branch br;
    for (std::size_t l = 0; l < cfg_.branch_blocks[b]; ++l) {
      const std::string ln = bn + ".block" + std::to_string(l);
      EncoderLayer layer;
      layer.attn = attention_layer(ln + ".attn");
      layer.norm1 = layer_norm(ln + ".norm1", d);
      layer.ff1 = linear(ln + ".ff1", d, ff);
      layer.ff2 = linear(ln + ".ff2", ff, d);
      layer.norm2 = layer_norm(ln + ".norm2", d);
      br.blocks.push_back(layer);
      if (l + 1 < cfg_.branch_blocks[b]) {
        DistilLayer dl;
        dl.conv = &store_.add_xavier(bn + ".distil" + std::to_string(l) + ".conv", 3 * d, d, seed_);
        dl.bias = &store_.add(bn + ".distil" + std::to_string(l) + ".bias", {d});
        br.distil.push_back(dl);
      }
    }
    br.extra_pools = (3 - b) - br.distil.size();
    br.norm = layer_norm(bn + ".norm", d);
    branches_.push_back(std::move(br));
  }
  fuse_ = linear("enc.fuse", d, d);

  dec_embed_ = embedding("dec.embed", cfg_.dec_in);
  for (std::size_t l = 0; l < cfg_.decoder_layers; ++l) {
    const std::string ln = "dec.layer" + std::to_string(l);
    DecoderLayer layer;
    layer.self_attn = attention_layer(ln + ".self");
    layer.norm1 = layer_norm(ln + ".norm1", d);
    layer.cross_attn = attention_layer(ln + ".cross");
    layer.norm2 = layer_norm(ln + ".norm2", d);
    layer.ff1 = linear(ln + ".ff1", d, ff);
    layer.ff2 = linear(ln + ".ff2", ff, d);
    layer.norm3 = layer_norm(ln + ".norm3", d);
    decoder_.push_back(layer);
  }
  dec_norm_ = layer_norm("dec.norm", d);
  head_ = linear("head", d, cfg_.d_out);
  pe_ = positional_embedding(cfg_.input_len, d, cfg_.input_len);
}

Var Model::embed(Graph& g, const Embedding& e, std::span<const double> x, std::size_t rows,
                 std::span<const ingest::TimeMark> marks) const {
  const std::size_t d_in = e.token->dims[0] / 3;
  if (x.size() != rows * d_in)
    throw tensor::ShapeError("embed: expected " + std::to_string(rows) + " x " + std::to_string(d_in) + " inputs, got " +
                             std::to_string(x.size()) + " values");
  if (marks.size() != rows) throw tensor::ShapeError("embed: time marks do not match the token count");
  if (rows > cfg_.input_len) throw tensor::ShapeError("embed: sequence longer than the positional table");
  Var xin = g.constant({rows, d_in}, std::vector<double>(x.begin(), x.end()));
  Var u = tensor::conv1d(xin, g.param(*e.token), 3, 1, 1, tensor::Padding::Circular);
  if (cfg_.alpha_embed != 1.0) u = tensor::scale(u, cfg_.alpha_embed);
  Var out = tensor::add(u, g.constant({rows, cfg_.d_model},
                                      std::vector<double>(pe_.begin(), pe_.begin() + static_cast<std::ptrdiff_t>(rows * cfg_.d_model))));
  for (std::size_t f = 0; f < ingest::kMarkDims; ++f) {
    std::vector<int> ids(rows);
    for (std::size_t t = 0; t < rows; ++t) ids[t] = marks[t][f];
    out = tensor::add(out, tensor::embedding_lookup(g.param(*e.marks[f]), ids));
  }
  return tensor::dropout(out, cfg_.dropout);
}

Var Model::embed_encoder(Graph& g, std::span<const double> x, std::span<const ingest::TimeMark> marks) const {
  return embed(g, enc_embed_, x, cfg_.input_len, marks.first(cfg_.input_len));
}

Var Model::embed_decoder(Graph& g, std::span<const double> x, std::span<const ingest::TimeMark> marks) const {
  const std::size_t L = cfg_.input_len, Ly = cfg_.pred_len, w = cfg_.dec_in;
  if (x.size() != L * cfg_.enc_in) throw tensor::ShapeError("embed_decoder: input window has the wrong size");
  if (marks.size() != L + Ly) throw tensor::ShapeError("embed_decoder: need marks for input and horizon");
  if (w > cfg_.enc_in) throw tensor::ShapeError("embed_decoder: decoder width exceeds encoder width");
  std::vector<double> dx(2 * Ly * w, 0.0);
  for (std::size_t t = 0; t < Ly; ++t)
    for (std::size_t c = 0; c < w; ++c) dx[t * w + c] = x[(L - Ly + t) * cfg_.enc_in + c];
  return embed(g, dec_embed_, dx, 2 * Ly, marks.subspan(L - Ly, 2 * Ly));
}

Var Model::attention(Graph& g, const AttentionLayer& a, Var x, Var memory, bool self, bool causal) const {
  Var q = a.wq(g, x);
  Var k = a.wk(g, memory);
  Var v = a.wv(g, memory);
  Var ctx;
  if (self && !causal) {
    SparseAttentionOptions opt;
    opt.u = active_queries(cfg_.sparse_factor, x.rows());
    opt.sample_threshold = cfg_.sample_threshold;
    opt.sparse_factor = cfg_.sparse_factor;
    opt.seed = seed_ ^ (g.size() * 0x9e3779b97f4a7c15ULL);
    ctx = distributed_sparse_attention(q, k, v, cfg_.n_heads, opt);
  } else {
    ctx = multi_head_dense(q, k, v, cfg_.n_heads, causal);
  }
  return a.wo(g, ctx);
}

Var Model::encoder_layer(Graph& g, const EncoderLayer& layer, Var x) const {
  Var a = tensor::dropout(attention(g, layer.attn, x, x, true, false), cfg_.dropout);
  x = layer.norm1(g, tensor::add(x, a));
  Var y = tensor::dropout(tensor::elu(layer.ff1(g, x)), cfg_.dropout);
  y = tensor::dropout(layer.ff2(g, y), cfg_.dropout);
  return layer.norm2(g, tensor::add(x, y));
}

Var Model::run_branch(Graph& g, const Branch& b, Var x) const {
  for (std::size_t l = 0; l < b.blocks.size(); ++l) {
    x = encoder_layer(g, b.blocks[l], x);
    if (l < b.distil.size()) {
      const DistilLayer& dl = b.distil[l];
      Var c = tensor::conv1d(x, g.param(*dl.conv), 3, 1, 1, tensor::Padding::Circular);
      c = tensor::elu(tensor::add(c, g.param(*dl.bias)));
      x = tensor::max_pool1d(c, 3, 2, 1);
    }
  }
  for (std::size_t p = 0; p < b.extra_pools; ++p) x = tensor::max_pool1d(x, 3, 2, 1);
  return b.norm(g, x);
}

StackedEncoderOutput Model::stacked_encode(Graph& g, Var tokens) const {
  const std::size_t L = tokens.rows();
  if (L % 8 != 0) throw SizingError("stacked encoder needs a length divisible by 8, got " + std::to_string(L));
  StackedEncoderOutput out;
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    // Branch b sees the most recent L / 2^b steps.
    const std::size_t len = L >> b;
    Var crop = b == 0 ? tokens : tensor::slice_rows(tokens, L - len, L);
    Var y = run_branch(g, branches_[b], crop);
    out.branch_lengths.push_back(y.rows());
    out.branches.push_back(y);
  }
  Var cat = out.branches.size() == 1 ? out.branches[0] : tensor::concat_rows(out.branches);
  out.fused = fuse_(g, cat);
  return out;
}

Var Model::decode(Graph& g, Var fused, Var dec_tokens) const {
  Var x = dec_tokens;
  for (const DecoderLayer& layer : decoder_) {
    x = layer.norm1(g, tensor::add(x, tensor::dropout(attention(g, layer.self_attn, x, x, true, true), cfg_.dropout)));
    x = layer.norm2(g, tensor::add(x, tensor::dropout(attention(g, layer.cross_attn, x, fused, false, false), cfg_.dropout)));
    Var y = tensor::dropout(tensor::elu(layer.ff1(g, x)), cfg_.dropout);
    y = tensor::dropout(layer.ff2(g, y), cfg_.dropout);
    x = layer.norm3(g, tensor::add(x, y));
  }
  x = dec_norm_(g, x);
  const std::size_t n = x.rows();
  return head_(g, tensor::slice_rows(x, n - cfg_.pred_len, n));
}

Var Model::forward(Graph& g, std::span<const double> x, std::span<const ingest::TimeMark> marks) const {
  Var enc = embed_encoder(g, x, marks);
  StackedEncoderOutput s = stacked_encode(g, enc);
  Var dec = embed_decoder(g, x, marks);
  return decode(g, s.fused, dec);
}

nlohmann::json Model::summary() const {
  nlohmann::json j;
  j["config"] = to_json(cfg_);
  const std::size_t L = cfg_.input_len;
  auto& br = j["branches"] = nlohmann::json::array();
  std::size_t blocks = 0;
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    const std::size_t len = L >> b;
    br.push_back({{"input_len", len},
                  {"attention_blocks", branches_[b].blocks.size()},
                  {"distilling_layers", branches_[b].distil.size()},
                  {"extra_pools", branches_[b].extra_pools},
                  {"output_len", len >> (branches_[b].distil.size() + branches_[b].extra_pools)}});
    blocks += branches_[b].blocks.size();
  }
  j["attention_blocks_total"] = blocks;
  j["fused_shape"] = {cfg_.fused_len(), cfg_.d_model};
  j["decoder_tokens"] = 2 * cfg_.pred_len;
  j["output_shape"] = {cfg_.pred_len, cfg_.d_out};
  auto& ps = j["parameters"] = nlohmann::json::array();
  for (std::size_t i = 0; i < store_.size(); ++i)
    ps.push_back({{"name", store_[i].name}, {"dims", store_[i].dims}, {"count", store_[i].value.size()}});
  j["parameter_count"] = store_.scalar_count();
  return j;
}

}  // namespace lfts::model
