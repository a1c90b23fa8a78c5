#pragma once

// Gradient-check cases, one per op (and per broadcast/axis/padding variant).

#include <random>
#include <string>
#include <vector>

#include "lfts/model.hpp"
#include "lfts/tensor.hpp"
#include "lfts/train.hpp"
#include "oracles.hpp"

namespace oracle {

namespace T = lfts::tensor;

struct OpCase {
  std::string name;
  std::vector<Shape> shapes;
  bool positive = false;  // draw inputs from [0.5, 2]
  std::function<Var(Graph&, const std::vector<Var>&)> op;
};

inline std::vector<OpCase> op_cases() {
  using V = const std::vector<Var>&;
  std::vector<OpCase> c;
  const Shape m{3, 4}, row{1, 4}, one{1, 1};
  c.push_back({"add", {m, m}, false, [](Graph&, V x) { return T::add(x[0], x[1]); }});
  c.push_back({"add_row", {m, row}, false, [](Graph&, V x) { return T::add(x[0], x[1]); }});
  c.push_back({"add_scalar_bcast", {m, one}, false, [](Graph&, V x) { return T::add(x[0], x[1]); }});
  c.push_back({"sub", {m, m}, false, [](Graph&, V x) { return T::sub(x[0], x[1]); }});
  c.push_back({"sub_row", {m, row}, false, [](Graph&, V x) { return T::sub(x[0], x[1]); }});
  c.push_back({"sub_scalar_bcast", {m, one}, false, [](Graph&, V x) { return T::sub(x[0], x[1]); }});
  c.push_back({"mul", {m, m}, false, [](Graph&, V x) { return T::mul(x[0], x[1]); }});
  c.push_back({"mul_row", {m, row}, false, [](Graph&, V x) { return T::mul(x[0], x[1]); }});
  c.push_back({"mul_scalar_bcast", {m, one}, false, [](Graph&, V x) { return T::mul(x[0], x[1]); }});
  c.push_back({"scale", {m}, false, [](Graph&, V x) { return T::scale(x[0], -1.7); }});
  c.push_back({"add_scalar", {m}, false, [](Graph&, V x) { return T::add_scalar(x[0], 0.3); }});
  c.push_back({"neg", {m}, false, [](Graph&, V x) { return T::neg(x[0]); }});
  c.push_back({"exp", {m}, false, [](Graph&, V x) { return T::exp(x[0]); }});
  c.push_back({"ln", {m}, true, [](Graph&, V x) { return T::ln(x[0]); }});
  c.push_back({"sqrt", {m}, true, [](Graph&, V x) { return T::sqrt(x[0]); }});
  c.push_back({"power", {m}, true, [](Graph&, V x) { return T::power(x[0], 1.7); }});
  c.push_back({"elu", {m}, false, [](Graph&, V x) { return T::elu(x[0]); }});
  c.push_back({"matmul", {{3, 4}, {4, 5}}, false, [](Graph&, V x) { return T::matmul(x[0], x[1]); }});
  c.push_back({"matmul_t", {{3, 4}, {5, 4}}, false, [](Graph&, V x) { return T::matmul_t(x[0], x[1]); }});
  c.push_back({"transpose", {m}, false, [](Graph&, V x) { return T::transpose(x[0]); }});
  c.push_back({"reshape", {m}, false, [](Graph&, V x) { return T::reshape(x[0], {2, 6}); }});
  c.push_back({"slice_rows", {{5, 3}}, false, [](Graph&, V x) { return T::slice_rows(x[0], 1, 4); }});
  c.push_back({"slice_cols", {{3, 5}}, false, [](Graph&, V x) { return T::slice_cols(x[0], 2, 5); }});
  c.push_back({"concat_rows", {{2, 3}, {3, 3}}, false, [](Graph&, V x) { return T::concat_rows({x[0], x[1], x[0]}); }});
  c.push_back({"concat_cols", {{3, 2}, {3, 1}}, false, [](Graph&, V x) { return T::concat_cols({x[1], x[0]}); }});
  c.push_back({"softmax_rows", {m}, false, [](Graph&, V x) { return T::softmax(x[0], 1); }});
  c.push_back({"softmax_cols", {m}, false, [](Graph&, V x) { return T::softmax(x[0], 0); }});
  c.push_back({"sum_rows", {m}, false, [](Graph&, V x) { return T::sum(x[0], 1); }});
  c.push_back({"sum_cols", {m}, false, [](Graph&, V x) { return T::sum(x[0], 0); }});
  c.push_back({"mean_rows", {m}, false, [](Graph&, V x) { return T::mean(x[0], 1); }});
  c.push_back({"mean_cols", {m}, false, [](Graph&, V x) { return T::mean(x[0], 0); }});
  c.push_back({"sum_all", {m}, false, [](Graph&, V x) { return T::sum_all(x[0]); }});
  c.push_back({"mean_all", {m}, false, [](Graph&, V x) { return T::mean_all(x[0]); }});
  c.push_back({"max_rows", {m}, false, [](Graph&, V x) { return T::max_over_axis(x[0], 1); }});
  c.push_back({"max_cols", {m}, false, [](Graph&, V x) { return T::max_over_axis(x[0], 0); }});
  c.push_back({"layer_norm", {{4, 6}, {1, 6}, {1, 6}}, false,
               [](Graph&, V x) { return T::layer_norm(x[0], x[1], x[2]); }});
  c.push_back({"dropout", {{4, 5}}, false,
               [](Graph&, V x) { return T::dropout(x[0], 0.3, true, T::CounterRng(42, 7)); }});
  c.push_back({"conv1d_zeros", {{7, 2}, {6, 3}}, false,
               [](Graph&, V x) { return T::conv1d(x[0], x[1], 3, 1, 1, T::Padding::Zeros); }});
  c.push_back({"conv1d_circular", {{7, 2}, {6, 3}}, false,
               [](Graph&, V x) { return T::conv1d(x[0], x[1], 3, 1, 1, T::Padding::Circular); }});
  c.push_back({"conv1d_stride2", {{8, 2}, {4, 3}}, false,
               [](Graph&, V x) { return T::conv1d(x[0], x[1], 2, 2, 0, T::Padding::Zeros); }});
  c.push_back({"embedding_lookup", {{5, 3}}, false,
               [](Graph&, V x) { return T::embedding_lookup(x[0], {0, 3, 3, 1}); }});
  c.push_back({"gather_rows", {{5, 3}}, false, [](Graph&, V x) { return T::gather_rows(x[0], {4, 0, 4}); }});
  c.push_back({"scatter_rows", {{5, 3}, {2, 3}}, false,
               [](Graph&, V x) { return T::scatter_rows(x[0], x[1], {3, 1}); }});
  c.push_back({"broadcast_rows", {row}, false, [](Graph&, V x) { return T::broadcast_rows(x[0], 3); }});
  c.push_back({"causal_mask", {{4, 4}}, false, [](Graph&, V x) { return T::softmax(T::causal_mask(x[0]), 1); }});
  c.push_back({"max_pool1d", {{7, 3}}, false, [](Graph&, V x) { return T::max_pool1d(x[0], 3, 2, 1); }});
  c.push_back({"custom", {m}, false, [](Graph&, V x) {
                 std::vector<double> sq;
                 for (double v : x[0].value()) sq.push_back(v * v);
                 const std::vector<double> in = x[0].value();
                 return T::custom({x[0]}, x[0].shape(), sq,
                                  [in](std::span<const double> go, std::vector<std::vector<double>*>& gi) {
                                    if (gi[0])
                                      for (std::size_t i = 0; i < go.size(); ++i) (*gi[0])[i] += 2 * in[i] * go[i];
                                  });
               }});
  c.push_back({"dense_attention", {{5, 4}, {6, 4}, {6, 3}}, false,
               [](Graph&, V x) { return lfts::model::dense_attention(x[0], x[1], x[2]); }});
  c.push_back({"dense_attention_causal", {{5, 4}, {5, 4}, {5, 3}}, false,
               [](Graph&, V x) { return lfts::model::dense_attention(x[0], x[1], x[2], true); }});
  c.push_back({"multi_head_dense", {{5, 4}, {5, 4}, {5, 4}}, false,
               [](Graph&, V x) { return lfts::model::multi_head_dense(x[0], x[1], x[2], 2, true); }});
  c.push_back({"sparse_attention", {{6, 4}, {6, 4}, {6, 4}}, false, [](Graph&, V x) {
                 lfts::model::SparseAttentionOptions opt;
                 opt.u = 2;
                 return lfts::model::distributed_sparse_attention(x[0], x[1], x[2], 2, opt);
               }});
  c.push_back({"adaptive_loss", {{2, 3}, one}, false,
               [](Graph&, V x) { return lfts::train::adaptive_loss(x[0], x[1], {}); }});
  c.push_back({"mse_loss", {{2, 3}}, false, [](Graph&, V x) { return lfts::train::mse_loss(x[0]); }});
  return c;
}

/// Gradcheck of one case with seeded inputs; the op output is reduced by a
/// fixed random projection so every output entry matters.
inline Gradcheck check_op(const OpCase& oc, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(0.5, 2.0);
  std::vector<std::vector<double>> inputs;
  for (const auto& s : oc.shapes) {
    auto v = normal(s.size(), rng);
    if (oc.positive)
      for (auto& x : v) x = pos(rng);
    inputs.push_back(v);
  }
  const auto weights = normal(4096, rng);
  return gradcheck(oc.shapes, inputs, [&](Graph& g, const std::vector<Var>& x) {
    Var out = oc.op(g, x);
    std::vector<double> w(weights.begin(), weights.begin() + static_cast<long>(out.shape().size()));
    return T::sum_all(T::mul(out, g.constant(out.shape(), w)));
  });
}

}  // namespace oracle

namespace oracle {

struct ModelInputs {
  std::vector<double> x;
  std::vector<lfts::ingest::TimeMark> marks;
  std::vector<double> weights;
};

inline ModelInputs model_inputs(const lfts::model::ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelInputs in;
  in.x = normal(cfg.input_len * cfg.enc_in, rng);
  for (std::size_t t = 0; t < cfg.input_len + cfg.pred_len; ++t)
    in.marks.push_back(lfts::ingest::calendar_marks(minute_stamp(t * 30)));
  in.weights = normal(cfg.pred_len * cfg.d_out, rng);
  return in;
}

/// Central differences on `per_param` random entries of every parameter of a
/// freshly initialized model. Training mode keeps dropout on with a fixed seed.
/// Perturbed passes replay the base pass's discrete decisions (top-u queries,
/// pooling argmax) so both stencil points sit on the same smooth piece.
inline Gradcheck check_model(const lfts::model::ModelConfig& cfg, std::uint64_t seed, std::size_t per_param,
                             bool training = true, double h = 1e-4) {
  lfts::model::Model net(cfg, seed);
  const ModelInputs in = model_inputs(cfg, seed + 1000);
  std::vector<std::vector<std::size_t>> tape;
  auto loss_of = [&](lfts::tensor::GradientSet* grads) {
    Graph g(training, seed);
    if (grads)
      g.record_choices();
    else
      g.replay(tape);
    Var out = net.forward(g, in.x, in.marks);
    Var loss = T::sum_all(T::mul(out, g.constant(out.shape(), in.weights)));
    if (grads) {
      g.backward(loss);
      g.collect(net.params(), *grads);
      tape = g.choices();
    }
    return loss.item();
  };
  auto grads = T::GradientSet::zeros_like(net.params());
  loss_of(&grads);
  std::mt19937_64 pick(seed + 7);
  Gradcheck r;
  auto& store = net.params();
  for (std::size_t p = 0; p < store.size(); ++p) {
    auto& values = store[p].value;
    std::uniform_int_distribution<std::size_t> idx(0, values.size() - 1);
    for (std::size_t e = 0; e < per_param; ++e) {
      const std::size_t j = idx(pick);
      const double x0 = values[j];
      values[j] = x0 + h;
      const double fp = loss_of(nullptr);
      values[j] = x0 - h;
      const double fm = loss_of(nullptr);
      values[j] = x0;
      r.worst = std::max(r.worst, grad_error(grads.grads[p][j], (fp - fm) / (2 * h)));
      ++r.checked;
    }
  }
  return r;
}

}  // namespace oracle
