#include <cmath>
#include <random>

#include "../oracles.hpp"
#include "doctest.h"
#include "lfts/train.hpp"

using namespace lfts::train;
namespace T = lfts::tensor;

namespace {

// Explicit projection P = I - e e^T / rows applied as a matrix product.
std::vector<double> project(const std::vector<double>& g, std::size_t rows, std::size_t cols) {
  std::vector<double> out(rows * cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t k = 0; k < rows; ++k) {
      const double p = (i == k ? 1.0 : 0.0) - 1.0 / static_cast<double>(rows);
      for (std::size_t c = 0; c < cols; ++c) out[i * cols + c] += p * g[k * cols + c];
    }
  return out;
}

}  // namespace

TEST_CASE("gradient centralization matches the projection and is idempotent") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t rows = 1 + rng() % 12, cols = 1 + rng() % 9;
    const auto a = oracle::normal(rows * cols, rng);
    const auto b = oracle::normal(rows * cols, rng);
    const auto ga = gc(a, rows, cols);
    const auto ref = project(a, rows, cols);
    for (std::size_t i = 0; i < ga.size(); ++i) CHECK(ga[i] == doctest::Approx(ref[i]).epsilon(1e-12));

    const auto twice = gc(ga, rows, cols);
    for (std::size_t i = 0; i < ga.size(); ++i) CHECK(std::fabs(twice[i] - ga[i]) < 1e-12);

    std::vector<double> mix(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) mix[i] = 2.5 * a[i] - 0.75 * b[i];
    const auto gm = gc(mix, rows, cols);
    const auto gb = gc(b, rows, cols);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::fabs(gm[i] - (2.5 * ga[i] - 0.75 * gb[i])) < 1e-12);

    for (std::size_t c = 0; c < cols; ++c) {
      double s = 0;
      for (std::size_t r = 0; r < rows; ++r) s += ga[r * cols + c];
      CHECK(std::fabs(s) < 1e-12);
    }
  }
  std::vector<double> bad(5);
  CHECK_THROWS_AS(gc_inplace(bad, 2, 3), T::ShapeError);
}

TEST_CASE("GC-Adam first step matches the update rule") {
  T::ParameterStore store;
  auto& w = store.add("w", {2, 3});
  w.value = {0.1, -0.2, 0.3, 0.4, 0.5, -0.6};
  auto& b = store.add("b", {3});
  b.value = {1.0, 2.0, 3.0};

  GcAdamConfig cfg;
  cfg.lr = 0.01;
  GcAdam opt(cfg, store);
  auto grads = T::GradientSet::zeros_like(store);
  grads.grads[0] = {1.0, 2.0, -1.0, 3.0, -2.0, 5.0};
  grads.grads[1] = {0.5, -0.25, 0.0};

  const auto gw = project(grads.grads[0], 2, 3);
  std::vector<double> expect_w = w.value, expect_b = b.value;
  // After one step m_hat = g and v_hat = g^2, so the move is lr * g / (|g| + eps).
  for (std::size_t i = 0; i < 6; ++i) expect_w[i] -= cfg.lr * gw[i] / (std::fabs(gw[i]) + cfg.eps);
  for (std::size_t i = 0; i < 3; ++i)
    expect_b[i] -= cfg.lr * grads.grads[1][i] / (std::fabs(grads.grads[1][i]) + cfg.eps);

  opt.step(store, grads);
  CHECK(opt.steps() == 1);
  for (std::size_t i = 0; i < 6; ++i) CHECK(w.value[i] == doctest::Approx(expect_w[i]).epsilon(1e-12));
  for (std::size_t i = 0; i < 3; ++i) CHECK(b.value[i] == doctest::Approx(expect_b[i]).epsilon(1e-12));
}

TEST_CASE("GC-Adam second step follows the bias-corrected moments") {
  T::ParameterStore store;
  auto& p = store.add("p", {2}, false);
  p.value = {0.0, 0.0};
  GcAdamConfig cfg;
  cfg.lr = 0.1;
  GcAdam opt(cfg, store);
  const std::vector<std::vector<double>> gs{{1.0, -2.0}, {3.0, 0.5}};
  std::vector<double> m(2, 0.0), v(2, 0.0), x(2, 0.0);
  for (std::size_t t = 1; t <= 2; ++t) {
    auto grads = T::GradientSet::zeros_like(store);
    grads.grads[0] = gs[t - 1];
    opt.step(store, grads);
    for (std::size_t i = 0; i < 2; ++i) {
      const double g = gs[t - 1][i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      x[i] -= 0.1 * (m[i] / (1 - std::pow(0.9, t))) / (std::sqrt(v[i] / (1 - std::pow(0.999, t))) + 1e-8);
    }
  }
  for (std::size_t i = 0; i < 2; ++i) CHECK(p.value[i] == doctest::Approx(x[i]).epsilon(1e-12));
}

TEST_CASE("GC can be switched off and non-centralized parameters are left alone") {
  T::ParameterStore store;
  store.add("w", {2, 2});
  store.add("emb", {2, 2}, false);
  GcAdamConfig cfg;
  cfg.gc_enabled = false;
  GcAdam opt(cfg, store);
  auto grads = T::GradientSet::zeros_like(store);
  grads.grads[0] = {1, 2, 3, 4};
  grads.grads[1] = {1, 2, 3, 4};
  opt.step(store, grads);
  CHECK(grads.grads[0] == std::vector<double>{1, 2, 3, 4});

  GcAdam on({}, store);
  grads.grads[0] = {1, 2, 3, 4};
  grads.grads[1] = {1, 2, 3, 4};
  on.step(store, grads);
  CHECK(grads.grads[0] == std::vector<double>{-1, -1, 1, 1});
  CHECK(grads.grads[1] == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("global norm clipping scales gradients") {
  T::ParameterStore store;
  store.add("a", {2}, false);
  GcAdamConfig cfg;
  cfg.clip_norm = 1.0;
  GcAdam opt(cfg, store);
  auto grads = T::GradientSet::zeros_like(store);
  grads.grads[0] = {3.0, 4.0};
  opt.step(store, grads);
  CHECK(opt.last_norm() == doctest::Approx(5.0));
  CHECK(grads.grads[0][0] == doctest::Approx(0.6));
  CHECK(grads.grads[0][1] == doctest::Approx(0.8));
}

TEST_CASE("non-finite gradients abort the step before any update") {
  T::ParameterStore store;
  auto& a = store.add("a", {2, 2});
  a.value = {1, 2, 3, 4};
  auto& b = store.add("b", {2}, false);
  b.value = {5, 6};
  GcAdam opt({}, store);
  auto grads = T::GradientSet::zeros_like(store);
  grads.grads[0] = {0.1, 0.2, 0.3, 0.4};
  grads.grads[1] = {0.0, std::nan("")};
  CHECK_THROWS_AS(opt.step(store, grads), NonFiniteError);
  CHECK(a.value == std::vector<double>{1, 2, 3, 4});
  CHECK(b.value == std::vector<double>{5, 6});
  CHECK(opt.steps() == 0);

  grads.grads[1] = {0.0, INFINITY};
  CHECK_THROWS_AS(opt.step(store, grads), NonFiniteError);

  T::GradientSet short_set;
  CHECK_THROWS_AS(opt.step(store, short_set), T::ContractError);
}

TEST_CASE("optimizer config is validated") {
  T::ParameterStore store;
  GcAdamConfig c;
  c.lr = 0;
  CHECK_THROWS(GcAdam(c, store));
  c = {};
  c.beta1 = 1.0;
  CHECK_THROWS(GcAdam(c, store));
  c = {};
  c.clip_norm = -1.0;
  CHECK_THROWS(GcAdam(c, store));
}

TEST_CASE("adaptive loss reduces to the named special cases") {
  for (double c : {0.5, 1.0, 2.0}) {
    for (int i = 0; i <= 1000; ++i) {
      const double z = -10.0 + 0.02 * i;
      CHECK(std::fabs(adaptive_loss_value(z, 2.0, c) - oracle::l2(z, c)) < 1e-6);
      CHECK(std::fabs(adaptive_loss_value(z, 1.0, c) - oracle::charbonnier(z, c)) < 1e-6);
      CHECK(std::fabs(adaptive_loss_value(z, 0.0, c) - oracle::cauchy(z, c)) < 1e-6);
    }
  }
  // Welsch is the beta -> -inf limit; at beta = -10 the gap is small near |z| = c
  // and shrinks as beta decreases.
  CHECK(std::fabs(adaptive_loss_value(1.0, -10.0, 1.0) - oracle::welsch(1.0, 1.0)) < 0.05);
  double prev = 1e9;
  for (double b : {-5.0, -10.0, -50.0, -500.0, -5000.0}) {
    const double gap = std::fabs(adaptive_loss_value(1.0, b, 1.0) - oracle::welsch(1.0, 1.0));
    CHECK(gap < prev);
    prev = gap;
  }
  CHECK(std::fabs(adaptive_loss_value(2.0, -1e5, 1.0) - oracle::welsch(2.0, 1.0)) < 1e-3);
}

TEST_CASE("adaptive loss is continuous across the guarded points") {
  for (double z : {0.1, 0.7, 1.5, 4.0}) {
    for (double b0 : {0.0, 2.0}) {
      const double at = adaptive_loss_value(z, b0, 1.0);
      for (double off : {-2e-4, -1.01e-4, -0.99e-4, 0.99e-4, 1.01e-4, 2e-4}) {
        if (b0 == 2.0 && off > 0) continue;
        // The guarded value and the formula differ by O(delta) in beta.
        CHECK(std::fabs(adaptive_loss_value(z, b0 + off, 1.0) - at) < 1e-3 * (1 + z * z));
      }
    }
  }
  CHECK(adaptive_loss_value(0.0, 1.0, 1.0) == 0.0);
  CHECK(adaptive_loss_value(0.0, -3.0, 1.0) == doctest::Approx(0.0));
}

TEST_CASE("adaptive loss partials match finite differences") {
  const double h = 1e-6;
  for (double beta : {1.7, 1.0, 0.4, -0.5, -3.0}) {
    for (double z : {-2.5, -0.3, 0.8, 3.0}) {
      const double nz = (adaptive_loss_value(z + h, beta, 1.3) - adaptive_loss_value(z - h, beta, 1.3)) / (2 * h);
      const double nb = (adaptive_loss_value(z, beta + h, 1.3) - adaptive_loss_value(z, beta - h, 1.3)) / (2 * h);
      CHECK(oracle::grad_error(adaptive_loss_dz(z, beta, 1.3), nz) < 1e-5);
      CHECK(oracle::grad_error(adaptive_loss_dbeta(z, beta, 1.3), nb) < 1e-5);
    }
  }
}

TEST_CASE("beta parameterization is a bijection onto (-8, 2)") {
  for (double raw : {-30.0, -3.0, -0.5, 0.0, 0.5, 3.0, 30.0}) {
    const double b = beta_from_raw(raw);
    CHECK(b > kBetaMin);
    CHECK(b < kBetaMax);
    if (std::fabs(raw) < 10) CHECK(raw_from_beta(b) == doctest::Approx(raw).epsilon(1e-9));
    const double h = 1e-6;
    CHECK(beta_slope(raw) == doctest::Approx((beta_from_raw(raw + h) - beta_from_raw(raw - h)) / (2 * h)).epsilon(1e-6));
  }
  CHECK(beta_from_raw(0.0) == doctest::Approx(-3.0));
}

TEST_CASE("adaptive loss node averages the per-entry loss and adds the penalty") {
  T::Graph g;
  const std::vector<double> r{0.5, -1.0, 2.0, 0.0};
  auto res = g.constant({2, 2}, r);
  const double raw = 0.3;
  auto br = g.constant({1, 1}, {raw});
  AdaptiveLossConfig cfg;
  cfg.c = 0.8;
  cfg.beta_penalty = 0.05;
  const double beta = beta_from_raw(raw);
  double expect = 0;
  for (double z : r) expect += adaptive_loss_value(z, beta, cfg.c);
  expect = expect / 4 - cfg.beta_penalty * beta;
  CHECK(adaptive_loss(res, br, cfg).item() == doctest::Approx(expect).epsilon(1e-12));

  T::Graph g2;
  CHECK(mse_loss(g2.constant({1, 3}, {1, 2, 3})).item() == doctest::Approx(14.0 / 3));
}

TEST_CASE("metrics against hand values") {
  const std::vector<double> y{1, 2, 3, 4}, p{1.5, 2, 2, 5};
  const Metrics m = metrics(y, p);
  CHECK(m.mae == doctest::Approx(2.5 / 4));
  CHECK(m.mse == doctest::Approx(2.25 / 4));
  CHECK(m.rmse == doctest::Approx(std::sqrt(2.25 / 4)));
  REQUIRE(m.r2.has_value());
  CHECK(*m.r2 == doctest::Approx(1 - 2.25 / 5));

  const std::vector<double> flat{2, 2, 2};
  const Metrics f = metrics(flat, std::vector<double>{1, 2, 3});
  CHECK_FALSE(f.r2.has_value());
  CHECK(to_json(f)["r2"].is_null());
  CHECK_THROWS(metrics(y, std::vector<double>{1}));
}

TEST_CASE("early stopping waits `patience` stale epochs") {
  EarlyStopping es(2);
  CHECK_FALSE(es.update(1, 5.0));
  CHECK(es.improved());
  CHECK_FALSE(es.update(2, 4.0));
  CHECK_FALSE(es.update(3, 4.5));
  CHECK_FALSE(es.improved());
  CHECK_FALSE(es.update(4, 3.0));
  CHECK_FALSE(es.update(5, 3.0));
  CHECK(es.update(6, 3.5));
  CHECK(es.best_epoch() == 4);
  CHECK(es.best() == 3.0);
}

namespace {

lfts::ingest::WindowedDataset toy_dataset(std::size_t rows, std::size_t input_len, std::size_t horizon) {
  lfts::ingest::WindowedDataset d;
  d.input_len = input_len;
  d.horizon = horizon;
  d.feature_dim = 2;
  for (std::size_t t = 0; t < rows; ++t) {
    const double y = std::sin(0.3 * static_cast<double>(t));
    d.target.push_back(y);
    d.features.push_back(y);
    d.features.push_back(std::cos(0.3 * static_cast<double>(t)));
    d.marks.push_back(lfts::ingest::calendar_marks(oracle::minute_stamp(t * 30)));
  }
  for (std::size_t s = 0; s + input_len + horizon <= rows; ++s) d.starts.push_back(s);
  return d;
}

lfts::model::ModelConfig toy_model() {
  lfts::model::ModelConfig c;
  c.input_len = 16;
  c.pred_len = 4;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 16;
  c.decoder_layers = 1;
  c.branch_blocks = {1, 1, 1};
  c.enc_in = c.dec_in = 2;
  c.dropout = 0.1;
  return c;
}

}  // namespace

TEST_CASE("training loop is deterministic and keeps the best epoch") {
  const auto data = toy_dataset(120, 16, 4);
  TrainConfig tc;
  tc.epochs = 4;
  tc.patience = 10;
  tc.batch_size = 8;
  tc.samples_per_epoch = 40;
  tc.threads = 1;
  tc.optimizer.lr = 1e-3;
  tc.seed = 11;

  lfts::model::Model a(toy_model(), 5), b(toy_model(), 5);
  const auto ra = train_loop(a, data, tc);
  tc.threads = 2;
  const auto rb = train_loop(b, data, tc);
  REQUIRE(ra.epochs.size() == 4);
  CHECK(ra.to_json() == rb.to_json());
  CHECK(a.params().snapshot() == b.params().snapshot());
  CHECK(ra.val_windows > 0);
  CHECK(ra.train_windows + ra.val_windows <= data.samples());

  double best = ra.epochs[0].val_loss;
  std::size_t at = 1;
  for (const auto& e : ra.epochs)
    if (e.val_loss < best) best = e.val_loss, at = e.epoch;
  CHECK(ra.best_epoch == at);
  CHECK(ra.best_val_loss == best);

  const auto pred = predict(a, data, 1, 0, 3);
  REQUIRE(pred.size() == 3);
  CHECK(pred[0].size() == 4);
  const auto pers = persistence_forecast(data);
  CHECK(pers[0][0] == data.target[15]);
}
