#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. Nothing here calls into the library's numeric code.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lfts/ingest.hpp"
#include "lfts/tensor.hpp"

namespace oracle {

using lfts::ingest::Bar;
using Column = std::vector<std::optional<double>>;

/// 2020-01-02 00:00 plus `t` minutes (valid for t below 28 days).
inline lfts::ingest::Timestamp minute_stamp(std::size_t t) {
  const auto day = static_cast<long long>(2 + t / 1440), hour = static_cast<long long>(t / 60 % 24),
             minute = static_cast<long long>(t % 60);
  return 202001000000LL + day * 10000 + hour * 100 + minute;
}

/// Random walk bars that respect low <= open, close <= high.
inline std::vector<Bar> random_bars(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> step(0.0, 0.01);
  std::uniform_real_distribution<double> wick(0.0, 0.01), vol(1e4, 1e6);
  std::vector<Bar> bars(n);
  double prev = 50.0;
  for (std::size_t t = 0; t < n; ++t) {
    Bar& b = bars[t];
    b.time = minute_stamp(t);
    b.open = prev * std::exp(step(rng) * 0.3);
    b.close = b.open * std::exp(step(rng));
    b.high = std::max(b.open, b.close) * (1.0 + wick(rng));
    b.low = std::min(b.open, b.close) * (1.0 - wick(rng));
    b.volume = std::round(vol(rng));
    b.amount = b.volume * (b.open + b.close) / 2.0;
    prev = b.close;
  }
  return bars;
}

inline double mean_of(const std::vector<double>& v, std::size_t from, std::size_t to) {
  double s = 0.0;
  for (std::size_t k = from; k <= to; ++k) s += v[k];
  return s / static_cast<double>(to - from + 1);
}

inline std::vector<double> ema_seeded(const std::vector<double>& x, std::size_t first, std::size_t n) {
  // SMA of the first n values seeds the recursion at index first + n - 1.
  std::vector<double> out(x.size(), std::numeric_limits<double>::quiet_NaN());
  const double a = 2.0 / (static_cast<double>(n) + 1.0);
  const std::size_t seed = first + n - 1;
  if (seed >= x.size()) return out;
  out[seed] = mean_of(x, first, seed);
  for (std::size_t t = seed + 1; t < x.size(); ++t) out[t] = a * x[t] + (1 - a) * out[t - 1];
  return out;
}

/// The 29-column bank with default windows, formula by formula.
inline std::map<std::string, Column> feature_bank(const std::vector<Bar>& b) {
  const std::size_t n = b.size();
  std::vector<double> c(n), h(n), l(n);
  for (std::size_t t = 0; t < n; ++t) c[t] = b[t].close, h[t] = b[t].high, l[t] = b[t].low;
  std::map<std::string, Column> out;
  auto col = [&](const std::string& name) -> Column& { return out[name] = Column(n); };

  auto& open = col("open");
  auto& close = col("close");
  auto& high = col("high");
  auto& low = col("low");
  auto& volume = col("volume");
  auto& amount = col("amount");
  auto& wp = col("weighted_price");
  auto& hl = col("high_low");
  for (std::size_t t = 0; t < n; ++t) {
    open[t] = b[t].open, close[t] = c[t], high[t] = h[t], low[t] = l[t];
    volume[t] = b[t].volume, amount[t] = b[t].amount;
    if (b[t].volume > 0) wp[t] = b[t].amount / b[t].volume;
    hl[t] = h[t] - l[t];
  }
  for (std::size_t i = 1; i <= 6; ++i) {
    auto& r = col("return_" + std::to_string(i));
    for (std::size_t t = i; t < n; ++t) r[t] = c[t] - c[t - i];
  }

  auto& corr = col("corr_ma5_ma30");
  for (std::size_t t = 58; t < n; ++t) {
    std::vector<double> x, y;
    for (std::size_t k = t - 29; k <= t; ++k) {
      x.push_back(mean_of(c, k - 4, k));
      y.push_back(mean_of(c, k - 29, k));
    }
    const double mx = mean_of(x, 0, 29), my = mean_of(y, 0, 29);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t k = 0; k < 30; ++k) {
      sxy += (x[k] - mx) * (y[k] - my);
      sxx += (x[k] - mx) * (x[k] - mx);
      syy += (y[k] - my) * (y[k] - my);
    }
    if (sxx > 0 && syy > 0) corr[t] = sxy / std::sqrt(sxx * syy);
  }

  auto& s3 = col("sum3");
  auto& s5 = col("sum5");
  auto& d = col("sum5_minus_sum3");
  auto& ad = col("abs_sum5_minus_sum3");
  auto& rt = col("sqrt_sum5_sq_minus_sum3_sq");
  for (std::size_t t = 4; t < n; ++t) {
    const double a3 = c[t] + c[t - 1] + c[t - 2];
    const double a5 = a3 + c[t - 3] + c[t - 4];
    s5[t] = a5, d[t] = a5 - a3, ad[t] = std::fabs(a5 - a3);
    if (a5 * a5 >= a3 * a3) rt[t] = std::sqrt(a5 * a5 - a3 * a3);
  }
  for (std::size_t t = 2; t < n; ++t) s3[t] = c[t] + c[t - 1] + c[t - 2];

  for (std::size_t N : {6, 14}) {
    auto& r = col("rsi_" + std::to_string(N));
    for (std::size_t t = N; t < n; ++t) {
      double up = 0, dn = 0;
      for (std::size_t k = t - N + 1; k <= t; ++k) {
        up += std::max(c[k] - c[k - 1], 0.0);
        dn += std::max(c[k - 1] - c[k], 0.0);
      }
      up /= N, dn /= N;
      if (dn == 0) r[t] = up == 0 ? 50.0 : 100.0;
      else if (up == 0) r[t] = 0.0;
      else r[t] = 100.0 - 100.0 / (1.0 + up / dn);
    }
  }
  for (std::size_t N : {9, 14}) {
    auto& r = col("roc_" + std::to_string(N));
    for (std::size_t t = N; t < n; ++t) r[t] = 100.0 * (c[t] / c[t - N] - 1.0);
  }
  auto& wr = col("williams_r");
  for (std::size_t t = 13; t < n; ++t) {
    const double hh = *std::max_element(h.begin() + static_cast<long>(t) - 13, h.begin() + static_cast<long>(t) + 1);
    const double ll = *std::min_element(l.begin() + static_cast<long>(t) - 13, l.begin() + static_cast<long>(t) + 1);
    if (hh > ll) wr[t] = -100.0 * (hh - c[t]) / (hh - ll);
  }
  for (std::size_t N : {5, 10}) {
    auto& a = col("atr_" + std::to_string(N));
    for (std::size_t t = N; t < n; ++t) {
      double s = 0;
      for (std::size_t k = t - N + 1; k <= t; ++k) s += std::max({h[k] - l[k], h[k] - c[k - 1], c[k - 1] - l[k]});
      a[t] = s / N;
    }
  }
  auto& cc = col("cci");
  for (std::size_t t = 38; t < n; ++t) {
    const double mc = mean_of(c, t - 19, t);
    double md = 0;
    for (std::size_t k = t - 19; k <= t; ++k) md += mean_of(c, k - 19, k) - c[k];
    md /= 20;
    const double tp = (h[t] + l[t] + c[t]) / 3.0;
    if (md != 0) cc[t] = (tp - mc) / (0.015 * md);
  }
  auto& de = col("dema");
  const auto e1 = ema_seeded(c, 0, 10);
  const auto e2 = ema_seeded(e1, 9, 10);
  for (std::size_t t = 18; t < n; ++t) de[t] = 2 * e1[t] - e2[t];
  return out;
}

inline double rel_diff(double a, double b) { return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1.0}); }

// ---- autodiff -------------------------------------------------------------------

using lfts::tensor::Graph;
using lfts::tensor::Shape;
using lfts::tensor::Var;

struct Gradcheck {
  double worst = 0.0;  // largest |a - n| / max(|a|, |n|, floor)
  std::size_t checked = 0;
};

inline double grad_error(double analytic, double numeric, double floor = 1e-3) {
  return std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), floor});
}

/// Central differences on every input entry of a scalar function of leaves.
inline Gradcheck gradcheck(const std::vector<Shape>& shapes, std::vector<std::vector<double>> inputs,
                           const std::function<Var(Graph&, const std::vector<Var>&)>& build, double h = 1e-4) {
  std::vector<std::vector<std::size_t>> tape;
  auto eval = [&](bool keep, std::vector<std::vector<double>>* grads) {
    Graph g;
    if (grads)
      g.record_choices();
    else
      g.replay(tape);
    std::vector<Var> leaves;
    for (std::size_t i = 0; i < shapes.size(); ++i) leaves.push_back(g.leaf(shapes[i], inputs[i], keep));
    Var loss = build(g, leaves);
    if (grads) {
      g.backward(loss);
      for (auto& l : leaves) grads->push_back(g.grad(l));
      tape = g.choices();
    }
    return loss.item();
  };
  std::vector<std::vector<double>> analytic;
  eval(true, &analytic);
  Gradcheck r;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double x0 = inputs[i][j];
      inputs[i][j] = x0 + h;
      const double fp = eval(false, nullptr);
      inputs[i][j] = x0 - h;
      const double fm = eval(false, nullptr);
      inputs[i][j] = x0;
      r.worst = std::max(r.worst, grad_error(analytic[i][j], (fp - fm) / (2 * h)));
      ++r.checked;
    }
  return r;
}

inline std::vector<double> normal(std::size_t n, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// ---- attention ------------------------------------------------------------------

/// softmax(Q K^T / sqrt(d)) V for one head, plain loops. Row-major inputs.
inline std::vector<double> attention(const std::vector<double>& q, const std::vector<double>& k,
                                     const std::vector<double>& v, std::size_t lq, std::size_t lk, std::size_t d,
                                     bool causal) {
  std::vector<double> out(lq * d, 0.0);
  for (std::size_t i = 0; i < lq; ++i) {
    std::vector<double> s(lk, -std::numeric_limits<double>::infinity());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < lk; ++j) {
      if (causal && j > i) continue;
      double dot = 0;
      for (std::size_t c = 0; c < d; ++c) dot += q[i * d + c] * k[j * d + c];
      s[j] = dot / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, s[j]);
    }
    double z = 0;
    for (auto& x : s) z += (x = std::exp(x - mx));
    for (std::size_t j = 0; j < lk; ++j)
      for (std::size_t c = 0; c < d; ++c) out[i * d + c] += s[j] / z * v[j * d + c];
  }
  return out;
}

/// Columns [h*dh, (h+1)*dh) of a row-major [rows x cols] matrix.
inline std::vector<double> head_cols(const std::vector<double>& x, std::size_t rows, std::size_t cols, std::size_t h,
                                     std::size_t dh) {
  std::vector<double> out(rows * dh);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < dh; ++c) out[r * dh + c] = x[r * cols + h * dh + c];
  return out;
}

// ---- statistics -------------------------------------------------------------------

inline double quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Gradient centralization by definition: G (I - e e^T / rows) applied per column.
inline std::vector<double> centralize(const std::vector<double>& g, std::size_t rows, std::size_t cols) {
  std::vector<double> out(g);
  for (std::size_t c = 0; c < cols; ++c) {
    double m = 0;
    for (std::size_t r = 0; r < rows; ++r) m += g[r * cols + c];
    m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) out[r * cols + c] -= m;
  }
  return out;
}

// ---- adaptive loss closed forms -------------------------------------------------------

inline double l2(double z, double c) { return 0.5 * (z / c) * (z / c); }
inline double charbonnier(double z, double c) { return std::sqrt((z / c) * (z / c) + 1) - 1; }
inline double cauchy(double z, double c) { return std::log(0.5 * (z / c) * (z / c) + 1); }
inline double welsch(double z, double c) { return 1 - std::exp(-0.5 * (z / c) * (z / c)); }

}  // namespace oracle
