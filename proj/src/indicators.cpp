#include <algorithm>
#include <cmath>
#include <numeric>

#include "lfts/ingest.hpp"

namespace lfts::ingest {

namespace {

Series from_values(std::span<const double> v) {
  Series s(v.size());
  for (std::size_t t = 0; t < v.size(); ++t) s.set(t, v[t]);
  return s;
}

bool window_valid(const Series& x, std::size_t t, std::size_t window) {
  if (t + 1 < window) return false;
  for (std::size_t k = t + 1 - window; k <= t; ++k)
    if (!x.ok(k)) return false;
  return true;
}

}  // namespace

std::optional<double> true_range(std::span<const Bar> bars, std::size_t t) {
  if (t == 0 || t >= bars.size()) return std::nullopt;
  const Bar& b = bars[t];
  const double prev = bars[t - 1].close;
  return std::max({b.high - b.low, b.high - prev, prev - b.low});
}

Series rolling_sum(const Series& x, std::size_t window) {
  if (window == 0) throw std::invalid_argument("rolling window must be positive");
  Series out(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) {
    if (!window_valid(x, t, window)) continue;
    double acc = 0.0;
    for (std::size_t k = t + 1 - window; k <= t; ++k) acc += x.values[k];
    out.set(t, acc);
  }
  return out;
}

Series rolling_mean(const Series& x, std::size_t window) {
  Series out = rolling_sum(x, window);
  for (std::size_t t = 0; t < out.size(); ++t)
    if (out.ok(t)) out.values[t] /= static_cast<double>(window);
  return out;
}

Series atr(std::span<const Bar> bars, std::size_t window) {
  Series tr(bars.size());
  for (std::size_t t = 1; t < bars.size(); ++t) tr.set(t, *true_range(bars, t));
  return rolling_mean(tr, window);
}

Series rsi(std::span<const double> closes, std::size_t window) {
  Series up(closes.size()), down(closes.size());
  for (std::size_t t = 1; t < closes.size(); ++t) {
    const double d = closes[t] - closes[t - 1];
    up.set(t, d > 0 ? d : 0.0);
    down.set(t, d < 0 ? -d : 0.0);
  }
  const Series mu = rolling_mean(up, window);
  const Series md = rolling_mean(down, window);
  Series out(closes.size());
  for (std::size_t t = 0; t < closes.size(); ++t) {
    if (!mu.ok(t)) continue;
    if (md.values[t] == 0.0) {
      // Flat window: neither side moved.
      out.set(t, mu.values[t] == 0.0 ? 50.0 : 100.0);
    } else if (mu.values[t] == 0.0) {
      out.set(t, 0.0);
    } else {
      out.set(t, 100.0 - 100.0 / (1.0 + mu.values[t] / md.values[t]));
    }
  }
  return out;
}

Series returns(std::span<const double> closes, std::size_t lag) {
  if (lag == 0) throw std::invalid_argument("return lag must be positive");
  Series out(closes.size());
  for (std::size_t t = lag; t < closes.size(); ++t) out.set(t, closes[t] - closes[t - lag]);
  return out;
}

Series roc(std::span<const double> closes, std::size_t lag) {
  if (lag == 0) throw std::invalid_argument("rate-of-change lag must be positive");
  Series out(closes.size());
  for (std::size_t t = lag; t < closes.size(); ++t)
    if (closes[t - lag] != 0.0) out.set(t, 100.0 * (closes[t] / closes[t - lag] - 1.0));
  return out;
}

Series stochastic_k(std::span<const Bar> bars) {
  Series k(bars.size());
  for (std::size_t t = 0; t < bars.size(); ++t) {
    const Bar& b = bars[t];
    const double range = b.high - b.low;
    k.set(t, range == 0.0 ? 50.0 : 100.0 * (b.close - b.low) / range);
  }
  return k;
}

Series stochastic_oscillator(std::span<const Bar> bars, std::size_t window) {
  return rolling_mean(stochastic_k(bars), window);
}

Series cci(std::span<const Bar> bars, std::size_t window) {
  if (window < 2) throw std::invalid_argument("CCI window must be at least 2");
  const auto closes = closes_of(bars);
  const Series mc = rolling_mean(from_values(closes), window);
  Series dev(bars.size());
  for (std::size_t t = 0; t < bars.size(); ++t)
    if (mc.ok(t)) dev.set(t, mc.values[t] - closes[t]);
  const Series md = rolling_mean(dev, window);
  Series out(bars.size());
  for (std::size_t t = 0; t < bars.size(); ++t) {
    if (!md.ok(t) || md.values[t] == 0.0) continue;
    const double tp = (bars[t].high + bars[t].low + bars[t].close) / 3.0;
    out.set(t, (tp - mc.values[t]) / (0.015 * md.values[t]));
  }
  return out;
}

Series weighted_price(std::span<const Bar> bars) {
  Series out(bars.size());
  for (std::size_t t = 0; t < bars.size(); ++t)
    if (bars[t].volume > 0) out.set(t, bars[t].amount / bars[t].volume);
  return out;
}

Series williams_r(std::span<const Bar> bars, std::size_t window) {
  if (window == 0) throw std::invalid_argument("Williams %R window must be positive");
  Series out(bars.size());
  for (std::size_t t = window - 1; t < bars.size(); ++t) {
    double hh = bars[t].high, ll = bars[t].low;
    for (std::size_t k = t + 1 - window; k <= t; ++k) {
      hh = std::max(hh, bars[k].high);
      ll = std::min(ll, bars[k].low);
    }
    if (hh == ll) continue;
    out.set(t, -100.0 * (hh - bars[t].close) / (hh - ll));
  }
  return out;
}

Series ema(const Series& x, std::size_t window) {
  if (window == 0) throw std::invalid_argument("EMA window must be positive");
  Series out(x.size());
  const std::size_t first = x.first_valid();
  const std::size_t seed = first + window - 1;
  if (seed >= x.size() || !window_valid(x, seed, window)) return out;
  const double alpha = 2.0 / (static_cast<double>(window) + 1.0);
  double acc = 0.0;
  for (std::size_t k = first; k <= seed; ++k) acc += x.values[k];
  double prev = acc / static_cast<double>(window);
  out.set(seed, prev);
  for (std::size_t t = seed + 1; t < x.size() && x.ok(t); ++t) {
    prev = alpha * x.values[t] + (1.0 - alpha) * prev;
    out.set(t, prev);
  }
  return out;
}

Series dema(std::span<const double> closes, std::size_t window) {
  const Series e1 = ema(from_values(closes), window);
  const Series e2 = ema(e1, window);
  Series out(closes.size());
  for (std::size_t t = 0; t < closes.size(); ++t)
    if (e1.ok(t) && e2.ok(t)) out.set(t, 2.0 * e1.values[t] - e2.values[t]);
  return out;
}

Series ma_correlation(std::span<const double> closes, std::size_t fast, std::size_t slow,
                      std::size_t window) {
  const Series c = from_values(closes);
  const Series a = rolling_mean(c, fast);
  const Series b = rolling_mean(c, slow);
  Series out(closes.size());
  for (std::size_t t = 0; t < closes.size(); ++t) {
    if (!window_valid(a, t, window) || !window_valid(b, t, window)) continue;
    double ma = 0.0, mb = 0.0;
    for (std::size_t k = t + 1 - window; k <= t; ++k) {
      ma += a.values[k];
      mb += b.values[k];
    }
    ma /= static_cast<double>(window);
    mb /= static_cast<double>(window);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t k = t + 1 - window; k <= t; ++k) {
      const double da = a.values[k] - ma, db = b.values[k] - mb;
      sab += da * db;
      saa += da * da;
      sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) continue;
    out.set(t, sab / std::sqrt(saa * sbb));
  }
  return out;
}

void basic_and_sum_features(std::span<const Bar> bars, const IndicatorConfig& cfg,
                            FeatureFrame& frame) {
  const std::size_t n = bars.size();
  const auto closes = closes_of(bars);
  const Series c = from_values(closes);

  frame.add("weighted_price", weighted_price(bars));
  Series hl(n);
  for (std::size_t t = 0; t < n; ++t) hl.set(t, bars[t].high - bars[t].low);
  frame.add("high_low", std::move(hl));

  const Series sum3 = rolling_sum(c, 3);
  const Series sum5 = rolling_sum(c, 5);
  Series diff(n), absdiff(n), root(n);
  for (std::size_t t = 0; t < n; ++t) {
    if (!sum3.ok(t) || !sum5.ok(t)) continue;
    const double d = sum5.values[t] - sum3.values[t];
    diff.set(t, d);
    absdiff.set(t, std::abs(d));
    const double radicand = sum5.values[t] * sum5.values[t] - sum3.values[t] * sum3.values[t];
    if (radicand >= 0.0) root.set(t, std::sqrt(radicand));
  }
  frame.add("corr_ma5_ma30", ma_correlation(closes, cfg.ma_fast, cfg.ma_slow, cfg.corr_window),
            cfg.ma_slow + cfg.corr_window - 2);
  frame.add("sum3", sum3, 2);
  frame.add("sum5", sum5, 4);
  frame.add("sum5_minus_sum3", std::move(diff), 4);
  frame.add("abs_sum5_minus_sum3", std::move(absdiff), 4);
  frame.add("sqrt_sum5_sq_minus_sum3_sq", std::move(root), 4);
  frame.add("williams_r", williams_r(bars, cfg.williams_window), cfg.williams_window - 1);
  frame.add("dema", dema(closes, cfg.dema_window), 2 * cfg.dema_window - 2);
}

const std::vector<std::string>& price_columns() {
  static const std::vector<std::string> names{"open", "high", "close", "low"};
  return names;
}

FeatureFrame feature_bank(std::span<const Bar> bars, const IndicatorConfig& cfg) {
  std::vector<Timestamp> index(bars.size());
  for (std::size_t t = 0; t < bars.size(); ++t) index[t] = bars[t].time;
  FeatureFrame frame(std::move(index));
  const std::size_t n = bars.size();
  const auto closes = closes_of(bars);

  auto column = [&](auto field) {
    Series s(n);
    for (std::size_t t = 0; t < n; ++t) s.set(t, bars[t].*field);
    return s;
  };
  frame.add("open", column(&Bar::open));
  frame.add("close", column(&Bar::close));
  frame.add("high", column(&Bar::high));
  frame.add("low", column(&Bar::low));
  frame.add("volume", column(&Bar::volume));
  frame.add("amount", column(&Bar::amount));

  FeatureFrame extra(frame.index());
  basic_and_sum_features(bars, cfg, extra);
  frame.add("weighted_price", extra.at("weighted_price"));
  frame.add("high_low", extra.at("high_low"));

  for (std::size_t lag = 1; lag <= cfg.max_return_lag; ++lag)
    frame.add("return_" + std::to_string(lag), returns(closes, lag), lag);
  for (const char* name : {"corr_ma5_ma30", "sum3", "sum5", "sum5_minus_sum3", "abs_sum5_minus_sum3",
                           "sqrt_sum5_sq_minus_sum3_sq"})
    frame.add(name, extra.at(name), extra.warmup(name));
  for (auto w : cfg.rsi_windows) frame.add("rsi_" + std::to_string(w), rsi(closes, w), w);
  for (auto w : cfg.roc_windows) frame.add("roc_" + std::to_string(w), roc(closes, w), w);
  frame.add("williams_r", extra.at("williams_r"), extra.warmup("williams_r"));
  for (auto w : cfg.atr_windows) frame.add("atr_" + std::to_string(w), atr(bars, w), w);
  frame.add("cci", cci(bars, cfg.cci_window), 2 * cfg.cci_window - 2);
  frame.add("dema", extra.at("dema"), extra.warmup("dema"));
  return frame;
}

}  // namespace lfts::ingest
