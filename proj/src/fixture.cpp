#include <chrono>
#include <cmath>
#include <numbers>

#include "lfts/pipeline.hpp"
#include "lfts/tensor.hpp"

namespace lfts::pipeline {

namespace {

class Gaussian {
 public:
  Gaussian(std::uint64_t seed, std::uint64_t stream) : rng_(seed, stream) {}
  double operator()() {
    const double u1 = 1.0 - rng_.uniform(n_++);
    const double u2 = rng_.uniform(n_++);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  tensor::CounterRng rng_;
  std::uint64_t n_ = 0;
};

constexpr int kSessionTimes[] = {1000, 1030, 1100, 1130, 1330, 1400, 1430, 1500};

}  // namespace

std::vector<ingest::Bar> synthetic_bars(const FixtureSpec& spec) {
  if (spec.periods.size() != spec.amplitudes.size()) throw ConfigError("fixture periods and amplitudes differ in length");
  if (spec.bars < 2) throw ConfigError("fixture needs at least two bars");
  Gaussian ar_noise(spec.seed, 1), obs_noise(spec.seed, 2), bar_noise(spec.seed, 3);

  std::vector<double> x(spec.bars);
  double ar = 0.0;
  for (std::size_t t = 0; t < spec.bars; ++t) {
    ar = spec.phi * ar + spec.ar_sd * ar_noise();
    double s = ar + spec.noise_sd * obs_noise();
    for (std::size_t k = 0; k < spec.periods.size(); ++k)
      s += spec.amplitudes[k] * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / spec.periods[k]);
    x[t] = s;
  }

  using namespace std::chrono;
  sys_days day = sys_days(year{2020} / January / 2);
  std::size_t slot = 0;
  std::vector<ingest::Bar> bars(spec.bars);
  double prev_close = 100.0 * std::exp(spec.price_scale * x[0]);
  for (std::size_t t = 0; t < spec.bars; ++t) {
    while (weekday(day) == Saturday || weekday(day) == Sunday) day += days{1};
    const year_month_day ymd(day);
    const int hhmm = kSessionTimes[slot];
    ingest::Bar& b = bars[t];
    b.time = static_cast<ingest::Timestamp>(int(ymd.year())) * 100000000LL +
             static_cast<ingest::Timestamp>(unsigned(ymd.month())) * 1000000LL +
             static_cast<ingest::Timestamp>(unsigned(ymd.day())) * 10000LL + hhmm;
    b.close = 100.0 * std::exp(spec.price_scale * x[t]);
    b.open = prev_close * std::exp(0.0005 * bar_noise());
    const double wick_hi = std::abs(bar_noise()) * 0.002;
    const double wick_lo = std::abs(bar_noise()) * 0.002;
    b.high = std::max(b.open, b.close) * std::exp(wick_hi);
    b.low = std::min(b.open, b.close) * std::exp(-wick_lo);
    b.volume = std::round(1e5 * std::exp(0.3 * bar_noise()));
    b.amount = b.volume * (b.open + b.high + b.low + b.close) / 4.0;
    prev_close = b.close;
    if (++slot == std::size(kSessionTimes)) {
      slot = 0;
      day += days{1};
    }
  }
  return bars;
}

std::vector<double> two_tone(std::size_t n, double f1, double f2) {
  std::vector<double> x(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double tt = static_cast<double>(t);
    x[t] = std::sin(2.0 * std::numbers::pi * f1 * tt) + std::sin(2.0 * std::numbers::pi * f2 * tt);
  }
  return x;
}

nlohmann::json to_json(const FixtureSpec& f) {
  return {{"bars", f.bars},         {"phi", f.phi},         {"ar_sd", f.ar_sd},
          {"periods", f.periods},   {"amplitudes", f.amplitudes}, {"noise_sd", f.noise_sd},
          {"price_scale", f.price_scale}, {"seed", f.seed}};
}

FixtureSpec fixture_from_json(const nlohmann::json& j, FixtureSpec f) {
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  take("bars", f.bars);
  take("phi", f.phi);
  take("ar_sd", f.ar_sd);
  take("periods", f.periods);
  take("amplitudes", f.amplitudes);
  take("noise_sd", f.noise_sd);
  take("price_scale", f.price_scale);
  take("seed", f.seed);
  return f;
}

}  // namespace lfts::pipeline
