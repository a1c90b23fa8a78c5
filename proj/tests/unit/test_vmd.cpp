#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "lfts/pipeline.hpp"
#include "lfts/vmd.hpp"

using namespace lfts::vmd;

namespace {

double norm(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("rfft and irfft invert each other") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> d;
  for (std::size_t n : {16u, 17u, 100u}) {
    std::vector<double> x(n);
    for (auto& v : x) v = d(rng);
    const auto bins = rfft(x);
    CHECK(bins.size() == n / 2 + 1);
    const auto back = irfft(bins, n);
    for (std::size_t t = 0; t < n; ++t) CHECK(std::fabs(back[t] - x[t]) < 1e-12);
    // DC bin equals the plain sum.
    double s = 0;
    for (double v : x) s += v;
    CHECK(bins[0].real() == doctest::Approx(s));
  }
}

TEST_CASE("periodogram satisfies Parseval") {
  auto x = lfts::pipeline::two_tone(256, 0.125, 0.125);
  const auto y = lfts::pipeline::two_tone(256, 0.3, 0.3);
  for (std::size_t t = 0; t < x.size(); ++t) x[t] += 0.25 * y[t];
  const Spectrum s = psd(x);
  double energy = 0, folded = 0;
  for (double v : x) energy += v * v;
  for (std::size_t k = 0; k < s.power.size(); ++k) folded += one_sided_weight(k, x.size()) * s.power[k];
  CHECK(folded == doctest::Approx(energy).epsilon(1e-10));
  const auto peak = std::max_element(s.power.begin(), s.power.end()) - s.power.begin();
  CHECK(s.freqs[static_cast<std::size_t>(peak)] == 0.125);
  for (double p : psd(std::vector<double>(32, 0.0)).power) CHECK(p == 0.0);
}

TEST_CASE("two-tone recovery") {
  const auto x = lfts::pipeline::two_tone(1024, 0.05, 0.20);
  VmdParams p;
  p.modes = 2;
  const ImfSet imfs = decompose(x, p);
  REQUIRE(imfs.modes.size() == 2);
  CHECK(std::fabs(imfs.center_freqs[0] - 0.05) / 0.05 < 0.02);
  CHECK(std::fabs(imfs.center_freqs[1] - 0.20) / 0.20 < 0.02);
  std::vector<double> err(x.size());
  const auto rec = imfs.reconstruction();
  for (std::size_t t = 0; t < x.size(); ++t) err[t] = x[t] - rec[t];
  CHECK(norm(err) / norm(x) < 0.05);
  // Each mode should carry one tone.
  const auto lo = lfts::pipeline::two_tone(1024, 0.05, 0.05);
  std::vector<double> tone(x.size()), diff(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) {
    tone[t] = lo[t] / 2.0;
    diff[t] = imfs.modes[0][t] - tone[t];
  }
  CHECK(norm(diff) / norm(tone) < 0.1);
}

TEST_CASE("modes are sorted and sized") {
  const auto x = lfts::pipeline::two_tone(512, 0.3, 0.02);
  VmdParams p;
  p.modes = 3;
  const ImfSet imfs = decompose(x, p);
  REQUIRE(imfs.modes.size() == 3);
  for (const auto& m : imfs.modes) CHECK(m.size() == x.size());
  CHECK(std::is_sorted(imfs.center_freqs.begin(), imfs.center_freqs.end()));
  for (double f : imfs.center_freqs) CHECK((f >= 0.0 && f <= 0.5));
  CHECK(imfs.iterations_used >= 1);
  CHECK(imfs.trace.size() == imfs.iterations_used);
}

TEST_CASE("vmd input validation") {
  VmdParams p;
  p.modes = 0;
  CHECK_THROWS(p.validate());
  p = {};
  p.alpha = -1;
  CHECK_THROWS(p.validate());
  CHECK_THROWS_AS(decompose(std::vector<double>(8, 1.0), VmdParams{}), DomainError);
  std::vector<double> bad(64, 1.0);
  bad[10] = NAN;
  CHECK_THROWS_AS(decompose(bad, VmdParams{}), DomainError);
}

TEST_CASE("constant input stays in the modes") {
  const std::vector<double> x(128, 2.5);
  VmdParams p;
  p.modes = 2;
  p.dc_mode = true;
  const ImfSet imfs = decompose(x, p);
  CHECK(imfs.center_freqs[0] == 0.0);
  const auto rec = imfs.reconstruction();
  for (std::size_t t = 0; t < x.size(); ++t) CHECK(rec[t] == doctest::Approx(2.5).epsilon(1e-6));
}
