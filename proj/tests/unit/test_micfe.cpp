#include <cmath>
#include <numbers>
#include <random>

#include "../oracles.hpp"
#include "doctest.h"
#include "lfts/micfe.hpp"
#include "lfts/pipeline.hpp"

using namespace lfts::micfe;

namespace {

// Fuzzy entropy straight from the definition, over all ordered pairs i != j.
double fe_oracle(const std::vector<double>& x, std::size_t m, double r) {
  auto phi = [&](std::size_t dim) {
    const std::size_t n = x.size() - dim + 1;
    std::vector<std::vector<double>> v(n, std::vector<double>(dim));
    for (std::size_t i = 0; i < n; ++i) {
      double mu = 0;
      for (std::size_t k = 0; k < dim; ++k) mu += x[i + k] / static_cast<double>(dim);
      for (std::size_t k = 0; k < dim; ++k) v[i][k] = x[i + k] - mu;
    }
    double s = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        double d = 0;
        for (std::size_t k = 0; k < dim; ++k) d = std::max(d, std::fabs(v[i][k] - v[j][k]));
        s += std::exp(-std::log(2.0) * (d / r) * (d / r));
      }
    return s / (static_cast<double>(n) * static_cast<double>(n - 1));
  };
  return std::log(phi(m) / phi(m + 1));
}

std::vector<double> uniform(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u;
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

}  // namespace

TEST_CASE("discretize equal-frequency keeps ties together") {
  const std::vector<double> x{1, 1, 1, 1, 2, 3, 4, 5};
  const auto b = discretize(x, 4, Binning::EqualFrequency);
  CHECK(b[0] == b[1]);
  CHECK(b[1] == b[2]);
  CHECK(b[2] == b[3]);
  CHECK(b[7] >= b[4]);
  const auto w = discretize(std::vector<double>{0, 1, 2, 3}, 2, Binning::EqualWidth);
  CHECK(w == std::vector<int>{0, 0, 1, 1});
}

TEST_CASE("entropy of counts") {
  const std::vector<std::size_t> even{5, 5, 5, 5};
  CHECK(entropy(even) == doctest::Approx(std::log(4.0)));
  const std::vector<std::size_t> one{7, 0};
  CHECK(entropy(one) == 0.0);
}

TEST_CASE("mic hand cases") {
  MicEstimator est;
  est.bins = 4;
  std::vector<double> x(48), y(48);
  for (int i = 0; i < 48; ++i) {
    x[i] = i;
    y[i] = i % 4;
  }
  CHECK(mic(x, y, est) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(mic(x, x, est) == 1.0);
  CHECK(mic(x, std::vector<double>(48, 3.0), est) == 0.0);
  CHECK_THROWS_AS(mic(std::vector<double>(10, 1.0), std::vector<double>(10, 1.0)), ShapeError);
  CHECK_THROWS_AS(mic(x, std::vector<double>(47, 1.0)), ShapeError);
}

TEST_CASE("mic is exactly one on itself and bounded") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto x = uniform(500, s), y = uniform(500, s + 100);
    CHECK(mic(x, x) == 1.0);
    const double v = mic(x, y);
    CHECK((v >= 0.0 && v <= 1.0));
    std::vector<double> mono(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) mono[i] = std::exp(3 * x[i]);
    CHECK(mic(x, mono) == doctest::Approx(1.0));
  }
}

TEST_CASE("fuzzy entropy matches the definition") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> d;
  std::vector<double> x(150);
  for (auto& v : x) v = d(rng);
  FeParams p;
  const double r = p.tolerance_for(x);
  CHECK(fuzzy_entropy(x, p) == doctest::Approx(fe_oracle(x, 3, r)).epsilon(1e-10));
  p.m = 2;
  p.r = 0.5;
  CHECK(fuzzy_entropy(x, p) == doctest::Approx(fe_oracle(x, 2, 0.5)).epsilon(1e-10));
}

TEST_CASE("fuzzy entropy ordering and degenerate input") {
  CHECK(fuzzy_entropy(std::vector<double>(200, 4.0)) == 0.0);
  const auto sine = lfts::pipeline::two_tone(600, 0.01, 0.01);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d;
  std::vector<double> noise(600);
  for (auto& v : noise) v = d(rng);
  CHECK(fuzzy_entropy(noise) > fuzzy_entropy(sine));
  CHECK_THROWS_AS(fuzzy_entropy(std::vector<double>{1, 2, 3, 4}), ShapeError);
}

TEST_CASE("fe buckets are right-closed") {
  CHECK(fe_bucket(0.0) == 1);
  CHECK(fe_bucket(0.1) == 1);
  CHECK(fe_bucket(0.1000001) == 2);
  CHECK(fe_bucket(0.95) == 10);
  CHECK(fe_bucket(1.0) == 10);
  CHECK(fe_bucket(3.0) == 10);
}

TEST_CASE("grouping averages members and warns above one") {
  std::vector<Imf> imfs(3);
  imfs[0] = {"close", 1, 1, {1, 2, 3}, 0.05};
  imfs[1] = {"open", 1, 2, {3, 4, 5}, 0.08};
  imfs[2] = {"low", 1, 3, {9, 9, 9}, 1.4};
  const auto g = group_imfs(imfs);
  REQUIRE(g.groups.size() == 2);
  CHECK(g.groups[0].id == 1);
  CHECK(g.groups[0].members == std::vector<std::size_t>{1, 2});
  CHECK(g.groups[0].values == std::vector<double>{2, 3, 4});
  CHECK(g.groups[1].id == 10);
  CHECK(g.warnings.size() == 1);
}

TEST_CASE("indicator selection and z-scores") {
  const std::vector<double> c{0.2, 0.5, 0.7, 0.49999};
  CHECK(select_indicators(c, 0.5) == std::vector<std::size_t>{1, 2});
  const auto z = zscore(std::vector<double>{1, 3, 100}, 2);
  CHECK(z[0] == doctest::Approx(-1.0));
  CHECK(z[1] == doctest::Approx(1.0));
  CHECK(z[2] == doctest::Approx(98.0));
  const auto flat = zscore(std::vector<double>{2, 2, 5}, 2);
  CHECK(flat == std::vector<double>{0, 0, 3});
}

TEST_CASE("reconstruction follows the product formula") {
  const std::size_t n = 200;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> d;
  std::vector<double> nf(n), a(n), b(n);
  for (std::size_t t = 0; t < n; ++t) {
    nf[t] = d(rng);
    a[t] = nf[t] * 2 + 0.01 * d(rng);  // strongly related
    b[t] = d(rng);                     // unrelated
  }
  FeatureGrouping g;
  g.groups.push_back({4, 0.3, 0.4, {1}, nf});
  lfts::ingest::FeatureFrame f(std::vector<lfts::ingest::Timestamp>(n, 0));
  lfts::ingest::Series sa(n), sb(n);
  for (std::size_t t = 0; t < n; ++t) sa.set(t, a[t]), sb.set(t, b[t]);
  f.add("a", sa);
  f.add("b", sb);
  const std::size_t fit = 150;
  const auto rec = reconstruct_features(g, f, {"a", "b"}, {}, 0.5, fit);
  REQUIRE(rec.entries.size() == 1);
  REQUIRE(rec.entries[0].included.size() == 1);
  CHECK(rec.entries[0].included[0].first == "a");
  const double c = mic(std::span(nf).first(fit), std::span(a).first(fit));
  CHECK(rec.heatmap[0][0] == doctest::Approx(c));
  std::vector<double> ra(n);
  for (std::size_t t = 0; t < n; ++t) ra[t] = a[t] * c;
  const auto zn = zscore(nf, fit), za = zscore(ra, fit);
  std::vector<double> prod(n);
  for (std::size_t t = 0; t < n; ++t) prod[t] = zn[t] * za[t];
  const auto expect = zscore(prod, fit);
  for (std::size_t t = 0; t < n; ++t) CHECK(rec.features[0][t] == doctest::Approx(expect[t]).epsilon(1e-12));

  const auto none = reconstruct_features(g, f, {"b"}, {}, 0.99, fit);
  CHECK(none.features[0] == nf);
  CHECK(none.warnings.size() == 1);
}

TEST_CASE("k selection prefers a good fit") {
  const auto x = lfts::pipeline::two_tone(512, 0.05, 0.2);
  lfts::vmd::VmdParams p;
  const auto rep = select_k(x, {2, 3, 4}, p);
  CHECK(rep.candidates.size() == 3);
  CHECK_FALSE(rep.degenerate);
  CHECK(rep.chosen_k >= 2);
  for (const auto& c : rep.candidates) CHECK(c.mic_yy0 <= 1.0);
  const auto flat = select_k(std::vector<double>(256, 1.0), {2, 3}, p);
  CHECK(flat.degenerate);
  CHECK(flat.chosen_k == 2);
}
