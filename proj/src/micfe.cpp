#include "lfts/micfe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace lfts::micfe {

std::size_t MicEstimator::bins_for(std::size_t n) const {
  if (bins != 0) {
    if (bins < 2) throw std::invalid_argument("MIC estimator needs at least 2 bins");
    return bins;
  }
  const auto b = static_cast<std::size_t>(std::floor(std::pow(static_cast<double>(n), 0.4)));
  return std::clamp<std::size_t>(b, 4, 32);
}

std::vector<int> discretize(std::span<const double> x, std::size_t bins, Binning strategy) {
  const std::size_t n = x.size();
  std::vector<int> out(n, 0);
  if (n == 0) return out;
  if (strategy == Binning::EqualWidth) {
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    const double range = *hi - *lo;
    if (range <= 0.0) return out;
    for (std::size_t i = 0; i < n; ++i) {
      auto b = static_cast<std::size_t>(std::floor((x[i] - *lo) / range * static_cast<double>(bins)));
      out[i] = static_cast<int>(std::min(b, bins - 1));
    }
    return out;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::size_t rank = 0;
  while (rank < n) {
    std::size_t end = rank;
    while (end < n && x[order[end]] == x[order[rank]]) ++end;
    const auto b = static_cast<int>(rank * bins / n);
    for (std::size_t k = rank; k < end; ++k) out[order[k]] = b;
    rank = end;
  }
  return out;
}

double entropy(std::span<const std::size_t> counts) {
  std::vector<std::size_t> nz;
  std::size_t total = 0;
  for (auto c : counts)
    if (c > 0) {
      nz.push_back(c);
      total += c;
    }
  if (total == 0) return 0.0;
  // Sorted summation makes the result independent of cell order, so that
  // H(X,Y) and H(Y,X) agree bit for bit.
  std::sort(nz.begin(), nz.end());
  const double n = static_cast<double>(total);
  double h = 0.0;
  for (auto c : nz) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

namespace {

struct Entropies {
  double hx = 0.0, hy = 0.0, hxy = 0.0;
};

Entropies joint_entropies(std::span<const double> x, std::span<const double> y, const MicEstimator& est) {
  if (x.size() != y.size())
    throw ShapeError("mic: length mismatch (" + std::to_string(x.size()) + " vs " + std::to_string(y.size()) + ")");
  if (x.size() < 30) throw ShapeError("mic: need at least 30 samples, got " + std::to_string(x.size()));
  const std::size_t n = x.size();
  const std::size_t bins = est.bins_for(n);
  const auto bx = discretize(x, bins, est.strategy);
  const auto by = discretize(y, bins, est.strategy);
  std::vector<std::size_t> cx(bins, 0), cy(bins, 0), cxy(bins * bins, 0);
  for (std::size_t i = 0; i < n; ++i) {
    ++cx[static_cast<std::size_t>(bx[i])];
    ++cy[static_cast<std::size_t>(by[i])];
    ++cxy[static_cast<std::size_t>(bx[i]) * bins + static_cast<std::size_t>(by[i])];
  }
  return {entropy(cx), entropy(cy), entropy(cxy)};
}

}  // namespace

double mutual_information(std::span<const double> x, std::span<const double> y, const MicEstimator& est) {
  const auto e = joint_entropies(x, y, est);
  return std::max(0.0, (e.hx + e.hy) - e.hxy);
}

double mic(std::span<const double> x, std::span<const double> y, const MicEstimator& est) {
  const auto e = joint_entropies(x, y, est);
  if (e.hx <= 0.0 || e.hy <= 0.0) return 0.0;
  const double info = std::max(0.0, (e.hx + e.hy) - e.hxy);
  return std::clamp(info / std::sqrt(e.hx * e.hy), 0.0, 1.0);
}

KSelectionReport select_k(std::span<const double> signal, const std::vector<std::size_t>& k_candidates,
                          const vmd::VmdParams& params, const MicEstimator& est, double tie_epsilon) {
  if (k_candidates.empty()) throw std::invalid_argument("select_k: no candidates");
  KSelectionReport report;
  const std::size_t bins = est.bins_for(signal.size());
  std::vector<std::size_t> counts(bins, 0);
  for (int b : discretize(signal, bins, est.strategy)) ++counts[static_cast<std::size_t>(b)];
  const bool constant_input = entropy(counts) <= 0.0;

  for (auto k : k_candidates) {
    KCandidate c;
    c.k = k;
    if (constant_input) {
      c.diagnostic = "signal has zero entropy; MICyy0 undefined";
      report.candidates.push_back(c);
      continue;
    }
    try {
      vmd::VmdParams p = params;
      p.modes = k;
      const auto imfs = vmd::decompose(signal, p);
      const auto y0 = imfs.reconstruction();
      c.mic_yy0 = mic(signal, y0, est);
      c.ok = true;
    } catch (const std::exception& e) {
      c.diagnostic = e.what();
    }
    report.candidates.push_back(c);
  }

  double best = -1.0;
  for (const auto& c : report.candidates)
    if (c.ok) best = std::max(best, c.mic_yy0);
  if (best < 0.0) {
    report.degenerate = true;
    report.chosen_k = k_candidates.front();
    return report;
  }
  std::size_t chosen = std::numeric_limits<std::size_t>::max();
  for (const auto& c : report.candidates)
    if (c.ok && c.mic_yy0 >= best - tie_epsilon) chosen = std::min(chosen, c.k);
  report.chosen_k = chosen;
  return report;
}

double FeParams::tolerance_for(std::span<const double> x) const {
  if (r) return *r;
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return r_factor * std::sqrt(ss / n);
}

namespace {

// phi^dim(r): average fuzzy similarity between distinct baseline-removed
// delay vectors of length `dim`.
double similarity(std::span<const double> x, std::size_t dim, double r) {
  const std::size_t count = x.size() - dim + 1;
  std::vector<double> vecs(count * dim);
  for (std::size_t i = 0; i < count; ++i) {
    double mean = 0.0;
    for (std::size_t k = 0; k < dim; ++k) mean += x[i + k];
    mean /= static_cast<double>(dim);
    for (std::size_t k = 0; k < dim; ++k) vecs[i * dim + k] = x[i + k] - mean;
  }
  const double scale = std::log(2.0) / (r * r);
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < count; ++i) {
    const double* vi = &vecs[i * dim];
    double row = 0.0;
    for (std::size_t j = i + 1; j < count; ++j) {
      const double* vj = &vecs[j * dim];
      double d = 0.0;
      for (std::size_t k = 0; k < dim; ++k) d = std::max(d, std::abs(vi[k] - vj[k]));
      row += std::exp(-scale * d * d);
    }
    total += row;
  }
  // Each unordered pair stands for D_ij and D_ji.
  return 2.0 * total / (static_cast<double>(count) * static_cast<double>(count - 1));
}

}  // namespace

double fuzzy_entropy(std::span<const double> x, const FeParams& p) {
  if (p.m < 1) throw std::invalid_argument("fuzzy entropy: m must be at least 1");
  if (x.size() <= p.m + 1)
    throw ShapeError("fuzzy entropy: need more than m + 1 = " + std::to_string(p.m + 1) + " samples");
  const double r = p.tolerance_for(x);
  if (p.r && !(r > 0.0)) throw std::invalid_argument("fuzzy entropy: r must be positive");
  if (!(r > 0.0)) return 0.0;  // zero spread: every membership is 1
  const double phi_m = similarity(x, p.m, r);
  const double phi_m1 = similarity(x, p.m + 1, r);
  return std::log(phi_m / phi_m1);
}

std::size_t fe_bucket(double fe) {
  for (std::size_t k = 1; k < 10; ++k)
    if (fe <= static_cast<double>(k) / 10.0) return k;
  return 10;
}

FeatureGrouping group_imfs(const std::vector<Imf>& imfs) {
  FeatureGrouping out;
  std::vector<std::vector<const Imf*>> buckets(11);
  for (const auto& imf : imfs) {
    if (imf.fe > 1.0)
      out.warnings.push_back("IMF " + std::to_string(imf.id) + " has FE " + std::to_string(imf.fe) +
                             " > 1; clipped into the top bucket");
    buckets[fe_bucket(imf.fe)].push_back(&imf);
  }
  for (std::size_t k = 1; k <= 10; ++k) {
    if (buckets[k].empty()) continue;
    FeatureGroup g;
    g.id = k;
    g.lo = static_cast<double>(k - 1) / 10.0;
    g.hi = static_cast<double>(k) / 10.0;
    const std::size_t n = buckets[k].front()->values.size();
    g.values.assign(n, 0.0);
    for (const Imf* imf : buckets[k]) {
      if (imf->values.size() != n) throw ShapeError("group_imfs: IMFs differ in length");
      g.members.push_back(imf->id);
      for (std::size_t t = 0; t < n; ++t) g.values[t] += imf->values[t];
    }
    const double v = static_cast<double>(buckets[k].size());
    for (double& x : g.values) x /= v;
    out.groups.push_back(std::move(g));
  }
  return out;
}

std::vector<std::size_t> select_indicators(std::span<const double> correlations, double threshold) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < correlations.size(); ++i)
    if (correlations[i] >= threshold) out.push_back(i);
  return out;
}

std::vector<double> zscore(std::span<const double> x, std::size_t fit_rows) {
  fit_rows = std::min(fit_rows, x.size());
  if (fit_rows == 0) throw ShapeError("zscore: no rows to fit");
  double mean = 0.0;
  for (std::size_t t = 0; t < fit_rows; ++t) mean += x[t];
  mean /= static_cast<double>(fit_rows);
  double ss = 0.0;
  for (std::size_t t = 0; t < fit_rows; ++t) ss += (x[t] - mean) * (x[t] - mean);
  const double sd = std::sqrt(ss / static_cast<double>(fit_rows));
  std::vector<double> out(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) out[t] = sd > 0.0 ? (x[t] - mean) / sd : x[t] - mean;
  return out;
}

Reconstruction reconstruct_features(const FeatureGrouping& grouping, const ingest::FeatureFrame& indicators,
                                    const std::vector<std::string>& indicator_names,
                                    const MicEstimator& est, double threshold, std::size_t fit_rows) {
  Reconstruction rec;
  rec.threshold = threshold;
  rec.indicators = indicator_names;
  const std::size_t n = indicators.rows();
  fit_rows = std::min(fit_rows, n);

  std::vector<std::vector<double>> rmf;
  for (const auto& name : indicator_names) {
    const auto& s = indicators.at(name);
    for (std::size_t t = 0; t < n; ++t)
      if (!s.ok(t)) throw ShapeError("indicator '" + name + "' has an invalid cell at row " + std::to_string(t));
    rmf.push_back(s.values);
  }

  for (std::size_t gi = 0; gi < grouping.groups.size(); ++gi) {
    const FeatureGroup& g = grouping.groups[gi];
    if (g.values.size() != n) throw ShapeError("New Feature length differs from the indicator frame");
    const std::span<const double> nf_fit(g.values.data(), fit_rows);
    std::vector<double> corr;
    for (const auto& series : rmf) corr.push_back(mic(nf_fit, std::span<const double>(series.data(), fit_rows), est));
    rec.heatmap.push_back(corr);

    ReconstructionEntry entry;
    entry.rcf_id = gi + 1;
    entry.nf_id = g.id;
    const auto chosen = select_indicators(corr, threshold);
    for (auto m : chosen) entry.included.emplace_back(indicator_names[m], corr[m]);

    if (chosen.empty()) {
      rec.warnings.push_back("New Feature " + std::to_string(g.id) +
                             ": no indicator reaches the threshold; RCF = NF");
      rec.features.push_back(g.values);
    } else {
      std::vector<double> product = zscore(g.values, fit_rows);
      for (auto m : chosen) {
        std::vector<double> factor(n);
        for (std::size_t t = 0; t < n; ++t) factor[t] = rmf[m][t] * corr[m];
        factor = zscore(factor, fit_rows);
        for (std::size_t t = 0; t < n; ++t) product[t] *= factor[t];
      }
      rec.features.push_back(zscore(product, fit_rows));
    }
    rec.entries.push_back(std::move(entry));
  }
  return rec;
}

}  // namespace lfts::micfe
