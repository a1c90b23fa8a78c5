#include "lfts/vmd.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <ostream>

namespace lfts::vmd {

namespace {

// FFTW planning is not thread-safe; execution with new-array functions is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

using cplx = std::complex<double>;

}  // namespace

std::vector<cplx> rfft(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<double> in(x.begin(), x.end());
  std::vector<cplx> out(n / 2 + 1);
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.data(),
                                reinterpret_cast<fftw_complex*>(out.data()), FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  return out;
}

std::vector<double> irfft(std::span<const cplx> bins, std::size_t n) {
  if (bins.size() != n / 2 + 1) throw std::invalid_argument("irfft: bin count does not match length");
  std::vector<cplx> in(bins.begin(), bins.end());
  std::vector<double> out(n);
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_c2r_1d(static_cast<int>(n), reinterpret_cast<fftw_complex*>(in.data()),
                                out.data(), FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (double& v : out) v *= inv;
  return out;
}

void VmdParams::validate() const {
  if (modes < 1) throw std::invalid_argument("VMD needs at least one mode");
  if (!(alpha > 0.0)) throw std::invalid_argument("VMD alpha must be positive");
  if (!(tau >= 0.0)) throw std::invalid_argument("VMD tau must be non-negative");
  if (!(tol > 0.0)) throw std::invalid_argument("VMD tolerance must be positive");
  if (max_iter < 1) throw std::invalid_argument("VMD max_iter must be positive");
}

std::vector<double> ImfSet::reconstruction() const {
  std::vector<double> out(residual.size(), 0.0);
  for (const auto& m : modes)
    for (std::size_t t = 0; t < out.size(); ++t) out[t] += m[t];
  return out;
}

ImfSet decompose(std::span<const double> signal, const VmdParams& params) {
  params.validate();
  const std::size_t n = signal.size();
  if (n < 16) throw DomainError("VMD needs at least 16 samples, got " + std::to_string(n));
  for (double v : signal)
    if (!std::isfinite(v)) throw DomainError("VMD input contains a non-finite value");

  // Mirror extension: [reverse(first half), signal, reverse(second half)].
  const std::size_t left = n / 2;
  const std::size_t right = n - left;
  const std::size_t total = 2 * n;
  std::vector<double> ext(total);
  for (std::size_t i = 0; i < left; ++i) ext[i] = signal[left - 1 - i];
  for (std::size_t i = 0; i < n; ++i) ext[left + i] = signal[i];
  for (std::size_t j = 0; j < right; ++j) ext[left + n + j] = signal[n - 1 - j];

  const std::vector<cplx> spectrum = rfft(ext);
  const std::size_t bins = spectrum.size();
  std::vector<double> freq(bins);
  for (std::size_t b = 0; b < bins; ++b) freq[b] = static_cast<double>(b) / static_cast<double>(total);

  const std::size_t K = params.modes;
  std::vector<std::vector<cplx>> u(K, std::vector<cplx>(bins, cplx{}));
  std::vector<cplx> lambda(bins, cplx{});
  std::vector<double> omega(K);
  for (std::size_t k = 0; k < K; ++k) omega[k] = 0.5 * (static_cast<double>(k) + 0.5) / static_cast<double>(K);
  if (params.dc_mode) omega[0] = 0.0;

  ImfSet result;
  std::vector<cplx> sum(bins);
  std::vector<cplx> previous(bins);
  std::size_t iter = 0;
  bool converged = false;
  while (iter < params.max_iter && !converged) {
    ++iter;
    std::fill(sum.begin(), sum.end(), cplx{});
    for (const auto& mode : u)
      for (std::size_t b = 0; b < bins; ++b) sum[b] += mode[b];

    double change = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      std::vector<cplx>& mode = u[k];
      previous = mode;
      double power = 0.0, weighted = 0.0, delta = 0.0, before = 0.0;
      for (std::size_t b = 0; b < bins; ++b) {
        const cplx others = sum[b] - mode[b];
        const double d = freq[b] - omega[k];
        const cplx updated = (spectrum[b] - others + 0.5 * lambda[b]) / (1.0 + params.alpha * d * d);
        sum[b] = others + updated;
        mode[b] = updated;
        const double p = std::norm(updated);
        power += p;
        weighted += freq[b] * p;
        delta += std::norm(updated - previous[b]);
        before += std::norm(previous[b]);
      }
      if (!(k == 0 && params.dc_mode) && power > 0.0) omega[k] = weighted / power;
      change += before > 0.0 ? delta / before : (delta > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    }
    if (params.tau > 0.0)
      for (std::size_t b = 0; b < bins; ++b) lambda[b] += params.tau * (spectrum[b] - sum[b]);
    result.trace.push_back(change);
    converged = change < params.tol;
  }

  std::vector<std::size_t> order(K);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return omega[a] < omega[b]; });

  result.iterations_used = iter;
  result.converged = converged;
  for (std::size_t k : order) {
    const std::vector<double> full = irfft(u[k], total);
    result.modes.emplace_back(full.begin() + static_cast<std::ptrdiff_t>(left),
                              full.begin() + static_cast<std::ptrdiff_t>(left + n));
    result.center_freqs.push_back(omega[k]);
  }
  result.residual.assign(signal.begin(), signal.end());
  for (const auto& m : result.modes)
    for (std::size_t t = 0; t < n; ++t) result.residual[t] -= m[t];
  return result;
}

void write_trace_csv(std::ostream& out, const ImfSet& imfs) {
  out << "iteration,relative_change\n";
  char buf[64];
  for (std::size_t i = 0; i < imfs.trace.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i + 1, imfs.trace[i]);
    out << buf;
  }
}

Spectrum psd(std::span<const double> x) {
  if (x.size() < 2) throw std::invalid_argument("psd needs at least two samples");
  const std::size_t n = x.size();
  const auto bins = rfft(x);
  Spectrum s;
  s.freqs.resize(bins.size());
  s.power.resize(bins.size());
  for (std::size_t k = 0; k < bins.size(); ++k) {
    s.freqs[k] = static_cast<double>(k) / static_cast<double>(n);
    s.power[k] = std::norm(bins[k]) / static_cast<double>(n);
  }
  return s;
}

double one_sided_weight(std::size_t k, std::size_t n) {
  if (k == 0) return 1.0;
  if (n % 2 == 0 && k == n / 2) return 1.0;
  return 2.0;
}

}  // namespace lfts::vmd
