#pragma once

#include <complex>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <vector>

namespace lfts::vmd {

class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct VmdParams {
  std::size_t modes = 2;     // K
  double alpha = 2000.0;     // bandwidth penalty; Wiener weight 1 + alpha (f - f_k)^2, f in cycles/sample
  double tau = 0.0;          // dual ascent rate; 0 disables the multiplier update
  double tol = 1e-7;
  std::size_t max_iter = 500;
  bool dc_mode = false;      // pin the first center frequency at 0

  void validate() const;
};

/// K band-limited modes of one signal, sorted by ascending center frequency.
struct ImfSet {
  std::vector<std::vector<double>> modes;
  std::vector<double> center_freqs;  // cycles per sample, in [0, 0.5]
  std::vector<double> residual;      // input minus the sum of modes
  std::size_t iterations_used = 0;
  bool converged = false;
  /// Relative mode update per iteration, for convergence debugging.
  std::vector<double> trace;

  std::vector<double> reconstruction() const;
};

/// Variational mode decomposition by ADMM in the frequency domain. The signal
/// is mirror-extended by n/2 samples on each side before the transform.
ImfSet decompose(std::span<const double> signal, const VmdParams& params);

void write_trace_csv(std::ostream& out, const ImfSet& imfs);

struct Spectrum {
  std::vector<double> freqs;  // k / n, k = 0..floor(n/2)
  std::vector<double> power;  // |DFT(x)[k]|^2 / n
};

/// One-sided periodogram.
Spectrum psd(std::span<const double> x);

/// Weight of bin k when folding the one-sided periodogram back to the full
/// spectrum: 1 for DC (and Nyquist for even n), 2 otherwise.
double one_sided_weight(std::size_t k, std::size_t n);

/// Real-input DFT, bins 0..floor(n/2).
std::vector<std::complex<double>> rfft(std::span<const double> x);
/// Inverse of rfft for a length-n signal (normalized by 1/n).
std::vector<double> irfft(std::span<const std::complex<double>> bins, std::size_t n);

}  // namespace lfts::vmd
