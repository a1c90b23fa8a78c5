#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lfts/ingest.hpp"
#include "lfts/vmd.hpp"

namespace lfts::micfe {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Binning { EqualFrequency, EqualWidth };

/// Histogram estimator for the entropy-normalized mutual information
/// I(X;Y) / sqrt(H(X) H(Y)). Not Reshef's maximal information coefficient.
struct MicEstimator {
  std::size_t bins = 0;  // 0: floor(n^0.4) clamped to [4, 32]
  Binning strategy = Binning::EqualFrequency;

  std::size_t bins_for(std::size_t n) const;
};

/// Bin index of every sample. Equal-frequency binning assigns tied values to
/// the same bin.
std::vector<int> discretize(std::span<const double> x, std::size_t bins, Binning strategy);

/// Shannon entropy (nats) of a histogram; 0 log 0 = 0.
double entropy(std::span<const std::size_t> counts);

double mutual_information(std::span<const double> x, std::span<const double> y,
                          const MicEstimator& est = {});

/// Normalized mutual information in [0, 1]; 0 when either marginal entropy is 0.
double mic(std::span<const double> x, std::span<const double> y, const MicEstimator& est = {});

struct KCandidate {
  std::size_t k = 0;
  double mic_yy0 = 0.0;
  bool ok = false;
  std::string diagnostic;
};

struct KSelectionReport {
  std::vector<KCandidate> candidates;
  std::size_t chosen_k = 0;
  bool degenerate = false;  // MICyy0 undefined for every candidate (e.g. constant input)
};

/// Decompose with each candidate K, reconstruct y0 = sum of modes, score
/// MIC(y, y0), and keep the smallest K within `tie_epsilon` of the best score.
KSelectionReport select_k(std::span<const double> signal, const std::vector<std::size_t>& k_candidates,
                          const vmd::VmdParams& params, const MicEstimator& est = {},
                          double tie_epsilon = 0.005);

struct FeParams {
  std::size_t m = 3;
  double r_factor = 0.3;            // r = r_factor * std(x) unless `r` is set
  std::optional<double> r;

  double tolerance_for(std::span<const double> x) const;
};

/// Fuzzy entropy ln(phi^m / phi^{m+1}) with exponential membership
/// exp(-ln 2 (d/r)^2) over baseline-removed delay vectors (Chebyshev distance).
double fuzzy_entropy(std::span<const double> x, const FeParams& p = {});

struct Imf {
  std::string source;  // price column the mode came from
  std::size_t mode = 0;  // 1-based position within its source
  std::size_t id = 0;    // 1-based global id across all sources
  std::vector<double> values;
  double fe = 0.0;
};

struct FeatureGroup {
  std::size_t id = 0;  // 1..10, bucket (id-1)/10 < fe <= id/10 (bucket 1 includes 0)
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> members;  // IMF ids
  std::vector<double> values;        // mean of member IMFs
};

struct FeatureGrouping {
  std::vector<FeatureGroup> groups;  // empty buckets omitted
  std::vector<std::string> warnings;
};

/// Bucket index 1..10 for a fuzzy-entropy value; values above 1 land in 10.
std::size_t fe_bucket(double fe);

/// Groups IMFs into 0.1-wide FE buckets; each New Feature is the mean of its members.
FeatureGrouping group_imfs(const std::vector<Imf>& imfs);

struct ReconstructionEntry {
  std::size_t rcf_id = 0;
  std::size_t nf_id = 0;
  std::vector<std::pair<std::string, double>> included;  // (indicator, C_NM)
};

struct Reconstruction {
  double threshold = 0.5;
  std::vector<std::string> indicators;
  std::vector<std::vector<double>> heatmap;  // [group][indicator] = C_NM
  std::vector<ReconstructionEntry> entries;
  std::vector<std::vector<double>> features;  // RCF series, one per group
  std::vector<std::string> warnings;
};

/// Indices of the indicators whose C_NM clears `threshold`.
std::vector<std::size_t> select_indicators(std::span<const double> correlations, double threshold);

/// Mean/std standardization fitted on the first `fit_rows` samples.
std::vector<double> zscore(std::span<const double> x, std::size_t fit_rows);

/// RCF_N = z( z(NF_N) * prod_M z(RMF_M * C_NM) ) over the included indicators.
/// Correlations are measured on the first `fit_rows` samples only.
Reconstruction reconstruct_features(const FeatureGrouping& grouping, const ingest::FeatureFrame& indicators,
                                    const std::vector<std::string>& indicator_names,
                                    const MicEstimator& est, double threshold, std::size_t fit_rows);

}  // namespace lfts::micfe
