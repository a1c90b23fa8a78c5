#include <cmath>

#include "lfts/train.hpp"

namespace lfts::train {

Metrics metrics(std::span<const double> truth, std::span<const double> pred) {
  if (truth.size() != pred.size())
    throw tensor::ShapeError("metrics: " + std::to_string(truth.size()) + " targets vs " +
                             std::to_string(pred.size()) + " predictions");
  if (truth.empty()) throw tensor::ShapeError("metrics: empty input");
  const double n = static_cast<double>(truth.size());
  Metrics m;
  double mean = 0.0;
  for (double v : truth) mean += v;
  mean /= n;
  double ss_res = 0.0, ss_tot = 0.0, abs_err = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double e = truth[i] - pred[i];
    abs_err += std::abs(e);
    ss_res += e * e;
    ss_tot += (truth[i] - mean) * (truth[i] - mean);
  }
  m.mae = abs_err / n;
  m.mse = ss_res / n;
  m.rmse = std::sqrt(m.mse);
  if (ss_tot > 0.0) m.r2 = 1.0 - ss_res / ss_tot;
  return m;
}

nlohmann::json to_json(const Metrics& m) {
  nlohmann::json j{{"mae", m.mae}, {"mse", m.mse}, {"rmse", m.rmse}};
  j["r2"] = m.r2 ? nlohmann::json(*m.r2) : nlohmann::json(nullptr);
  return j;
}

}  // namespace lfts::train
