#include <cmath>

#include "lfts/train.hpp"

namespace lfts::train {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double general_dbeta(double x, double b) {
  const double a = std::abs(b - 2.0);
  const double da = b < 2.0 ? -1.0 : 1.0;
  const double L = std::log1p(x / a);
  const double E = std::expm1(0.5 * b * L);
  const double dL = (-x / (a * a)) * da / (1.0 + x / a);
  const double dratio = (da * b - a) / (b * b);
  return dratio * E + (a / b) * (1.0 + E) * (0.5 * L + 0.5 * b * dL);
}

}  // namespace

double beta_from_raw(double raw) { return kBetaMax - (kBetaMax - kBetaMin) * sigmoid(raw); }

double raw_from_beta(double beta) {
  if (!(beta > kBetaMin && beta < kBetaMax)) throw std::invalid_argument("beta must lie in (-8, 2)");
  const double s = (kBetaMax - beta) / (kBetaMax - kBetaMin);
  return std::log(s / (1.0 - s));
}

double beta_slope(double raw) {
  const double s = sigmoid(raw);
  return -(kBetaMax - kBetaMin) * s * (1.0 - s);
}

double adaptive_loss_raw(double z, double beta, double c) {
  const double x = (z / c) * (z / c);
  const double a = std::abs(beta - 2.0);
  return (a / beta) * (std::pow(x / a + 1.0, beta / 2.0) - 1.0);
}

double loss_l2(double z, double c) { return 0.5 * (z / c) * (z / c); }
double loss_charbonnier(double z, double c) { return std::sqrt((z / c) * (z / c) + 1.0) - 1.0; }
double loss_cauchy(double z, double c) { return std::log1p(0.5 * (z / c) * (z / c)); }
double loss_welsch(double z, double c) { return -std::expm1(-0.5 * (z / c) * (z / c)); }

double adaptive_loss_value(double z, double beta, double c, double delta) {
  if (std::abs(beta - 2.0) < delta) return loss_l2(z, c);
  if (std::abs(beta) < delta) return loss_cauchy(z, c);
  if (beta < -1.0 / delta) return loss_welsch(z, c);
  const double x = (z / c) * (z / c);
  const double a = std::abs(beta - 2.0);
  return (a / beta) * std::expm1(0.5 * beta * std::log1p(x / a));
}

double adaptive_loss_dz(double z, double beta, double c, double delta) {
  const double x = (z / c) * (z / c);
  const double dx = 2.0 * z / (c * c);
  double dfdx;
  if (std::abs(beta - 2.0) < delta)
    dfdx = 0.5;
  else if (std::abs(beta) < delta)
    dfdx = 0.5 / (1.0 + 0.5 * x);
  else if (beta < -1.0 / delta)
    dfdx = 0.5 * std::exp(-0.5 * x);
  else
    dfdx = 0.5 * std::exp((0.5 * beta - 1.0) * std::log1p(x / std::abs(beta - 2.0)));
  return dfdx * dx;
}

double adaptive_loss_dbeta(double z, double beta, double c, double delta) {
  const double x = (z / c) * (z / c);
  if (x == 0.0 || beta < -1.0 / delta) return 0.0;
  // Inside the closed-form bands the slope is taken from the band edges.
  if (std::abs(beta - 2.0) < delta) return general_dbeta(x, beta < 2.0 ? 2.0 - delta : 2.0 + delta);
  if (std::abs(beta) < delta) return 0.5 * (general_dbeta(x, -delta) + general_dbeta(x, delta));
  return general_dbeta(x, beta);
}

tensor::Var adaptive_loss(tensor::Var residual, tensor::Var beta_raw, const AdaptiveLossConfig& cfg) {
  if (!(cfg.c > 0.0)) throw std::invalid_argument("adaptive loss scale c must be positive");
  if (beta_raw.shape().size() != 1) throw tensor::ShapeError("beta_raw must be 1 x 1, got " + beta_raw.shape().str());
  const auto& z = residual.value();
  const double raw = beta_raw.item();
  const double beta = beta_from_raw(raw);
  const double n = static_cast<double>(z.size());
  double total = 0.0;
  for (double v : z) total += adaptive_loss_value(v, beta, cfg.c, cfg.delta);
  const double value = total / n - cfg.beta_penalty * beta;
  const AdaptiveLossConfig k = cfg;
  return tensor::custom(
      {residual, beta_raw}, {1, 1}, {value},
      [z, raw, beta, n, k](std::span<const double> go, std::vector<std::vector<double>*>& gin) {
        const double g = go[0];
        if (gin[0]) {
          auto& gz = *gin[0];
          for (std::size_t i = 0; i < z.size(); ++i) gz[i] += g * adaptive_loss_dz(z[i], beta, k.c, k.delta) / n;
        }
        if (gin[1]) {
          double db = 0.0;
          for (double v : z) db += adaptive_loss_dbeta(v, beta, k.c, k.delta);
          (*gin[1])[0] += g * (db / n - k.beta_penalty) * beta_slope(raw);
        }
      });
}

tensor::Var mse_loss(tensor::Var residual) { return tensor::mean_all(tensor::mul(residual, residual)); }

}  // namespace lfts::train
