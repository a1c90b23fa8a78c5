#include <algorithm>
#include <cmath>

#include "lfts/train.hpp"

namespace lfts::train {

void GcAdamConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
    throw std::invalid_argument("Adam betas must lie in (0, 1)");
  if (!(eps > 0.0)) throw std::invalid_argument("Adam eps must be positive");
  if (clip_norm && !(*clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be positive");
}

void gc_inplace(std::span<double> grad, std::size_t rows, std::size_t cols) {
  if (grad.size() != rows * cols) throw tensor::ShapeError("gc: gradient size does not match its shape");
  if (rows == 0) return;
  const double inv = 1.0 / static_cast<double>(rows);
  for (std::size_t c = 0; c < cols; ++c) {
    double mu = 0.0;
    for (std::size_t r = 0; r < rows; ++r) mu += grad[r * cols + c];
    mu *= inv;
    for (std::size_t r = 0; r < rows; ++r) grad[r * cols + c] -= mu;
  }
}

std::vector<double> gc(std::span<const double> grad, std::size_t rows, std::size_t cols) {
  std::vector<double> out(grad.begin(), grad.end());
  gc_inplace(out, rows, cols);
  return out;
}

GcAdam::GcAdam(const GcAdamConfig& cfg, const tensor::ParameterStore& store) : cfg_(cfg) {
  cfg_.validate();
  for (std::size_t i = 0; i < store.size(); ++i) {
    m_.emplace_back(store[i].value.size(), 0.0);
    v_.emplace_back(store[i].value.size(), 0.0);
  }
}

void GcAdam::step(tensor::ParameterStore& store, tensor::GradientSet& grads) {
  if (grads.grads.size() != store.size() || m_.size() != store.size())
    throw tensor::ContractError("optimizer step: parameter and gradient lists differ");
  for (std::size_t i = 0; i < store.size(); ++i) {
    for (double g : grads.grads[i])
      if (!std::isfinite(g)) throw NonFiniteError("non-finite gradient in parameter '" + store[i].name + "'");
  }

  if (cfg_.gc_enabled) {
    for (std::size_t i = 0; i < store.size(); ++i) {
      const tensor::Parameter& p = store[i];
      if (p.rank() < 2 || !p.centralize) continue;
      auto& g = grads.grads[i];
      gc_inplace(g, p.dims[0], p.dims[1]);
      // The update direction must sit on the zero-column-mean hyperplane.
      double scale = 0.0;
      for (double v : g) scale = std::max(scale, std::abs(v));
      for (std::size_t c = 0; c < p.dims[1]; ++c) {
        double mu = 0.0;
        for (std::size_t r = 0; r < p.dims[0]; ++r) mu += g[r * p.dims[1] + c];
        if (std::abs(mu / static_cast<double>(p.dims[0])) > 1e-12 * (1.0 + scale))
          throw tensor::ContractError("gradient centralization left a nonzero column mean in '" + p.name + "'");
      }
    }
  }

  double sq = 0.0;
  for (const auto& g : grads.grads)
    for (double v : g) sq += v * v;
  last_norm_ = std::sqrt(sq);
  if (cfg_.clip_norm && last_norm_ > *cfg_.clip_norm) {
    const double s = *cfg_.clip_norm / last_norm_;
    grads.scale(s);
  }

  ++t_;
  const double b1t = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double b2t = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& value = store[i].value;
    const auto& g = grads.grads[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < value.size(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      const double mhat = m[k] / b1t;
      const double vhat = v[k] / b2t;
      value[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace lfts::train
