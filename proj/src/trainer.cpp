#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include "lfts/parallel.hpp"
#include "lfts/train.hpp"

namespace lfts::train {

namespace {

constexpr const char* kBetaParam = "loss.beta_raw";

std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return tensor::splitmix64(seed ^ tensor::splitmix64((a << 32) ^ b ^ 0xa5a5a5a5ULL));
}

}  // namespace

bool EarlyStopping::update(std::size_t epoch, double val_loss) {
  improved_ = best_epoch_ == 0 || val_loss < best_;
  if (improved_) {
    best_ = val_loss;
    best_epoch_ = epoch;
    stale_ = 0;
    return false;
  }
  ++stale_;
  return stale_ >= patience_;
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json j;
  auto& e = j["epochs"] = nlohmann::json::array();
  for (const auto& r : epochs)
    e.push_back({{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss}, {"beta", r.beta}});
  j["best_epoch"] = best_epoch;
  j["best_val_loss"] = best_val_loss;
  j["stop_reason"] = stop_reason;
  if (!diagnostic.empty()) j["diagnostic"] = diagnostic;
  j["train_windows"] = train_windows;
  j["val_windows"] = val_windows;
  return j;
}

void TrainReport::write_loss_csv(std::ostream& out) const {
  out << "epoch,train_loss,val_loss,beta\n";
  char buf[128];
  for (const auto& r : epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss, r.val_loss, r.beta);
    out << buf;
  }
}

std::vector<ingest::TimeMark> sample_marks(const ingest::WindowedDataset& data, std::size_t s) {
  const std::size_t begin = data.starts.at(s);
  return {data.marks.begin() + static_cast<std::ptrdiff_t>(begin),
          data.marks.begin() + static_cast<std::ptrdiff_t>(begin + data.input_len + data.horizon)};
}

std::vector<std::vector<double>> predict(const model::Model& model, const ingest::WindowedDataset& data,
                                         std::size_t threads, std::size_t begin, std::size_t end) {
  end = std::min(end, data.samples());
  begin = std::min(begin, end);
  std::vector<std::vector<double>> out(end - begin);
  parallel_for(out.size(), threads, [&](std::size_t i) {
    tensor::Graph g(false);
    const auto x = data.input(begin + i);
    const auto marks = sample_marks(data, begin + i);
    out[i] = model.forward(g, x, marks).value();
  });
  return out;
}

std::vector<std::vector<double>> persistence_forecast(const ingest::WindowedDataset& data) {
  std::vector<std::vector<double>> out;
  for (std::size_t s = 0; s < data.samples(); ++s)
    out.emplace_back(data.horizon, data.target[data.starts[s] + data.input_len - 1]);
  return out;
}

TrainReport train_loop(model::Model& model, const ingest::WindowedDataset& train, const TrainConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  if (cfg.batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (!(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0)) throw std::invalid_argument("validation fraction must be in (0, 1)");
  const std::size_t n = train.samples();
  const auto n_val = static_cast<std::size_t>(std::ceil(cfg.val_fraction * static_cast<double>(n)));
  if (n < 2 || n_val >= n)
    throw ingest::SizingError("need at least two training windows to carve a validation tail, got " + std::to_string(n));
  const std::size_t n_tr = n - n_val;
  if (train.horizon != model.config().pred_len || train.input_len != model.config().input_len)
    throw ingest::SizingError("dataset windows do not match the model's input/prediction lengths");

  auto& store = model.params();
  tensor::Parameter* beta_param = nullptr;
  if (cfg.loss == LossKind::Adaptive) {
    beta_param = store.find(kBetaParam);
    if (!beta_param) {
      beta_param = &store.add(kBetaParam, {});
      beta_param->value[0] = raw_from_beta(cfg.adaptive.beta_init);
    }
  }
  GcAdam opt(cfg.optimizer, store);

  TrainReport report;
  report.train_windows = n_tr;
  report.val_windows = n_val;
  EarlyStopping stopper(cfg.patience);
  auto best = store.snapshot();
  const std::size_t per_epoch = cfg.samples_per_epoch ? std::min(cfg.samples_per_epoch, n_tr) : n_tr;
  const std::size_t H = train.horizon;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n_tr);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const tensor::CounterRng shuffle(cfg.seed ^ 0x5f3759dfULL, epoch);
    for (std::size_t i = n_tr; i-- > 1;) std::swap(order[i], order[shuffle.bits(i) % (i + 1)]);
    order.resize(per_epoch);

    double loss_sum = 0.0;
    bool diverged = false;
    for (std::size_t b0 = 0; b0 < per_epoch && !diverged; b0 += cfg.batch_size) {
      const std::size_t bs = std::min(cfg.batch_size, per_epoch - b0);
      std::vector<tensor::GradientSet> slots(bs, tensor::GradientSet::zeros_like(store));
      std::vector<double> losses(bs, 0.0);
      parallel_for(bs, cfg.threads, [&](std::size_t i) {
        const std::size_t s = order[b0 + i];
        tensor::Graph g(true, mix(cfg.seed, epoch, s));
        const auto x = train.input(s);
        const auto marks = sample_marks(train, s);
        tensor::Var pred = model.forward(g, x, marks);
        tensor::Var target = g.constant({H, 1}, train.targets(s));
        tensor::Var residual = tensor::sub(pred, target);
        tensor::Var loss;
        if (cfg.loss == LossKind::Adaptive) {
          tensor::Var raw = cfg.adaptive.learn_beta ? g.param(*beta_param)
                                                    : g.constant({1, 1}, beta_param->value[0]);
          loss = adaptive_loss(residual, raw, cfg.adaptive);
        } else {
          loss = mse_loss(residual);
        }
        g.backward(loss);
        g.collect(store, slots[i]);
        losses[i] = loss.item();
      });
      tensor::GradientSet total = std::move(slots[0]);
      for (std::size_t i = 1; i < bs; ++i) total.accumulate(slots[i]);
      total.scale(1.0 / static_cast<double>(bs));
      for (double l : losses) loss_sum += l;
      if (!std::isfinite(loss_sum)) {
        diverged = true;
        report.diagnostic = "training loss became non-finite in epoch " + std::to_string(epoch);
        break;
      }
      try {
        opt.step(store, total);
      } catch (const NonFiniteError& e) {
        diverged = true;
        report.diagnostic = std::string(e.what()) + " in epoch " + std::to_string(epoch);
      }
    }
    if (diverged) {
      report.stop_reason = "diverged";
      break;
    }

    const auto val_pred = predict(model, train, cfg.threads, n_tr, n);
    double se = 0.0;
    for (std::size_t i = 0; i < n_val; ++i) {
      const auto y = train.targets(n_tr + i);
      for (std::size_t h = 0; h < H; ++h) se += (val_pred[i][h] - y[h]) * (val_pred[i][h] - y[h]);
    }
    const double val_loss = se / static_cast<double>(n_val * H);
    if (!std::isfinite(val_loss)) {
      report.stop_reason = "diverged";
      report.diagnostic = "validation loss became non-finite in epoch " + std::to_string(epoch);
      break;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(per_epoch);
    rec.val_loss = val_loss;
    rec.beta = beta_param ? beta_from_raw(beta_param->value[0]) : 2.0;
    report.epochs.push_back(rec);

    const bool stop = stopper.update(epoch, val_loss);
    if (stopper.improved()) best = store.snapshot();
    if (stop) {
      report.stop_reason = "patience";
      break;
    }
  }
  if (report.stop_reason.empty()) report.stop_reason = "max_epochs";
  store.restore(best);
  report.best_epoch = stopper.best_epoch();
  report.best_val_loss = stopper.best();
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace lfts::train
