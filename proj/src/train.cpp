#include "tsup/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "tsup/error.hpp"

namespace tsup::train {

namespace {

void require_same_length(std::span<const double> a, std::span<const double> b, const char* who) {
  if (a.empty() || a.size() != b.size()) {
    throw ContractError(std::string(who) + ": lengths " + std::to_string(a.size()) + " and " +
                        std::to_string(b.size()) + " must be equal and nonzero");
  }
}

double sorted_sum(Vec v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kDropoutStream = 2;

}  // namespace

double mse(std::span<const double> pred, std::span<const double> target) {
  require_same_length(pred, target, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

double mae(std::span<const double> pred, std::span<const double> target) {
  require_same_length(pred, target, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ContractError("train: learning rate must be finite and non-negative");
  if (patience < 1) throw ContractError("train: patience must be at least 1");
  if (batch < 1) throw ContractError("train: batch size must be at least 1");
}

std::string RunHistory::jsonl(bool with_seconds) const {
  std::string out;
  for (const auto& e : epochs) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["train_mse"] = e.train_mse;
    j["val_mse"] = e.val_mse;
    j["val_mae"] = e.val_mae;
    if (with_seconds) j["seconds"] = e.seconds;
    out += j.dump() + "\n";
  }
  return out;
}

Vec Persistence::forecast(std::span<const double> input) {
  if (input.empty()) throw ContractError("persistence: empty input");
  return Vec(horizon_, input.back());
}

Metrics evaluate(Forecaster& f, const std::vector<data::SeriesWindow>& windows) {
  if (windows.empty()) throw ContractError("evaluate: no windows");
  Vec sq, ab;
  sq.reserve(windows.size());
  ab.reserve(windows.size());
  for (const auto& w : windows) {
    const Vec p = f.forecast(w.input);
    sq.push_back(mse(p, w.target));
    ab.push_back(mae(p, w.target));
  }
  const double n = static_cast<double>(windows.size());
  return {sorted_sum(sq) / n, sorted_sum(ab) / n, windows.size()};
}

Metrics evaluate(model::TimeSup& net, const std::vector<data::SeriesWindow>& windows) {
  NetForecaster f(net);
  return evaluate(f, windows);
}

Metrics persistence_baseline(const std::vector<data::SeriesWindow>& windows, const data::WindowSpec& spec) {
  Persistence p(spec.horizon);
  return evaluate(p, windows);
}

PreparedData prepare(const data::TimeSeriesTable& table, const data::WindowSpec& spec, std::size_t train_step,
                     std::size_t eval_step) {
  const auto splits = data::chronological_split(table, spec);
  PreparedData out;
  out.scaler = data::ChannelScaler::fit(splits.train);
  out.train = data::extract_windows(out.scaler.transform(splits.train), spec, train_step);
  out.val = data::extract_windows(out.scaler.transform(splits.val), spec, eval_step);
  out.test = data::extract_windows(out.scaler.transform(splits.test), spec, eval_step);
  return out;
}

RunHistory fit(model::TimeSup& net, const std::vector<data::SeriesWindow>& train_windows,
               const std::vector<data::SeriesWindow>& val_windows, const TrainConfig& config,
               const EpochCallback& on_epoch) {
  config.validate();
  if (train_windows.empty()) throw ContractError("train: training split has no windows");
  if (val_windows.empty()) throw ContractError("train: validation split has no windows");

  ParamSet& params = net.params();
  params.zero_grads();
  AdamState adam;
  RunHistory history;
  auto best = params.snapshot();
  double best_val = INFINITY;
  std::size_t since_best = 0;
  const std::size_t horizon = net.config().horizon();

  std::vector<std::size_t> order(train_windows.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(RngState{config.seed, kShuffleStream}.split(epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    Rng dropout(RngState{config.seed, kDropoutStream}.split(epoch));

    double epoch_sq = 0.0;
    for (std::size_t b0 = 0, batch_index = 0; b0 < order.size(); b0 += config.batch, ++batch_index) {
      const std::size_t b1 = std::min(order.size(), b0 + config.batch);
      const double scale = 1.0 / static_cast<double>((b1 - b0) * horizon);
      net.begin_batch();
      double sq = 0.0;
      for (std::size_t k = b0; k < b1; ++k) {
        const auto& w = train_windows[order[k]];
        const Vec pred = net.predict(w.input, &dropout);
        Vec grad(horizon);
        for (std::size_t h = 0; h < horizon; ++h) {
          const double e = pred[h] - w.target[h];
          sq += e * e;
          grad[h] = 2.0 * e * scale;
        }
        net.backward(grad);
      }
      if (!std::isfinite(sq)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index));
      }
      net.finish_batch();
      adam_step(params, adam, config.lr);
      epoch_sq += sq;
    }

    const Metrics val = evaluate(net, val_windows);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_mse = epoch_sq / static_cast<double>(order.size() * horizon);
    rec.val_mse = val.mse;
    rec.val_mae = val.mae;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (val.mse < best_val) {
      best_val = val.mse;
      history.best_epoch = epoch;
      best = params.snapshot();
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  params.restore(best);
  net.begin_batch();
  return history;
}

}  // namespace tsup::train
