#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tsup/data.hpp"
#include "tsup/model.hpp"

namespace tsup::train {

double mse(std::span<const double> pred, std::span<const double> target);
double mae(std::span<const double> pred, std::span<const double> target);

struct TrainConfig {
  double lr = 1e-3;
  std::size_t epochs = 20;
  std::size_t batch = 32;
  std::size_t patience = 5;
  std::uint64_t seed = 2021;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 0-based
  double train_mse = 0.0;
  double val_mse = 0.0;
  double val_mae = 0.0;
  double seconds = 0.0;
};

struct RunHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;

  /// One JSON object per line: epoch, train_mse, val_mse, val_mae, seconds.
  std::string jsonl(bool with_seconds = true) const;
};

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
  std::size_t windows = 0;
};

/// Anything that maps an input window to `horizon` values.
class Forecaster {
 public:
  virtual ~Forecaster() = default;
  virtual Vec forecast(std::span<const double> input) = 0;
};

/// Repeats the last observed value.
class Persistence : public Forecaster {
 public:
  explicit Persistence(std::size_t horizon) : horizon_(horizon) {}
  Vec forecast(std::span<const double> input) override;

 private:
  std::size_t horizon_;
};

/// The network in evaluation mode (no dropout).
class NetForecaster : public Forecaster {
 public:
  explicit NetForecaster(model::TimeSup& net) : net_(net) { net_.begin_batch(); }
  Vec forecast(std::span<const double> input) override { return net_.predict(input); }

 private:
  model::TimeSup& net_;
};

/// Mean squared / absolute error over every window and horizon step. The
/// per-window errors are summed in sorted order, so the result does not
/// depend on window order.
Metrics evaluate(Forecaster& f, const std::vector<data::SeriesWindow>& windows);
Metrics evaluate(model::TimeSup& net, const std::vector<data::SeriesWindow>& windows);
Metrics persistence_baseline(const std::vector<data::SeriesWindow>& windows, const data::WindowSpec& spec);

/// Windows of the three chronological splits, z-scored per channel with
/// training-split statistics.
struct PreparedData {
  data::ChannelScaler scaler;
  std::vector<data::SeriesWindow> train, val, test;
};
PreparedData prepare(const data::TimeSeriesTable& table, const data::WindowSpec& spec, std::size_t train_step = 1,
                     std::size_t eval_step = 1);

/// Called after every epoch; useful for progress output.
using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch Adam on the MSE of normalized forecasts. Shuffling and dropout
/// draw from streams of (seed, epoch). Stops after `patience` epochs without a
/// validation improvement and leaves the parameters of the best epoch in place.
RunHistory fit(model::TimeSup& net, const std::vector<data::SeriesWindow>& train_windows,
               const std::vector<data::SeriesWindow>& val_windows, const TrainConfig& config,
               const EpochCallback& on_epoch = {});

}  // namespace tsup::train
