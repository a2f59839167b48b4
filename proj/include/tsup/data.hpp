#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tsup/error.hpp"
#include "tsup/mat.hpp"
#include "tsup/rng.hpp"

namespace tsup::data {

class DataError : public Error {
 public:
  enum class Kind { MissingFile, BadValue, Ragged, TooFewColumns, NonMonotone, Empty };

  DataError(Kind kind, std::size_t line, const std::string& what) : Error(what), kind_(kind), line_(line) {}
  Kind kind() const { return kind_; }
  /// 1-based line of the offending row (header is line 1); 0 when not tied to a line.
  std::size_t line() const { return line_; }

 private:
  Kind kind_;
  std::size_t line_;
};

/// Timestamped multichannel series; every channel has `length()` values.
struct TimeSeriesTable {
  std::vector<std::string> timestamps;
  std::vector<std::string> channel_names;
  std::vector<Vec> channels;

  std::size_t length() const { return timestamps.size(); }
  std::size_t num_channels() const { return channels.size(); }
  /// Rows [begin, end) as a new table.
  TimeSeriesTable slice(std::size_t begin, std::size_t end) const;
};

struct WindowSpec {
  std::size_t input_len = 336;
  std::size_t horizon = 96;
  std::size_t patch = 16;
  std::size_t stride = 8;

  void validate() const;
  std::size_t num_patches() const;
};

struct RevinStats {
  double mean = 0.0;
  double std = 1.0;
};

/// One channel's input/target pair.
struct SeriesWindow {
  std::size_t channel = 0;
  std::size_t start = 0;
  Vec input;
  Vec target;
};

TimeSeriesTable load_csv(const std::filesystem::path& path);
void write_csv(const TimeSeriesTable& table, const std::filesystem::path& path);

struct Splits {
  TimeSeriesTable train, val, test;
};

/// Contiguous split; train and val take floor(ratio · length), test takes the rest.
/// Every part must hold at least one window (input_len + horizon rows).
Splits chronological_split(const TimeSeriesTable& table, const WindowSpec& spec,
                           std::array<double, 3> ratios = {0.7, 0.1, 0.2});

/// Σ_j a_j sin(2π t / τ_j + φ_j) + noise per channel; a ∈ [0.5, 1.5],
/// integer τ ∈ [12, 168], φ ∈ [0, 2π).
TimeSeriesTable synth_sines(Rng& rng, std::size_t length, std::size_t channels, std::size_t components,
                            double noise_std);

/// Per-channel z-scoring fitted on one table (the training split).
struct ChannelScaler {
  Vec mean;
  Vec std;

  static ChannelScaler fit(const TimeSeriesTable& table);
  TimeSeriesTable transform(const TimeSeriesTable& table) const;
  double inverse(std::size_t channel, double z) const { return z * std[channel] + mean[channel]; }
};

constexpr double kRevinStdFloor = 1e-5;

/// Zero mean, unit (biased) std; std is floored at kRevinStdFloor.
Vec revin_normalize(std::span<const double> window, RevinStats& stats);
Vec revin_denormalize(std::span<const double> values, const RevinStats& stats);

/// N x P patches starting at 0, S, 2S, ...; the window is end-padded with its
/// last value when (L − P) is not a multiple of S.
Mat patchify(std::span<const double> window, const WindowSpec& spec);
/// Inverse of patchify for S ≤ P: the first patch, then the last S values of each following one.
Vec flatten_patches(const Mat& patches, std::size_t stride);

/// All windows with start step `step`, channel by channel.
std::vector<SeriesWindow> extract_windows(const TimeSeriesTable& table, const WindowSpec& spec, std::size_t step = 1);

}  // namespace tsup::data
