#include "tsup/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace tsup::data {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

bool parse_finite(const std::string& text, double& out) {
  const std::string t = trim(text);
  if (t.empty()) return false;
  const char* first = t.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), out);
  return ec == std::errc() && ptr == t.data() + t.size() && std::isfinite(out);
}

std::string line_tag(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

}  // namespace

TimeSeriesTable TimeSeriesTable::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > length()) throw ContractError("slice: bad range");
  TimeSeriesTable out;
  out.channel_names = channel_names;
  out.timestamps.assign(timestamps.begin() + begin, timestamps.begin() + end);
  for (const Vec& c : channels) out.channels.emplace_back(c.begin() + begin, c.begin() + end);
  return out;
}

void WindowSpec::validate() const {
  if (patch == 0 || patch > input_len) {
    throw ContractError("WindowSpec: patch size " + std::to_string(patch) + " must be in [1, input length " +
                        std::to_string(input_len) + "]");
  }
  if (stride == 0) throw ContractError("WindowSpec: stride must be at least 1");
  if (horizon == 0) throw ContractError("WindowSpec: horizon must be at least 1");
}

std::size_t WindowSpec::num_patches() const {
  validate();
  return (input_len - patch + stride - 1) / stride + 1;
}

TimeSeriesTable load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataError::Kind::MissingFile, 0, "cannot open " + path.string());

  TimeSeriesTable table;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (!have_header) {
      if (fields.size() < 2) {
        throw DataError(DataError::Kind::TooFewColumns, lineno,
                        line_tag(path, lineno) + ": need a timestamp column and at least one channel");
      }
      width = fields.size();
      for (std::size_t i = 1; i < fields.size(); ++i) table.channel_names.push_back(trim(fields[i]));
      table.channels.assign(width - 1, Vec());
      have_header = true;
      continue;
    }
    if (fields.size() != width) {
      throw DataError(DataError::Kind::Ragged, lineno,
                      line_tag(path, lineno) + ": expected " + std::to_string(width) + " fields, found " +
                          std::to_string(fields.size()));
    }
    const std::string stamp = trim(fields[0]);
    if (!table.timestamps.empty() && !(table.timestamps.back() < stamp)) {
      throw DataError(DataError::Kind::NonMonotone, lineno,
                      line_tag(path, lineno) + ": timestamp '" + stamp + "' does not follow '" +
                          table.timestamps.back() + "'");
    }
    for (std::size_t i = 1; i < width; ++i) {
      double v = 0.0;
      if (!parse_finite(fields[i], v)) {
        throw DataError(DataError::Kind::BadValue, lineno,
                        line_tag(path, lineno) + ": non-numeric value '" + trim(fields[i]) + "' in column '" +
                            table.channel_names[i - 1] + "'");
      }
      table.channels[i - 1].push_back(v);
    }
    table.timestamps.push_back(stamp);
  }
  if (!have_header) throw DataError(DataError::Kind::Empty, 0, path.string() + ": empty file");
  return table;
}

void write_csv(const TimeSeriesTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "date";
  for (const auto& n : table.channel_names) out << ',' << n;
  out << '\n' << std::setprecision(17);
  for (std::size_t t = 0; t < table.length(); ++t) {
    out << table.timestamps[t];
    for (const Vec& c : table.channels) out << ',' << c[t];
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Splits chronological_split(const TimeSeriesTable& table, const WindowSpec& spec, std::array<double, 3> ratios) {
  const double sum = ratios[0] + ratios[1] + ratios[2];
  if (ratios[0] <= 0 || ratios[1] <= 0 || ratios[2] <= 0 || std::abs(sum - 1.0) > 1e-9) {
    throw ContractError("chronological_split: ratios must be positive and sum to 1");
  }
  const double n = static_cast<double>(table.length());
  const std::size_t n_train = static_cast<std::size_t>(std::floor(ratios[0] * n + 1e-9));
  const std::size_t n_val = static_cast<std::size_t>(std::floor(ratios[1] * n + 1e-9));
  const std::size_t n_test = table.length() - n_train - n_val;
  const std::size_t need = spec.input_len + spec.horizon;

  std::string short_parts;
  auto check = [&](const char* name, std::size_t len) {
    if (len < need) {
      if (!short_parts.empty()) short_parts += ", ";
      short_parts += std::string(name) + " (" + std::to_string(len) + " rows)";
    }
  };
  check("train", n_train);
  check("validation", n_val);
  check("test", n_test);
  if (!short_parts.empty()) {
    throw DataError(DataError::Kind::Empty, 0,
                    "split too short for one window of " + std::to_string(need) + " rows: " + short_parts);
  }
  return {table.slice(0, n_train), table.slice(n_train, n_train + n_val), table.slice(n_train + n_val, table.length())};
}

TimeSeriesTable synth_sines(Rng& rng, std::size_t length, std::size_t channels, std::size_t components,
                            double noise_std) {
  if (components == 0) throw ContractError("synth_sines: need at least one component");
  if (noise_std < 0) throw ContractError("synth_sines: negative noise");
  TimeSeriesTable t;
  for (std::size_t i = 0; i < length; ++i) {
    std::ostringstream s;
    s << std::setw(8) << std::setfill('0') << i;
    t.timestamps.push_back(s.str());
  }
  for (std::size_t c = 0; c < channels; ++c) {
    t.channel_names.push_back("ch" + std::to_string(c));
    struct Wave {
      double amp, period, phase;
    };
    std::vector<Wave> waves;
    for (std::size_t j = 0; j < components; ++j) {
      const double amp = rng.uniform(0.5, 1.5);
      const double period = 12.0 + static_cast<double>(rng.below(157));
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      waves.push_back({amp, period, phase});
    }
    Vec values(length);
    for (std::size_t i = 0; i < length; ++i) {
      double v = 0.0;
      for (const auto& w : waves) v += w.amp * std::sin(2.0 * std::numbers::pi * static_cast<double>(i) / w.period + w.phase);
      values[i] = v;
    }
    if (noise_std > 0) {
      for (double& v : values) v += noise_std * rng.normal();
    }
    t.channels.push_back(std::move(values));
  }
  return t;
}

ChannelScaler ChannelScaler::fit(const TimeSeriesTable& table) {
  ChannelScaler s;
  for (const Vec& c : table.channels) {
    if (c.empty()) throw ContractError("ChannelScaler: empty channel");
    double mean = 0.0;
    for (double v : c) mean += v;
    mean /= static_cast<double>(c.size());
    double var = 0.0;
    for (double v : c) var += (v - mean) * (v - mean);
    var /= static_cast<double>(c.size());
    s.mean.push_back(mean);
    s.std.push_back(std::max(std::sqrt(var), kRevinStdFloor));
  }
  return s;
}

TimeSeriesTable ChannelScaler::transform(const TimeSeriesTable& table) const {
  if (table.num_channels() != mean.size()) throw ContractError("ChannelScaler: channel count mismatch");
  TimeSeriesTable out = table;
  for (std::size_t c = 0; c < out.num_channels(); ++c)
    for (double& v : out.channels[c]) v = (v - mean[c]) / std[c];
  return out;
}

Vec revin_normalize(std::span<const double> window, RevinStats& stats) {
  if (window.size() < 2) throw ContractError("revin_normalize: need at least two values");
  double mean = 0.0;
  for (double v : window) mean += v;
  mean /= static_cast<double>(window.size());
  double var = 0.0;
  for (double v : window) var += (v - mean) * (v - mean);
  var /= static_cast<double>(window.size());
  stats.mean = mean;
  stats.std = std::max(std::sqrt(var), kRevinStdFloor);
  Vec out(window.size());
  for (std::size_t i = 0; i < window.size(); ++i) out[i] = (window[i] - mean) / stats.std;
  return out;
}

Vec revin_denormalize(std::span<const double> values, const RevinStats& stats) {
  Vec out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i] * stats.std + stats.mean;
  return out;
}

Mat patchify(std::span<const double> window, const WindowSpec& spec) {
  if (spec.patch > window.size() || spec.patch == 0) {
    throw ContractError("patchify: patch size " + std::to_string(spec.patch) + " exceeds window length " +
                        std::to_string(window.size()));
  }
  if (spec.stride == 0) throw ContractError("patchify: stride must be at least 1");
  const std::size_t len = window.size();
  const std::size_t n = (len - spec.patch + spec.stride - 1) / spec.stride + 1;
  Mat out(n, spec.patch);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < spec.patch; ++j) {
      const std::size_t t = i * spec.stride + j;
      out(i, j) = window[std::min(t, len - 1)];
    }
  return out;
}

Vec flatten_patches(const Mat& patches, std::size_t stride) {
  if (stride == 0 || stride > patches.cols()) throw ContractError("flatten_patches: need 1 ≤ stride ≤ patch size");
  Vec out;
  if (patches.rows() == 0) return out;
  out.assign(patches.row(0).begin(), patches.row(0).end());
  for (std::size_t i = 1; i < patches.rows(); ++i) {
    const auto r = patches.row(i);
    out.insert(out.end(), r.end() - static_cast<std::ptrdiff_t>(stride), r.end());
  }
  return out;
}

std::vector<SeriesWindow> extract_windows(const TimeSeriesTable& table, const WindowSpec& spec, std::size_t step) {
  spec.validate();
  if (step == 0) throw ContractError("extract_windows: step must be at least 1");
  std::vector<SeriesWindow> out;
  const std::size_t need = spec.input_len + spec.horizon;
  if (table.length() < need) return out;
  for (std::size_t c = 0; c < table.num_channels(); ++c) {
    const Vec& s = table.channels[c];
    for (std::size_t start = 0; start + need <= table.length(); start += step) {
      SeriesWindow w;
      w.channel = c;
      w.start = start;
      w.input.assign(s.begin() + start, s.begin() + start + spec.input_len);
      w.target.assign(s.begin() + start + spec.input_len, s.begin() + start + need);
      out.push_back(std::move(w));
    }
  }
  return out;
}

}  // namespace tsup::data
