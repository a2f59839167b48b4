#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "tsup/error.hpp"
#include "tsup/model.hpp"
#include "tsup/train.hpp"

namespace tsup::cli {

/// Bad configuration text or command-line usage; maps to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct Config {
  std::string data_path;
  bool data_synthetic = true;
  std::size_t data_channels = 3;
  std::size_t data_length = 4400;
  std::size_t data_components = 3;
  double data_noise = 0.05;

  model::ModelConfig model;
  std::string weights;  // model.weights

  train::TrainConfig train;
  std::size_t train_step = 4;  // stride between training windows

  std::uint64_t seed = 2021;

  std::size_t probe_windows = 200;
  std::size_t probe_language = 64;

  /// Cross-field checks; throws ConfigError.
  void validate() const;
};

/// `key = value` lines; `#` starts a comment; blank lines are ignored.
/// Unknown or repeated keys are errors. Keys not given keep their defaults.
Config parse_config(const std::string& text, const std::string& source = "<config>");
/// Reads and parses a file; relative data and weight paths resolve against
/// the file's directory.
Config load_config(const std::filesystem::path& path);
/// Every key in a fixed order, one per line.
std::string serialize_config(const Config& config);

/// Names of all recognised keys, in serialization order.
std::vector<std::string> config_keys();

/// Runs one command line (without the program name). Returns 0 on success,
/// 1 on a runtime failure and 2 on a usage or configuration error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tsup::cli
