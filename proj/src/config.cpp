#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "tsup/cli.hpp"

namespace tsup::cli {

namespace {

struct Field {
  std::string key;
  std::function<std::string(const Config&)> get;
  std::function<void(Config&, const std::string&)> set;
};

std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError(key + ": expected a finite number, got '" + v + "'");
  }
  return out;
}

bool parse_choice(const std::string& key, const std::string& v, const char* yes, const char* no) {
  if (v == yes) return true;
  if (v == no) return false;
  throw ConfigError(key + ": expected " + yes + " or " + no + ", got '" + v + "'");
}

template <class Ref>
Field size_field(std::string key, Ref ref) {
  return {key, [ref](const Config& c) { return std::to_string(ref(const_cast<Config&>(c))); },
          [ref, key](Config& c, const std::string& v) { ref(c) = parse_size(key, v); }};
}

template <class Ref>
Field double_field(std::string key, Ref ref) {
  return {key, [ref](const Config& c) { return format_double(ref(const_cast<Config&>(c))); },
          [ref, key](Config& c, const std::string& v) { ref(c) = parse_double(key, v); }};
}

template <class Ref>
Field string_field(std::string key, Ref ref) {
  return {key, [ref](const Config& c) { return ref(const_cast<Config&>(c)); },
          [ref](Config& c, const std::string& v) { ref(c) = v; }};
}

template <class Ref>
Field choice_field(std::string key, Ref ref, const char* yes, const char* no) {
  return {key, [ref, yes, no](const Config& c) { return std::string(ref(const_cast<Config&>(c)) ? yes : no); },
          [ref, key, yes, no](Config& c, const std::string& v) { ref(c) = parse_choice(key, v, yes, no); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(string_field("data.path", [](Config& c) -> std::string& { return c.data_path; }));
    f.push_back(choice_field("data.synthetic", [](Config& c) -> bool& { return c.data_synthetic; }, "true", "false"));
    f.push_back(size_field("data.channels", [](Config& c) -> std::size_t& { return c.data_channels; }));
    f.push_back(size_field("data.length", [](Config& c) -> std::size_t& { return c.data_length; }));
    f.push_back(size_field("data.components", [](Config& c) -> std::size_t& { return c.data_components; }));
    f.push_back(double_field("data.noise", [](Config& c) -> double& { return c.data_noise; }));
    f.push_back(size_field("model.d", [](Config& c) -> std::size_t& { return c.model.d; }));
    f.push_back(size_field("model.layers", [](Config& c) -> std::size_t& { return c.model.layers; }));
    f.push_back(size_field("model.heads", [](Config& c) -> std::size_t& { return c.model.heads; }));
    f.push_back(size_field("model.vocab", [](Config& c) -> std::size_t& { return c.model.vocab; }));
    f.push_back(size_field("model.prototypes", [](Config& c) -> std::size_t& { return c.model.prototypes; }));
    f.push_back(size_field("model.top_k", [](Config& c) -> std::size_t& { return c.model.top_k; }));
    f.push_back(
        size_field("model.compressed_tokens", [](Config& c) -> std::size_t& { return c.model.compressed_tokens; }));
    f.push_back(double_field("model.dropout", [](Config& c) -> double& { return c.model.dropout; }));
    f.push_back(size_field("model.horizon", [](Config& c) -> std::size_t& { return c.model.window.horizon; }));
    f.push_back(choice_field("model.enhancer", [](Config& c) -> bool& { return c.model.enhancer; }, "on", "off"));
    f.push_back(string_field("model.weights", [](Config& c) -> std::string& { return c.weights; }));
    for (std::size_t i = 0; i < model::kComponents.size(); ++i) {
      const std::string prefix = "component." + model::component_key(model::kComponents[i]);
      f.push_back({prefix + ".init",
                   [i](const Config& c) {
                     return std::string(c.model.components[i].init == model::Init::Pretrained ? "pretrained" : "random");
                   },
                   [i, prefix](Config& c, const std::string& v) {
                     c.model.components[i].init = parse_choice(prefix + ".init", v, "pretrained", "random")
                                                      ? model::Init::Pretrained
                                                      : model::Init::Random;
                   }});
      f.push_back({prefix + ".mode",
                   [i](const Config& c) {
                     return std::string(c.model.components[i].mode == model::Mode::Frozen ? "frozen" : "trainable");
                   },
                   [i, prefix](Config& c, const std::string& v) {
                     c.model.components[i].mode = parse_choice(prefix + ".mode", v, "frozen", "trainable")
                                                      ? model::Mode::Frozen
                                                      : model::Mode::Trainable;
                   }});
    }
    f.push_back(double_field("train.lr", [](Config& c) -> double& { return c.train.lr; }));
    f.push_back(size_field("train.epochs", [](Config& c) -> std::size_t& { return c.train.epochs; }));
    f.push_back(size_field("train.batch", [](Config& c) -> std::size_t& { return c.train.batch; }));
    f.push_back(size_field("train.patience", [](Config& c) -> std::size_t& { return c.train.patience; }));
    f.push_back(size_field("train.step", [](Config& c) -> std::size_t& { return c.train_step; }));
    f.push_back({"seed", [](const Config& c) { return std::to_string(c.seed); },
                 [](Config& c, const std::string& v) {
                   std::uint64_t out = 0;
                   const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
                   if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size()) {
                     throw ConfigError("seed: expected a non-negative integer, got '" + v + "'");
                   }
                   c.seed = out;
                 }});
    f.push_back(size_field("window.input_len", [](Config& c) -> std::size_t& { return c.model.window.input_len; }));
    f.push_back(size_field("window.patch", [](Config& c) -> std::size_t& { return c.model.window.patch; }));
    f.push_back(size_field("window.stride", [](Config& c) -> std::size_t& { return c.model.window.stride; }));
    f.push_back(size_field("probe.windows", [](Config& c) -> std::size_t& { return c.probe_windows; }));
    f.push_back(size_field("probe.language_tokens", [](Config& c) -> std::size_t& { return c.probe_language; }));
    return f;
  }();
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

void Config::validate() const {
  try {
    model.validate();
    train.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  if (data_synthetic && !data_path.empty()) throw ConfigError("data.path is set but data.synthetic = true");
  if (!data_synthetic && data_path.empty()) throw ConfigError("data.synthetic = false requires data.path");
  if (data_synthetic && (data_channels < 1 || data_components < 1)) {
    throw ConfigError("data.channels and data.components must be at least 1");
  }
  if (data_noise < 0.0) throw ConfigError("data.noise must be non-negative");
  if (train_step < 1) throw ConfigError("train.step must be at least 1");
  if (probe_windows < 1) throw ConfigError("probe.windows must be at least 1");
  if (model.any_pretrained() && weights.empty()) {
    std::string names;
    for (auto c : model::kComponents) {
      if (model.setting(c).init == model::Init::Pretrained) names += (names.empty() ? "" : ", ") + model::component_key(c);
    }
    throw ConfigError("pretrained components (" + names + ") require model.weights");
  }
}

Config parse_config(const std::string& text, const std::string& source) {
  std::map<std::string, const Field*> by_key;
  for (const auto& f : fields()) by_key[f.key] = &f;

  Config config;
  std::map<std::string, std::size_t> seen;
  std::istringstream in(text);
  std::string raw;
  for (std::size_t line_no = 1; std::getline(in, raw); ++line_no) {
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = by_key.find(key);
    if (it == by_key.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (const auto s = seen.find(key); s != seen.end()) {
      throw ConfigError(where + "'" + key + "' already set on line " + std::to_string(s->second));
    }
    seen[key] = line_no;
    try {
      it->second->set(config, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return config;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  Config config = parse_config(text.str(), path.string());
  const auto base = path.parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  resolve(config.data_path);
  resolve(config.weights);
  return config;
}

std::string serialize_config(const Config& config) {
  std::string out;
  for (const auto& f : fields()) {
    const std::string v = f.get(config);
    out += f.key + " =" + (v.empty() ? "" : " " + v) + "\n";
  }
  return out;
}

}  // namespace tsup::cli
