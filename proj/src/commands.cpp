#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "tsup/cli.hpp"
#include "tsup/diagnostics.hpp"
#include "tsup/theory.hpp"

namespace tsup::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kDataStream = 0x64617461;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_short(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

data::TimeSeriesTable load_table(const Config& c) {
  if (!c.data_synthetic) return data::load_csv(c.data_path);
  Rng rng(c.seed, kDataStream);
  return data::synth_sines(rng, c.data_length, c.data_channels, c.data_components, c.data_noise);
}

/// Fresh parameters per the config; `checkpoint` then overwrites every tensor.
ParamSet build_params(const Config& c, const std::string& checkpoint = "") {
  std::optional<std::vector<Tensor>> pretrained;
  if (c.model.any_pretrained()) pretrained = read_tsupw1(c.weights);
  Rng rng(c.seed);
  ParamSet ps = model::init_model(c.model, rng, pretrained ? &*pretrained : nullptr);
  if (!checkpoint.empty()) model::load_tensors(ps, read_tsupw1(checkpoint), true);
  return ps;
}

const std::vector<data::SeriesWindow>& pick_split(const train::PreparedData& d, const std::string& split) {
  if (split == "train") return d.train;
  if (split == "val") return d.val;
  return d.test;
}

/// `count` windows spread evenly over the split.
std::vector<data::SeriesWindow> spread(const std::vector<data::SeriesWindow>& windows, std::size_t count) {
  if (count >= windows.size()) return windows;
  std::vector<data::SeriesWindow> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(windows[i * windows.size() / count]);
  return out;
}

ordered_json evr_object(const diag::EvrReport& r) { return ordered_json::parse(diag::evr_json(r)); }

// ---- theorem1

struct Theorem1Args {
  std::size_t m = 256, n = 256, trials = 100000, conc_trials = 20000;
  double sigma_ts = 0.1, sigma_l = 0.1;
  std::uint64_t seed = 2021;
  std::string out;
};

int cmd_theorem1(const Theorem1Args& a, std::ostream& out) {
  if (a.trials < 100) throw ConfigError("--trials must be at least 100");
  if (a.conc_trials < 1000) throw ConfigError("--conc-trials must be at least 1000");
  if (a.sigma_ts < 0.0 || a.sigma_l < 0.0) throw ConfigError("sigmas must be non-negative");
  const std::size_t ambient = std::max<std::size_t>({a.m, a.n, 1});
  const auto ts = theory::aligned_spec(ambient, a.m, a.sigma_ts);
  const auto l = theory::aligned_spec(ambient, a.n, a.sigma_l);
  const double closed = theory::closed_form_cosine(ts, l);
  const auto mc = theory::monte_carlo_cosine(ts, l, a.trials, RngState{a.seed, 0});

  const std::vector<std::size_t> ms{64, 256, 1024, 4096};
  theory::ModalitySpec tmpl{Vec{0.0}, 1.0, 0};
  const auto curve = theory::concentration_curve(tmpl, ms, a.conc_trials, RngState{a.seed, 1});

  const double deviation = std::abs(mc.mean - closed);
  const double tolerance = 3.0 * mc.std_error + 0.02;
  const bool match = deviation <= tolerance;

  ordered_json j = ordered_json::parse(theory::summary_json(closed, mc, curve.slope));
  j["m"] = a.m;
  j["n"] = a.n;
  j["sigma_ts"] = a.sigma_ts;
  j["sigma_l"] = a.sigma_l;
  j["trials"] = a.trials;
  j["seed"] = a.seed;
  j["deviation"] = deviation;
  j["tolerance"] = tolerance;
  j["match"] = match;
  ordered_json ratios = ordered_json::array();
  for (std::size_t i = 1; i < curve.rows.size(); ++i) ratios.push_back(curve.rows[i].rel_fluct / curve.rows[i - 1].rel_fluct);
  j["fluctuation_ratios"] = ratios;

  make_dir(a.out);
  write_text(fs::path(a.out) / "theorem1.json", j.dump(2) + "\n");
  write_text(fs::path(a.out) / "concentration.csv", theory::concentration_csv(curve));
  out << "theorem1: closed_form=" << fmt_short(closed) << " mc_mean=" << fmt_short(mc.mean)
      << " stderr=" << fmt_short(mc.std_error) << " slope=" << fmt_short(curve.slope)
      << (match ? " match" : " MISMATCH") << "\n";
  return match ? 0 : 1;
}

// ---- pca-probe

int cmd_pca_probe(const Config& c, const std::string& split, const std::string& stage, double threshold,
                  const std::string& checkpoint, const std::string& out_path, std::ostream& out) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("--threshold must lie in (0, 1]");
  ParamSet ps = build_params(c, checkpoint);
  Mat tokens;
  if (stage == "language") {
    tokens = ps.at("wte").value;
  } else {
    const auto d = train::prepare(load_table(c), c.model.window, c.train_step, 1);
    const auto windows = spread(pick_split(d, split), c.probe_windows);
    model::TimeSup net(c.model, ps);
    auto probe = diag::probe_windows(net, windows, 1, c.seed, 0);
    tokens = stage == "raw" ? std::move(probe.raw) : std::move(probe.fused);
  }
  const auto report = diag::intrinsic_dimension(tokens, threshold);
  ordered_json j;
  j["stage"] = stage;
  j["split"] = stage == "language" ? "" : split;
  j["rows"] = tokens.rows();
  j["cols"] = tokens.cols();
  j["report"] = evr_object(report);
  write_text(out_path, j.dump(2) + "\n");
  out << "pca-probe: stage=" << stage << " rows=" << tokens.rows() << " intrinsic_dim=" << report.intrinsic_dim
      << " threshold=" << fmt_short(threshold) << (report.degenerate ? " degenerate" : "") << "\n";
  return 0;
}

// ---- diagnose

int cmd_diagnose(const Config& c, const std::string& split, const std::string& checkpoint, const std::string& out_dir,
                 std::ostream& out) {
  make_dir(out_dir);
  ParamSet ps = build_params(c, checkpoint);
  const auto d = train::prepare(load_table(c), c.model.window, c.train_step, 1);
  const auto windows = spread(pick_split(d, split), c.probe_windows);
  model::TimeSup net(c.model, ps);
  const auto probe = diag::probe_windows(net, windows, c.probe_language, c.seed);
  const auto reports = diag::trace_report(probe.trace);

  ordered_json align;
  align["enhancer"] = c.model.enhancer;
  align["layers"] = ordered_json::array();
  for (const auto& r : reports) {
    ordered_json row;
    row["layer"] = r.layer;
    row["centroid_cosine"] = r.alignment.centroid_cosine;
    row["collapse_ratio"] = r.alignment.collapse_ratio;
    align["layers"].push_back(row);
  }
  ordered_json manifold;
  manifold["windows"] = windows.size();
  manifold["raw"] = evr_object(diag::intrinsic_dimension(probe.raw));
  manifold["fused"] = evr_object(diag::intrinsic_dimension(probe.fused));

  write_text(fs::path(out_dir) / "cone_report.json", diag::trace_json(reports) + "\n");
  write_text(fs::path(out_dir) / "alignment.json", align.dump(2) + "\n");
  write_text(fs::path(out_dir) / "manifold.json", manifold.dump(2) + "\n");
  diag::dump_embeddings(probe.trace, fs::path(out_dir) / "embeddings.csv");
  const auto& last = reports.back();
  out << "diagnose: layers=" << reports.size() << " final cross_mean=" << fmt_short(last.cross.mean)
      << " centroid_cosine=" << fmt_short(last.alignment.centroid_cosine)
      << " collapse_ratio=" << fmt_short(last.alignment.collapse_ratio) << "\n";
  return 0;
}

// ---- train

ordered_json metrics_object(const train::Metrics& m) {
  ordered_json j;
  j["mse"] = m.mse;
  j["mae"] = m.mae;
  j["windows"] = m.windows;
  return j;
}

int cmd_train(const Config& c, const std::string& out_dir, bool quiet, std::ostream& out) {
  make_dir(out_dir);
  ParamSet ps = build_params(c);
  const auto d = train::prepare(load_table(c), c.model.window, c.train_step, 1);
  model::TimeSup net(c.model, ps);
  const auto history = train::fit(net, d.train, d.val, c.train, [&](const train::EpochRecord& e) {
    if (!quiet) {
      out << "epoch " << e.epoch << " train_mse=" << fmt_short(e.train_mse) << " val_mse=" << fmt_short(e.val_mse)
          << "\n";
    }
  });
  const auto val = train::evaluate(net, d.val);
  const auto test = train::evaluate(net, d.test);
  const auto pval = train::persistence_baseline(d.val, c.model.window);
  const auto ptest = train::persistence_baseline(d.test, c.model.window);

  ordered_json j;
  j["epochs_run"] = history.epochs.size();
  j["best_epoch"] = history.best_epoch;
  j["train_windows"] = d.train.size();
  j["val"] = metrics_object(val);
  j["test"] = metrics_object(test);
  j["persistence_val"] = metrics_object(pval);
  j["persistence_test"] = metrics_object(ptest);

  write_text(fs::path(out_dir) / "history.jsonl", history.jsonl());
  write_text(fs::path(out_dir) / "metrics.json", j.dump(2) + "\n");
  write_text(fs::path(out_dir) / "config.txt", serialize_config(c));
  write_tsupw1(fs::path(out_dir) / "weights.tsupw1", model::export_tensors(ps));
  out << "train: epochs=" << history.epochs.size() << " best_epoch=" << history.best_epoch
      << " val_mse=" << fmt_short(val.mse) << " persistence_val_mse=" << fmt_short(pval.mse) << "\n";
  return 0;
}

// ---- forecast

int cmd_forecast(const Config& c, const std::string& checkpoint, const std::string& surrogate, const std::string& split,
                 const std::string& out_path, std::ostream& out) {
  if (surrogate == "net" && checkpoint.empty()) throw ConfigError("forecast with the network needs --weights");
  const auto d = train::prepare(load_table(c), c.model.window, c.train_step, 1);
  const auto& windows = pick_split(d, split);
  if (windows.empty()) throw ContractError("forecast: split '" + split + "' has no windows");

  std::unique_ptr<ParamSet> ps;
  std::unique_ptr<model::TimeSup> net;
  std::unique_ptr<train::Forecaster> f;
  if (surrogate == "net") {
    ps = std::make_unique<ParamSet>(build_params(c, checkpoint));
    net = std::make_unique<model::TimeSup>(c.model, *ps);
    f = std::make_unique<train::NetForecaster>(*net);
  } else {
    f = std::make_unique<train::Persistence>(c.model.horizon());
  }

  std::string csv = "channel,start,step,target,prediction\n";
  double sq = 0.0;
  std::size_t count = 0;
  for (const auto& w : windows) {
    const Vec p = f->forecast(w.input);
    const double mean = d.scaler.mean[w.channel], sd = d.scaler.std[w.channel];
    for (std::size_t h = 0; h < p.size(); ++h) {
      const double target = mean + sd * w.target[h];
      const double pred = mean + sd * p[h];
      sq += (pred - target) * (pred - target);
      ++count;
      csv += std::to_string(w.channel) + "," + std::to_string(w.start) + "," + std::to_string(h) + "," + fmt(target) +
             "," + fmt(pred) + "\n";
    }
  }
  write_text(out_path, csv);
  out << "forecast: model=" << surrogate << " split=" << split << " windows=" << windows.size()
      << " mse=" << fmt_short(sq / static_cast<double>(count)) << "\n";
  return 0;
}

// ---- ablate

struct Arm {
  const char* name;
  model::ComponentSetting setting;
};
constexpr Arm kArms[] = {{"PF", {model::Init::Pretrained, model::Mode::Frozen}},
                         {"PT", {model::Init::Pretrained, model::Mode::Trainable}},
                         {"RF", {model::Init::Random, model::Mode::Frozen}},
                         {"RT", {model::Init::Random, model::Mode::Trainable}}};

int cmd_ablate(const Config& base, const std::string& out_path, std::ostream& out) {
  const auto d = train::prepare(load_table(base), base.model.window, base.train_step, 1);
  std::string csv = "ln,mha,status,epochs,best_epoch,val_mse,val_mae,test_mse,test_mae,frozen_tensors,frozen_intact\n";
  std::size_t ran = 0, skipped = 0, broken = 0;
  for (const auto& ln : kArms) {
    for (const auto& mha : kArms) {
      Config c = base;
      c.model.setting(model::Component::LayerNorm) = ln.setting;
      c.model.setting(model::Component::Attention) = mha.setting;
      const std::string cell = std::string(ln.name) + "," + mha.name;
      if (c.model.any_pretrained() && c.weights.empty()) {
        out << "ablate: skipping LN=" << ln.name << " MHA=" << mha.name << " (no weight file)\n";
        csv += cell + ",skipped,,,,,,,,\n";
        ++skipped;
        continue;
      }
      ParamSet ps = build_params(c);
      const auto before = ps.snapshot();
      model::TimeSup net(c.model, ps);
      const auto history = train::fit(net, d.train, d.val, c.train);
      std::size_t frozen = 0;
      bool intact = true;
      for (const auto& [name, p] : ps) {
        if (p.trainable) continue;
        ++frozen;
        const Mat& old = before.at(name);
        intact = intact && std::equal(old.values().begin(), old.values().end(), p.value.values().begin());
      }
      const auto val = train::evaluate(net, d.val);
      const auto test = train::evaluate(net, d.test);
      csv += cell + ",ran," + std::to_string(history.epochs.size()) + "," + std::to_string(history.best_epoch) + "," +
             fmt(val.mse) + "," + fmt(val.mae) + "," + fmt(test.mse) + "," + fmt(test.mae) + "," +
             std::to_string(frozen) + "," + (intact ? "true" : "false") + "\n";
      out << "ablate: LN=" << ln.name << " MHA=" << mha.name << " val_mse=" << fmt_short(val.mse)
          << (intact ? "" : " FROZEN TENSORS CHANGED") << "\n";
      ++ran;
      if (!intact) ++broken;
    }
  }
  write_text(out_path, csv);
  out << "ablate: ran=" << ran << " skipped=" << skipped << "\n";
  return broken == 0 ? 0 : 1;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Manifold-lifting forecaster laboratory"};
  app.name("tsup");
  app.require_subcommand(1);

  Theorem1Args t1;
  auto* theorem1 = app.add_subcommand("theorem1", "Monte-Carlo check of the expected cross-modal cosine");
  theorem1->add_option("--m", t1.m, "noise support of the time modality");
  theorem1->add_option("--n", t1.n, "noise support of the language modality");
  theorem1->add_option("--sigma-ts", t1.sigma_ts);
  theorem1->add_option("--sigma-l", t1.sigma_l);
  theorem1->add_option("--trials", t1.trials);
  theorem1->add_option("--conc-trials", t1.conc_trials, "trials per point of the concentration curve");
  theorem1->add_option("--seed", t1.seed);
  theorem1->add_option("--out", t1.out, "output directory")->required();

  std::string config_path, split = "train", forecast_split = "test", stage, checkpoint, out_path, out_dir, surrogate = "net";
  double threshold = 0.99;
  bool quiet = false;

  auto* pca = app.add_subcommand("pca-probe", "Explained-variance spectrum of tokens at one pipeline stage");
  pca->add_option("--config", config_path)->required();
  pca->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test"}));
  pca->add_option("--stage", stage)->required()->check(CLI::IsMember({"raw", "fused", "language"}));
  pca->add_option("--threshold", threshold);
  pca->add_option("--weights", checkpoint, "trained checkpoint overriding every tensor");
  pca->add_option("--out", out_path)->required();

  auto* diagnose = app.add_subcommand("diagnose", "Per-layer cosine and alignment statistics");
  diagnose->add_option("--config", config_path)->required();
  diagnose->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test"}));
  diagnose->add_option("--weights", checkpoint, "trained checkpoint overriding every tensor");
  diagnose->add_option("--out-dir", out_dir)->required();

  auto* train_cmd = app.add_subcommand("train", "Train and write history, metrics and best weights");
  train_cmd->add_option("--config", config_path)->required();
  train_cmd->add_option("--out-dir", out_dir)->required();
  train_cmd->add_flag("--quiet", quiet, "no per-epoch lines");

  auto* forecast = app.add_subcommand("forecast", "Write predictions for a split as CSV");
  forecast->add_option("--config", config_path)->required();
  forecast->add_option("--weights", checkpoint, "trained checkpoint");
  forecast->add_option("--model", surrogate)->check(CLI::IsMember({"net", "persistence"}));
  forecast->add_option("--split", forecast_split)->check(CLI::IsMember({"train", "val", "test"}));
  forecast->add_option("--out", out_path)->required();

  auto* ablate = app.add_subcommand("ablate", "LN x MHA pretrained/random x frozen/trainable grid");
  ablate->add_option("--config", config_path)->required();
  ablate->add_option("--out", out_path)->required();

  std::vector<const char*> argv{"tsup"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (theorem1->parsed()) return cmd_theorem1(t1, out);
    const Config c = load_config(config_path);
    if (pca->parsed()) return cmd_pca_probe(c, split, stage, threshold, checkpoint, out_path, out);
    if (diagnose->parsed()) return cmd_diagnose(c, split, checkpoint, out_dir, out);
    if (train_cmd->parsed()) return cmd_train(c, out_dir, quiet, out);
    if (forecast->parsed()) return cmd_forecast(c, checkpoint, surrogate, forecast_split, out_path, out);
    if (ablate->parsed()) return cmd_ablate(c, out_path, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace tsup::cli
