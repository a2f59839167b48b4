// Acceptance run: one PASS/FAIL line per criterion; exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "tsup/cli.hpp"
#include "tsup/diagnostics.hpp"
#include "tsup/layers.hpp"
#include "tsup/numerics.hpp"
#include "tsup/theory.hpp"

using namespace tsup;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int failures = 0;

void report(bool pass, const std::string& name, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << (pass ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
}

std::string num(double v, int digits = 6) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

/// CPU seconds spent inside `f`.
double cpu_seconds(const std::function<void()>& f) {
  const std::clock_t start = std::clock();
  f();
  return static_cast<double>(std::clock() - start) / CLOCKS_PER_SEC;
}

fs::path work_dir() {
  const fs::path dir = fs::temp_directory_path() / "tsup-acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
  return p;
}

int tsup(const std::vector<std::string>& args, std::string* out = nullptr) {
  std::ostringstream o, e;
  const int code = cli::run(args, o, e);
  if (out) *out = o.str();
  if (code != 0) std::cerr << "  [tsup " << args.front() << " exited " << code << "] " << e.str();
  return code;
}

Mat randn(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Mat m(r, c);
  for (double& v : m.values()) v = scale * rng.normal();
  return m;
}

double max_abs_diff(const Mat& a, const Mat& b) {
  if (!a.same_shape(b)) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

// ---------------------------------------------------------------- brute-force oracles

Mat naive_mm(const Mat& a, const Mat& b) {
  Mat out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

Mat naive_t(const Mat& a) {
  Mat out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Mat plus_row(Mat a, const Mat& bias) {
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) a(i, j) += bias(0, j);
  return a;
}

Mat naive_ln(const Mat& x, const Mat& g, const Mat& b) {
  Mat out(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) mean += x(i, j) / n;
    for (std::size_t j = 0; j < x.cols(); ++j) var += (x(i, j) - mean) * (x(i, j) - mean) / n;
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = g(0, j) * (x(i, j) - mean) / std::sqrt(var + 1e-5) + b(0, j);
  }
  return out;
}

double naive_gelu(double x) { return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x))); }

/// Full bidirectional attention with every bias applied.
Mat naive_mha(const Mat& x, const Mat& w_qkv, const Mat& b_qkv, const Mat& w_o, const Mat& b_o, std::size_t heads) {
  const std::size_t t = x.rows(), d = x.cols(), dh = d / heads;
  const Mat qkv = plus_row(naive_mm(x, w_qkv), b_qkv);
  Mat concat(t, d);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < t; ++i) {
      Vec s(t);
      double mx = -INFINITY;
      for (std::size_t j = 0; j < t; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dh; ++c) acc += qkv(i, h * dh + c) * qkv(j, d + h * dh + c);
        s[j] = acc / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (double& v : s) z += (v = std::exp(v - mx));
      for (std::size_t j = 0; j < t; ++j)
        for (std::size_t c = 0; c < dh; ++c) concat(i, h * dh + c) += s[j] / z * qkv(j, 2 * d + h * dh + c);
    }
  }
  return plus_row(naive_mm(concat, w_o), b_o);
}

Mat naive_backbone(Mat x, ParamSet& ps, const model::ModelConfig& c) {
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = "h." + std::to_string(l) + ".";
    auto v = [&](const std::string& n) -> const Mat& { return ps.at(p + n).value; };
    const Mat a = naive_mha(naive_ln(x, v("ln_1.g"), v("ln_1.b")), v("attn.w_qkv"), v("attn.b_qkv"), v("attn.w_o"),
                            v("attn.b_o"), c.heads);
    for (std::size_t i = 0; i < x.size(); ++i) x.values()[i] += a.values()[i];
    Mat hdn = plus_row(naive_mm(naive_ln(x, v("ln_2.g"), v("ln_2.b")), v("ffn.w_in")), v("ffn.b_in"));
    for (double& e : hdn.values()) e = naive_gelu(e);
    const Mat f = plus_row(naive_mm(hdn, v("ffn.w_out")), v("ffn.b_out"));
    for (std::size_t i = 0; i < x.size(); ++i) x.values()[i] += f.values()[i];
  }
  return x;
}

double naive_quantile(Vec sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Max deviation between the library statistics and a direct evaluation over `cos`.
double stats_gap(const diag::CosineStats& s, Vec cos) {
  std::sort(cos.begin(), cos.end());
  const double n = static_cast<double>(cos.size());
  double mean = 0.0;
  for (double c : cos) mean += c / n;
  double var = 0.0;
  for (double c : cos) var += (c - mean) * (c - mean) / n;
  double gap = std::max({std::abs(s.mean - mean), std::abs(s.std - std::sqrt(var)), std::abs(s.min - cos.front()),
                         std::abs(s.max - cos.back())});
  for (int k = 0; k < 9; ++k) gap = std::max(gap, std::abs(s.deciles[k] - naive_quantile(cos, 0.1 * (k + 1))));
  if (s.pairs != cos.size()) gap = INFINITY;
  return gap;
}

double naive_cos(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

// ---------------------------------------------------------------- criteria

void theorem1_oracle() {
  double deviation = 0.0, tolerance = 0.0, hand_cf = 0.0, hand_dev = 0.0, hand_tol = 0.0;
  const double secs = cpu_seconds([&] {
    const auto s = theory::aligned_spec(256, 256, 0.1);
    const double cf = theory::closed_form_cosine(s, s);
    const auto mc = theory::monte_carlo_cosine(s, s, 100000, RngState{2021, 0});
    deviation = std::abs(mc.mean - cf);
    tolerance = 3.0 * mc.std_error + 0.02;

    const auto h = theory::aligned_spec(100, 100, 0.1);
    hand_cf = theory::closed_form_cosine(h, h);
    const auto hmc = theory::monte_carlo_cosine(h, h, 100000, RngState{2021, 0});
    hand_dev = std::abs(hmc.mean - hand_cf);
    hand_tol = 3.0 * hmc.std_error + 0.02;
  });
  const bool pass = deviation <= tolerance && std::abs(hand_cf - 0.5) <= 1e-12 && hand_dev <= hand_tol && secs < 60.0;
  report(pass, "theorem1 oracle",
         "m=n=256 |mc-cf|=" + num(deviation) + " <= " + num(tolerance) + "; m=n=100 closed form=" + num(hand_cf, 17) +
             " |mc-cf|=" + num(hand_dev) + " <= " + num(hand_tol) + "; cpu " + num(secs, 3) + "s < 60s");
}

void concentration() {
  const std::vector<std::size_t> ms{64, 256, 1024, 4096};
  const theory::ModalitySpec tmpl{Vec(1, 0.0), 1.0, 0};
  const auto curve = theory::concentration_curve(tmpl, ms, 20000, RngState{2021, 1});
  bool halves = true;
  std::string ratios;
  for (std::size_t i = 1; i < curve.rows.size(); ++i) {
    const double r = curve.rows[i].rel_fluct / curve.rows[i - 1].rel_fluct;
    halves = halves && std::abs(r - 0.5) <= 0.2 * 0.5;
    ratios += (i > 1 ? "," : "") + num(r, 4);
  }
  const bool pass = curve.slope >= -0.6 && curve.slope <= -0.4 && halves;
  report(pass, "concentration", "slope=" + num(curve.slope) + " in [-0.6,-0.4]; ratios per 4x m = " + ratios +
                                    " within 20% of 0.5");
}

void gradient_suite() {
  struct Check {
    std::string name;
    std::function<GradCheckResult(Rng&)> run;
  };
  auto gain = [](ParamSet& ps, Rng& rng, const std::string& n, std::size_t d) -> Param& {
    Param& p = ps.add(n, randn(rng, 1, d, 0.2));
    for (double& v : p.value.values()) v += 1.0;
    return p;
  };
  const std::vector<Check> checks{
      {"patch embedding",
       [](Rng& rng) {
         ParamSet ps;
         Linear lin(ps.add("w", randn(rng, 8, 6)), &ps.add("b", randn(rng, 1, 6)));
         return finite_diff_check(lin, {randn(rng, 5, 8)}, rng);
       }},
      {"prototype combination",
       [](Rng& rng) {
         ParamSet ps;
         PrototypeCombination pc(ps.add("w_c", randn(rng, 4, 7)), ps.add("wte", randn(rng, 7, 6)));
         return finite_diff_check(pc, {}, rng);
       }},
      {"top-k softmax surrogate",
       [](Rng& rng) {
         ParamSet ps;
         PrototypeAttention att(ps.add("w_q", randn(rng, 6, 6, 0.5)), ps.add("w_k", randn(rng, 6, 6, 0.5)));
         return finite_diff_check(att, {randn(rng, 3, 6), randn(rng, 5, 6)}, rng);
       }},
      {"top-k gather",
       [](Rng& rng) {
         TopKGather g;
         g.set_selection({{2, 0}, {4, 1}, {3, 2}});
         return finite_diff_check(g, {randn(rng, 3, 6), randn(rng, 5, 6)}, rng);
       }},
      {"token mixer",
       [](Rng& rng) {
         ParamSet ps;
         TokenMixer tm(ps.add("m_c", randn(rng, 9, 3, 0.5)));
         return finite_diff_check(tm, {randn(rng, 9, 4)}, rng);
       }},
      {"feature mixer",
       [](Rng& rng) {
         ParamSet ps;
         FeatureMixer fm(ps.add("m_f", randn(rng, 4, 4, 0.5)));
         return finite_diff_check(fm, {randn(rng, 3, 4)}, rng);
       }},
      {"layer norm",
       [&](Rng& rng) {
         ParamSet ps;
         LayerNorm ln(gain(ps, rng, "g", 8), ps.add("b", randn(rng, 1, 8, 0.3)));
         return finite_diff_check(ln, {randn(rng, 5, 8)}, rng);
       }},
      {"multi-head attention",
       [](Rng& rng) {
         ParamSet ps;
         MultiHeadAttention mha(ps.add("w_qkv", randn(rng, 8, 24, 0.4)), ps.add("b_qkv", randn(rng, 1, 24, 0.2)),
                                ps.add("w_o", randn(rng, 8, 8, 0.4)), ps.add("b_o", randn(rng, 1, 8, 0.2)), 2);
         return finite_diff_check(mha, {randn(rng, 4, 8)}, rng);
       }},
      {"feed-forward",
       [](Rng& rng) {
         ParamSet ps;
         FeedForward ffn(ps.add("w_in", randn(rng, 6, 24, 0.4)), ps.add("b_in", randn(rng, 1, 24, 0.2)),
                         ps.add("w_out", randn(rng, 24, 6, 0.4)), ps.add("b_out", randn(rng, 1, 6, 0.2)));
         return finite_diff_check(ffn, {randn(rng, 3, 6)}, rng);
       }},
      {"forecast head",
       [](Rng& rng) {
         ParamSet ps;
         ForecastHead head(ps.add("w_h", randn(rng, 12, 5)), ps.add("b_h", randn(rng, 1, 5)));
         return finite_diff_check(head, {randn(rng, 3, 4)}, rng);
       }},
  };
  double worst = 0.0;
  std::string worst_where, failed;
  std::size_t runs = 0;
  const double secs = cpu_seconds([&] {
    for (const auto& c : checks) {
      for (std::uint64_t seed : {11, 22, 33}) {
        Rng rng(seed);
        const auto r = c.run(rng);
        ++runs;
        if (r.max_rel_error > worst) {
          worst = r.max_rel_error;
          worst_where = c.name + " seed " + std::to_string(seed) + " " + r.worst;
        }
        if (!(r.max_rel_error < 1e-4)) failed += " " + c.name + "/" + std::to_string(seed);
      }
    }
  });
  report(failed.empty() && secs < 120.0, "gradient suite",
         std::to_string(runs) + " checks, worst rel error " + num(worst, 3) + " (" + worst_where + ") < 1e-4" +
             (failed.empty() ? "" : "; failing:" + failed) + "; cpu " + num(secs, 3) + "s < 120s");
}

void manifold_lift(const fs::path& dir, const fs::path& desk) {
  int code = 0;
  for (const char* stage : {"raw", "fused"}) {
    code |= tsup({"pca-probe", "--config", desk.string(), "--stage", stage, "--out",
                  (dir / (std::string(stage) + ".json")).string()});
  }
  if (code != 0) {
    report(false, "manifold lift", "pca-probe failed");
    return;
  }
  const auto raw = json::parse(slurp(dir / "raw.json"));
  const auto fused = json::parse(slurp(dir / "fused.json"));
  const cli::Config c = cli::load_config(desk);
  const std::size_t windows = raw["rows"].get<std::size_t>() / c.model.num_patches();
  const auto r = raw["report"]["intrinsic_dim"].get<std::size_t>();
  const auto f = fused["report"]["intrinsic_dim"].get<std::size_t>();
  bool pass = windows >= 200 && f >= 2 * r;
  std::string detail = "windows=" + std::to_string(windows) + " raw dim=" + std::to_string(r) +
                       " fused dim=" + std::to_string(f) + " (>= 2x) at EVR 0.99";

  if (const char* gpt2 = std::getenv("TSUP_GPT2_WEIGHTS"); gpt2 && *gpt2) {
    const auto cfg = write_file(dir / "gpt2.cfg", "model.d = 768\nmodel.layers = 6\nmodel.heads = 12\n"
                                                  "model.vocab = 50257\nmodel.prototypes = 1000\n"
                                                  "component.emb.init = pretrained\nmodel.weights = " +
                                                      std::string(gpt2) + "\n");
    if (tsup({"pca-probe", "--config", cfg.string(), "--stage", "language", "--out", (dir / "wte.json").string()}) ==
        0) {
      const auto dim = json::parse(slurp(dir / "wte.json"))["report"]["intrinsic_dim"].get<std::size_t>();
      pass = pass && dim >= 690 && dim <= 768;
      detail += "; GPT-2 vocabulary dim=" + std::to_string(dim) + " in [690,768]";
    } else {
      pass = false;
      detail += "; GPT-2 vocabulary probe failed";
    }
  } else {
    detail += "; GPT-2 vocabulary corridor not checked (set TSUP_GPT2_WEIGHTS to a TSUPW1 export)";
  }
  report(pass, "manifold lift", detail);
}

void pseudo_alignment(const fs::path& dir, const fs::path& desk) {
  cli::Config off_config = cli::load_config(desk);
  off_config.model.enhancer = false;
  const auto off_cfg = write_file(dir / "desk_off.cfg", cli::serialize_config(off_config));
  const int code = tsup({"diagnose", "--config", desk.string(), "--out-dir", (dir / "on").string()}) |
                   tsup({"diagnose", "--config", off_cfg.string(), "--out-dir", (dir / "off").string()});
  if (code != 0) {
    report(false, "pseudo-alignment mitigation", "diagnose failed");
    return;
  }
  const auto on = json::parse(slurp(dir / "on" / "alignment.json"))["layers"].back();
  const auto off = json::parse(slurp(dir / "off" / "alignment.json"))["layers"].back();
  const double cr_on = on["collapse_ratio"], cr_off = off["collapse_ratio"];
  const double cc_on = on["centroid_cosine"], cc_off = off["centroid_cosine"];
  const cli::Config c = cli::load_config(desk);
  bool random_arms = true;
  for (const auto& s : c.model.components) random_arms = random_arms && s.init == model::Init::Random;
  report(cr_on >= cr_off && cc_off >= cc_on && random_arms, "pseudo-alignment mitigation",
         "final layer collapse ratio on=" + num(cr_on) + " >= off=" + num(cr_off) + "; centroid cosine off=" +
             num(cc_off) + " >= on=" + num(cc_on) + "; all components random");
}

void forecast_sanity(const fs::path& dir, const fs::path& desk) {
  int code = 0;
  const double secs = cpu_seconds(
      [&] { code = tsup({"train", "--config", desk.string(), "--out-dir", (dir / "train").string(), "--quiet"}); });
  if (code != 0) {
    report(false, "forecast sanity", "train failed");
    return;
  }
  const auto m = json::parse(slurp(dir / "train" / "metrics.json"));
  const cli::Config c = cli::load_config(desk);
  const double val = m["val"]["mse"], pers = m["persistence_val"]["mse"];
  const bool setup = c.train.epochs == 20 && c.data_noise == 0.05 && c.model.horizon() == 96 && c.data_synthetic;
  report(setup && val <= 0.5 * pers && secs < 180.0, "forecast sanity",
         "val mse=" + num(val) + " <= 0.5 x persistence " + num(pers) + " (epochs run " +
             std::to_string(m["epochs_run"].get<int>()) + " of 20); cpu " + num(secs, 3) + "s < 180s");
}

void oracle_equivalence() {
  double worst = 0.0;
  std::string where;
  auto note = [&](double gap, const std::string& op) {
    if (gap > worst || std::isnan(gap)) {
      worst = std::isnan(gap) ? INFINITY : gap;
      where = op;
    }
  };
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const std::size_t ta = 2 + rng.below(49), tb = 2 + rng.below(49), d = 2 + rng.below(16);

    const Mat a = randn(rng, ta, d), b = randn(rng, tb, d);
    Vec cross, intra;
    for (std::size_t i = 0; i < ta; ++i)
      for (std::size_t j = 0; j < tb; ++j) cross.push_back(naive_cos(a.row(i), b.row(j)));
    for (std::size_t i = 0; i < ta; ++i)
      for (std::size_t j = i + 1; j < ta; ++j) intra.push_back(naive_cos(a.row(i), a.row(j)));
    note(stats_gap(diag::pairwise_cosine_stats(a, b), cross), "pairwise_cosine_stats");
    note(stats_gap(diag::intra_cosine_stats(a), intra), "intra_cosine_stats");

    note(max_abs_diff(matmul(a, naive_t(b)), naive_mm(a, naive_t(b))), "matmul");
    note(max_abs_diff(matmul_nt(a, b), naive_mm(a, naive_t(b))), "matmul_nt");
    note(max_abs_diff(matmul_tn(a, a), naive_mm(naive_t(a), a)), "matmul_tn");

    const std::size_t patch = 2 + rng.below(8);
    const Mat patches = randn(rng, ta, patch), w_e = randn(rng, patch, d), b_e = randn(rng, 1, d);
    note(max_abs_diff(model::embed_patches(patches, w_e, b_e), plus_row(naive_mm(patches, w_e), b_e)),
         "embed_patches");

    const std::size_t vocab = 3 + rng.below(20), protos = 2 + rng.below(10);
    const Mat wte = randn(rng, vocab, d), w_c = randn(rng, protos, vocab, 0.3);
    const Mat lp = model::make_prototypes(w_c, wte);
    note(max_abs_diff(lp, naive_mm(w_c, wte)), "make_prototypes");

    const std::size_t n_tok = 1 + rng.below(9);  // (K+1)·N ≤ 50
    const std::size_t k = 1 + rng.below(std::min<std::size_t>(protos, 4));
    const Mat tokens = randn(rng, n_tok, d), w_q = randn(rng, d, d, 0.5), w_k = randn(rng, d, d, 0.5);
    const auto sel = model::topk_select(tokens, lp, w_q, w_k, k);
    const Mat logits = naive_mm(naive_mm(tokens, w_q), naive_t(naive_mm(lp, w_k)));
    Mat ref_t((k + 1) * n_tok, d);
    for (std::size_t i = 0; i < n_tok; ++i) {
      std::vector<std::size_t> order(protos);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return logits(i, x) > logits(i, y); });
      double mx = -INFINITY, z = 0.0;
      for (std::size_t j = 0; j < protos; ++j) mx = std::max(mx, logits(i, j) / std::sqrt(double(d)));
      for (std::size_t j = 0; j < protos; ++j) z += std::exp(logits(i, j) / std::sqrt(double(d)) - mx);
      for (std::size_t j = 0; j < k; ++j) {
        if (sel.indices[i][j] != order[j]) note(INFINITY, "topk_select indices");
        note(std::abs(sel.weights[i][j] - std::exp(logits(i, order[j]) / std::sqrt(double(d)) - mx) / z),
             "topk_select weights");
      }
      for (std::size_t c = 0; c < d; ++c) {
        ref_t(i * (k + 1), c) = tokens(i, c);
        for (std::size_t j = 0; j < k; ++j) ref_t(i * (k + 1) + j + 1, c) = lp(order[j], c);
      }
    }
    note(max_abs_diff(model::interleave(tokens, lp, sel), ref_t), "interleave");

    const std::size_t n_out = 1 + rng.below(6);
    const Mat m_c = randn(rng, (k + 1) * n_tok, n_out, 0.5), m_f = randn(rng, d, d, 0.5);
    Mat mixed = naive_mm(naive_t(m_c), ref_t);
    note(max_abs_diff(model::enhance(tokens, lp, sel, m_c, m_f, true), naive_mm(mixed, naive_t(m_f))),
         "enhance (linear)");
    for (double& v : mixed.values()) v = naive_gelu(v);
    note(max_abs_diff(model::enhance(tokens, lp, sel, m_c, m_f), naive_mm(mixed, naive_t(m_f))), "enhance");

    const std::size_t horizon = 1 + rng.below(6);
    const Mat w_h = randn(rng, n_out * d, horizon), b_h = randn(rng, 1, horizon);
    Mat flat(1, n_out * d);
    std::copy(mixed.values().begin(), mixed.values().end(), flat.values().begin());
    const Vec head = model::forecast_head(mixed, w_h, b_h);
    note(max_abs_diff(Mat(1, horizon, head), plus_row(naive_mm(flat, w_h), b_h)), "forecast_head");

    model::ModelConfig c;
    c.heads = 1 + rng.below(3);
    c.d = c.heads * (1 + rng.below(4));
    c.layers = 1 + rng.below(3);
    c.vocab = 4;
    c.prototypes = 3;
    c.top_k = 1;
    c.compressed_tokens = 2;
    c.window = data::WindowSpec{16, 2, 4, 4};
    Rng init(seed + 100);
    ParamSet ps = model::init_model(c, init);
    for (auto& [name, p] : ps) {
      const bool is_gain = name.size() > 2 && name.substr(name.size() - 2) == ".g";
      for (double& v : p.value.values()) v = (is_gain ? 1.0 : 0.0) + 0.3 * rng.normal();
    }
    const Mat x = randn(rng, 1 + rng.below(50), c.d);
    note(max_abs_diff(model::backbone_forward(x, ps, c).hidden, naive_backbone(x, ps, c)), "backbone_forward");
  }
  report(worst <= 1e-12, "oracle equivalence",
         "20 random instances with <= 50 tokens; worst |lib - brute force| = " + num(worst, 3) + " (" + where +
             ") <= 1e-12");
}

const char* kSmall =
    "data.channels = 2\n"
    "data.length = 600\n"
    "data.components = 2\n"
    "model.d = 8\n"
    "model.layers = 2\n"
    "model.heads = 2\n"
    "model.vocab = 10\n"
    "model.prototypes = 6\n"
    "model.top_k = 2\n"
    "model.compressed_tokens = 3\n"
    "model.horizon = 4\n"
    "window.input_len = 32\n"
    "window.patch = 8\n"
    "window.stride = 4\n"
    "train.epochs = 2\n"
    "train.lr = 0.01\n"
    "train.step = 2\n"
    "probe.windows = 40\n"
    "probe.language_tokens = 5\n";

fs::path fixture_weights(const fs::path& dir) {
  const cli::Config c = cli::parse_config(kSmall);
  Rng rng(4242);
  ParamSet ps = model::init_model(c.model, rng);
  const fs::path p = dir / "fixture.tsupw1";
  write_tsupw1(p, model::export_tensors(ps));
  return p;
}

/// File contents with wall-clock fields removed.
std::string comparable(const fs::path& p) {
  if (p.extension() != ".jsonl") return slurp(p);
  std::istringstream in(slurp(p));
  std::string line, out;
  while (std::getline(in, line)) {
    auto j = nlohmann::ordered_json::parse(line);
    j.erase("seconds");
    out += j.dump() + "\n";
  }
  return out;
}

void determinism(const fs::path& dir) {
  const auto weights = fixture_weights(dir);
  const auto cfg = write_file(dir / "small.cfg", std::string(kSmall) + "component.ln.init = pretrained\n"
                                                                      "model.weights = " +
                                                     weights.string() + "\n");
  auto commands = [&](const fs::path& out) {
    fs::create_directories(out);
    const std::string c = cfg.string();
    int code = 0;
    code |= tsup({"theorem1", "--trials", "2000", "--conc-trials", "1000", "--out", (out / "theorem1").string()});
    for (const char* stage : {"raw", "fused", "language"})
      code |= tsup({"pca-probe", "--config", c, "--stage", stage, "--out", (out / (std::string(stage) + ".json")).string()});
    code |= tsup({"diagnose", "--config", c, "--out-dir", (out / "diagnose").string()});
    code |= tsup({"train", "--config", c, "--out-dir", (out / "train").string(), "--quiet"});
    code |= tsup({"forecast", "--config", c, "--weights", (out / "train" / "weights.tsupw1").string(), "--out",
                  (out / "forecast.csv").string()});
    code |= tsup({"forecast", "--config", c, "--model", "persistence", "--out", (out / "persistence.csv").string()});
    code |= tsup({"ablate", "--config", c, "--out", (out / "ablate.csv").string()});
    return code;
  };
  if ((commands(dir / "run1") | commands(dir / "run2")) != 0) {
    report(false, "determinism", "a command failed");
    return;
  }
  std::size_t files = 0;
  std::string differing;
  for (const auto& e : fs::recursive_directory_iterator(dir / "run1")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir / "run1");
    ++files;
    if (!fs::exists(dir / "run2" / rel) || comparable(e.path()) != comparable(dir / "run2" / rel)) {
      differing += " " + rel.string();
    }
  }
  report(differing.empty() && files >= 15, "determinism",
         std::to_string(files) + " output files of theorem1, pca-probe, diagnose, train, forecast, ablate compared" +
             (differing.empty() ? " bit-identical across two runs (history seconds excluded)"
                                : "; differing:" + differing));
}

void freeze_matrix(const fs::path& dir) {
  auto rows = [](const std::string& csv) {
    std::vector<std::vector<std::string>> out;
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      std::vector<std::string> f;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) f.push_back(cell);
      while (f.size() < 11) f.emplace_back();
      out.push_back(f);
    }
    return out;
  };
  auto tally = [&](const fs::path& csv, std::size_t& ran, std::size_t& skipped, std::size_t& intact) {
    ran = skipped = intact = 0;
    for (const auto& r : rows(slurp(csv))) {
      if (r[2] == "ran") ++ran;
      if (r[2] == "skipped") ++skipped;
      if (r[2] == "ran" && r[10] == "true" && std::stoul(r[9]) > 0) ++intact;
    }
  };
  const auto plain = write_file(dir / "plain.cfg", kSmall);
  const auto weights = fixture_weights(dir);
  const auto with = write_file(dir / "with.cfg", std::string(kSmall) + "model.weights = " + weights.string() + "\n");
  const int code = tsup({"ablate", "--config", plain.string(), "--out", (dir / "plain.csv").string()}) |
                   tsup({"ablate", "--config", with.string(), "--out", (dir / "with.csv").string()});
  if (code != 0) {
    report(false, "freeze matrix", "ablate failed or reported moved frozen tensors");
    return;
  }
  std::size_t r1, s1, i1, r2, s2, i2;
  tally(dir / "plain.csv", r1, s1, i1);
  tally(dir / "with.csv", r2, s2, i2);
  report(r1 == 4 && s1 == 12 && i1 == 4 && r2 == 16 && s2 == 0 && i2 == 16, "freeze matrix",
         "no weights: ran " + std::to_string(r1) + ", skipped " + std::to_string(s1) + ", frozen intact in " +
             std::to_string(i1) + "; fixture weights: ran " + std::to_string(r2) + ", frozen intact in " +
             std::to_string(i2));
}

}  // namespace

int main() {
  const fs::path dir = work_dir();
  const fs::path desk = fs::path(TSUP_CONFIG_DIR) / "desk.cfg";
  const std::vector<std::pair<const char*, std::function<void()>>> steps{
      {"theorem1 oracle", theorem1_oracle},
      {"concentration", concentration},
      {"gradient suite", gradient_suite},
      {"manifold lift", [&] { manifold_lift(dir / "lift", desk); }},
      {"pseudo-alignment mitigation", [&] { pseudo_alignment(dir / "align", desk); }},
      {"forecast sanity", [&] { forecast_sanity(dir / "forecast", desk); }},
      {"oracle equivalence", oracle_equivalence},
      {"determinism", [&] { determinism(dir / "determinism"); }},
      {"freeze matrix", [&] { freeze_matrix(dir / "freeze"); }},
  };
  for (const char* sub : {"lift", "align", "forecast", "determinism", "freeze"}) fs::create_directories(dir / sub);
  for (const auto& [name, step] : steps) {
    try {
      step();
    } catch (const std::exception& e) {
      report(false, name, std::string("exception: ") + e.what());
    }
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
