#include "tsup/diagnostics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "tsup/error.hpp"
#include "tsup/numerics.hpp"

namespace tsup::diag {

namespace {

using nlohmann::ordered_json;

Vec row_norms(const Mat& m) {
  Vec out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = norm(m.row(i));
  return out;
}

CosineStats summarize(Vec& values) {
  CosineStats s;
  s.pairs = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(values.size()));
  std::sort(values.begin(), values.end());
  s.min = values.front();
  s.max = values.back();
  const double last = static_cast<double>(values.size() - 1);
  for (std::size_t q = 1; q <= 9; ++q) {
    const double pos = last * static_cast<double>(q) / 10.0;
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    s.deciles[q - 1] = values[lo] + frac * (values[hi] - values[lo]);
  }
  return s;
}

double clamp_cos(double c) { return std::clamp(c, -1.0, 1.0); }

Vec centroid(const Mat& m) {
  Vec c(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) c[j] += m(i, j);
  for (double& v : c) v /= static_cast<double>(m.rows());
  return c;
}

double sum_sq_dev(const Mat& m, const Vec& c) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) s += (m(i, j) - c[j]) * (m(i, j) - c[j]);
  return s;
}

ordered_json stats_to_json(const CosineStats& s) {
  ordered_json j;
  j["pairs"] = s.pairs;
  j["mean"] = s.mean;
  j["std"] = s.std;
  j["min"] = s.min;
  j["max"] = s.max;
  j["deciles"] = s.deciles;
  j["excluded_a"] = s.excluded_a;
  j["excluded_b"] = s.excluded_b;
  return j;
}

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

CosineStats pairwise_cosine_stats(const Mat& a, const Mat& b) {
  if (a.rows() == 0 || b.rows() == 0) throw ContractError("pairwise_cosine_stats: empty token batch");
  if (a.cols() != b.cols()) {
    throw ContractError("pairwise_cosine_stats: widths differ (" + a.shape() + " vs " + b.shape() + ")");
  }
  const Vec na = row_norms(a), nb = row_norms(b);
  const auto excluded_a = static_cast<std::size_t>(std::count(na.begin(), na.end(), 0.0));
  const auto excluded_b = static_cast<std::size_t>(std::count(nb.begin(), nb.end(), 0.0));
  if (excluded_a == a.rows() || excluded_b == b.rows()) {
    throw ZeroNormError("pairwise_cosine_stats: every row of one batch has zero norm");
  }
  Vec values;
  values.reserve((a.rows() - excluded_a) * (b.rows() - excluded_b));
  for (std::size_t i = 0; i < a.rows(); ++i) {
    if (na[i] == 0.0) continue;
    for (std::size_t j = 0; j < b.rows(); ++j) {
      if (nb[j] == 0.0) continue;
      values.push_back(clamp_cos(dot(a.row(i), b.row(j)) / (na[i] * nb[j])));
    }
  }
  CosineStats s = summarize(values);
  s.excluded_a = excluded_a;
  s.excluded_b = excluded_b;
  return s;
}

CosineStats intra_cosine_stats(const Mat& a) {
  const Vec na = row_norms(a);
  Vec values;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    if (na[i] == 0.0) continue;
    for (std::size_t j = i + 1; j < a.rows(); ++j) {
      if (na[j] == 0.0) continue;
      values.push_back(clamp_cos(dot(a.row(i), a.row(j)) / (na[i] * na[j])));
    }
  }
  CosineStats s = summarize(values);
  s.excluded_a = static_cast<std::size_t>(std::count(na.begin(), na.end(), 0.0));
  s.excluded_b = s.excluded_a;
  return s;
}

EvrReport intrinsic_dimension(const Mat& tokens, double threshold) {
  if (tokens.rows() < 2) throw ContractError("intrinsic_dimension: need at least 2 rows, got " + tokens.shape());
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ContractError("intrinsic_dimension: threshold must lie in (0, 1]");
  if (!tokens.all_finite()) throw NumericError("intrinsic_dimension: non-finite token values");
  EvrReport r;
  r.threshold = threshold;
  const std::size_t n = tokens.rows(), d = tokens.cols();

  bool all_same = true;
  for (std::size_t i = 1; i < n && all_same; ++i)
    all_same = std::equal(tokens.row(i).begin(), tokens.row(i).end(), tokens.row(0).begin());
  if (all_same) {
    r.degenerate = true;
    r.eigenvalues.assign(d, 0.0);
    r.cumulative.assign(d, 0.0);
    return r;
  }

  const Vec c = centroid(tokens);
  Mat centred(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) centred(i, j) = tokens(i, j) - c[j];
  Mat cov = matmul_tn(centred, centred);
  cov *= 1.0 / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < i; ++j) cov(i, j) = cov(j, i);

  const SymEig eig = sym_eig(cov);
  r.eigenvalues = eig.values;
  for (double& v : r.eigenvalues) v = std::max(v, 0.0);
  double total = 0.0;
  for (double v : r.eigenvalues) total += v;
  double acc = 0.0;
  for (double v : r.eigenvalues) {
    acc += v;
    r.cumulative.push_back(acc / total);
  }
  const std::size_t cap = std::min(n - 1, d);
  r.intrinsic_dim = cap;
  for (std::size_t k = 0; k < r.cumulative.size(); ++k) {
    if (r.cumulative[k] >= threshold) {
      r.intrinsic_dim = std::min(k + 1, cap);
      break;
    }
  }
  return r;
}

AlignmentIndex pseudo_alignment_index(const Mat& a, const Mat& b, const std::string& name_a,
                                      const std::string& name_b) {
  if (a.rows() == 0 || b.rows() == 0) throw ContractError("pseudo_alignment_index: empty token batch");
  if (a.cols() != b.cols()) throw ContractError("pseudo_alignment_index: widths differ");
  const Vec ca = centroid(a), cb = centroid(b);
  const double ssa = sum_sq_dev(a, ca), ssb = sum_sq_dev(b, cb);
  if (ssa == 0.0) throw ZeroNormError("pseudo_alignment_index: modality '" + name_a + "' has zero spread");
  if (ssb == 0.0) throw ZeroNormError("pseudo_alignment_index: modality '" + name_b + "' has zero spread");
  AlignmentIndex out;
  out.centroid_cosine = clamp_cos(cosine(ca, cb));
  double gap = 0.0;
  for (std::size_t j = 0; j < ca.size(); ++j) gap += (ca[j] - cb[j]) * (ca[j] - cb[j]);
  const double spread = std::sqrt((ssa + ssb) / static_cast<double>(a.rows() + b.rows()));
  out.collapse_ratio = std::sqrt(gap) / spread;
  return out;
}

std::vector<LayerReport> trace_report(const model::LayerTrace& trace) {
  if (trace.time.empty()) throw ContractError("trace_report: empty trace");
  std::vector<LayerReport> out;
  for (std::size_t i = 0; i < trace.time.size(); ++i) {
    if (i >= trace.language.size() || trace.language[i].rows() == 0) {
      throw ContractError("trace_report: language tokens missing at layer " + std::to_string(i));
    }
    if (trace.time[i].rows() == 0) throw ContractError("trace_report: time tokens missing at layer " + std::to_string(i));
    LayerReport r;
    r.layer = i;
    r.cross = pairwise_cosine_stats(trace.time[i], trace.language[i]);
    r.intra_time = intra_cosine_stats(trace.time[i]);
    r.intra_language = intra_cosine_stats(trace.language[i]);
    r.alignment = pseudo_alignment_index(trace.time[i], trace.language[i]);
    out.push_back(r);
  }
  return out;
}

Probe probe_windows(model::TimeSup& net, const std::vector<data::SeriesWindow>& windows, std::size_t language_count,
                    std::uint64_t language_seed, std::size_t trace_windows) {
  if (windows.empty()) throw ContractError("probe_windows: no windows");
  net.begin_batch();
  Probe p;
  std::vector<Vec> raw, fused;
  std::vector<std::vector<Vec>> layers;
  for (std::size_t wi = 0; wi < windows.size(); ++wi) {
    const auto& w = windows[wi];
    model::Capture cap;
    net.predict(w.input, nullptr, &cap);
    for (std::size_t i = 0; i < cap.raw_tokens.rows(); ++i) raw.emplace_back(cap.raw_tokens.row(i).begin(), cap.raw_tokens.row(i).end());
    for (std::size_t i = 0; i < cap.fused_tokens.rows(); ++i) fused.emplace_back(cap.fused_tokens.row(i).begin(), cap.fused_tokens.row(i).end());
    layers.resize(cap.trace.time.size());
    if (wi >= trace_windows) continue;
    for (std::size_t l = 0; l < cap.trace.time.size(); ++l)
      for (std::size_t i = 0; i < cap.trace.time[l].rows(); ++i)
        layers[l].emplace_back(cap.trace.time[l].row(i).begin(), cap.trace.time[l].row(i).end());
  }
  auto stack = [](const std::vector<Vec>& rows) {
    Mat m(rows.size(), rows.empty() ? 0 : rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
    return m;
  };
  p.raw = stack(raw);
  p.fused = stack(fused);
  for (const auto& l : layers) p.trace.time.push_back(stack(l));
  p.trace.language = net.propagate(net.language_batch(language_count, language_seed));
  return p;
}

std::string cosine_json(const CosineStats& s) { return stats_to_json(s).dump(2); }

std::string evr_json(const EvrReport& r) {
  ordered_json j;
  j["threshold"] = r.threshold;
  j["intrinsic_dim"] = r.intrinsic_dim;
  j["degenerate"] = r.degenerate;
  j["eigenvalues"] = r.eigenvalues;
  j["cumulative"] = r.cumulative;
  return j.dump(2);
}

std::string trace_json(const std::vector<LayerReport>& reports) {
  ordered_json layers = ordered_json::array();
  for (const auto& r : reports) {
    ordered_json j;
    j["layer"] = r.layer;
    j["cross"] = stats_to_json(r.cross);
    j["intra_time"] = stats_to_json(r.intra_time);
    j["intra_language"] = stats_to_json(r.intra_language);
    j["alignment"] = {{"centroid_cosine", r.alignment.centroid_cosine},
                      {"collapse_ratio", r.alignment.collapse_ratio}};
    layers.push_back(j);
  }
  ordered_json root;
  root["layers"] = layers;
  return root.dump(2);
}

void dump_embeddings(const model::LayerTrace& trace, const std::filesystem::path& path) {
  if (trace.time.empty()) throw ContractError("dump_embeddings: empty trace");
  std::size_t d = trace.time[0].cols();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "layer,modality,token_index";
  for (std::size_t j = 0; j < d; ++j) out << ",d_" << j;
  out << '\n';
  auto emit = [&](std::size_t layer, const char* modality, const Mat& m) {
    if (m.cols() != d) throw ContractError("dump_embeddings: width changes inside the trace");
    for (std::size_t i = 0; i < m.rows(); ++i) {
      out << layer << ',' << modality << ',' << i;
      for (double v : m.row(i)) out << ',' << fmt17(v);
      out << '\n';
    }
  };
  for (std::size_t l = 0; l < trace.time.size(); ++l) {
    emit(l, "time", trace.time[l]);
    if (l < trace.language.size()) emit(l, "language", trace.language[l]);
  }
  if (!out) throw IoError("write failed for " + path.string());
}

model::LayerTrace load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("layer,modality,token_index", 0) != 0) throw IoError(path.string() + ": not an embedding dump");
  // (layer, modality) -> rows
  std::vector<std::vector<Vec>> time, language;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (std::size_t pos; (pos = line.find(',', start)) != std::string::npos; start = pos + 1) f.push_back(line.substr(start, pos - start));
    f.push_back(line.substr(start));
    if (f.size() < 4) throw IoError(path.string() + ":" + std::to_string(lineno) + ": too few fields");
    const std::size_t layer = std::stoul(f[0]);
    auto& target = f[1] == "time" ? time : language;
    if (f[1] != "time" && f[1] != "language") throw IoError(path.string() + ":" + std::to_string(lineno) + ": bad modality");
    if (target.size() <= layer) target.resize(layer + 1);
    Vec row;
    for (std::size_t k = 3; k < f.size(); ++k) {
      double v = 0.0;
      const auto [p, ec] = std::from_chars(f[k].data(), f[k].data() + f[k].size(), v);
      if (ec != std::errc() || p != f[k].data() + f[k].size()) {
        throw IoError(path.string() + ":" + std::to_string(lineno) + ": bad number '" + f[k] + "'");
      }
      row.push_back(v);
    }
    target[layer].push_back(std::move(row));
  }
  auto stack = [](const std::vector<std::vector<Vec>>& layers) {
    std::vector<Mat> out;
    for (const auto& rows : layers) {
      Mat m(rows.size(), rows.empty() ? 0 : rows[0].size());
      for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
      out.push_back(std::move(m));
    }
    return out;
  };
  return {stack(time), stack(language)};
}

}  // namespace tsup::diag
