#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "tsup/mat.hpp"
#include "tsup/model.hpp"

namespace tsup::diag {

struct CosineStats {
  std::size_t pairs = 0;
  double mean = 0.0;
  double std = 0.0;  // population std over all pairs
  double min = 0.0;
  double max = 0.0;
  std::array<double, 9> deciles{};  // 10%..90%, linear interpolation between order statistics
  std::size_t excluded_a = 0;       // zero-norm rows skipped
  std::size_t excluded_b = 0;
};

/// Statistics of cos(a_i, b_j) over every pair of nonzero rows.
CosineStats pairwise_cosine_stats(const Mat& a, const Mat& b);
/// Statistics of cos(a_i, a_j) over pairs i < j; zero pairs when fewer than two nonzero rows.
CosineStats intra_cosine_stats(const Mat& a);

struct EvrReport {
  Vec eigenvalues;  // covariance spectrum, descending, clamped at 0
  Vec cumulative;   // cumulative explained-variance ratio
  std::size_t intrinsic_dim = 0;
  double threshold = 0.99;
  bool degenerate = false;  // every row identical
};

/// PCA of the column-centred tokens (covariance divided by rows − 1). The
/// intrinsic dimension is the smallest k whose cumulative ratio reaches `threshold`.
EvrReport intrinsic_dimension(const Mat& tokens, double threshold = 0.99);

struct AlignmentIndex {
  double centroid_cosine = 0.0;
  /// ‖c_a − c_b‖ over the pooled RMS distance of tokens from their own centroid.
  double collapse_ratio = 0.0;
};

AlignmentIndex pseudo_alignment_index(const Mat& a, const Mat& b, const std::string& name_a = "time",
                                      const std::string& name_b = "language");

struct LayerReport {
  std::size_t layer = 0;
  CosineStats cross;
  CosineStats intra_time;
  CosineStats intra_language;
  AlignmentIndex alignment;
};

std::vector<LayerReport> trace_report(const model::LayerTrace& trace);

/// Runs every window through the network and stacks its raw and fused tokens.
/// The layer trace pools the time tokens of the first `trace_windows` windows
/// (pairwise statistics grow quadratically) next to the propagated language batch.
struct Probe {
  Mat raw;
  Mat fused;
  model::LayerTrace trace;
};
Probe probe_windows(model::TimeSup& net, const std::vector<data::SeriesWindow>& windows, std::size_t language_count,
                    std::uint64_t language_seed, std::size_t trace_windows = 16);

std::string cosine_json(const CosineStats& s);
std::string evr_json(const EvrReport& r);
/// {"layers":[{"layer":0,"cross":{...},"intra_time":{...},"intra_language":{...},"alignment":{...}},...]}
std::string trace_json(const std::vector<LayerReport>& reports);

/// CSV `layer,modality,token_index,d_0,...`, one row per token per entry,
/// 17 significant digits. Empty traces are rejected before the file is created.
void dump_embeddings(const model::LayerTrace& trace, const std::filesystem::path& path);
model::LayerTrace load_embeddings(const std::filesystem::path& path);

}  // namespace tsup::diag
