#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tsup/mat.hpp"
#include "tsup/rng.hpp"

namespace tsup::theory {

/// Gaussian modality x = mu + ε, with ε ~ N(0, sigma²) on the first
/// `manifold_dim` coordinates of the ambient space and zero elsewhere.
struct ModalitySpec {
  Vec mu;
  double sigma = 0.0;
  std::size_t manifold_dim = 0;

  std::size_t ambient_dim() const { return mu.size(); }
  /// Throws ContractError on manifold_dim > ambient or negative sigma.
  void validate() const;
};

/// Unit mean along `axis` of an ambient space of size `ambient`.
ModalitySpec aligned_spec(std::size_t ambient, std::size_t manifold_dim, double sigma, std::size_t axis = 0);

struct CosineEstimate {
  double mean = 0.0;
  double std_error = 0.0;  // sample std / √trials
  std::size_t trials = 0;
};

Vec sample_modality(const ModalitySpec& spec, Rng& rng);

/// ⟨μ_ts, μ_l⟩ / (√(‖μ_ts‖² + m σ_ts²) · √(‖μ_l‖² + n σ_l²)).
double closed_form_cosine(const ModalitySpec& ts, const ModalitySpec& l);

/// Mean and standard error of cos(x_ts, x_l) over paired draws. Each trial
/// samples `first` then `second` from one stream, so swapping the arguments
/// swaps which modality consumes the earlier draws.
CosineEstimate monte_carlo_cosine(const ModalitySpec& first, const ModalitySpec& second, std::size_t trials,
                                  RngState rng);

struct MomentEstimate {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
  std::size_t trials = 0;
  double std_error() const;
};

/// Sample moments of ‖x‖² for x drawn from `spec`.
MomentEstimate norm_sq_moments(const ModalitySpec& spec, std::size_t trials, RngState rng);
/// Sample moments of ⟨x_ts, x_l⟩ over independent pairs.
MomentEstimate inner_product_moments(const ModalitySpec& ts, const ModalitySpec& l, std::size_t trials,
                                     RngState rng);

struct ConcentrationRow {
  std::size_t m = 0;
  double mean = 0.0;
  double std = 0.0;
  double rel_fluct = 0.0;
};

struct ConcentrationCurve {
  std::vector<ConcentrationRow> rows;
  double slope = 0.0;  // least-squares slope of log rel_fluct vs log m; NaN if any fluctuation is 0
};

/// Relative fluctuation std(‖x‖²)/mean(‖x‖²) as the noise support grows.
/// For each m the template mean is zero-padded to max(|mu|, m) coordinates
/// and the noise support is set to m.
ConcentrationCurve concentration_curve(const ModalitySpec& tmpl, std::span<const std::size_t> m_values,
                                       std::size_t trials, RngState rng);

/// CSV with header `m,mean,std,rel_fluct`, 17 significant digits.
std::string concentration_csv(const ConcentrationCurve& curve);

/// JSON object with keys closed_form, mc_mean, mc_stderr, slope (in that order).
std::string summary_json(double closed_form, const CosineEstimate& mc, double slope);

}  // namespace tsup::theory
