#include "tsup/theory.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "tsup/error.hpp"
#include "tsup/numerics.hpp"

namespace tsup::theory {

namespace {

constexpr std::size_t kChunk = 4096;

// Streaming mean / M2 (Welford), merged with Chan's formula. A constant
// input yields its value exactly as the mean.
struct Running {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void push(double x) {
    ++n;
    const double delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean);
  }

  void merge(const Running& o) {
    if (o.n == 0) return;
    if (n == 0) {
      *this = o;
      return;
    }
    const double total = static_cast<double>(n + o.n);
    const double delta = o.mean - mean;
    mean += delta * static_cast<double>(o.n) / total;
    m2 += o.m2 + delta * delta * static_cast<double>(n) * static_cast<double>(o.n) / total;
    n += o.n;
  }

  double sample_std() const { return n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1)) : 0.0; }
};

// Trials split into fixed-size chunks; chunk c draws from stream split(c) and
// the chunk accumulators are merged in index order. The result depends only
// on (trials, rng), never on how chunks are scheduled.
Running chunked(std::size_t trials, RngState rng, const std::function<double(Rng&)>& draw) {
  Running total;
  for (std::size_t c = 0; c * kChunk < trials; ++c) {
    Rng gen(rng.split(c));
    Running part;
    const std::size_t end = std::min(trials, (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i) part.push(draw(gen));
    total.merge(part);
  }
  return total;
}

void require_same_ambient(const ModalitySpec& a, const ModalitySpec& b) {
  if (a.ambient_dim() != b.ambient_dim()) {
    throw ContractError("modalities live in different ambient spaces (" + std::to_string(a.ambient_dim()) + " vs " +
                        std::to_string(b.ambient_dim()) + ")");
  }
}

}  // namespace

void ModalitySpec::validate() const {
  if (manifold_dim > mu.size()) {
    throw ContractError("ModalitySpec: manifold dimension " + std::to_string(manifold_dim) + " exceeds ambient " +
                        std::to_string(mu.size()));
  }
  if (!(sigma >= 0.0)) throw ContractError("ModalitySpec: sigma must be non-negative");
}

ModalitySpec aligned_spec(std::size_t ambient, std::size_t manifold_dim, double sigma, std::size_t axis) {
  ModalitySpec s{Vec(ambient, 0.0), sigma, manifold_dim};
  if (axis >= ambient) throw ContractError("aligned_spec: axis outside ambient space");
  s.mu[axis] = 1.0;
  s.validate();
  return s;
}

Vec sample_modality(const ModalitySpec& spec, Rng& rng) {
  spec.validate();
  Vec x = spec.mu;
  if (spec.sigma == 0.0) return x;
  for (std::size_t i = 0; i < spec.manifold_dim; ++i) x[i] += spec.sigma * rng.normal();
  return x;
}

double closed_form_cosine(const ModalitySpec& ts, const ModalitySpec& l) {
  ts.validate();
  l.validate();
  require_same_ambient(ts, l);
  const double nts = dot(ts.mu, ts.mu);
  const double nl = dot(l.mu, l.mu);
  if (nts == 0.0 || nl == 0.0) throw ZeroNormError("closed_form_cosine: modality mean has zero norm");
  const double m = static_cast<double>(ts.manifold_dim);
  const double n = static_cast<double>(l.manifold_dim);
  return dot(ts.mu, l.mu) /
         (std::sqrt(nts + m * ts.sigma * ts.sigma) * std::sqrt(nl + n * l.sigma * l.sigma));
}

CosineEstimate monte_carlo_cosine(const ModalitySpec& first, const ModalitySpec& second, std::size_t trials,
                                  RngState rng) {
  if (trials < 100) throw ContractError("monte_carlo_cosine: at least 100 trials required");
  first.validate();
  second.validate();
  require_same_ambient(first, second);
  const Running r = chunked(trials, rng, [&](Rng& gen) {
    const Vec a = sample_modality(first, gen);
    const Vec b = sample_modality(second, gen);
    return cosine(a, b);
  });
  return {r.mean, r.sample_std() / std::sqrt(static_cast<double>(trials)), trials};
}

double MomentEstimate::std_error() const { return trials ? std / std::sqrt(static_cast<double>(trials)) : 0.0; }

MomentEstimate norm_sq_moments(const ModalitySpec& spec, std::size_t trials, RngState rng) {
  spec.validate();
  const Running r = chunked(trials, rng, [&](Rng& gen) {
    const Vec x = sample_modality(spec, gen);
    return dot(x, x);
  });
  return {r.mean, r.sample_std(), trials};
}

MomentEstimate inner_product_moments(const ModalitySpec& ts, const ModalitySpec& l, std::size_t trials,
                                     RngState rng) {
  require_same_ambient(ts, l);
  const Running r = chunked(trials, rng, [&](Rng& gen) {
    const Vec a = sample_modality(ts, gen);
    const Vec b = sample_modality(l, gen);
    return dot(a, b);
  });
  return {r.mean, r.sample_std(), trials};
}

ConcentrationCurve concentration_curve(const ModalitySpec& tmpl, std::span<const std::size_t> m_values,
                                       std::size_t trials, RngState rng) {
  if (m_values.size() < 2) throw ContractError("concentration_curve: need at least two m values");
  if (!std::is_sorted(m_values.begin(), m_values.end()) ||
      std::adjacent_find(m_values.begin(), m_values.end()) != m_values.end()) {
    throw ContractError("concentration_curve: m values must be strictly ascending");
  }
  if (trials < 1000) throw ContractError("concentration_curve: at least 1000 trials required");

  ConcentrationCurve curve;
  bool degenerate = false;
  for (std::size_t k = 0; k < m_values.size(); ++k) {
    const std::size_t m = m_values[k];
    ModalitySpec spec = tmpl;
    spec.mu.resize(std::max(tmpl.mu.size(), m), 0.0);
    spec.manifold_dim = m;
    const MomentEstimate est = norm_sq_moments(spec, trials, rng.split(k));
    ConcentrationRow row{m, est.mean, est.std, est.mean > 0.0 ? est.std / est.mean : 0.0};
    degenerate = degenerate || row.rel_fluct <= 0.0;
    curve.rows.push_back(row);
  }

  if (degenerate) {
    curve.slope = std::numeric_limits<double>::quiet_NaN();
    return curve;
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(curve.rows.size());
  for (const auto& row : curve.rows) {
    const double x = std::log(static_cast<double>(row.m));
    const double y = std::log(row.rel_fluct);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  curve.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  return curve;
}

std::string concentration_csv(const ConcentrationCurve& curve) {
  std::ostringstream out;
  out.precision(17);
  out << "m,mean,std,rel_fluct\n";
  for (const auto& r : curve.rows) out << r.m << ',' << r.mean << ',' << r.std << ',' << r.rel_fluct << '\n';
  return out.str();
}

std::string summary_json(double closed_form, const CosineEstimate& mc, double slope) {
  nlohmann::ordered_json j;
  j["closed_form"] = closed_form;
  j["mc_mean"] = mc.mean;
  j["mc_stderr"] = mc.std_error;
  if (std::isfinite(slope)) {
    j["slope"] = slope;
  } else {
    j["slope"] = nullptr;
  }
  return j.dump(2);
}

}  // namespace tsup::theory
