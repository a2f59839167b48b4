#include "tsup/grad.hpp"

#include <algorithm>
#include <cmath>

#include "tsup/error.hpp"

namespace tsup {

Param& ParamSet::add(const std::string& name, Mat value, bool trainable) {
  auto [it, inserted] = params_.try_emplace(name, name, std::move(value), trainable);
  if (!inserted) throw ContractError("ParamSet: duplicate parameter '" + name + "'");
  return it->second;
}

Param& ParamSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("ParamSet: no parameter '" + name + "'");
  return it->second;
}

const Param& ParamSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("ParamSet: no parameter '" + name + "'");
  return it->second;
}

void ParamSet::zero_grads() {
  for (auto& [_, p] : params_) p.zero_grad();
}

std::map<std::string, Mat> ParamSet::snapshot() const {
  std::map<std::string, Mat> out;
  for (const auto& [name, p] : params_) out.emplace(name, p.value);
  return out;
}

void ParamSet::restore(const std::map<std::string, Mat>& values) {
  for (const auto& [name, v] : values) {
    Param& p = at(name);
    if (!p.value.same_shape(v)) throw ContractError("ParamSet::restore: shape mismatch for '" + name + "'");
    p.value = v;
  }
}

void adam_step(ParamSet& params, AdamState& state, double lr) {
  if (!(lr >= 0.0)) throw ContractError("adam_step: learning rate must be non-negative");
  for (const auto& [name, p] : params) {
    if (!p.grad.all_finite()) throw NumericError("adam_step: non-finite gradient in '" + name + "'");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (auto& [name, p] : params) {
    if (p.trainable) {
      auto [mit, _m] = state.m.try_emplace(name, p.value.rows(), p.value.cols());
      auto [vit, _v] = state.v.try_emplace(name, p.value.rows(), p.value.cols());
      auto m = mit->second.values();
      auto v = vit->second.values();
      auto g = p.grad.values();
      auto w = p.value.values();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
        v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
      }
    }
    p.zero_grad();
  }
}

namespace {

double probe(Layer& layer, std::span<const Mat> inputs, const Mat& r) {
  const Mat y = layer.forward(inputs);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += r.values()[i] * y.values()[i];
  return s;
}

void compare(double analytic, double numeric, const std::string& where, GradCheckResult& out) {
  const double err = std::abs(analytic - numeric) / std::max({1e-8, std::abs(analytic), std::abs(numeric)});
  ++out.coordinates;
  if (err > out.max_rel_error || !std::isfinite(err)) {
    out.max_rel_error = std::isfinite(err) ? err : INFINITY;
    out.worst = where;
  }
}

}  // namespace

GradCheckResult finite_diff_check(Layer& layer, std::vector<Mat> inputs, Rng& rng, double eps) {
  const std::vector<Param*> params = layer.parameters();
  const Mat y = layer.forward(inputs);
  Mat r(y.rows(), y.cols());
  for (double& v : r.values()) v = rng.normal();

  for (Param* p : params) p->zero_grad();
  const std::vector<Mat> input_grads = layer.backward(r);
  if (input_grads.size() != inputs.size()) {
    throw ContractError(layer.name() + ": backward returned " + std::to_string(input_grads.size()) +
                        " input gradients for " + std::to_string(inputs.size()) + " inputs");
  }
  std::vector<Mat> param_grads;
  for (Param* p : params) param_grads.push_back(p->grad);

  GradCheckResult out;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k]->value.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      w[i] = saved + eps;
      const double fp = probe(layer, inputs, r);
      w[i] = saved - eps;
      const double fm = probe(layer, inputs, r);
      w[i] = saved;
      compare(param_grads[k].values()[i], (fp - fm) / (2.0 * eps),
              "param:" + params[k]->name + "[" + std::to_string(i) + "]", out);
    }
  }
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto x = inputs[k].values();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      x[i] = saved + eps;
      const double fp = probe(layer, inputs, r);
      x[i] = saved - eps;
      const double fm = probe(layer, inputs, r);
      x[i] = saved;
      compare(input_grads[k].values()[i], (fp - fm) / (2.0 * eps),
              "input:" + std::to_string(k) + "[" + std::to_string(i) + "]", out);
    }
  }
  for (Param* p : params) p->zero_grad();
  return out;
}

}  // namespace tsup
