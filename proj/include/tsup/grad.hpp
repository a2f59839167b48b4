#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "tsup/mat.hpp"
#include "tsup/rng.hpp"

namespace tsup {

struct Param {
  std::string name;
  Mat value;
  Mat grad;  // same shape as value
  bool trainable = true;

  Param() = default;
  Param(std::string n, Mat v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()), trainable(train) {}

  void zero_grad() { grad.fill(0.0); }
};

/// Named parameters with stable addresses; iteration is in name order.
class ParamSet {
 public:
  Param& add(const std::string& name, Mat value, bool trainable = true);
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t size() const { return params_.size(); }

  void zero_grads();
  /// Copy of every value, keyed by name.
  std::map<std::string, Mat> snapshot() const;
  void restore(const std::map<std::string, Mat>& values);

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Param> params_;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::map<std::string, Mat> m;
  std::map<std::string, Mat> v;
};

/// One bias-corrected Adam update on the trainable params, then zeroes all
/// grads. A non-finite grad anywhere aborts the step before any value moves.
void adam_step(ParamSet& params, AdamState& state, double lr);

/// Differentiable layer with a hand-written backward pass.
///
/// `backward` consumes the cache left by the latest `forward`, returns one
/// gradient per forward input and accumulates parameter gradients into
/// `Param::grad`.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Mat forward(std::span<const Mat> inputs) = 0;
  virtual std::vector<Mat> backward(const Mat& grad_output) = 0;
  virtual std::vector<Param*> parameters() { return {}; }
  virtual std::string name() const = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "param:<name>[i]" or "input:<k>[i]"
  std::size_t coordinates = 0;
};

/// Central-difference check of a layer's backward pass against the random
/// scalar probe f = Σ R ⊙ forward(inputs). Error per coordinate is
/// |a − n| / max(1e-8, |a|, |n|); the maximum over all params and inputs is returned.
GradCheckResult finite_diff_check(Layer& layer, std::vector<Mat> inputs, Rng& rng, double eps = 1e-5);

}  // namespace tsup
