#include "tsup/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "tsup/error.hpp"

namespace tsup {

namespace {

void require_shape(bool ok, const char* op, const Mat& a, const Mat& b) {
  if (!ok) {
    throw ContractError(std::string(op) + ": incompatible shapes " + a.shape() + " and " + b.shape());
  }
}

}  // namespace

Mat matmul(const Mat& a, const Mat& b) {
  require_shape(a.cols() == b.rows(), "matmul", a, b);
  Mat out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* br = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

Mat matmul_tn(const Mat& a, const Mat& b) {
  Mat out(a.cols(), b.cols());
  add_matmul_tn(out, a, b);
  return out;
}

void add_matmul_tn(Mat& out, const Mat& a, const Mat& b) {
  require_shape(a.rows() == b.rows(), "matmul_tn", a, b);
  if (out.rows() != a.cols() || out.cols() != b.cols()) {
    throw ContractError("add_matmul_tn: output " + out.shape() + " does not match " +
                        std::to_string(a.cols()) + "x" + std::to_string(b.cols()));
  }
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* br = b.row(k).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      double* o = out.row(i).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += aki * br[j];
    }
  }
}

Mat matmul_nt(const Mat& a, const Mat& b) {
  require_shape(a.cols() == b.cols(), "matmul_nt", a, b);
  Mat out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(ar, b.row(j));
  }
  return out;
}

Mat transpose(const Mat& a) {
  Mat out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

void add_col_sums(Mat& out, const Mat& a) {
  if (out.rows() != 1 || out.cols() != a.cols()) {
    throw ContractError("add_col_sums: target " + out.shape() + " for input " + a.shape());
  }
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(0, j) += a(i, j);
}

void add_row_broadcast(Mat& a, const Mat& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw ContractError("add_row_broadcast: bias " + bias.shape() + " for input " + a.shape());
  }
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) a(i, j) += bias(0, j);
}

Mat softmax_rows(const Mat& x) {
  Mat out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto in = x.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    for (double& v : o) v /= sum;
  }
  return out;
}

Vec layer_norm_row(std::span<const double> x, std::span<const double> gain,
                   std::span<const double> bias, double eps) {
  if (x.size() != gain.size() || x.size() != bias.size() || x.empty()) {
    throw ContractError("layer_norm_row: lengths " + std::to_string(x.size()) + ", " +
                        std::to_string(gain.size()) + ", " + std::to_string(bias.size()));
  }
  if (!(eps > 0.0)) throw ContractError("layer_norm_row: eps must be positive");
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const double inv = 1.0 / std::sqrt(var + eps);
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gain[i] * (x[i] - mean) * inv + bias[i];
  return y;
}

double dot(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw ContractError("dot: lengths " + std::to_string(u.size()) + " and " + std::to_string(v.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

double norm(std::span<const double> u) { return std::sqrt(dot(u, u)); }

double cosine(std::span<const double> u, std::span<const double> v) {
  const double nu = norm(u);
  const double nv = norm(v);
  if (nu == 0.0 || nv == 0.0) throw ZeroNormError("cosine: zero-norm vector");
  return dot(u, v) / (nu * nv);
}

SymEig sym_eig(const Mat& c, double tol, int max_sweeps) {
  if (c.rows() != c.cols()) throw ContractError("sym_eig: matrix is not square (" + c.shape() + ")");
  const std::size_t n = c.rows();
  double scale = 1.0;
  for (double v : c.values()) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(c(i, j) - c(j, i)) > 1e-10 * scale) {
        std::ostringstream msg;
        msg << "sym_eig: matrix is not symmetric at (" << i << "," << j << ")";
        throw ContractError(msg.str());
      }

  Mat a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (c(i, j) + c(j, i));
  Mat v = Mat::identity(n);

  auto max_off = [&] {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) m = std::max(m, std::abs(a(i, j)));
    return m;
  };

  const double threshold = tol * scale;
  int sweep = 0;
  double off = max_off();
  while (off >= threshold) {
    if (sweep == max_sweeps) {
      std::ostringstream msg;
      msg << "sym_eig: no convergence after " << max_sweeps << " sweeps, max off-diagonal " << off;
      throw ConvergenceError(msg.str());
    }
    ++sweep;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        // Negligible against both diagonal entries: drop it.
        if (std::abs(apq) < 1e-18 * std::max(std::abs(app), std::abs(aqq))) {
          a(p, q) = a(q, p) = 0.0;
          continue;
        }
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double cs = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * cs;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = cs * akp - sn * akq;
          a(k, q) = sn * akp + cs * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = cs * apk - sn * aqk;
          a(q, k) = sn * apk + cs * aqk;
        }
        a(p, q) = a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = cs * vkp - sn * vkq;
          v(k, q) = sn * vkp + cs * vkq;
        }
      }
    }
    off = max_off();
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
  SymEig out;
  out.values.resize(n);
  out.vectors = Mat(n, n);
  out.sweeps = sweep;
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = a(order[j], order[j]);
    for (std::size_t k = 0; k < n; ++k) out.vectors(k, j) = v(k, order[j]);
  }
  return out;
}

Vec sample_gaussian(Rng& rng, std::size_t n, double mean, double stddev) {
  if (!(stddev >= 0.0)) throw ContractError("sample_gaussian: negative standard deviation");
  Vec out(n, mean);
  if (stddev == 0.0) return out;
  for (double& x : out) x = mean + stddev * rng.normal();
  return out;
}

double gelu(double x) {
  constexpr double k = 0.7978845608028654;  // √(2/π)
  return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}

double gelu_grad(double x) {
  constexpr double k = 0.7978845608028654;
  const double t = std::tanh(k * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * 0.044715 * x * x);
}

}  // namespace tsup
