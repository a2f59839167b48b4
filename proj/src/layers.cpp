#include "tsup/layers.hpp"

#include <cmath>

#include "tsup/error.hpp"
#include "tsup/numerics.hpp"

namespace tsup {

namespace {

const Mat& single_input(std::span<const Mat> inputs, const std::string& who) {
  if (inputs.size() != 1) {
    throw ContractError(who + ": expected 1 input, got " + std::to_string(inputs.size()));
  }
  return inputs[0];
}

void add_to(Mat& target, const Mat& delta) { target += delta; }

// Softmax backward for row-stochastic `a`: a ⊙ (da − rowsum(da ⊙ a)).
Mat softmax_backward(const Mat& a, const Mat& da) {
  Mat ds(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double s = dot(a.row(i), da.row(i));
    for (std::size_t j = 0; j < a.cols(); ++j) ds(i, j) = a(i, j) * (da(i, j) - s);
  }
  return ds;
}

}  // namespace

// ---------------------------------------------------------------- Linear

Mat Linear::forward(std::span<const Mat> inputs) {
  x_ = single_input(inputs, name());
  if (x_.cols() != w_.value.rows()) {
    throw ContractError(name() + ": input " + x_.shape() + " does not match weight " + w_.value.shape());
  }
  Mat y = matmul(x_, w_.value);
  if (b_) add_row_broadcast(y, b_->value);
  return y;
}

std::vector<Mat> Linear::backward(const Mat& dy) {
  add_matmul_tn(w_.grad, x_, dy);
  if (b_) add_col_sums(b_->grad, dy);
  return {matmul_nt(dy, w_.value)};
}

std::vector<Param*> Linear::parameters() {
  if (b_) return {&w_, b_};
  return {&w_};
}

// ---------------------------------------------------------------- LayerNorm

Mat LayerNorm::forward(std::span<const Mat> inputs) {
  const Mat& x = single_input(inputs, name());
  const std::size_t d = x.cols();
  if (g_.value.cols() != d || b_.value.cols() != d) {
    throw ContractError(name() + ": width " + std::to_string(d) + " vs gain " + g_.value.shape());
  }
  xhat_ = Mat(x.rows(), d);
  inv_std_.assign(x.rows(), 0.0);
  Mat y(x.rows(), d);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      xhat_(r, j) = (row[j] - mean) * inv;
      y(r, j) = g_.value(0, j) * xhat_(r, j) + b_.value(0, j);
    }
  }
  return y;
}

std::vector<Mat> LayerNorm::backward(const Mat& dy) {
  const std::size_t d = xhat_.cols();
  Mat dx(xhat_.rows(), d);
  Vec dxhat(d);
  for (std::size_t r = 0; r < xhat_.rows(); ++r) {
    double mean_dxhat = 0.0;
    double mean_dxhat_xhat = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      g_.grad(0, j) += dy(r, j) * xhat_(r, j);
      b_.grad(0, j) += dy(r, j);
      dxhat[j] = dy(r, j) * g_.value(0, j);
      mean_dxhat += dxhat[j];
      mean_dxhat_xhat += dxhat[j] * xhat_(r, j);
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) {
      dx(r, j) = inv_std_[r] * (dxhat[j] - mean_dxhat - xhat_(r, j) * mean_dxhat_xhat);
    }
  }
  return {dx};
}

// ---------------------------------------------------------------- MultiHeadAttention

MultiHeadAttention::MultiHeadAttention(Param& w_qkv, Param& b_qkv, Param& w_o, Param& b_o, std::size_t heads)
    : w_qkv_(w_qkv), b_qkv_(b_qkv), w_o_(w_o), b_o_(b_o), heads_(heads) {
  const std::size_t d = w_o.value.rows();
  if (heads == 0 || d % heads != 0) {
    throw ContractError("attention: width " + std::to_string(d) + " is not divisible by " +
                        std::to_string(heads) + " heads");
  }
  if (w_qkv.value.rows() != d || w_qkv.value.cols() != 3 * d) {
    throw ContractError("attention: w_qkv is " + w_qkv.value.shape() + ", expected " + std::to_string(d) + "x" +
                        std::to_string(3 * d));
  }
}

Mat MultiHeadAttention::forward(std::span<const Mat> inputs) {
  x_ = single_input(inputs, name());
  const std::size_t t = x_.rows();
  const std::size_t d = w_o_.value.rows();
  const std::size_t dh = d / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  qkv_ = matmul(x_, w_qkv_.value);
  // The key bias shifts every score of a query row by the same amount and
  // softmax is blind to that, so only the query and value biases are applied.
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t c = 0; c < d; ++c) qkv_(i, c) += b_qkv_.value(0, c);
    for (std::size_t c = 2 * d; c < 3 * d; ++c) qkv_(i, c) += b_qkv_.value(0, c);
  }
  concat_ = Mat(t, d);
  probs_.assign(heads_, Mat());
  for (std::size_t h = 0; h < heads_; ++h) {
    const std::size_t qo = h * dh, ko = d + h * dh, vo = 2 * d + h * dh;
    Mat s(t, t);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < t; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dh; ++c) acc += qkv_(i, qo + c) * qkv_(j, ko + c);
        s(i, j) = acc * scale;
      }
    probs_[h] = softmax_rows(s);
    const Mat& a = probs_[h];
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < t; ++j) {
        const double aij = a(i, j);
        for (std::size_t c = 0; c < dh; ++c) concat_(i, qo + c) += aij * qkv_(j, vo + c);
      }
  }
  Mat y = matmul(concat_, w_o_.value);
  add_row_broadcast(y, b_o_.value);
  return y;
}

std::vector<Mat> MultiHeadAttention::backward(const Mat& dy) {
  const std::size_t t = x_.rows();
  const std::size_t d = w_o_.value.rows();
  const std::size_t dh = d / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  add_matmul_tn(w_o_.grad, concat_, dy);
  add_col_sums(b_o_.grad, dy);
  const Mat dconcat = matmul_nt(dy, w_o_.value);
  Mat dqkv(t, 3 * d);
  for (std::size_t h = 0; h < heads_; ++h) {
    const std::size_t qo = h * dh, ko = d + h * dh, vo = 2 * d + h * dh;
    const Mat& a = probs_[h];
    Mat da(t, t);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < t; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dh; ++c) acc += dconcat(i, qo + c) * qkv_(j, vo + c);
        da(i, j) = acc;
        const double aij = a(i, j);
        for (std::size_t c = 0; c < dh; ++c) dqkv(j, vo + c) += aij * dconcat(i, qo + c);
      }
    const Mat ds = softmax_backward(a, da);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < t; ++j) {
        const double g = ds(i, j) * scale;
        if (g == 0.0) continue;
        for (std::size_t c = 0; c < dh; ++c) {
          dqkv(i, qo + c) += g * qkv_(j, ko + c);
          dqkv(j, ko + c) += g * qkv_(i, qo + c);
        }
      }
  }
  add_matmul_tn(w_qkv_.grad, x_, dqkv);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t c = 0; c < d; ++c) b_qkv_.grad(0, c) += dqkv(i, c);
    for (std::size_t c = 2 * d; c < 3 * d; ++c) b_qkv_.grad(0, c) += dqkv(i, c);
  }
  return {matmul_nt(dqkv, w_qkv_.value)};
}

// ---------------------------------------------------------------- FeedForward

Mat FeedForward::forward(std::span<const Mat> inputs) {
  x_ = single_input(inputs, name());
  pre_ = matmul(x_, w_in_.value);
  add_row_broadcast(pre_, b_in_.value);
  act_ = Mat(pre_.rows(), pre_.cols());
  for (std::size_t i = 0; i < pre_.size(); ++i) act_.values()[i] = gelu(pre_.values()[i]);
  Mat y = matmul(act_, w_out_.value);
  add_row_broadcast(y, b_out_.value);
  return y;
}

std::vector<Mat> FeedForward::backward(const Mat& dy) {
  add_matmul_tn(w_out_.grad, act_, dy);
  add_col_sums(b_out_.grad, dy);
  Mat dpre = matmul_nt(dy, w_out_.value);
  for (std::size_t i = 0; i < dpre.size(); ++i) dpre.values()[i] *= gelu_grad(pre_.values()[i]);
  add_matmul_tn(w_in_.grad, x_, dpre);
  add_col_sums(b_in_.grad, dpre);
  return {matmul_nt(dpre, w_in_.value)};
}

// ---------------------------------------------------------------- TransformerBlock

Mat TransformerBlock::forward(std::span<const Mat> inputs) {
  Mat x = single_input(inputs, name());
  x += apply(attn_, apply(ln1_, x));
  x += apply(ffn_, apply(ln2_, x));
  return x;
}

std::vector<Mat> TransformerBlock::backward(const Mat& dy) {
  Mat dx = dy;
  dx += ln2_.backward(ffn_.backward(dy)[0])[0];
  Mat dmid = dx;
  dx += ln1_.backward(attn_.backward(dmid)[0])[0];
  return {dx};
}

std::vector<Param*> TransformerBlock::parameters() {
  std::vector<Param*> out;
  for (Layer* l : std::initializer_list<Layer*>{&ln1_, &attn_, &ln2_, &ffn_}) {
    auto ps = l->parameters();
    out.insert(out.end(), ps.begin(), ps.end());
  }
  return out;
}

// ---------------------------------------------------------------- PrototypeCombination

Mat PrototypeCombination::forward(std::span<const Mat> inputs) {
  if (!inputs.empty()) throw ContractError("prototypes: takes no inputs");
  return matmul(wc_.value, e_.value);
}

std::vector<Mat> PrototypeCombination::backward(const Mat& dy) {
  add_to(wc_.grad, matmul_nt(dy, e_.value));
  add_matmul_tn(e_.grad, wc_.value, dy);
  return {};
}

// ---------------------------------------------------------------- PrototypeAttention

Mat PrototypeAttention::forward(std::span<const Mat> inputs) {
  if (inputs.size() != 2) throw ContractError("prototype_attention: expected inputs {T, L*}");
  t_ = inputs[0];
  p_ = inputs[1];
  q_ = matmul(t_, wq_.value);
  k_ = matmul(p_, wk_.value);
  Mat s = matmul_nt(q_, k_);
  s *= 1.0 / std::sqrt(static_cast<double>(t_.cols()));
  a_ = softmax_rows(s);
  return a_;
}

std::vector<Mat> PrototypeAttention::backward(const Mat& da) {
  Mat ds = softmax_backward(a_, da);
  ds *= 1.0 / std::sqrt(static_cast<double>(t_.cols()));
  const Mat dq = matmul(ds, k_);
  const Mat dk = matmul_tn(ds, q_);
  add_matmul_tn(wq_.grad, t_, dq);
  add_matmul_tn(wk_.grad, p_, dk);
  return {matmul_nt(dq, wq_.value), matmul_nt(dk, wk_.value)};
}

// ---------------------------------------------------------------- TopKGather

Mat TopKGather::forward(std::span<const Mat> inputs) {
  if (inputs.size() != 2) throw ContractError("topk_gather: expected inputs {T, L*}");
  const Mat& t = inputs[0];
  const Mat& p = inputs[1];
  if (t.cols() != p.cols()) throw ContractError("topk_gather: token width " + t.shape() + " vs prototypes " + p.shape());
  if (indices_.size() != t.rows()) {
    throw ContractError("topk_gather: selection covers " + std::to_string(indices_.size()) + " tokens, batch has " +
                        std::to_string(t.rows()));
  }
  tokens_ = t.rows();
  prototypes_ = p.rows();
  width_ = t.cols();
  const std::size_t k = tokens_ == 0 ? 0 : indices_[0].size();
  Mat out((k + 1) * tokens_, width_);
  std::size_t r = 0;
  for (std::size_t i = 0; i < tokens_; ++i) {
    if (indices_[i].size() != k) throw ContractError("topk_gather: ragged selection");
    std::copy(t.row(i).begin(), t.row(i).end(), out.row(r++).begin());
    for (std::size_t idx : indices_[i]) {
      if (idx >= prototypes_) throw ContractError("topk_gather: prototype index out of range");
      std::copy(p.row(idx).begin(), p.row(idx).end(), out.row(r++).begin());
    }
  }
  return out;
}

std::vector<Mat> TopKGather::backward(const Mat& dy) {
  Mat dt(tokens_, width_);
  Mat dp(prototypes_, width_);
  std::size_t r = 0;
  for (std::size_t i = 0; i < tokens_; ++i) {
    const auto src = dy.row(r++);
    std::copy(src.begin(), src.end(), dt.row(i).begin());
    for (std::size_t idx : indices_[i]) {
      const auto g = dy.row(r++);
      auto dst = dp.row(idx);
      for (std::size_t c = 0; c < width_; ++c) dst[c] += g[c];
    }
  }
  return {dt, dp};
}

// ---------------------------------------------------------------- Mixers

Mat TokenMixer::forward(std::span<const Mat> inputs) {
  x_ = single_input(inputs, name());
  if (x_.rows() != mc_.value.rows()) {
    throw ContractError("token_mixer: T_t " + x_.shape() + " does not match M_c " + mc_.value.shape());
  }
  pre_ = matmul_tn(mc_.value, x_);
  if (linear_) return pre_;
  Mat out(pre_.rows(), pre_.cols());
  for (std::size_t i = 0; i < pre_.size(); ++i) out.values()[i] = gelu(pre_.values()[i]);
  return out;
}

std::vector<Mat> TokenMixer::backward(const Mat& dy) {
  Mat dpre = dy;
  if (!linear_) {
    for (std::size_t i = 0; i < dpre.size(); ++i) dpre.values()[i] *= gelu_grad(pre_.values()[i]);
  }
  add_to(mc_.grad, matmul_nt(x_, dpre));
  return {matmul(mc_.value, dpre)};
}

Mat FeatureMixer::forward(std::span<const Mat> inputs) {
  x_ = single_input(inputs, name());
  if (x_.cols() != mf_.value.cols()) {
    throw ContractError("feature_mixer: input " + x_.shape() + " does not match M_f " + mf_.value.shape());
  }
  return matmul_nt(x_, mf_.value);
}

std::vector<Mat> FeatureMixer::backward(const Mat& dy) {
  add_matmul_tn(mf_.grad, dy, x_);
  return {matmul(dy, mf_.value)};
}

// ---------------------------------------------------------------- Dropout

Mat Dropout::forward(std::span<const Mat> inputs) {
  const Mat& x = single_input(inputs, name());
  if (rng_ == nullptr || p_ <= 0.0) {
    mask_ = Mat();
    return x;
  }
  mask_ = Mat(x.rows(), x.cols());
  const double keep = 1.0 - p_;
  Mat y = x;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double m = rng_->uniform() < keep ? 1.0 / keep : 0.0;
    mask_.values()[i] = m;
    y.values()[i] *= m;
  }
  return y;
}

std::vector<Mat> Dropout::backward(const Mat& dy) {
  if (mask_.empty()) return {dy};
  Mat dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx.values()[i] *= mask_.values()[i];
  return {dx};
}

// ---------------------------------------------------------------- ForecastHead

Mat ForecastHead::forward(std::span<const Mat> inputs) {
  const Mat& h = single_input(inputs, name());
  if (h.size() != w_.value.rows()) {
    throw ContractError("head: hidden " + h.shape() + " flattens to " + std::to_string(h.size()) +
                        " but W_h is " + w_.value.shape());
  }
  rows_ = h.rows();
  cols_ = h.cols();
  flat_ = Mat::row_vector(h.values());
  Mat y = matmul(flat_, w_.value);
  add_row_broadcast(y, b_.value);
  return y;
}

std::vector<Mat> ForecastHead::backward(const Mat& dy) {
  add_matmul_tn(w_.grad, flat_, dy);
  add_col_sums(b_.grad, dy);
  const Mat dflat = matmul_nt(dy, w_.value);
  return {Mat(rows_, cols_, dflat.storage())};
}

}  // namespace tsup
