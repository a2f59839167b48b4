#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "tsup/grad.hpp"

namespace tsup {

/// y = x W + b, applied to every row of x.
class Linear : public Layer {
 public:
  Linear(Param& weight, Param* bias) : w_(weight), b_(bias) {}
  Mat forward(std::span<const Mat> inputs) override;
  std::vector<Mat> backward(const Mat& grad_output) override;
  std::vector<Param*> parameters() override;
  std::string name() const override { return "linear(" + w_.name + ")"; }

 private:
  Param& w_;
  Param* b_;
  Mat x_;
};

/// Row-wise layer normalization with gain and bias.
class LayerNorm : public Layer {
 public:
  LayerNorm(Param& gain, Param& bias, double eps = 1e-5) : g_(gain), b_(bias), eps_(eps) {}
  Mat forward(std::span<const Mat> inputs) override;
  std::vector<Mat> backward(const Mat& grad_output) override;
  std::vector<Param*> parameters() override { return {&g_, &b_}; }
  std::string name() const override { return "layer_norm(" + g_.name + ")"; }

 private:
  Param& g_;
  Param& b_;
  double eps_;
  Mat xhat_;
  Vec inv_std_;
};

/// Bidirectional multi-head self-attention with fused QKV projection.
class MultiHeadAttention : public Layer {
 public:
  MultiHeadAttention(Param& w_qkv, Param& b_qkv, Param& w_o, Param& b_o, std::size_t heads);
  Mat forward(std::span<const Mat> inputs) override;
  std::vector<Mat> backward(const Mat& grad_output) override;
  std::vector<Param*> parameters() override { return {&w_qkv_, &b_qkv_, &w_o_, &b_o_}; }
  std::string name() const override { return "attention(" + w_qkv_.name + ")"; }

 private:
  Param& w_qkv_;
  Param& b_qkv_;
  Param& w_o_;
  Param& b_o_;
  std::size_t heads_;
  Mat x_;
  Mat qkv_;
  std::vector<Mat> probs_;  // per head, T x T
  Mat concat_;
};

/// GELU MLP: gelu(x W_in + b_in) W_out + b_out.
class FeedForward : public Layer {
 public:
  FeedForward(Param& w_in, Param& b_in, Param& w_out, Param& b_out)
      : w_in_(w_in), b_in_(b_in), w_out_(w_out), b_out_(b_out) {}
  Mat forward(std::span<const Mat> inputs) override;
  std::vector<Mat> backward(const Mat& grad_output) override;
  std::vector<Param*> parameters() override { return {&w_in_, &b_in_, &w_out_, &b_out_}; }
  std::string name() const override { return "ffn(" + w_in_.name + ")"; }

 private:
  Param& w_in_;
  Param& b_in_;
  Param& w_out_;
  Param& b_out_;
  Mat x_;
  Mat pre_;
  Mat act_;
};

/// Pre-norm residual block: x += MHA(LN1(x)); x += FFN(LN2(x)).
class TransformerBlock : public Layer {
 public:
  TransformerBlock(LayerNorm ln1, MultiHeadAttention attn, LayerNorm ln2, FeedForward ffn)
      : ln1_(std::move(ln1)), attn_(std::move(attn)), ln2_(std::move(ln2)), ffn_(std::move(ffn)) {}
  Mat forward(std::span<const Mat> inputs) override;
  std::vector<Mat> backward(const Mat& grad_output) override;
  std::vector<Param*> parameters() override;
  std::string name() const override { return "block"; }

 private:
  LayerNorm ln1_;
  MultiHeadAttention attn_;
  LayerNorm ln2_;
  FeedForward ffn_;
};

/// Prototypes as linear combinations of the vocabulary: L* = W_c E. No inputs.
class PrototypeCombination : public Layer {
 public:
  PrototypeCombination(Param& combination, Param& vocab) : wc_(combination), e_(vocab) {}
  Mat forward(std::span<const Mat> inputs) override;
  std::vector<Mat> backward(const Mat& grad_output) override;
  std::vector<Param*> parameters() override { return {&wc_, &e_}; }
  std::string name() const override { return "prototypes"; }

 private:
  Param& wc_;
  Param& e_;
};

/// Cross-attention weights softmax((T W_q)(L* W_k)ᵀ / √d); inputs {T, L*}.
class PrototypeAttention : public Layer {
 public:
  PrototypeAttention(Param& w_q, Param& w_k) : wq_(w_q), wk_(w_k) {}
  Mat forward(std::span<const Mat> inputs) override;
  std::vector<Mat> backward(const Mat& grad_output) override;
  std::vector<Param*> parameters() override { return {&wq_, &wk_}; }
  std::string name() const override { return "prototype_attention"; }

 private:
  Param& wq_;
  Param& wk_;
  Mat t_, p_, q_, k_, a_;
};

/// Builds T_t by interleaving each time token with its selected prototypes:
/// [t_1, p_11..p_1K, t_2, ...]. Inputs {T, L*}; selection is fixed per call.
class TopKGather : public Layer {
 public:
  /// indices[i] lists the prototype rows chosen for time token i.
  void set_selection(std::vector<std::vector<std::size_t>> indices) { indices_ = std::move(indices); }
  Mat forward(std::span<const Mat> inputs) override;
  std::vector<Mat> backward(const Mat& grad_output) override;
  std::string name() const override { return "topk_gather"; }

 private:
  std::vector<std::vector<std::size_t>> indices_;
  std::size_t tokens_ = 0, prototypes_ = 0, width_ = 0;
};

/// Token mixing gelu(M_cᵀ T_t); `linear` bypasses the GELU.
class TokenMixer : public Layer {
 public:
  explicit TokenMixer(Param& m_c, bool linear = false) : mc_(m_c), linear_(linear) {}
  Mat forward(std::span<const Mat> inputs) override;
  std::vector<Mat> backward(const Mat& grad_output) override;
  std::vector<Param*> parameters() override { return {&mc_}; }
  std::string name() const override { return "token_mixer"; }

 private:
  Param& mc_;
  bool linear_;
  Mat x_, pre_;
};

/// Feature mixing G M_fᵀ.
class FeatureMixer : public Layer {
 public:
  explicit FeatureMixer(Param& m_f) : mf_(m_f) {}
  Mat forward(std::span<const Mat> inputs) override;
  std::vector<Mat> backward(const Mat& grad_output) override;
  std::vector<Param*> parameters() override { return {&mf_}; }
  std::string name() const override { return "feature_mixer"; }

 private:
  Param& mf_;
  Mat x_;
};

/// Inverted dropout. Identity unless a generator is attached for the call.
class Dropout : public Layer {
 public:
  explicit Dropout(double p) : p_(p) {}
  /// Attach a generator to drop units on the next forward; nullptr = eval mode.
  void arm(Rng* rng) { rng_ = rng; }
  Mat forward(std::span<const Mat> inputs) override;
  std::vector<Mat> backward(const Mat& grad_output) override;
  std::string name() const override { return "dropout"; }

 private:
  double p_;
  Rng* rng_ = nullptr;
  Mat mask_;
};

/// Flatten n x d row-major and apply an affine map to H outputs (1 x H).
class ForecastHead : public Layer {
 public:
  ForecastHead(Param& w, Param& b) : w_(w), b_(b) {}
  Mat forward(std::span<const Mat> inputs) override;
  std::vector<Mat> backward(const Mat& grad_output) override;
  std::vector<Param*> parameters() override { return {&w_, &b_}; }
  std::string name() const override { return "head"; }

 private:
  Param& w_;
  Param& b_;
  Mat flat_;
  std::size_t rows_ = 0, cols_ = 0;
};

/// Convenience for single-input layers.
inline Mat apply(Layer& layer, const Mat& x) { return layer.forward(std::span<const Mat>(&x, 1)); }

}  // namespace tsup
