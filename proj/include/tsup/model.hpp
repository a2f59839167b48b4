#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tsup/data.hpp"
#include "tsup/grad.hpp"
#include "tsup/layers.hpp"
#include "tsup/weights.hpp"

namespace tsup::model {

enum class Component { LayerNorm, Attention, FeedForward, Embedding };
enum class Init { Pretrained, Random };
enum class Mode { Frozen, Trainable };

struct ComponentSetting {
  Init init = Init::Random;
  Mode mode = Mode::Frozen;
  friend bool operator==(const ComponentSetting&, const ComponentSetting&) = default;
};

constexpr std::array<Component, 4> kComponents{Component::LayerNorm, Component::Attention, Component::FeedForward,
                                               Component::Embedding};
/// "ln", "mha", "ffn", "emb".
std::string component_key(Component c);

struct ModelConfig {
  std::size_t d = 64;
  std::size_t layers = 3;
  std::size_t heads = 4;
  std::size_t vocab = 256;
  std::size_t prototypes = 100;
  std::size_t top_k = 4;
  std::size_t compressed_tokens = 8;
  std::size_t ffn_mult = 4;
  double dropout = 0.1;
  bool enhancer = true;
  /// input_len, patch and stride come from here; horizon is the forecast length.
  data::WindowSpec window;
  std::array<ComponentSetting, 4> components{{{Init::Random, Mode::Trainable},
                                              {Init::Random, Mode::Frozen},
                                              {Init::Random, Mode::Frozen},
                                              {Init::Random, Mode::Frozen}}};

  ComponentSetting& setting(Component c) { return components[static_cast<std::size_t>(c)]; }
  const ComponentSetting& setting(Component c) const { return components[static_cast<std::size_t>(c)]; }
  std::size_t horizon() const { return window.horizon; }
  std::size_t num_patches() const { return window.num_patches(); }
  /// Token count entering the backbone: n with the enhancer, N without.
  std::size_t backbone_tokens() const { return enhancer ? compressed_tokens : num_patches(); }
  bool any_pretrained() const;
  void validate() const;
};

/// Hidden states after each stage of the backbone: entry 0 is the input,
/// entry i the output of block i. Language entries are empty when no
/// language batch was propagated.
struct LayerTrace {
  std::vector<Mat> time;
  std::vector<Mat> language;

  std::size_t size() const { return time.size(); }
};

/// Creates every parameter of the model. Random components draw from `rng`
/// (N(0, 0.02) weights, zero biases, unit gains); pretrained components are
/// then overwritten from `weights`. A missing tensor raises an error listing
/// every missing name.
ParamSet init_model(const ModelConfig& config, Rng& rng, const std::vector<Tensor>* weights = nullptr);

/// Copies every named tensor into `params`; shapes must match.
/// With `require_all`, every parameter must be present in `tensors`.
void load_tensors(ParamSet& params, const std::vector<Tensor>& tensors, bool require_all);
std::vector<Tensor> export_tensors(const ParamSet& params);

/// Names of the backbone tensors belonging to a component.
std::vector<std::string> component_tensor_names(const ModelConfig& config, Component c);

// ---- stateless operations

Mat embed_patches(const Mat& patches, const Mat& w_e, const Mat& b_e);
Mat make_prototypes(const Mat& w_c, const Mat& vocab);

struct Selection {
  /// indices[i] are the K prototype rows for token i, by descending weight.
  std::vector<std::vector<std::size_t>> indices;
  std::vector<Vec> weights;
};

/// Ranks each row of `logits` and keeps the K largest; ties go to the lower index.
Selection topk_from_logits(const Mat& logits, std::size_t k);
/// softmax((T W_q)(L* W_k)ᵀ / √d) ranked per token.
Selection topk_select(const Mat& tokens, const Mat& prototypes, const Mat& w_q, const Mat& w_k, std::size_t k);

/// [t_1, p_11..p_1K, t_2, ...], ((K+1)·N) x d.
Mat interleave(const Mat& tokens, const Mat& prototypes, const Selection& sel);
/// gelu(M_cᵀ T_t) M_fᵀ, or without the GELU when `linear`.
Mat enhance(const Mat& tokens, const Mat& prototypes, const Selection& sel, const Mat& m_c, const Mat& m_f,
            bool linear = false);

struct BackboneOutput {
  Mat hidden;
  std::vector<Mat> trace;  // layers + 1 entries
};

/// Pre-norm blocks only; the final layer norm is not applied.
BackboneOutput backbone_forward(const Mat& tokens, ParamSet& params, const ModelConfig& config);

Vec forecast_head(const Mat& hidden, const Mat& w_h, const Mat& b_h);

// ---- the network

/// Intermediate tokens of one window, filled on request.
struct Capture {
  Mat raw_tokens;    // N x d after patch embedding
  Mat fused_tokens;  // backbone input (T* with the enhancer, T without)
  LayerTrace trace;
};

/// Full forecaster over one channel window. Layers cache activations, so a
/// `backward` must follow the `predict` it differentiates. Prototypes are
/// computed once per batch; their gradient accumulates until `finish_batch`.
class TimeSup {
 public:
  TimeSup(const ModelConfig& config, ParamSet& params);

  const ModelConfig& config() const { return config_; }
  ParamSet& params() { return params_; }

  /// Recomputes L* = W_c E and clears its pending gradient.
  void begin_batch();
  /// Pushes the accumulated prototype gradient into W_c and E.
  void finish_batch();
  const Mat& prototypes() const { return prototypes_; }

  /// Forecast in the input's units (RevIN applied inside). Dropout is active
  /// only when `dropout_rng` is non-null.
  Vec predict(std::span<const double> input, Rng* dropout_rng = nullptr, Capture* capture = nullptr);
  /// Gradient of the loss w.r.t. the latest prediction.
  void backward(std::span<const double> grad_prediction);

  /// Propagates `tokens` through the blocks alone and returns the trace.
  std::vector<Mat> propagate(const Mat& tokens);
  /// Seeded sample of `count` prototype rows (distinct, sorted by index).
  Mat language_batch(std::size_t count, std::uint64_t seed) const;

 private:
  ModelConfig config_;
  ParamSet& params_;
  Linear patch_;
  Dropout drop_patch_;
  PrototypeCombination combine_;
  TopKGather gather_;
  TokenMixer token_mix_;
  Dropout drop_token_;
  FeatureMixer feature_mix_;
  Dropout drop_feature_;
  std::vector<TransformerBlock> blocks_;
  LayerNorm ln_f_;
  ForecastHead head_;

  Mat prototypes_;
  Mat grad_prototypes_;
  data::RevinStats revin_;
  bool have_forward_ = false;
};

}  // namespace tsup::model
