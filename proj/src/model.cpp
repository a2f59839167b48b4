#include "tsup/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "tsup/error.hpp"
#include "tsup/numerics.hpp"

namespace tsup::model {

namespace {

constexpr double kInitStd = 0.02;

std::string layer_prefix(std::size_t i) { return "h." + std::to_string(i) + "."; }

Mat gaussian(Rng rng, std::size_t rows, std::size_t cols, double std) {
  Mat m(rows, cols);
  for (double& v : m.values()) v = std * rng.normal();
  return m;
}

struct Spec {
  std::string name;
  std::size_t rows, cols;
  enum { Weight, Bias, Gain } kind;
  std::optional<Component> component;  // nullopt: outside the backbone
};

// Creation order is fixed; tensor k draws from stream k of the init rng so a
// tensor's values do not depend on the shapes of the ones before it.
std::vector<Spec> layout(const ModelConfig& c) {
  const std::size_t d = c.d;
  const std::size_t hid = c.ffn_mult * d;
  std::vector<Spec> s;
  s.push_back({"wte", c.vocab, d, Spec::Weight, Component::Embedding});
  for (std::size_t i = 0; i < c.layers; ++i) {
    const std::string p = layer_prefix(i);
    s.push_back({p + "ln_1.g", 1, d, Spec::Gain, Component::LayerNorm});
    s.push_back({p + "ln_1.b", 1, d, Spec::Bias, Component::LayerNorm});
    s.push_back({p + "attn.w_qkv", d, 3 * d, Spec::Weight, Component::Attention});
    s.push_back({p + "attn.b_qkv", 1, 3 * d, Spec::Bias, Component::Attention});
    s.push_back({p + "attn.w_o", d, d, Spec::Weight, Component::Attention});
    s.push_back({p + "attn.b_o", 1, d, Spec::Bias, Component::Attention});
    s.push_back({p + "ln_2.g", 1, d, Spec::Gain, Component::LayerNorm});
    s.push_back({p + "ln_2.b", 1, d, Spec::Bias, Component::LayerNorm});
    s.push_back({p + "ffn.w_in", d, hid, Spec::Weight, Component::FeedForward});
    s.push_back({p + "ffn.b_in", 1, hid, Spec::Bias, Component::FeedForward});
    s.push_back({p + "ffn.w_out", hid, d, Spec::Weight, Component::FeedForward});
    s.push_back({p + "ffn.b_out", 1, d, Spec::Bias, Component::FeedForward});
  }
  s.push_back({"ln_f.g", 1, d, Spec::Gain, Component::LayerNorm});
  s.push_back({"ln_f.b", 1, d, Spec::Bias, Component::LayerNorm});
  const std::size_t n_patch = c.num_patches();
  s.push_back({"patch.w", c.window.patch, d, Spec::Weight, std::nullopt});
  s.push_back({"patch.b", 1, d, Spec::Bias, std::nullopt});
  s.push_back({"proto.w_c", c.prototypes, c.vocab, Spec::Weight, std::nullopt});
  s.push_back({"select.w_q", d, d, Spec::Weight, std::nullopt});
  s.push_back({"select.w_k", d, d, Spec::Weight, std::nullopt});
  s.push_back({"mix.m_c", (c.top_k + 1) * n_patch, c.compressed_tokens, Spec::Weight, std::nullopt});
  s.push_back({"mix.m_f", d, d, Spec::Weight, std::nullopt});
  s.push_back({"head.w", c.backbone_tokens() * d, c.horizon(), Spec::Weight, std::nullopt});
  s.push_back({"head.b", 1, c.horizon(), Spec::Bias, std::nullopt});
  return s;
}

Selection rank_rows(const Mat& logits, std::size_t k) {
  Selection sel;
  const Mat w = softmax_rows(logits);
  std::vector<std::size_t> order(logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    std::iota(order.begin(), order.end(), 0);
    const auto row = logits.row(i);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
    sel.indices.emplace_back(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    Vec weights;
    for (std::size_t j = 0; j < k; ++j) weights.push_back(w(i, order[j]));
    sel.weights.push_back(std::move(weights));
  }
  return sel;
}

void require_finite(const Mat& m, const std::string& where) {
  if (!m.all_finite()) throw NumericError("non-finite activations " + where);
}

}  // namespace

std::string component_key(Component c) {
  switch (c) {
    case Component::LayerNorm: return "ln";
    case Component::Attention: return "mha";
    case Component::FeedForward: return "ffn";
    case Component::Embedding: return "emb";
  }
  return "?";
}

bool ModelConfig::any_pretrained() const {
  return std::any_of(components.begin(), components.end(),
                     [](const ComponentSetting& s) { return s.init == Init::Pretrained; });
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ContractError("model config: " + msg);
  };
  need(d >= 1 && layers >= 1 && vocab >= 1 && ffn_mult >= 1, "d, layers, vocab and ffn_mult must be positive");
  need(heads >= 1 && d % heads == 0, "d = " + std::to_string(d) + " is not divisible by heads = " + std::to_string(heads));
  need(top_k >= 1, "top_k must be at least 1");
  need(compressed_tokens >= 1, "compressed_tokens must be at least 1");
  need(prototypes >= 1 && top_k <= prototypes,
       "top_k = " + std::to_string(top_k) + " exceeds prototypes = " + std::to_string(prototypes));
  need(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  window.validate();
}

std::vector<std::string> component_tensor_names(const ModelConfig& config, Component c) {
  std::vector<std::string> out;
  for (const Spec& s : layout(config))
    if (s.component == c) out.push_back(s.name);
  return out;
}

ParamSet init_model(const ModelConfig& config, Rng& rng, const std::vector<Tensor>* weights) {
  config.validate();
  ParamSet ps;
  const auto specs = layout(config);
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const Spec& s = specs[k];
    Mat value;
    switch (s.kind) {
      case Spec::Weight: value = gaussian(rng.split(k), s.rows, s.cols, kInitStd); break;
      case Spec::Bias: value = Mat(s.rows, s.cols, 0.0); break;
      case Spec::Gain: value = Mat(s.rows, s.cols, 1.0); break;
    }
    bool trainable = true;
    if (s.component) trainable = config.setting(*s.component).mode == Mode::Trainable;
    // Selection is by index only, so the query/key projections never see a gradient.
    if (s.name == "select.w_q" || s.name == "select.w_k") trainable = false;
    ps.add(s.name, std::move(value), trainable);
  }

  if (config.any_pretrained()) {
    if (weights == nullptr) throw ContractError("a pretrained component requires a weight file");
    std::map<std::string, const Tensor*> by_name;
    for (const Tensor& t : *weights) by_name.emplace(t.name, &t);
    std::vector<Tensor> wanted;
    std::string missing;
    for (Component c : kComponents) {
      if (config.setting(c).init != Init::Pretrained) continue;
      for (const std::string& name : component_tensor_names(config, c)) {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
          missing += (missing.empty() ? "" : ", ") + name;
        } else {
          wanted.push_back(*it->second);
        }
      }
    }
    if (!missing.empty()) throw IoError("weight file is missing tensors: " + missing);
    load_tensors(ps, wanted, false);
  }
  return ps;
}

void load_tensors(ParamSet& params, const std::vector<Tensor>& tensors, bool require_all) {
  std::map<std::string, const Tensor*> by_name;
  for (const Tensor& t : tensors) by_name.emplace(t.name, &t);
  std::string missing;
  for (auto& [name, p] : params) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      if (require_all) missing += (missing.empty() ? "" : ", ") + name;
      continue;
    }
    Mat m = it->second->to_mat();
    if (!m.same_shape(p.value)) {
      throw IoError("tensor '" + name + "' has shape " + m.shape() + ", model expects " + p.value.shape());
    }
    p.value = std::move(m);
  }
  if (!missing.empty()) throw IoError("weight file is missing tensors: " + missing);
  for (const Tensor& t : tensors) {
    if (!params.contains(t.name) && require_all) throw IoError("weight file has unknown tensor '" + t.name + "'");
  }
}

std::vector<Tensor> export_tensors(const ParamSet& params) {
  std::vector<Tensor> out;
  for (const auto& [name, p] : params) out.push_back(Tensor::from_mat(name, p.value));
  return out;
}

// ---------------------------------------------------------------- stateless ops

Mat embed_patches(const Mat& patches, const Mat& w_e, const Mat& b_e) {
  if (patches.cols() != w_e.rows() || b_e.rows() != 1 || b_e.cols() != w_e.cols()) {
    throw ContractError("embed_patches: patches " + patches.shape() + ", W_e " + w_e.shape() + ", b_e " +
                        b_e.shape());
  }
  Mat y = matmul(patches, w_e);
  add_row_broadcast(y, b_e);
  return y;
}

Mat make_prototypes(const Mat& w_c, const Mat& vocab) { return matmul(w_c, vocab); }

Selection topk_from_logits(const Mat& logits, std::size_t k) {
  if (k == 0 || k > logits.cols()) {
    throw ContractError("topk: K = " + std::to_string(k) + " outside [1, " + std::to_string(logits.cols()) + "]");
  }
  return rank_rows(logits, k);
}

Selection topk_select(const Mat& tokens, const Mat& prototypes, const Mat& w_q, const Mat& w_k, std::size_t k) {
  if (k > prototypes.rows()) {
    throw ContractError("topk_select: K = " + std::to_string(k) + " exceeds " + std::to_string(prototypes.rows()) +
                        " prototypes");
  }
  const Mat q = matmul(tokens, w_q);
  const Mat keys = matmul(prototypes, w_k);
  Mat logits = matmul_nt(q, keys);
  logits *= 1.0 / std::sqrt(static_cast<double>(tokens.cols()));
  return topk_from_logits(logits, k);
}

Mat interleave(const Mat& tokens, const Mat& prototypes, const Selection& sel) {
  TopKGather g;
  g.set_selection(sel.indices);
  const Mat in[] = {tokens, prototypes};
  return g.forward(in);
}

Mat enhance(const Mat& tokens, const Mat& prototypes, const Selection& sel, const Mat& m_c, const Mat& m_f,
            bool linear) {
  Param pc("m_c", m_c), pf("m_f", m_f);
  TokenMixer tm(pc, linear);
  FeatureMixer fm(pf);
  return apply(fm, apply(tm, interleave(tokens, prototypes, sel)));
}

namespace {

TransformerBlock make_block(ParamSet& ps, std::size_t i, std::size_t heads) {
  const std::string p = layer_prefix(i);
  return TransformerBlock(LayerNorm(ps.at(p + "ln_1.g"), ps.at(p + "ln_1.b")),
                          MultiHeadAttention(ps.at(p + "attn.w_qkv"), ps.at(p + "attn.b_qkv"), ps.at(p + "attn.w_o"),
                                             ps.at(p + "attn.b_o"), heads),
                          LayerNorm(ps.at(p + "ln_2.g"), ps.at(p + "ln_2.b")),
                          FeedForward(ps.at(p + "ffn.w_in"), ps.at(p + "ffn.b_in"), ps.at(p + "ffn.w_out"),
                                      ps.at(p + "ffn.b_out")));
}

}  // namespace

BackboneOutput backbone_forward(const Mat& tokens, ParamSet& params, const ModelConfig& config) {
  BackboneOutput out;
  out.hidden = tokens;
  out.trace.push_back(tokens);
  for (std::size_t i = 0; i < config.layers; ++i) {
    TransformerBlock block = make_block(params, i, config.heads);
    out.hidden = apply(block, out.hidden);
    require_finite(out.hidden, "after layer " + std::to_string(i));
    out.trace.push_back(out.hidden);
  }
  return out;
}

Vec forecast_head(const Mat& hidden, const Mat& w_h, const Mat& b_h) {
  Param w("w_h", w_h), b("b_h", b_h);
  ForecastHead head(w, b);
  return apply(head, hidden).storage();
}

// ---------------------------------------------------------------- TimeSup

TimeSup::TimeSup(const ModelConfig& config, ParamSet& params)
    : config_(config),
      params_(params),
      patch_(params.at("patch.w"), &params.at("patch.b")),
      drop_patch_(config.dropout),
      combine_(params.at("proto.w_c"), params.at("wte")),
      token_mix_(params.at("mix.m_c")),
      drop_token_(config.dropout),
      feature_mix_(params.at("mix.m_f")),
      drop_feature_(config.dropout),
      ln_f_(params.at("ln_f.g"), params.at("ln_f.b")),
      head_(params.at("head.w"), params.at("head.b")) {
  config_.validate();
  for (std::size_t i = 0; i < config_.layers; ++i) blocks_.push_back(make_block(params_, i, config_.heads));
  begin_batch();
}

void TimeSup::begin_batch() {
  prototypes_ = combine_.forward({});
  grad_prototypes_ = Mat(prototypes_.rows(), prototypes_.cols());
}

void TimeSup::finish_batch() {
  combine_.backward(grad_prototypes_);
  grad_prototypes_.fill(0.0);
}

Vec TimeSup::predict(std::span<const double> input, Rng* dropout_rng, Capture* capture) {
  if (input.size() != config_.window.input_len) {
    throw ContractError("predict: window has " + std::to_string(input.size()) + " values, model expects " +
                        std::to_string(config_.window.input_len));
  }
  const Vec z = data::revin_normalize(input, revin_);
  const Mat patches = data::patchify(z, config_.window);
  drop_patch_.arm(dropout_rng);
  drop_token_.arm(dropout_rng);
  drop_feature_.arm(dropout_rng);

  Mat x = apply(drop_patch_, apply(patch_, patches));
  if (capture) capture->raw_tokens = x;
  if (config_.enhancer) {
    const Mat& wq = params_.at("select.w_q").value;
    const Mat& wk = params_.at("select.w_k").value;
    const Selection sel = topk_select(x, prototypes_, wq, wk, config_.top_k);
    gather_.set_selection(sel.indices);
    const Mat in[] = {x, prototypes_};
    x = apply(drop_feature_, apply(feature_mix_, apply(drop_token_, apply(token_mix_, gather_.forward(in)))));
  }
  require_finite(x, "at the backbone input");
  if (capture) {
    capture->fused_tokens = x;
    capture->trace = {};
    capture->trace.time.push_back(x);
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    x = apply(blocks_[i], x);
    require_finite(x, "after layer " + std::to_string(i));
    if (capture) capture->trace.time.push_back(x);
  }
  const Mat y = apply(head_, apply(ln_f_, x));
  have_forward_ = true;
  return data::revin_denormalize(y.values(), revin_);
}

void TimeSup::backward(std::span<const double> grad_prediction) {
  if (!have_forward_) throw ContractError("backward: no prediction to differentiate");
  if (grad_prediction.size() != config_.horizon()) throw ContractError("backward: gradient length mismatch");
  have_forward_ = false;
  Mat g = Mat::row_vector(grad_prediction);
  g *= revin_.std;
  g = ln_f_.backward(head_.backward(g)[0])[0];
  for (std::size_t i = blocks_.size(); i-- > 0;) g = blocks_[i].backward(g)[0];
  if (config_.enhancer) {
    g = drop_token_.backward(feature_mix_.backward(drop_feature_.backward(g)[0])[0])[0];
    const auto parts = gather_.backward(token_mix_.backward(g)[0]);
    g = parts[0];
    grad_prototypes_ += parts[1];
  }
  patch_.backward(drop_patch_.backward(g)[0]);
}

std::vector<Mat> TimeSup::propagate(const Mat& tokens) {
  std::vector<Mat> trace{tokens};
  Mat x = tokens;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    x = apply(blocks_[i], x);
    require_finite(x, "after layer " + std::to_string(i));
    trace.push_back(x);
  }
  have_forward_ = false;
  return trace;
}

Mat TimeSup::language_batch(std::size_t count, std::uint64_t seed) const {
  const std::size_t total = prototypes_.rows();
  count = std::min(count, total);
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed, 0x6c616e67);
  for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.below(total - i)]);
  std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count));
  Mat out(count, prototypes_.cols());
  for (std::size_t i = 0; i < count; ++i) std::copy(prototypes_.row(idx[i]).begin(), prototypes_.row(idx[i]).end(), out.row(i).begin());
  return out;
}

}  // namespace tsup::model
