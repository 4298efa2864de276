#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "fbnlg/tokenizer.hpp"

namespace fbnlg {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_model = 128;
  std::size_t d_ff = 512;
  std::size_t max_seq_len = 256;
  double dropout_rate = 0.0;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void validate(const ModelConfig& cfg);

template <class Scalar>
using Tensor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class Scalar>
struct LayerParameters {
  Tensor<Scalar> ln1_g, ln1_b;
  Tensor<Scalar> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<Scalar> ln2_g, ln2_b;
  Tensor<Scalar> w1, b1, w2, b2;
};

/// Every tensor of the network. Vectors are stored as 1 x n tensors. The LM
/// head is tied to `tok_emb`.
template <class Scalar>
struct Parameters {
  ModelConfig config;
  Tensor<Scalar> tok_emb;  // vocab_size x d_model
  Tensor<Scalar> pos_emb;  // max_seq_len x d_model
  std::vector<LayerParameters<Scalar>> layers;
  Tensor<Scalar> lnf_g, lnf_b;
  Tensor<Scalar> rs_w;  // 1 x d_model
  Tensor<Scalar> rs_b;  // 1 x 1

  /// All tensors zero, shaped for `cfg`.
  static Parameters zeros(const ModelConfig& cfg);

  /// Calls f(name, tensor) in manifest order.
  template <class F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  std::size_t scalar_count() const;

 private:
  template <class Self, class F>
  static void visit_impl(Self& p, F& f) {
    f(std::string_view("tok_emb"), p.tok_emb);
    f(std::string_view("pos_emb"), p.pos_emb);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      auto& L = p.layers[l];
      const std::string pre = "layers." + std::to_string(l) + ".";
      f(pre + "ln1.g", L.ln1_g);
      f(pre + "ln1.b", L.ln1_b);
      f(pre + "attn.q.w", L.wq);
      f(pre + "attn.q.b", L.bq);
      f(pre + "attn.k.w", L.wk);
      f(pre + "attn.k.b", L.bk);
      f(pre + "attn.v.w", L.wv);
      f(pre + "attn.v.b", L.bv);
      f(pre + "attn.o.w", L.wo);
      f(pre + "attn.o.b", L.bo);
      f(pre + "ln2.g", L.ln2_g);
      f(pre + "ln2.b", L.ln2_b);
      f(pre + "ff.w1", L.w1);
      f(pre + "ff.b1", L.b1);
      f(pre + "ff.w2", L.w2);
      f(pre + "ff.b2", L.b2);
    }
    f(std::string_view("lnf.g"), p.lnf_g);
    f(std::string_view("lnf.b"), p.lnf_b);
    f(std::string_view("rs.w"), p.rs_w);
    f(std::string_view("rs.b"), p.rs_b);
  }
};

template <class Scalar>
using Gradients = Parameters<Scalar>;

/// Weights ~ Normal(0, 0.02), biases 0, layer-norm scales 1. The RS weight
/// vector uses std 0.02 / sqrt(d_model).
template <class Scalar>
Parameters<Scalar> init_parameters(const ModelConfig& cfg, std::uint64_t seed);

template <class To, class From>
Parameters<To> cast_parameters(const Parameters<From>& p) {
  Parameters<To> out = Parameters<To>::zeros(p.config);
  std::vector<const Tensor<From>*> src;
  p.visit([&](auto&&, const Tensor<From>& t) { src.push_back(&t); });
  std::size_t i = 0;
  out.visit([&](auto&&, Tensor<To>& t) { t = src[i++]->template cast<To>(); });
  return out;
}

/// Sum over tensors of squared entries, in double.
template <class Scalar>
double squared_norm(const Parameters<Scalar>& p);

/// a += s * b, tensor by tensor.
template <class Scalar>
void axpy(Parameters<Scalar>& a, Scalar s, const Parameters<Scalar>& b);

template <class Scalar>
struct ForwardOutput {
  Tensor<Scalar> logits;  // seq_len x vocab_size; row i predicts token i+1
  Scalar rs_logit = 0;
};

template <class Scalar>
struct LayerCache {
  Tensor<Scalar> x_in, xhat1, a1, q, k, v, y, x_mid, xhat2, a2, h_pre, h_act;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rstd1, rstd2;
  std::vector<Tensor<Scalar>> probs;  // per (sequence, head)
};

/// Result of a batched forward pass, with the activations backward needs.
/// Sequences are stacked row-wise; sequence b occupies rows
/// [offset(b), offset(b) + length(b)).
template <class Scalar>
struct ForwardPass {
  std::size_t batch_size() const noexcept { return lengths_.size(); }
  std::size_t offset(std::size_t b) const { return offsets_[b]; }
  std::size_t length(std::size_t b) const { return lengths_[b]; }
  /// Row of the last non-PAD token of sequence b, relative to its offset.
  std::size_t last_position(std::size_t b) const { return last_[b]; }

  auto logits(std::size_t b) const {
    return logits_.middleRows(static_cast<Eigen::Index>(offsets_[b]), static_cast<Eigen::Index>(lengths_[b]));
  }
  Scalar rs_logit(std::size_t b) const { return rs_logits_[b]; }
  ForwardOutput<Scalar> output(std::size_t b) const { return {Tensor<Scalar>(logits(b)), rs_logits_[b]}; }
  std::vector<ForwardOutput<Scalar>> outputs() const;

  const Tensor<Scalar>& all_logits() const noexcept { return logits_; }

  // Filled by forward(); read by backward().
  std::vector<std::size_t> offsets_, lengths_, last_;
  std::vector<TokenId> ids_;
  std::vector<LayerCache<Scalar>> layers_;
  Tensor<Scalar> x_final_, xhatf_, hf_;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rstdf_;
  Tensor<Scalar> logits_;
  std::vector<Scalar> rs_logits_;
};

/// Causal forward pass. Sequences may have different lengths; PAD keys are
/// masked from attention. Throws WindowError for a sequence longer than
/// max_seq_len and ValidationError for an id outside the vocabulary.
template <class Scalar>
ForwardPass<Scalar> forward(const Parameters<Scalar>& p, std::span<const EncodedSample> batch);

struct LossBreakdown {
  double l_rg = 0.0;
  double l_rs = 0.0;
  double total = 0.0;
  std::size_t rg_tokens = 0;
  std::size_t rs_sequences = 0;
};

/// l_rg: mean NLL over loss-masked positions of sequences with rs_label = 1.
/// l_rs: mean binary cross-entropy of sigmoid(rs_logit) against rs_label over
/// the sequences selected by `rs_mask` (all when empty).
/// total = alpha_rg * l_rg + alpha_rs * l_rs.
template <class Scalar>
LossBreakdown compute_loss(const ForwardPass<Scalar>& pass, std::span<const EncodedSample> batch, double alpha_rg,
                           double alpha_rs, std::span<const std::uint8_t> rs_mask = {});

/// Gradient of compute_loss(...).total with respect to every tensor.
template <class Scalar>
Gradients<Scalar> backward(const Parameters<Scalar>& p, const ForwardPass<Scalar>& pass,
                           std::span<const EncodedSample> batch, double alpha_rg, double alpha_rs,
                           std::span<const std::uint8_t> rs_mask = {});

template <class Scalar>
struct LossAndGradients {
  LossBreakdown loss;
  Gradients<Scalar> grads;
};

template <class Scalar>
LossAndGradients<Scalar> loss_and_gradients(const Parameters<Scalar>& p, std::span<const EncodedSample> batch,
                                            double alpha_rg, double alpha_rs,
                                            std::span<const std::uint8_t> rs_mask = {});

struct GradCheckOptions {
  std::size_t n_probes = 200;
  double step = 1e-4;
  double alpha_rg = 1.0;
  double alpha_rs = 1.0;
  std::uint64_t seed = 0;
  /// Probe only tensors whose manifest name starts with this.
  std::string tensor_prefix;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t probes = 0;
};

/// Each probe picks a tensor uniformly, then an entry of it uniformly. Returns
/// the max over probes of
/// |analytic - central| / max(|analytic|, |central|, 1e-8).
GradCheckResult finite_difference_check(const Parameters<double>& p, std::span<const EncodedSample> batch,
                                        const GradCheckOptions& opts = {});

}  // namespace fbnlg
