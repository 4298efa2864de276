#include "fbnlg/model.hpp"

#include <cmath>
#include <limits>

#include "fbnlg/error.hpp"
#include "fbnlg/random.hpp"

namespace fbnlg {

void validate(const ModelConfig& c) {
  if (c.vocab_size < 7) throw ValidationError("model: vocab_size must be >= 7");
  if (c.n_heads < 1 || c.d_model < 1 || c.d_model % c.n_heads != 0)
    throw ValidationError("model: d_model must be divisible by n_heads");
  if (c.d_ff < 1) throw ValidationError("model: d_ff must be >= 1");
  if (c.max_seq_len < 8) throw ValidationError("model: max_seq_len must be >= 8");
  // Training is deterministic and dropout-free; the field is kept so configs can state it.
  if (c.dropout_rate != 0.0) throw ValidationError("model: only dropout_rate 0 is supported");
}

template <class S>
Parameters<S> Parameters<S>::zeros(const ModelConfig& c) {
  validate(c);
  const auto V = static_cast<Eigen::Index>(c.vocab_size);
  const auto d = static_cast<Eigen::Index>(c.d_model);
  const auto f = static_cast<Eigen::Index>(c.d_ff);
  const auto T = static_cast<Eigen::Index>(c.max_seq_len);
  using M = Tensor<S>;
  Parameters p;
  p.config = c;
  p.tok_emb = M::Zero(V, d);
  p.pos_emb = M::Zero(T, d);
  p.layers.resize(c.n_layers);
  for (auto& L : p.layers) {
    L.ln1_g = M::Zero(1, d);
    L.ln1_b = M::Zero(1, d);
    L.wq = M::Zero(d, d);
    L.bq = M::Zero(1, d);
    L.wk = M::Zero(d, d);
    L.bk = M::Zero(1, d);
    L.wv = M::Zero(d, d);
    L.bv = M::Zero(1, d);
    L.wo = M::Zero(d, d);
    L.bo = M::Zero(1, d);
    L.ln2_g = M::Zero(1, d);
    L.ln2_b = M::Zero(1, d);
    L.w1 = M::Zero(d, f);
    L.b1 = M::Zero(1, f);
    L.w2 = M::Zero(f, d);
    L.b2 = M::Zero(1, d);
  }
  p.lnf_g = M::Zero(1, d);
  p.lnf_b = M::Zero(1, d);
  p.rs_w = M::Zero(1, d);
  p.rs_b = M::Zero(1, 1);
  return p;
}

template <class S>
std::size_t Parameters<S>::scalar_count() const {
  std::size_t n = 0;
  visit([&](std::string_view, const Tensor<S>& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

namespace {

enum class InitKind { Normal, Zero, One };

InitKind init_kind(std::string_view name) {
  const auto ends = [&](std::string_view suf) {
    return name.size() >= suf.size() && name.substr(name.size() - suf.size()) == suf;
  };
  if (ends(".g")) return InitKind::One;
  if (ends(".b") || ends(".b1") || ends(".b2")) return InitKind::Zero;
  return InitKind::Normal;
}

}  // namespace

template <class S>
Parameters<S> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  auto p = Parameters<S>::zeros(cfg);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  p.visit([&](std::string_view name, Tensor<S>& t) {
    switch (init_kind(name)) {
      case InitKind::One:
        t.setOnes();
        break;
      case InitKind::Zero:
        t.setZero();
        break;
      case InitKind::Normal: {
        // The RS head reads a unit-variance vector, so its weights are shrunk
        // by sqrt(d_model) to keep the untrained score near sigmoid(bias).
        const double scale = name == "rs.w" ? 1.0 / std::sqrt(static_cast<double>(cfg.d_model)) : 1.0;
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(scale * normal(rng));
        break;
      }
    }
  });
  return p;
}

template <class S>
double squared_norm(const Parameters<S>& p) {
  double acc = 0.0;
  p.visit([&](std::string_view, const Tensor<S>& t) { acc += t.template cast<double>().squaredNorm(); });
  return acc;
}

template <class S>
void axpy(Parameters<S>& a, S s, const Parameters<S>& b) {
  std::vector<const Tensor<S>*> src;
  b.visit([&](std::string_view, const Tensor<S>& t) { src.push_back(&t); });
  std::size_t i = 0;
  a.visit([&](std::string_view, Tensor<S>& t) { t += s * *src[i++]; });
}

template <class S>
std::vector<ForwardOutput<S>> ForwardPass<S>::outputs() const {
  std::vector<ForwardOutput<S>> out;
  out.reserve(batch_size());
  for (std::size_t b = 0; b < batch_size(); ++b) out.push_back(output(b));
  return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kLnEps = 1e-5;

template <class S>
using Col = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& g, const Tensor<S>& b, Tensor<S>& xhat, Col<S>& rstd) {
  const auto n = x.rows();
  const auto d = x.cols();
  xhat.resize(n, d);
  rstd.resize(n);
  Tensor<S> out(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const S mu = x.row(i).mean();
    const auto xc = (x.row(i).array() - mu).matrix();
    const S var = xc.squaredNorm() / static_cast<S>(d);
    const S r = S(1) / std::sqrt(var + static_cast<S>(kLnEps));
    rstd(i) = r;
    xhat.row(i) = xc * r;
    out.row(i) = xhat.row(i).cwiseProduct(g.row(0)) + b.row(0);
  }
  return out;
}

template <class S>
Tensor<S> layer_norm_backward(const Tensor<S>& dy, const Tensor<S>& xhat, const Col<S>& rstd, const Tensor<S>& g,
                              Tensor<S>& dg, Tensor<S>& db) {
  const auto n = dy.rows();
  const auto d = dy.cols();
  Tensor<S> dx(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto dxhat = dy.row(i).cwiseProduct(g.row(0)).eval();
    const S m1 = dxhat.mean();
    const S m2 = dxhat.cwiseProduct(xhat.row(i)).mean();
    dx.row(i) = rstd(i) * ((dxhat.array() - m1).matrix() - xhat.row(i) * m2);
  }
  dg += dy.cwiseProduct(xhat).colwise().sum();
  db += dy.colwise().sum();
  return dx;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

template <class S>
S gelu(S x) {
  const S t = std::tanh(static_cast<S>(kGeluC) * (x + static_cast<S>(kGeluA) * x * x * x));
  return S(0.5) * x * (S(1) + t);
}

template <class S>
S gelu_grad(S x) {
  const S t = std::tanh(static_cast<S>(kGeluC) * (x + static_cast<S>(kGeluA) * x * x * x));
  const S dt = (S(1) - t * t) * static_cast<S>(kGeluC) * (S(1) + S(3) * static_cast<S>(kGeluA) * x * x);
  return S(0.5) * (S(1) + t) + S(0.5) * x * dt;
}

template <class S>
Tensor<S> affine(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  Tensor<S> out = x * w;
  out.rowwise() += b.row(0);
  return out;
}

bool key_allowed(std::span<const TokenId> ids, std::size_t q, std::size_t k) {
  return k <= q && (ids[k] != kPad || k == q);
}

}  // namespace

template <class S>
ForwardPass<S> forward(const Parameters<S>& p, std::span<const EncodedSample> batch) {
  const auto& c = p.config;
  const auto d = static_cast<Eigen::Index>(c.d_model);
  const auto H = c.n_heads;
  const auto dh = static_cast<Eigen::Index>(c.d_model / c.n_heads);
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));

  ForwardPass<S> f;
  std::size_t n = 0;
  for (const auto& s : batch) {
    if (s.ids.empty()) throw ValidationError("forward: empty sequence");
    if (s.ids.size() > c.max_seq_len)
      throw WindowError("forward: sequence of length " + std::to_string(s.ids.size()) + " exceeds max_seq_len " +
                        std::to_string(c.max_seq_len));
    std::size_t last = 0;
    for (std::size_t i = 0; i < s.ids.size(); ++i) {
      const TokenId id = s.ids[i];
      if (id < 0 || static_cast<std::size_t>(id) >= c.vocab_size)
        throw ValidationError("forward: token id " + std::to_string(id) + " outside vocabulary");
      if (id != kPad) last = i;
    }
    f.offsets_.push_back(n);
    f.lengths_.push_back(s.ids.size());
    f.last_.push_back(last);
    f.ids_.insert(f.ids_.end(), s.ids.begin(), s.ids.end());
    n += s.ids.size();
  }
  const auto N = static_cast<Eigen::Index>(n);

  Tensor<S> x(N, d);
  for (std::size_t b = 0; b < batch.size(); ++b)
    for (std::size_t t = 0; t < f.lengths_[b]; ++t) {
      const auto r = static_cast<Eigen::Index>(f.offsets_[b] + t);
      x.row(r) = p.tok_emb.row(f.ids_[f.offsets_[b] + t]) + p.pos_emb.row(static_cast<Eigen::Index>(t));
    }

  f.layers_.reserve(p.layers.size());
  for (const auto& L : p.layers) {
    LayerCache<S> lc;
    lc.x_in = x;
    lc.a1 = layer_norm(x, L.ln1_g, L.ln1_b, lc.xhat1, lc.rstd1);
    lc.q = affine(lc.a1, L.wq, L.bq);
    lc.k = affine(lc.a1, L.wk, L.bk);
    lc.v = affine(lc.a1, L.wv, L.bv);
    lc.y = Tensor<S>::Zero(N, d);
    lc.probs.resize(batch.size() * H);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto off = static_cast<Eigen::Index>(f.offsets_[b]);
      const auto T = static_cast<Eigen::Index>(f.lengths_[b]);
      const std::span<const TokenId> ids(f.ids_.data() + f.offsets_[b], f.lengths_[b]);
      for (std::size_t h = 0; h < H; ++h) {
        const auto col = static_cast<Eigen::Index>(h) * dh;
        Tensor<S> P = (lc.q.block(off, col, T, dh) * lc.k.block(off, col, T, dh).transpose()) * scale;
        for (Eigen::Index i = 0; i < T; ++i) {
          S mx = -std::numeric_limits<S>::infinity();
          for (Eigen::Index k = 0; k < T; ++k)
            if (key_allowed(ids, static_cast<std::size_t>(i), static_cast<std::size_t>(k))) mx = std::max(mx, P(i, k));
          S sum = 0;
          for (Eigen::Index k = 0; k < T; ++k) {
            if (key_allowed(ids, static_cast<std::size_t>(i), static_cast<std::size_t>(k))) {
              P(i, k) = std::exp(P(i, k) - mx);
              sum += P(i, k);
            } else {
              P(i, k) = 0;
            }
          }
          P.row(i) /= sum;
        }
        lc.y.block(off, col, T, dh) = P * lc.v.block(off, col, T, dh);
        lc.probs[b * H + h] = std::move(P);
      }
    }
    lc.x_mid = x + affine(lc.y, L.wo, L.bo);
    lc.a2 = layer_norm(lc.x_mid, L.ln2_g, L.ln2_b, lc.xhat2, lc.rstd2);
    lc.h_pre = affine(lc.a2, L.w1, L.b1);
    lc.h_act = lc.h_pre.unaryExpr([](S v) { return gelu(v); });
    x = lc.x_mid + affine(lc.h_act, L.w2, L.b2);
    f.layers_.push_back(std::move(lc));
  }

  f.x_final_ = x;
  f.hf_ = layer_norm(x, p.lnf_g, p.lnf_b, f.xhatf_, f.rstdf_);
  f.logits_ = f.hf_ * p.tok_emb.transpose();
  f.rs_logits_.resize(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto row = static_cast<Eigen::Index>(f.offsets_[b] + f.last_[b]);
    f.rs_logits_[b] = f.hf_.row(row).dot(p.rs_w.row(0)) + p.rs_b(0, 0);
  }
  return f;
}

// ---------------------------------------------------------------------------

namespace {

bool rs_selected(std::span<const std::uint8_t> mask, std::size_t b) { return mask.empty() || mask[b] != 0; }

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

template <class Row>
double log_sum_exp(const Row& row) {
  const double mx = static_cast<double>(row.maxCoeff());
  double acc = 0.0;
  for (Eigen::Index j = 0; j < row.size(); ++j) acc += std::exp(static_cast<double>(row(j)) - mx);
  return mx + std::log(acc);
}

template <class S>
void check_batch(const ForwardPass<S>& pass, std::span<const EncodedSample> batch,
                 std::span<const std::uint8_t> rs_mask) {
  if (batch.empty()) throw ValidationError("loss: empty batch");
  if (pass.batch_size() != batch.size()) throw ValidationError("loss: batch does not match forward pass");
  if (!rs_mask.empty() && rs_mask.size() != batch.size()) throw ValidationError("loss: rs_mask size mismatch");
  for (std::size_t b = 0; b < batch.size(); ++b)
    if (batch[b].loss_mask.size() != batch[b].ids.size()) throw ValidationError("loss: loss_mask length mismatch");
}

}  // namespace

template <class S>
LossBreakdown compute_loss(const ForwardPass<S>& pass, std::span<const EncodedSample> batch, double alpha_rg,
                           double alpha_rs, std::span<const std::uint8_t> rs_mask) {
  check_batch(pass, batch, rs_mask);
  LossBreakdown out;
  double nll = 0.0;
  double bce = 0.0;
  bool any_positive = false;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& s = batch[b];
    if (s.rs_label == 1) {
      any_positive = true;
      const auto logits = pass.logits(b);
      for (std::size_t j = 1; j < s.ids.size(); ++j) {
        if (!s.loss_mask[j]) continue;
        const auto row = logits.row(static_cast<Eigen::Index>(j - 1));
        nll += log_sum_exp(row) - static_cast<double>(row(s.ids[j]));
        ++out.rg_tokens;
      }
    }
    if (rs_selected(rs_mask, b)) {
      const double z = static_cast<double>(pass.rs_logit(b));
      bce += softplus(z) - static_cast<double>(s.rs_label) * z;
      ++out.rs_sequences;
    }
  }
  if (!any_positive || out.rg_tokens == 0) throw ValidationError("loss: batch has no positive response tokens");
  out.l_rg = nll / static_cast<double>(out.rg_tokens);
  out.l_rs = out.rs_sequences ? bce / static_cast<double>(out.rs_sequences) : 0.0;
  out.total = alpha_rg * out.l_rg + alpha_rs * out.l_rs;
  return out;
}

template <class S>
Gradients<S> backward(const Parameters<S>& p, const ForwardPass<S>& pass, std::span<const EncodedSample> batch,
                      double alpha_rg, double alpha_rs, std::span<const std::uint8_t> rs_mask) {
  const auto loss = compute_loss(pass, batch, alpha_rg, alpha_rs, rs_mask);
  if (!std::isfinite(loss.total)) throw NumericError("backward: non-finite loss");

  const auto& c = p.config;
  const auto V = static_cast<Eigen::Index>(c.vocab_size);
  const auto H = c.n_heads;
  const auto dh = static_cast<Eigen::Index>(c.d_model / c.n_heads);
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  const auto N = pass.logits_.rows();

  Gradients<S> g = Gradients<S>::zeros(c);

  // Output layer.
  Tensor<S> dlogits = Tensor<S>::Zero(N, V);
  const double rg_scale = alpha_rg / static_cast<double>(loss.rg_tokens);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& s = batch[b];
    if (s.rs_label != 1 || alpha_rg == 0.0) continue;
    for (std::size_t j = 1; j < s.ids.size(); ++j) {
      if (!s.loss_mask[j]) continue;
      const auto r = static_cast<Eigen::Index>(pass.offsets_[b] + j - 1);
      const auto row = pass.logits_.row(r);
      const double lse = log_sum_exp(row);
      for (Eigen::Index k = 0; k < V; ++k)
        dlogits(r, k) = static_cast<S>(std::exp(static_cast<double>(row(k)) - lse) * rg_scale);
      dlogits(r, s.ids[j]) -= static_cast<S>(rg_scale);
    }
  }
  Tensor<S> dhf = dlogits * p.tok_emb;
  g.tok_emb.noalias() += dlogits.transpose() * pass.hf_;

  if (loss.rs_sequences > 0 && alpha_rs != 0.0) {
    const double rs_scale = alpha_rs / static_cast<double>(loss.rs_sequences);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      if (!rs_selected(rs_mask, b)) continue;
      const double z = static_cast<double>(pass.rs_logits_[b]);
      const S dz = static_cast<S>(rs_scale * (sigmoid(z) - static_cast<double>(batch[b].rs_label)));
      const auto r = static_cast<Eigen::Index>(pass.offsets_[b] + pass.last_[b]);
      g.rs_w.row(0) += dz * pass.hf_.row(r);
      g.rs_b(0, 0) += dz;
      dhf.row(r) += dz * p.rs_w.row(0);
    }
  }

  Tensor<S> dx = layer_norm_backward(dhf, pass.xhatf_, pass.rstdf_, p.lnf_g, g.lnf_g, g.lnf_b);

  for (std::size_t l = p.layers.size(); l-- > 0;) {
    const auto& L = p.layers[l];
    const auto& lc = pass.layers_[l];
    auto& G = g.layers[l];

    // Feed-forward sublayer.
    G.w2.noalias() += lc.h_act.transpose() * dx;
    G.b2 += dx.colwise().sum();
    Tensor<S> dh_pre = dx * L.w2.transpose();
    dh_pre = dh_pre.cwiseProduct(lc.h_pre.unaryExpr([](S v) { return gelu_grad(v); }));
    G.w1.noalias() += lc.a2.transpose() * dh_pre;
    G.b1 += dh_pre.colwise().sum();
    const Tensor<S> da2 = dh_pre * L.w1.transpose();
    Tensor<S> dx_mid = dx + layer_norm_backward(da2, lc.xhat2, lc.rstd2, L.ln2_g, G.ln2_g, G.ln2_b);

    // Attention sublayer.
    G.wo.noalias() += lc.y.transpose() * dx_mid;
    G.bo += dx_mid.colwise().sum();
    const Tensor<S> dy = dx_mid * L.wo.transpose();
    Tensor<S> dq = Tensor<S>::Zero(N, dy.cols());
    Tensor<S> dk = Tensor<S>::Zero(N, dy.cols());
    Tensor<S> dv = Tensor<S>::Zero(N, dy.cols());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto off = static_cast<Eigen::Index>(pass.offsets_[b]);
      const auto T = static_cast<Eigen::Index>(pass.lengths_[b]);
      for (std::size_t h = 0; h < H; ++h) {
        const auto col = static_cast<Eigen::Index>(h) * dh;
        const auto& P = lc.probs[b * H + h];
        const auto dY = dy.block(off, col, T, dh);
        const Tensor<S> dP = dY * lc.v.block(off, col, T, dh).transpose();
        dv.block(off, col, T, dh).noalias() += P.transpose() * dY;
        const Col<S> rowdot = dP.cwiseProduct(P).rowwise().sum();
        Tensor<S> dS = P.cwiseProduct(dP.colwise() - rowdot) * scale;
        dq.block(off, col, T, dh).noalias() += dS * lc.k.block(off, col, T, dh);
        dk.block(off, col, T, dh).noalias() += dS.transpose() * lc.q.block(off, col, T, dh);
      }
    }
    G.wq.noalias() += lc.a1.transpose() * dq;
    G.bq += dq.colwise().sum();
    G.wk.noalias() += lc.a1.transpose() * dk;
    G.bk += dk.colwise().sum();
    G.wv.noalias() += lc.a1.transpose() * dv;
    G.bv += dv.colwise().sum();
    Tensor<S> da1 = dq * L.wq.transpose();
    da1.noalias() += dk * L.wk.transpose();
    da1.noalias() += dv * L.wv.transpose();
    dx = dx_mid + layer_norm_backward(da1, lc.xhat1, lc.rstd1, L.ln1_g, G.ln1_g, G.ln1_b);
  }

  for (std::size_t b = 0; b < batch.size(); ++b)
    for (std::size_t t = 0; t < pass.lengths_[b]; ++t) {
      const auto r = static_cast<Eigen::Index>(pass.offsets_[b] + t);
      g.tok_emb.row(pass.ids_[pass.offsets_[b] + t]) += dx.row(r);
      g.pos_emb.row(static_cast<Eigen::Index>(t)) += dx.row(r);
    }
  return g;
}

template <class S>
LossAndGradients<S> loss_and_gradients(const Parameters<S>& p, std::span<const EncodedSample> batch, double alpha_rg,
                                       double alpha_rs, std::span<const std::uint8_t> rs_mask) {
  const auto pass = forward(p, batch);
  auto loss = compute_loss(pass, batch, alpha_rg, alpha_rs, rs_mask);
  auto grads = backward(p, pass, batch, alpha_rg, alpha_rs, rs_mask);
  return {loss, std::move(grads)};
}

GradCheckResult finite_difference_check(const Parameters<double>& p, std::span<const EncodedSample> batch,
                                        const GradCheckOptions& opts) {
  const auto analytic = loss_and_gradients(p, batch, opts.alpha_rg, opts.alpha_rs).grads;
  Parameters<double> work = p;

  std::vector<std::pair<std::string, Tensor<double>*>> tensors;
  work.visit([&](std::string_view name, Tensor<double>& t) {
    if (name.starts_with(opts.tensor_prefix)) tensors.emplace_back(std::string(name), &t);
  });
  std::vector<const Tensor<double>*> grads;
  analytic.visit([&](std::string_view name, const Tensor<double>& t) {
    if (name.starts_with(opts.tensor_prefix)) grads.push_back(&t);
  });
  if (tensors.empty()) throw ValidationError("grad check: no tensor matches '" + opts.tensor_prefix + "'");

  const auto total = [&] {
    const auto pass = forward(work, batch);
    return compute_loss(pass, batch, opts.alpha_rg, opts.alpha_rs).total;
  };

  GradCheckResult res;
  Rng rng(opts.seed);
  for (std::size_t probe = 0; probe < opts.n_probes; ++probe) {
    const auto ti = uniform_index(rng, tensors.size());
    auto& t = *tensors[ti].second;
    const auto ei = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(t.size())));
    const double orig = t.data()[ei];
    t.data()[ei] = orig + opts.step;
    const double up = total();
    t.data()[ei] = orig - opts.step;
    const double down = total();
    t.data()[ei] = orig;

    const double numeric = (up - down) / (2.0 * opts.step);
    const double a = grads[ti]->data()[ei];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double rel = std::abs(a - numeric) / denom;
    if (rel > res.max_rel_error) {
      res.max_rel_error = rel;
      res.worst_tensor = tensors[ti].first;
    }
    ++res.probes;
  }
  return res;
}

#define FBNLG_INSTANTIATE(S)                                                                                       \
  template struct Parameters<S>;                                                                                  \
  template struct ForwardPass<S>;                                                                                 \
  template Parameters<S> init_parameters<S>(const ModelConfig&, std::uint64_t);                                   \
  template double squared_norm<S>(const Parameters<S>&);                                                          \
  template void axpy<S>(Parameters<S>&, S, const Parameters<S>&);                                                 \
  template ForwardPass<S> forward<S>(const Parameters<S>&, std::span<const EncodedSample>);                       \
  template LossBreakdown compute_loss<S>(const ForwardPass<S>&, std::span<const EncodedSample>, double, double,   \
                                         std::span<const std::uint8_t>);                                          \
  template Gradients<S> backward<S>(const Parameters<S>&, const ForwardPass<S>&, std::span<const EncodedSample>, \
                                    double, double, std::span<const std::uint8_t>);                               \
  template LossAndGradients<S> loss_and_gradients<S>(const Parameters<S>&, std::span<const EncodedSample>, double, \
                                                     double, std::span<const std::uint8_t>);

FBNLG_INSTANTIATE(float)
FBNLG_INSTANTIATE(double)

#undef FBNLG_INSTANTIATE

}  // namespace fbnlg
