#include "fbnlg/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "fbnlg/error.hpp"
#include "fbnlg/random.hpp"

namespace fbnlg {

void validate(const TrainConfig& c) {
  if (c.alpha_rg < 0 || c.alpha_rs < 0) throw ValidationError("train: alphas must be >= 0");
  if (c.alpha_rg == 0 && c.alpha_rs == 0) throw ValidationError("train: alpha_rg and alpha_rs are both 0");
  if (c.batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
  if (!(c.rs_flip_prob >= 0 && c.rs_flip_prob <= 1)) throw ValidationError("train: rs_flip_prob must lie in [0, 1]");
  if (!(c.learning_rate > 0)) throw ValidationError("train: learning_rate must be positive");
  if (!(c.beta1 >= 0 && c.beta1 < 1 && c.beta2 >= 0 && c.beta2 < 1)) throw ValidationError("train: betas must lie in [0, 1)");
  if (!(c.epsilon > 0)) throw ValidationError("train: epsilon must be positive");
}

template <class S>
void adam_update(Parameters<S>& params, const Gradients<S>& grads, AdamState<S>& state, const TrainConfig& cfg) {
  std::vector<const Tensor<S>*> g;
  grads.visit([&](std::string_view name, const Tensor<S>& t) {
    if (!t.allFinite()) throw NumericError("adam_update: non-finite gradient in " + std::string(name));
    g.push_back(&t);
  });
  std::vector<Tensor<S>*> m, v;
  state.m.visit([&](std::string_view, Tensor<S>& t) { m.push_back(&t); });
  state.v.visit([&](std::string_view, Tensor<S>& t) { v.push_back(&t); });

  ++state.step;
  const double t = static_cast<double>(state.step);
  const S b1 = static_cast<S>(cfg.beta1);
  const S b2 = static_cast<S>(cfg.beta2);
  const S c1 = static_cast<S>(1.0 / (1.0 - std::pow(cfg.beta1, t)));
  const S c2 = static_cast<S>(1.0 / (1.0 - std::pow(cfg.beta2, t)));
  const S lr = static_cast<S>(cfg.learning_rate);
  const S eps = static_cast<S>(cfg.epsilon);

  std::size_t i = 0;
  params.visit([&](std::string_view, Tensor<S>& p) {
    auto gi = g[i]->array();
    auto mi = m[i]->array();
    auto vi = v[i]->array();
    mi = b1 * mi + (S(1) - b1) * gi;
    vi = b2 * vi + (S(1) - b2) * gi.square();
    p.array() -= lr * (mi * c1) / ((vi * c2).sqrt() + eps);
    ++i;
  });
}

template <class S>
double clip_global_norm(Gradients<S>& grads, double max_norm) {
  const double norm = std::sqrt(squared_norm(grads));
  if (max_norm > 0 && norm > max_norm) {
    const S s = static_cast<S>(max_norm / norm);
    grads.visit([&](std::string_view, Tensor<S>& t) { t *= s; });
  }
  return norm;
}

template void adam_update<float>(Parameters<float>&, const Gradients<float>&, AdamState<float>&, const TrainConfig&);
template void adam_update<double>(Parameters<double>&, const Gradients<double>&, AdamState<double>&,
                                  const TrainConfig&);
template double clip_global_norm<float>(Gradients<float>&, double);
template double clip_global_norm<double>(Gradients<double>&, double);

// ---------------------------------------------------------------------------

namespace {
constexpr std::uint64_t kShuffleTag = 0x5348554646ULL;
constexpr std::uint64_t kCoinTag = 0x434f494eULL;
}  // namespace

Trainer::Trainer(Parameters<float> params, std::vector<BridgingSample> samples, Vocab vocab, TrainConfig cfg)
    : params_(std::move(params)),
      samples_(std::move(samples)),
      vocab_(std::move(vocab)),
      cfg_(cfg),
      adam_(AdamState<float>::zeros(params_.config)) {
  validate(cfg_);
  validate(params_.config);
  if (samples_.empty()) throw ValidationError("train: no samples");
  if (vocab_.size() != params_.config.vocab_size) throw ValidationError("train: vocab size differs from model config");
  positives_.reserve(samples_.size());
  negatives_.reserve(samples_.size());
  for (const auto& s : samples_) {
    positives_.push_back(encode_sample(s, vocab_, params_.config.max_seq_len, Presentation::Positive));
    negatives_.push_back(encode_sample(s, vocab_, params_.config.max_seq_len, Presentation::Negative));
  }
  steps_per_epoch_ = (samples_.size() + cfg_.batch_size - 1) / cfg_.batch_size;
}

Trainer Trainer::resume(const Checkpoint& ckpt, std::vector<BridgingSample> samples) {
  Trainer t(ckpt.params, std::move(samples), ckpt.vocab, ckpt.train);
  if (ckpt.optimizer) {
    t.adam_ = *ckpt.optimizer;
  } else {
    t.adam_.step = ckpt.step;
  }
  return t;
}

std::vector<std::size_t> Trainer::epoch_order(std::size_t epoch) const {
  std::vector<std::size_t> order(samples_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = derive_stream(cfg_.seed, kShuffleTag, epoch);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  return order;
}

LossBreakdown Trainer::step() {
  const std::uint64_t step = adam_.step;
  const std::size_t ep = static_cast<std::size_t>(step / steps_per_epoch_);
  const std::size_t bi = static_cast<std::size_t>(step % steps_per_epoch_);
  if (ep != cached_epoch_) {
    order_ = epoch_order(ep);
    cached_epoch_ = ep;
  }
  const std::size_t begin = bi * cfg_.batch_size;
  const std::size_t end = std::min(order_.size(), begin + cfg_.batch_size);

  std::vector<EncodedSample> batch;
  std::vector<std::uint8_t> rs_mask;
  std::vector<EncodedSample> extra;
  Rng coin = derive_stream(cfg_.seed ^ kCoinTag, step);
  for (std::size_t k = begin; k < end; ++k) {
    const std::size_t i = order_[k];
    const bool heads = uniform01(coin) < cfg_.rs_flip_prob;
    batch.push_back(positives_[i]);
    rs_mask.push_back(heads ? 1 : 0);
    if (!heads) extra.push_back(negatives_[i]);
  }
  for (auto& e : extra) {
    batch.push_back(std::move(e));
    rs_mask.push_back(1);
  }

  try {
    auto [loss, grads] = loss_and_gradients(params_, batch, cfg_.alpha_rg, cfg_.alpha_rs, rs_mask);
    if (!std::isfinite(loss.total)) throw NumericError("non-finite loss");
    clip_global_norm(grads, cfg_.grad_clip_norm);
    adam_update(params_, grads, adam_, cfg_);
    return loss;
  } catch (const NumericError& e) {
    throw NumericError("training diverged at step " + std::to_string(step) + ": " + e.what());
  }
}

EpochMetrics Trainer::run_epoch() {
  EpochMetrics m;
  m.epoch = epoch();
  const auto t0 = std::chrono::steady_clock::now();
  double rg_sum = 0, rs_sum = 0, total_sum = 0;
  std::size_t rg_tokens = 0, rs_seqs = 0;
  const std::uint64_t stop = (static_cast<std::uint64_t>(m.epoch) + 1) * steps_per_epoch_;
  while (adam_.step < stop) {
    const std::uint64_t s = adam_.step;
    const std::size_t begin = static_cast<std::size_t>(s % steps_per_epoch_) * cfg_.batch_size;
    const auto loss = step();
    rg_sum += loss.l_rg * static_cast<double>(loss.rg_tokens);
    rs_sum += loss.l_rs * static_cast<double>(loss.rs_sequences);
    rg_tokens += loss.rg_tokens;
    rs_seqs += loss.rs_sequences;
    ++m.steps;
    for (std::size_t k = begin; k < std::min(order_.size(), begin + cfg_.batch_size); ++k)
      m.tokens += positives_[order_[k]].length();
  }
  m.l_rg = rg_tokens ? rg_sum / static_cast<double>(rg_tokens) : 0.0;
  m.l_rs = rs_seqs ? rs_sum / static_cast<double>(rs_seqs) : 0.0;
  total_sum = cfg_.alpha_rg * m.l_rg + cfg_.alpha_rs * m.l_rs;
  m.total = total_sum;
  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  m.tokens_per_second = m.wall_seconds > 0 ? static_cast<double>(m.tokens) / m.wall_seconds : 0.0;
  return m;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.model = params_.config;
  c.train = cfg_;
  c.vocab = vocab_;
  c.params = params_;
  c.optimizer = adam_;
  c.step = adam_.step;
  return c;
}

std::pair<Parameters<float>, TrainMetrics> train(Parameters<float> params, std::span<const BridgingSample> samples,
                                                 const Vocab& vocab, const TrainConfig& cfg,
                                                 const EpochCallback& on_epoch) {
  Trainer t(std::move(params), std::vector<BridgingSample>(samples.begin(), samples.end()), vocab, cfg);
  TrainMetrics metrics;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    metrics.epochs.push_back(t.run_epoch());
    if (on_epoch && !on_epoch(metrics.epochs.back(), t)) break;
  }
  return {t.params(), std::move(metrics)};
}

}  // namespace fbnlg
