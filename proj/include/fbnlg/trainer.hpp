#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fbnlg/model.hpp"
#include "fbnlg/samples.hpp"
#include "fbnlg/tokenizer.hpp"

namespace fbnlg {

struct TrainConfig {
  double alpha_rg = 1.0;
  double alpha_rs = 1.0;
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 16;
  std::size_t epochs = 10;
  double grad_clip_norm = 1.0;  // <= 0 disables clipping
  double rs_flip_prob = 0.5;
  std::uint64_t seed = 0;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void validate(const TrainConfig& cfg);

/// First and second Adam moments, shaped like the parameters.
template <class Scalar>
struct AdamState {
  Parameters<Scalar> m;
  Parameters<Scalar> v;
  std::uint64_t step = 0;

  static AdamState zeros(const ModelConfig& cfg) { return {Parameters<Scalar>::zeros(cfg), Parameters<Scalar>::zeros(cfg), 0}; }
};

/// One bias-corrected Adam step; increments state.step first. Throws
/// NumericError on a non-finite gradient, leaving params and state untouched.
template <class Scalar>
void adam_update(Parameters<Scalar>& params, const Gradients<Scalar>& grads, AdamState<Scalar>& state,
                 const TrainConfig& cfg);

/// Scales grads so their global L2 norm is at most max_norm. Returns the norm
/// before clipping.
template <class Scalar>
double clip_global_norm(Gradients<Scalar>& grads, double max_norm);

struct EpochMetrics {
  std::size_t epoch = 0;
  double l_rg = 0.0;
  double l_rs = 0.0;
  double total = 0.0;
  std::size_t steps = 0;
  std::size_t tokens = 0;
  double wall_seconds = 0.0;
  double tokens_per_second = 0.0;
};

struct TrainMetrics {
  std::vector<EpochMetrics> epochs;
};

struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  ModelConfig model;
  TrainConfig train;
  Vocab vocab;
  Parameters<float> params;
  std::optional<AdamState<float>> optimizer;
  std::uint64_t step = 0;
  int format_version = kFormatVersion;
};

/// Directory layout: config.json, vocab.txt, manifest.txt (name rows cols per
/// line) and tensors.bin (little-endian float32, manifest order). Optimizer
/// moments follow the parameters as "m." / "v." entries.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Joint RG + RS training loop over a fixed sample set. Batch order and RS
/// coin flips are pure functions of (seed, step), so a trainer restored from
/// a checkpoint continues exactly as the uninterrupted run would.
class Trainer {
 public:
  Trainer(Parameters<float> params, std::vector<BridgingSample> samples, Vocab vocab, TrainConfig cfg);

  /// Resumes from a checkpoint written by checkpoint().
  static Trainer resume(const Checkpoint& ckpt, std::vector<BridgingSample> samples);

  /// Runs one optimizer step on the next batch.
  LossBreakdown step();

  /// Runs the remaining steps of the current epoch.
  EpochMetrics run_epoch();

  std::size_t steps_per_epoch() const noexcept { return steps_per_epoch_; }
  std::uint64_t global_step() const noexcept { return adam_.step; }
  std::size_t epoch() const noexcept { return static_cast<std::size_t>(adam_.step / steps_per_epoch_); }

  const Parameters<float>& params() const noexcept { return params_; }
  const Vocab& vocab() const noexcept { return vocab_; }
  const TrainConfig& config() const noexcept { return cfg_; }
  const AdamState<float>& optimizer() const noexcept { return adam_; }

  Checkpoint checkpoint() const;

 private:
  std::vector<std::size_t> epoch_order(std::size_t epoch) const;

  Parameters<float> params_;
  std::vector<BridgingSample> samples_;
  Vocab vocab_;
  TrainConfig cfg_;
  AdamState<float> adam_;
  std::vector<EncodedSample> positives_;
  std::vector<EncodedSample> negatives_;
  std::size_t steps_per_epoch_ = 1;
  std::size_t cached_epoch_ = static_cast<std::size_t>(-1);
  std::vector<std::size_t> order_;
};

using EpochCallback = std::function<bool(const EpochMetrics&, const Trainer&)>;

/// Trains for cfg.epochs epochs; `on_epoch` may return false to stop early.
std::pair<Parameters<float>, TrainMetrics> train(Parameters<float> params, std::span<const BridgingSample> samples,
                                                 const Vocab& vocab, const TrainConfig& cfg,
                                                 const EpochCallback& on_epoch = {});

}  // namespace fbnlg
