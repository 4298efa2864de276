#include "fbnlg/decode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fbnlg/error.hpp"
#include "fbnlg/random.hpp"

namespace fbnlg {

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::Greedy:
      return "greedy";
    case Strategy::TopK:
      return "topk";
    case Strategy::Temperature:
      return "temperature";
  }
  return "greedy";
}

std::optional<Strategy> parse_strategy(std::string_view s) {
  if (s == "greedy") return Strategy::Greedy;
  if (s == "topk") return Strategy::TopK;
  if (s == "temperature") return Strategy::Temperature;
  return std::nullopt;
}

void validate(const DecodeConfig& c) {
  if (c.k < 1) throw ValidationError("decode: k must be >= 1");
  if (!(c.temperature > 0)) throw ValidationError("decode: temperature must be positive");
  if (c.max_new_tokens < 1) throw ValidationError("decode: max_new_tokens must be >= 1");
}

DecodeConfig service_decode_defaults() {
  DecodeConfig c;
  c.strategy = Strategy::TopK;
  c.k = 10;
  c.temperature = 0.9;
  return c;
}

namespace {

bool emittable(TokenId id) { return id == kEos || id >= kNumSpecial; }

TokenId choose_token(const Eigen::Ref<const Tensor<float>>& row, const DecodeConfig& cfg, Rng& rng, bool allow_eos) {
  std::vector<TokenId> cand;
  for (Eigen::Index j = 0; j < row.cols(); ++j)
    if (emittable(static_cast<TokenId>(j)) && (allow_eos || j != kEos)) cand.push_back(static_cast<TokenId>(j));
  const auto by_logit = [&](TokenId a, TokenId b) { return row(0, a) > row(0, b) || (row(0, a) == row(0, b) && a < b); };

  if (cfg.strategy == Strategy::Greedy) return *std::min_element(cand.begin(), cand.end(), by_logit);

  if (cfg.strategy == Strategy::TopK) {
    const std::size_t k = std::min(cfg.k, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(), by_logit);
    cand.resize(k);
  }
  if (cand.size() == 1) return cand.front();
  double mx = -INFINITY;
  for (TokenId id : cand) mx = std::max(mx, static_cast<double>(row(0, id)));
  std::vector<double> w;
  w.reserve(cand.size());
  for (TokenId id : cand) w.push_back(std::exp((static_cast<double>(row(0, id)) - mx) / cfg.temperature));
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  const double r = uniform01(rng) * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    acc += w[i];
    if (r < acc) return cand[i];
  }
  return cand.back();
}

void check_context(std::span<const Turn> context) {
  if (context.empty()) throw ValidationError("generate: empty context");
  if (context.back().speaker != SpeakerRole::User) throw ValidationError("generate: context must end with a user turn");
}

}  // namespace

Generation generate_response(const Parameters<float>& params, const Vocab& vocab, std::span<const Turn> context,
                             const std::optional<std::string>& future, const DecodeConfig& cfg) {
  validate(cfg);
  check_context(context);
  const std::size_t window = params.config.max_seq_len;
  Generation g;
  g.prefix = encode_prefix(context, future, vocab, window - 1);

  Rng rng(cfg.seed);
  EncodedSample seq;
  seq.ids = g.prefix;
  while (g.tokens.size() < cfg.max_new_tokens && seq.ids.size() < window) {
    seq.loss_mask.assign(seq.ids.size(), 0);
    const auto pass = forward(params, std::span<const EncodedSample>(&seq, 1));
    const auto logits = pass.logits(0);
    const TokenId next = choose_token(logits.row(logits.rows() - 1), cfg, rng, !g.tokens.empty());
    if (next == kEos) break;
    g.tokens.push_back(next);
    seq.ids.push_back(next);
  }
  g.text = decode_ids(g.tokens, vocab);
  return g;
}

CandidateScore score_candidate(const Parameters<float>& params, const Vocab& vocab, std::span<const Turn> context,
                               const std::optional<std::string>& future, std::string_view candidate) {
  BridgingSample s;
  s.context.assign(context.begin(), context.end());
  s.future = future;
  s.response = std::string(candidate);
  const auto enc = encode_sample(s, vocab, params.config.max_seq_len, Presentation::Positive);
  const std::span<const EncodedSample> batch(&enc, 1);
  const auto pass = forward(params, batch);
  const auto loss = compute_loss(pass, batch, 1.0, 0.0);
  const double z = static_cast<double>(pass.rs_logit(0));
  CandidateScore out;
  out.rs_probability = 1.0 / (1.0 + std::exp(-z));
  out.rg_nll = loss.l_rg;
  out.n_tokens = loss.rg_tokens;
  return out;
}

TransformerModel::TransformerModel(Parameters<float> params, Vocab vocab)
    : params_(std::move(params)), vocab_(std::move(vocab)) {
  if (vocab_.size() != params_.config.vocab_size) throw ValidationError("model: vocab size differs from model config");
}

}  // namespace fbnlg
