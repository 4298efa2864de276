#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fbnlg/corpus.hpp"
#include "fbnlg/model.hpp"
#include "fbnlg/tokenizer.hpp"

namespace fbnlg {

enum class Strategy { Greedy, TopK, Temperature };

std::string_view to_string(Strategy s);
std::optional<Strategy> parse_strategy(std::string_view s);

/// TopK applies `temperature` to the k retained logits; Temperature samples
/// from the full tempered distribution.
struct DecodeConfig {
  Strategy strategy = Strategy::Greedy;
  std::size_t k = 10;
  double temperature = 1.0;
  std::size_t max_new_tokens = 40;
  std::uint64_t seed = 0;

  friend bool operator==(const DecodeConfig&, const DecodeConfig&) = default;
};

void validate(const DecodeConfig& cfg);

/// Service default: top-k sampling, k = 10, temperature 0.9.
DecodeConfig service_decode_defaults();

struct CandidateScore {
  double rs_probability = 0.0;  // sigmoid(rs_logit)
  double rg_nll = 0.0;          // mean NLL per target token (incl. EOS), nats
  std::size_t n_tokens = 0;     // target tokens incl. EOS

  double log_prob() const { return -rg_nll * static_cast<double>(n_tokens); }
};

struct Generation {
  std::string text;
  std::vector<TokenId> prefix;  // BOS ... SYSTEM
  std::vector<TokenId> tokens;  // generated ids, EOS excluded
};

/// Autoregressive decoding from the encode_prefix layout. Special tokens
/// other than EOS are never emitted, and EOS only after at least one word so
/// that a response is never empty. EOS is forced after max_new_tokens or at
/// the end of the window.
Generation generate_response(const Parameters<float>& params, const Vocab& vocab, std::span<const Turn> context,
                             const std::optional<std::string>& future, const DecodeConfig& cfg);

CandidateScore score_candidate(const Parameters<float>& params, const Vocab& vocab, std::span<const Turn> context,
                               const std::optional<std::string>& future, std::string_view candidate);

/// What evaluation needs from a response model.
class ResponseModel {
 public:
  virtual ~ResponseModel() = default;
  virtual std::string generate(std::span<const Turn> context, const std::optional<std::string>& future,
                               const DecodeConfig& cfg) const = 0;
  virtual CandidateScore score(std::span<const Turn> context, const std::optional<std::string>& future,
                               std::string_view candidate) const = 0;
};

class TransformerModel final : public ResponseModel {
 public:
  TransformerModel(Parameters<float> params, Vocab vocab);

  std::string generate(std::span<const Turn> context, const std::optional<std::string>& future,
                       const DecodeConfig& cfg) const override {
    return generate_response(params_, vocab_, context, future, cfg).text;
  }
  CandidateScore score(std::span<const Turn> context, const std::optional<std::string>& future,
                       std::string_view candidate) const override {
    return score_candidate(params_, vocab_, context, future, candidate);
  }

  const Parameters<float>& params() const noexcept { return params_; }
  const Vocab& vocab() const noexcept { return vocab_; }

 private:
  Parameters<float> params_;
  Vocab vocab_;
};

}  // namespace fbnlg
