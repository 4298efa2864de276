#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fbnlg/corpus.hpp"
#include "fbnlg/samples.hpp"

namespace fbnlg {

using TokenId = std::int32_t;

enum class SpecialToken : TokenId { BOS = 0, EOS = 1, USER = 2, SYSTEM = 3, PAD = 4, UNK = 5 };
inline constexpr TokenId kNumSpecial = 6;
inline constexpr TokenId id_of(SpecialToken t) { return static_cast<TokenId>(t); }
inline constexpr TokenId kBos = id_of(SpecialToken::BOS);
inline constexpr TokenId kEos = id_of(SpecialToken::EOS);
inline constexpr TokenId kUser = id_of(SpecialToken::USER);
inline constexpr TokenId kSystem = id_of(SpecialToken::SYSTEM);
inline constexpr TokenId kPad = id_of(SpecialToken::PAD);
inline constexpr TokenId kUnk = id_of(SpecialToken::UNK);

/// Rendering of UNK in decoded text.
inline constexpr std::string_view kUnkMarker = "⟨unk⟩";

/// Lowercases ASCII, splits on whitespace, and splits each of . , ! ? ' " ; :
/// off as its own token.
std::vector<std::string> tokenize(std::string_view text);

bool is_punctuation(std::string_view token);

/// Joins tokens back into text: punctuation attaches to the preceding token,
/// and an apostrophe also attaches to the following one.
std::string detokenize(std::span<const std::string> tokens);

/// detokenize(tokenize(text)).
std::string normalize_text(std::string_view text);

class Vocab {
 public:
  /// Ids 0..5 are the special tokens; words follow by descending frequency,
  /// ties in lexicographic order. Words rarer than `min_freq` are dropped.
  static Vocab build(std::span<const std::string> texts, std::size_t min_freq);

  /// Reads the one-token-per-line format.
  static Vocab load(const std::filesystem::path& path);
  static Vocab parse(std::string_view content);
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;

  std::size_t size() const noexcept { return tokens_.size(); }
  std::size_t min_freq() const noexcept { return min_freq_; }

  /// UNK when absent.
  TokenId id(std::string_view token) const;
  std::optional<TokenId> find(std::string_view token) const;
  const std::string& token(TokenId id) const;
  bool contains(TokenId id) const noexcept { return id >= 0 && static_cast<std::size_t>(id) < tokens_.size(); }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  void index();

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
  std::size_t min_freq_ = 1;
};

Vocab build_vocab(std::span<const Dialogue> dialogues, std::size_t min_freq);
Vocab build_vocab(std::span<const BridgingSample> samples, std::size_t min_freq);

std::vector<TokenId> encode_text(std::string_view text, const Vocab& v);

/// Inverse of encode_text up to whitespace normalization. Specials other than
/// UNK are omitted; UNK renders as kUnkMarker. Throws ValidationError on an id
/// outside the vocabulary.
std::string decode_ids(std::span<const TokenId> ids, const Vocab& v);

enum class Presentation { Positive, Negative };

struct EncodedSample {
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> loss_mask;
  int rs_label = 1;

  std::size_t length() const noexcept { return ids.size(); }
};

/// BOS, (role, text) per context turn, [USER future], SYSTEM target, EOS.
/// Whole oldest context turns are dropped until the layout fits `max_len`;
/// throws WindowError when the future and target alone do not fit.
EncodedSample encode_sample(const BridgingSample& s, const Vocab& v, std::size_t max_len,
                            Presentation present = Presentation::Positive);

/// Same layout as encode_sample, cut after the SYSTEM marker. The newest
/// context turn is never dropped: throws WindowError if it cannot be kept
/// within `max_len`.
std::vector<TokenId> encode_prefix(std::span<const Turn> context, const std::optional<std::string>& future,
                                   const Vocab& v, std::size_t max_len);

/// Right-pads every sample to the longest length with PAD and loss mask 0.
std::vector<EncodedSample> pad_batch(std::span<const EncodedSample> batch);

}  // namespace fbnlg
