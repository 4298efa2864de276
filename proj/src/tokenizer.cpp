#include "fbnlg/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "fbnlg/error.hpp"

namespace fbnlg {

namespace {

constexpr std::string_view kSpecialNames[kNumSpecial] = {"BOS", "EOS", "USER", "SYSTEM", "PAD", "UNK"};
constexpr std::string_view kPunct = ".,!?'\";:";

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

char ascii_lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

}  // namespace

bool is_punctuation(std::string_view token) {
  return token.size() == 1 && kPunct.find(token[0]) != std::string_view::npos;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  const auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char c : text) {
    if (is_space(c)) {
      flush();
    } else if (kPunct.find(c) != std::string_view::npos) {
      flush();
      out.emplace_back(1, c);
    } else {
      cur.push_back(ascii_lower(c));
    }
  }
  flush();
  return out;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  bool glue_next = true;
  for (const auto& tok : tokens) {
    const bool punct = is_punctuation(tok);
    if (!glue_next && !punct) out.push_back(' ');
    out += tok;
    glue_next = tok == "'";
  }
  return out;
}

std::string normalize_text(std::string_view text) {
  const auto toks = tokenize(text);
  return detokenize(toks);
}

// ---------------------------------------------------------------------------

void Vocab::index() {
  ids_.clear();
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<TokenId>(i)).second)
      throw ValidationError("vocab: duplicate token '" + tokens_[i] + "'");
  }
}

Vocab Vocab::build(std::span<const std::string> texts, std::size_t min_freq) {
  if (min_freq < 1) throw ValidationError("vocab: min_freq must be >= 1");
  if (texts.empty()) throw ValidationError("vocab: empty corpus");
  std::map<std::string, std::size_t> freq;
  for (const auto& t : texts)
    for (auto& tok : tokenize(t)) ++freq[std::move(tok)];

  std::vector<std::pair<std::string, std::size_t>> words;
  for (auto& [w, n] : freq)
    if (n >= min_freq) words.emplace_back(w, n);
  // std::map iteration is already lexicographic; stable sort keeps ties so.
  std::stable_sort(words.begin(), words.end(), [](const auto& a, const auto& b) { return a.second > b.second; });

  Vocab v;
  v.min_freq_ = min_freq;
  for (auto name : kSpecialNames) v.tokens_.emplace_back(name);
  for (auto& [w, _] : words) v.tokens_.push_back(w);
  v.index();
  return v;
}

Vocab Vocab::parse(std::string_view content) {
  Vocab v;
  std::size_t pos = 0;
  while (pos < content.size()) {
    auto nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    auto line = content.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    v.tokens_.emplace_back(line);
    pos = nl + 1;
  }
  if (v.tokens_.size() < static_cast<std::size_t>(kNumSpecial))
    throw ValidationError("vocab file: fewer than 6 lines");
  for (TokenId i = 0; i < kNumSpecial; ++i)
    if (v.tokens_[i] != kSpecialNames[i])
      throw ValidationError("vocab file: line " + std::to_string(i) + " must be " + std::string(kSpecialNames[i]));
  for (std::size_t i = kNumSpecial; i < v.tokens_.size(); ++i)
    if (v.tokens_[i].empty()) throw ValidationError("vocab file: empty token at line " + std::to_string(i));
  v.index();
  return v;
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string Vocab::serialize() const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out += '\n';
  }
  return out;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << serialize();
}

TokenId Vocab::id(std::string_view token) const { return find(token).value_or(kUnk); }

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (!contains(id)) throw ValidationError("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

Vocab build_vocab(std::span<const Dialogue> dialogues, std::size_t min_freq) {
  std::vector<std::string> texts;
  for (const auto& d : dialogues)
    for (const auto& t : d.turns) texts.push_back(t.text);
  return Vocab::build(texts, min_freq);
}

Vocab build_vocab(std::span<const BridgingSample> samples, std::size_t min_freq) {
  std::vector<std::string> texts;
  for (const auto& s : samples) {
    for (const auto& t : s.context) texts.push_back(t.text);
    if (s.future) texts.push_back(*s.future);
    texts.push_back(s.response);
    texts.push_back(s.distractor);
  }
  return Vocab::build(texts, min_freq);
}

std::vector<TokenId> encode_text(std::string_view text, const Vocab& v) {
  std::vector<TokenId> out;
  for (const auto& tok : tokenize(text)) out.push_back(v.id(tok));
  return out;
}

std::string decode_ids(std::span<const TokenId> ids, const Vocab& v) {
  std::vector<std::string> toks;
  for (TokenId id : ids) {
    const auto& tok = v.token(id);
    if (id == kUnk)
      toks.emplace_back(kUnkMarker);
    else if (id >= kNumSpecial)
      toks.push_back(tok);
  }
  return detokenize(toks);
}

// ---------------------------------------------------------------------------

namespace {

struct Layout {
  std::vector<std::vector<TokenId>> turns;  // role marker + text, per kept turn
  std::vector<TokenId> future;              // USER + text, or empty
};

Layout fit_layout(std::span<const Turn> context, const std::optional<std::string>& future, std::size_t target_len,
                  const Vocab& v, std::size_t max_len, bool keep_last_turn) {
  Layout l;
  if (future) {
    l.future.push_back(kUser);
    auto f = encode_text(*future, v);
    l.future.insert(l.future.end(), f.begin(), f.end());
  }
  const std::size_t fixed = 1 + l.future.size() + 1 + target_len;
  if (fixed > max_len) throw WindowError("sample exceeds window");

  std::vector<std::vector<TokenId>> segs;
  for (const auto& t : context) {
    std::vector<TokenId> seg{t.speaker == SpeakerRole::User ? kUser : kSystem};
    auto ids = encode_text(t.text, v);
    seg.insert(seg.end(), ids.begin(), ids.end());
    segs.push_back(std::move(seg));
  }
  std::size_t used = fixed;
  std::size_t first = segs.size();
  while (first > 0 && used + segs[first - 1].size() <= max_len) {
    --first;
    used += segs[first].size();
  }
  if (keep_last_turn && !segs.empty() && first == segs.size())
    throw WindowError("latest context turn does not fit the window");
  l.turns.assign(std::make_move_iterator(segs.begin() + static_cast<std::ptrdiff_t>(first)),
                 std::make_move_iterator(segs.end()));
  return l;
}

void append_prefix(const Layout& l, std::vector<TokenId>& ids) {
  ids.push_back(kBos);
  for (const auto& seg : l.turns) ids.insert(ids.end(), seg.begin(), seg.end());
  ids.insert(ids.end(), l.future.begin(), l.future.end());
  ids.push_back(kSystem);
}

}  // namespace

EncodedSample encode_sample(const BridgingSample& s, const Vocab& v, std::size_t max_len, Presentation present) {
  const auto target = encode_text(present == Presentation::Positive ? s.response : s.distractor, v);
  const auto layout = fit_layout(s.context, s.future, target.size() + 1, v, max_len, false);

  EncodedSample e;
  append_prefix(layout, e.ids);
  e.loss_mask.assign(e.ids.size(), 0);
  e.ids.insert(e.ids.end(), target.begin(), target.end());
  e.ids.push_back(kEos);
  e.loss_mask.resize(e.ids.size(), 1);
  e.rs_label = present == Presentation::Positive ? 1 : 0;
  return e;
}

std::vector<TokenId> encode_prefix(std::span<const Turn> context, const std::optional<std::string>& future,
                                   const Vocab& v, std::size_t max_len) {
  const auto layout = fit_layout(context, future, 0, v, max_len, true);
  std::vector<TokenId> ids;
  append_prefix(layout, ids);
  return ids;
}

std::vector<EncodedSample> pad_batch(std::span<const EncodedSample> batch) {
  std::size_t len = 0;
  for (const auto& s : batch) len = std::max(len, s.length());
  std::vector<EncodedSample> out(batch.begin(), batch.end());
  for (auto& s : out) {
    s.ids.resize(len, kPad);
    s.loss_mask.resize(len, 0);
  }
  return out;
}

}  // namespace fbnlg
