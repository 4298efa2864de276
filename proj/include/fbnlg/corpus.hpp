#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fbnlg {

enum class SpeakerRole { User, System };
enum class DialogueType { Chitchat, TaskOriented };

std::string_view to_string(SpeakerRole r);
std::string_view to_string(DialogueType t);
std::optional<SpeakerRole> parse_speaker(std::string_view s);
std::optional<DialogueType> parse_dtype(std::string_view s);

struct Turn {
  SpeakerRole speaker = SpeakerRole::User;
  std::string text;

  friend bool operator==(const Turn&, const Turn&) = default;
};

struct Dialogue {
  std::string id;
  DialogueType dtype = DialogueType::TaskOriented;
  std::vector<Turn> turns;

  friend bool operator==(const Dialogue&, const Dialogue&) = default;
};

/// Throws ValidationError naming the dialogue when a Dialogue invariant fails:
/// at least two turns, first speaker User, strict alternation, trimmed
/// non-empty texts.
void validate(const Dialogue& d);

/// Validates every dialogue and the uniqueness of ids.
void validate(std::span<const Dialogue> dialogues);

/// Reads the line-per-record interchange format. Blank lines are skipped;
/// turn texts are trimmed.
std::vector<Dialogue> load_corpus(const std::filesystem::path& path);
std::vector<Dialogue> parse_corpus(std::string_view content);

void save_corpus(const std::filesystem::path& path, std::span<const Dialogue> dialogues);
std::string serialize_corpus(std::span<const Dialogue> dialogues);

struct TypeStats {
  std::size_t n_dialogues = 0;
  std::size_t total_turns = 0;
  double avg_turns = 0.0;
};

struct CorpusStats {
  std::size_t n_dialogues = 0;
  std::size_t total_turns = 0;
  double avg_turns = 0.0;
  std::map<DialogueType, TypeStats> per_dtype;
};

CorpusStats corpus_stats(std::span<const Dialogue> dialogues);

/// Rows in the layout of the fine-tuning statistics table, one column per
/// named corpus.
std::string format_stats_table(std::span<const std::pair<std::string, CorpusStats>> columns);

// ---------------------------------------------------------------------------
// Synthetic dialogue grammar.
//
// A task dialogue picks an intent by weight and a slot value uniformly from
// the intent's slot list, then emits
//   user:   request  (with "{slot}" substituted)
//   system: a response drawn from the intent's response distribution
//   user:   the future utterance tied to that response, or the intent's
// A chit dialogue has `chit_turns` turns, each drawn uniformly from `chit`.

struct ResponseOption {
  std::string text;
  double probability = 1.0;
  /// Future that follows this response; falls back to the intent future.
  std::optional<std::string> future;
};

struct IntentSpec {
  std::string name;
  double weight = 1.0;
  std::string request;
  std::string future;
  std::vector<ResponseOption> responses;
  std::vector<std::string> slots;
};

struct GrammarConfig {
  std::vector<IntentSpec> intents;
  std::vector<std::string> chit;
  double chit_fraction = 0.0;
  std::size_t chit_turns = 4;
  std::uint64_t seed = 0;
};

/// Throws ValidationError on an inconsistent grammar.
void validate(const GrammarConfig& g);

GrammarConfig parse_grammar(std::string_view json_text);
GrammarConfig load_grammar(const std::filesystem::path& path);
std::string serialize_grammar(const GrammarConfig& g);

/// Replaces every "{slot}" in `tmpl` with `slot`.
std::string render_template(std::string_view tmpl, std::string_view slot);

std::vector<Dialogue> generate_synthetic_corpus(const GrammarConfig& cfg, std::size_t n);

}  // namespace fbnlg
