#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fbnlg/corpus.hpp"
#include "fbnlg/random.hpp"

namespace fbnlg {

struct BuilderConfig {
  std::size_t delta = 1;
  double null_rate = 0.1;
  std::size_t max_context_turns = 10;
  std::uint64_t seed = 0;
};

void validate(const BuilderConfig& cfg);

/// One (context, future; response; distractor) training tuple. An empty
/// `future` is the NULL future.
struct BridgingSample {
  std::vector<Turn> context;
  std::optional<std::string> future;
  std::string response;
  std::string distractor;
  std::string source_dialogue;
  std::size_t turn_index = 0;  // 1-based t of the response s_t

  friend bool operator==(const BridgingSample&, const BridgingSample&) = default;
};

/// Index of every system turn in a corpus, for O(1) uniform draws that skip
/// one dialogue.
class DistractorPool {
 public:
  explicit DistractorPool(std::span<const Dialogue> dialogues);

  /// Uniform over system turns of dialogues whose id differs from
  /// `exclude_id`. Throws ValidationError when none is eligible.
  const std::string& draw(std::string_view exclude_id, Rng& rng) const;

  std::size_t size() const noexcept { return texts_.size(); }

 private:
  struct Range {
    std::size_t begin;
    std::size_t end;
  };
  std::vector<std::string> texts_;
  std::vector<std::string> ids_;
  std::vector<Range> ranges_;
};

std::string draw_distractor(std::span<const Dialogue> dialogues, std::string_view exclude_id, Rng& rng);

/// Builds the self-supervised set. Randomness for sample (dialogue id, t) comes
/// from a stream keyed on (seed, id, t), so the output does not depend on
/// iteration order.
std::vector<BridgingSample> build_samples(std::span<const Dialogue> dialogues, const BuilderConfig& cfg);

std::string serialize_samples(std::span<const BridgingSample> samples);
std::vector<BridgingSample> parse_samples(std::string_view content);
void save_samples(const std::filesystem::path& path, std::span<const BridgingSample> samples);
std::vector<BridgingSample> load_samples(const std::filesystem::path& path);

}  // namespace fbnlg
