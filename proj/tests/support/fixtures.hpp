#pragma once

// Grammars and helpers shared by the unit and acceptance tests.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fbnlg/corpus.hpp"
#include "fbnlg/model.hpp"
#include "fbnlg/samples.hpp"
#include "fbnlg/tokenizer.hpp"

namespace fixtures {

using namespace fbnlg;

inline std::vector<std::string> places() {
  return {"museum", "station", "library", "hotel", "theater", "airport", "garden", "market",
          "stadium", "harbor", "castle", "bakery", "gallery", "temple", "cinema", "campus"};
}

/// Four intents, one response each; the request fixes the response.
inline GrammarConfig overfit_grammar(std::uint64_t seed = 7) {
  GrammarConfig g;
  g.seed = seed;
  const auto s = places();
  g.intents = {
      {"taxi", 1.0, "i need a taxi to the {slot}", "yes, please book it",
       {{"a taxi to the {slot} will arrive in ten minutes.", 1.0, std::nullopt}}, s},
      {"route", 1.0, "how do i get to the {slot}?", "thanks, that helps",
       {{"take the blue line and walk to the {slot}.", 1.0, std::nullopt}}, s},
      {"hours", 1.0, "when does the {slot} open?", "great, i will go then",
       {{"the {slot} opens at nine in the morning.", 1.0, std::nullopt}}, s},
      {"ticket", 1.0, "can i buy a ticket for the {slot}?", "okay, one ticket please",
       {{"tickets for the {slot} cost five pounds.", 1.0, std::nullopt}}, s},
  };
  return g;
}

/// Responses split 0.7 / 0.3 independently of the future.
inline GrammarConfig split_grammar(std::uint64_t seed = 11) {
  GrammarConfig g;
  g.seed = seed;
  const auto s = places();
  g.intents = {
      {"book", 1.0, "please book the {slot} for me", "thank you",
       {{"done, the {slot} is booked.", 0.7, std::nullopt}, {"sorry, the {slot} is full today.", 0.3, std::nullopt}},
       s},
      {"visit", 1.0, "i want to visit the {slot}", "sounds good",
       {{"the {slot} is open now.", 0.7, std::nullopt}, {"the {slot} is closed for repairs.", 0.3, std::nullopt}},
       s},
      {"find", 1.0, "where can i find the {slot}?", "got it",
       {{"the {slot} is next to the park.", 0.7, std::nullopt}, {"the {slot} moved across town.", 0.3, std::nullopt}},
       s},
      {"meet", 1.0, "let us meet at the {slot}", "see you there",
       {{"fine, i will be at the {slot} at noon.", 0.7, std::nullopt},
        {"the {slot} is too busy, pick another place.", 0.3, std::nullopt}},
       s},
  };
  return g;
}

/// One shared request; only the future identifies the intent and thus the
/// response template.
inline GrammarConfig bridge_grammar(std::uint64_t seed = 13) {
  GrammarConfig g;
  g.seed = seed;
  const auto s = places();
  const std::string request = "tell me about the {slot}";
  g.intents = {
      {"price", 1.0, request, "that is too expensive for me",
       {{"a ticket for the {slot} costs forty dollars.", 1.0, std::nullopt}}, s},
      {"hours", 1.0, request, "six is too late for me",
       {{"the {slot} closes at six every evening.", 1.0, std::nullopt}}, s},
      {"where", 1.0, request, "main street is too far away",
       {{"the {slot} is on main street near the bridge.", 1.0, std::nullopt}}, s},
  };
  return g;
}

/// Response slot recovered from a single-turn task context.
inline std::string slot_of(const GrammarConfig& g, const std::string& request) {
  for (const auto& in : g.intents)
    for (const auto& s : in.slots)
      if (normalize_text(render_template(in.request, s)) == normalize_text(request)) return s;
  return {};
}

/// Token-level Levenshtein distance.
inline std::size_t token_distance(const std::string& a, const std::string& b) {
  const auto x = tokenize(a), y = tokenize(b);
  std::vector<std::size_t> prev(y.size() + 1), cur(y.size() + 1);
  for (std::size_t j = 0; j <= y.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= x.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= y.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x[i - 1] == y[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[y.size()];
}

/// Index of the intent whose response, rendered with `slot`, is nearest to
/// `text`. Ties go to the lowest index.
inline std::size_t nearest_intent(const GrammarConfig& g, const std::string& text, const std::string& slot) {
  std::size_t best = 0, best_d = SIZE_MAX;
  for (std::size_t i = 0; i < g.intents.size(); ++i) {
    const auto d = token_distance(text, render_template(g.intents[i].responses.front().text, slot));
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

/// Small config for fast tests.
inline ModelConfig tiny_config(std::size_t vocab_size, std::size_t max_seq_len = 32) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_model = 16;
  c.d_ff = 32;
  c.max_seq_len = max_seq_len;
  return c;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "fbnlg") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_bytes(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

struct RunResult {
  int status = -1;
  std::string out;
  std::string err;
};

/// Runs a shell command, capturing stdout and stderr.
inline RunResult run(const std::string& cmd, const std::filesystem::path& scratch) {
  static std::atomic<int> counter{0};
  const int n = counter++;
  const auto out = scratch / ("stdout-" + std::to_string(n));
  const auto err = scratch / ("stderr-" + std::to_string(n));
  RunResult r;
  const int raw = std::system((cmd + " >" + out.string() + " 2>" + err.string()).c_str());
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = read_bytes(out);
  r.err = read_bytes(err);
  return r;
}

}  // namespace fixtures
