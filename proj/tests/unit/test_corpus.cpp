#include "doctest.h"
#include "fbnlg/corpus.hpp"
#include "fbnlg/error.hpp"
#include "fbnlg/random.hpp"
#include "fixtures.hpp"

using namespace fbnlg;

namespace {

const char* kFourTurns =
    R"({"id":"d1","dtype":"task","turns":[{"speaker":"user","text":"hi"},{"speaker":"system","text":"hello"},)"
    R"({"speaker":"user","text":"book a taxi"},{"speaker":"system","text":"sure"}]})";

Dialogue make(const std::string& id, std::size_t n_turns, DialogueType t = DialogueType::TaskOriented) {
  Dialogue d{id, t, {}};
  for (std::size_t i = 0; i < n_turns; ++i)
    d.turns.push_back({i % 2 ? SpeakerRole::System : SpeakerRole::User, "turn " + std::to_string(i)});
  return d;
}

}  // namespace

TEST_CASE("a valid record loads") {
  const auto d = parse_corpus(std::string(kFourTurns) + "\n");
  REQUIRE(d.size() == 1);
  CHECK(d[0].id == "d1");
  CHECK(d[0].dtype == DialogueType::TaskOriented);
  CHECK(d[0].turns.size() == 4);
  CHECK(d[0].turns[3].text == "sure");
}

TEST_CASE("an empty file loads as an empty corpus") {
  fixtures::TempDir tmp;
  fixtures::write_bytes(tmp / "empty.jsonl", "");
  CHECK(load_corpus(tmp / "empty.jsonl").empty());
  CHECK(parse_corpus("\n\n").empty());
}

TEST_CASE("schema violations cite the line") {
  const std::string good = kFourTurns;
  const std::string robot =
      R"({"id":"d3","dtype":"task","turns":[{"speaker":"robot","text":"beep"},{"speaker":"system","text":"ok"}]})";
  try {
    parse_corpus(good + "\n" + std::string(kFourTurns).replace(7, 2, "d2") + "\n" + robot + "\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_corpus("{not json"), ParseError);
  CHECK_THROWS_AS(parse_corpus(R"({"id":"x","dtype":"movie","turns":[]})"), ParseError);
}

TEST_CASE("dialogue invariants are enforced") {
  SUBCASE("duplicate ids") {
    CHECK_THROWS_AS(parse_corpus(std::string(kFourTurns) + "\n" + kFourTurns), ValidationError);
  }
  SUBCASE("non-alternating speakers name the dialogue") {
    const auto rec =
        R"({"id":"bad-7","dtype":"task","turns":[{"speaker":"user","text":"a"},{"speaker":"user","text":"b"}]})";
    try {
      parse_corpus(rec);
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("bad-7") != std::string::npos);
    }
  }
  SUBCASE("system first") {
    auto d = make("s", 2);
    std::swap(d.turns[0].speaker, d.turns[1].speaker);
    CHECK_THROWS_AS(validate(d), ValidationError);
  }
  SUBCASE("too short") { CHECK_THROWS_AS(validate(make("one", 1)), ValidationError); }
  SUBCASE("blank text") {
    auto d = make("blank", 2);
    d.turns[1].text = "  ";
    CHECK_THROWS_AS(validate(d), ValidationError);
  }
}

TEST_CASE("texts are trimmed on load") {
  const auto d = parse_corpus(
      R"({"id":"t","dtype":"chitchat","turns":[{"speaker":"user","text":"  hi "},{"speaker":"system","text":"yo\n"}]})");
  CHECK(d[0].turns[0].text == "hi");
  CHECK(d[0].turns[1].text == "yo");
  CHECK(d[0].dtype == DialogueType::Chitchat);
}

TEST_CASE("write then load is the identity") {
  fixtures::TempDir tmp;
  auto g = fixtures::overfit_grammar();
  g.chit = {"how are you?", "i'm fine, thanks.", "nice weather today"};
  g.chit_fraction = 0.3;
  const auto corpus = generate_synthetic_corpus(g, 50);
  save_corpus(tmp / "c.jsonl", corpus);
  CHECK(load_corpus(tmp / "c.jsonl") == corpus);
  CHECK(serialize_corpus(load_corpus(tmp / "c.jsonl")) == fixtures::read_bytes(tmp / "c.jsonl"));
}

TEST_CASE("corpus statistics") {
  const std::vector<Dialogue> ds{make("a", 3), make("b", 5, DialogueType::Chitchat)};
  const auto s = corpus_stats(ds);
  CHECK(s.n_dialogues == 2);
  CHECK(s.total_turns == 8);
  CHECK(s.avg_turns == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(s.per_dtype.at(DialogueType::Chitchat).total_turns == 5);
  CHECK(s.per_dtype.at(DialogueType::TaskOriented).n_dialogues == 1);

  const auto empty = corpus_stats(std::vector<Dialogue>{});
  CHECK(empty.n_dialogues == 0);
  CHECK(empty.total_turns == 0);
  CHECK(empty.avg_turns == 0.0);
}

TEST_CASE("statistics table rows") {
  // 10 dialogues averaging 7.9 turns, the DailyDialog row scale.
  std::vector<Dialogue> ds;
  for (int i = 0; i < 10; ++i) ds.push_back(make("d" + std::to_string(i), i == 0 ? 7 : 8));
  const auto s = corpus_stats(ds);
  CHECK(std::abs(s.avg_turns - 7.9) < 1e-9);
  const std::vector<std::pair<std::string, CorpusStats>> cols{{"daily", s}};
  const auto table = format_stats_table(cols);
  CHECK(table.find("# dialogues") != std::string::npos);
  CHECK(table.find("Total no. of turns") != std::string::npos);
  CHECK(table.find("Avg. turns per dialogue") != std::string::npos);
  CHECK(table.find("7.90") != std::string::npos);
  CHECK(table.find("79") != std::string::npos);
}

TEST_CASE("synthetic generation is seeded") {
  const auto g = fixtures::split_grammar();
  CHECK(serialize_corpus(generate_synthetic_corpus(g, 40)) == serialize_corpus(generate_synthetic_corpus(g, 40)));
  auto other = g;
  other.seed = g.seed + 1;
  CHECK(serialize_corpus(generate_synthetic_corpus(g, 40)) != serialize_corpus(generate_synthetic_corpus(other, 40)));
}

TEST_CASE("degenerate response distribution") {
  GrammarConfig g;
  g.intents = {{"only", 1.0, "i need help", "thanks", {{"how can i help?", 1.0, std::nullopt}}, {}}};
  const auto ds = generate_synthetic_corpus(g, 10);
  REQUIRE(ds.size() == 10);
  for (const auto& d : ds) {
    CHECK(d.turns.size() == 3);
    CHECK(d.turns[1].text == "how can i help?");
    CHECK(d.turns[2].text == "thanks");
  }
}

TEST_CASE("response frequencies follow the grammar") {
  GrammarConfig g;
  g.seed = 2024;
  g.intents = {{"x", 1.0, "request", "future", {{"A", 0.7, std::nullopt}, {"B", 0.3, std::nullopt}}, {}}};
  const auto ds = generate_synthetic_corpus(g, 10000);
  std::size_t a = 0;
  for (const auto& d : ds) a += d.turns[1].text == "A";
  const double f = static_cast<double>(a) / 10000.0;
  CHECK(f >= 0.67);
  CHECK(f <= 0.73);
}

TEST_CASE("grammar validation") {
  GrammarConfig g;
  CHECK_THROWS_AS(validate(g), ValidationError);
  g.intents = {{"x", 1.0, "r", "f", {{"A", 0.6, std::nullopt}, {"B", 0.3, std::nullopt}}, {}}};
  CHECK_THROWS_AS(validate(g), ValidationError);
  g.intents[0].responses[1].probability = 0.4;
  CHECK_NOTHROW(validate(g));
  g.intents[0].request = "go to the {slot}";
  CHECK_THROWS_AS(validate(g), ValidationError);
  CHECK_THROWS_AS(generate_synthetic_corpus(g, 5), ValidationError);
}

TEST_CASE("grammar files round-trip") {
  auto g = fixtures::split_grammar();
  g.chit = {"hello there"};
  g.chit_fraction = 0.25;
  g.intents[0].responses[0].future = "special future";
  const auto text = serialize_grammar(g);
  CHECK(serialize_grammar(parse_grammar(text)) == text);
  CHECK(serialize_corpus(generate_synthetic_corpus(parse_grammar(text), 30)) ==
        serialize_corpus(generate_synthetic_corpus(g, 30)));
}

TEST_CASE("generated dialogues satisfy the invariants over random grammars") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    Rng rng = derive_stream(seed, 77);
    GrammarConfig g;
    g.seed = seed;
    const std::size_t n_intents = 1 + uniform_index(rng, 4);
    for (std::size_t i = 0; i < n_intents; ++i) {
      IntentSpec in;
      in.name = "i" + std::to_string(i);
      in.weight = 0.5 + uniform01(rng);
      in.request = "please do {slot} " + std::to_string(i);
      in.future = "then {slot} again";
      in.slots = {"alpha", "beta", "gamma"};
      const std::size_t n_resp = 1 + uniform_index(rng, 3);
      for (std::size_t r = 0; r < n_resp; ++r)
        in.responses.push_back({"answer " + std::to_string(r) + " about {slot}", 1.0 / static_cast<double>(n_resp),
                                r == 0 ? std::optional<std::string>("special") : std::nullopt});
      g.intents.push_back(in);
    }
    if (uniform01(rng) < 0.5) {
      g.chit = {"hey", "what's up", "not much"};
      g.chit_fraction = uniform01(rng);
      g.chit_turns = 2 + uniform_index(rng, 5);
    }
    const auto ds = generate_synthetic_corpus(g, 30);
    CHECK_NOTHROW(validate(std::span<const Dialogue>(ds)));
  }
}
