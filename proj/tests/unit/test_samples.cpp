#include <map>

#include "doctest.h"
#include "fbnlg/error.hpp"
#include "fbnlg/samples.hpp"
#include "fixtures.hpp"

using namespace fbnlg;

namespace {

Turn U(std::string s) { return {SpeakerRole::User, std::move(s)}; }
Turn S(std::string s) { return {SpeakerRole::System, std::move(s)}; }

Dialogue task(const std::string& id, std::vector<Turn> turns) { return {id, DialogueType::TaskOriented, std::move(turns)}; }

/// 50 dialogues [u1, s1, u2, s2, u3] with globally unique texts.
std::vector<Dialogue> fifty() {
  std::vector<Dialogue> ds;
  for (int i = 0; i < 50; ++i) {
    const auto k = std::to_string(i);
    ds.push_back(task("d" + k, {U("u1 " + k), S("s1 " + k), U("u2 " + k), S("s2 " + k), U("u3 " + k)}));
  }
  return ds;
}

}  // namespace

TEST_CASE("task samples bridge to the next user turn") {
  const std::vector<Dialogue> ds{task("a", {U("u1"), S("s1"), U("u2"), S("s2"), U("u3")}),
                                 task("b", {U("x"), S("y")})};
  BuilderConfig cfg;
  cfg.null_rate = 0.0;
  const auto s = build_samples(ds, cfg);
  REQUIRE(s.size() == 2);  // b ends on a system turn with no future
  CHECK(s[0].context == std::vector<Turn>{U("u1")});
  CHECK(s[0].future == "u2");
  CHECK(s[0].response == "s1");
  CHECK(s[0].turn_index == 1);
  CHECK(s[1].context == std::vector<Turn>{U("u1"), S("s1"), U("u2")});
  CHECK(s[1].future == "u3");
  CHECK(s[1].response == "s2");
  CHECK(s[1].turn_index == 2);
  for (const auto& x : s) CHECK(x.distractor == "y");
}

TEST_CASE("chit-chat samples have no future") {
  const std::vector<Dialogue> ds{{"c", DialogueType::Chitchat, {U("u1"), S("s1"), U("u2"), S("s2")}},
                                 task("t", {U("a"), S("b"), U("c")})};
  BuilderConfig cfg;
  cfg.null_rate = 0.0;
  const auto s = build_samples(ds, cfg);
  REQUIRE(s.size() == 3);
  CHECK(s[0].source_dialogue == "c");
  CHECK_FALSE(s[0].future.has_value());
  CHECK_FALSE(s[1].future.has_value());
  CHECK(s[1].response == "s2");
}

TEST_CASE("sample count and seeded NULL substitution") {
  const auto ds = fifty();
  BuilderConfig cfg;
  cfg.null_rate = 0.0;
  cfg.seed = 99;
  CHECK(build_samples(ds, cfg).size() == 100);

  cfg.null_rate = 0.5;
  const auto s = build_samples(ds, cfg);
  REQUIRE(s.size() == 100);
  // Oracle: the first draw of each per-sample stream decides NULL.
  std::size_t expected = 0;
  for (const auto& d : ds)
    for (std::size_t t = 1; t <= 2; ++t) {
      Rng rng = derive_stream(cfg.seed, fnv1a(d.id), t);
      expected += uniform01(rng) < 0.5;
    }
  std::size_t nulls = 0;
  for (const auto& x : s) nulls += !x.future;
  CHECK(nulls == expected);
  CHECK(nulls > 25);
  CHECK(nulls < 75);
  CHECK(build_samples(ds, cfg) == s);
}

TEST_CASE("output does not depend on the position of a dialogue") {
  auto ds = fifty();
  BuilderConfig cfg;
  cfg.seed = 5;
  const auto a = build_samples(ds, cfg);
  std::swap(ds[3], ds[10]);
  const auto b = build_samples(ds, cfg);
  std::map<std::pair<std::string, std::size_t>, std::optional<std::string>> fa, fb;
  for (const auto& x : a) fa[{x.source_dialogue, x.turn_index}] = x.future;
  for (const auto& x : b) fb[{x.source_dialogue, x.turn_index}] = x.future;
  CHECK(fa == fb);
}

TEST_CASE("sample invariants") {
  auto g = fixtures::overfit_grammar();
  g.chit = {"hey", "how is it going", "fine", "good to hear", "bye"};
  g.chit_fraction = 0.4;
  g.chit_turns = 7;
  const auto ds = generate_synthetic_corpus(g, 80);
  BuilderConfig cfg;
  cfg.max_context_turns = 3;
  const auto s = build_samples(ds, cfg);
  std::map<std::string, const Dialogue*> by_id;
  for (const auto& d : ds) by_id[d.id] = &d;
  for (const auto& x : s) {
    REQUIRE_FALSE(x.context.empty());
    CHECK(x.context.back().speaker == SpeakerRole::User);
    CHECK(x.context.size() <= 3);
    const auto& d = *by_id.at(x.source_dialogue);
    CHECK(d.turns[2 * x.turn_index - 1].text == x.response);
    if (d.dtype == DialogueType::Chitchat) CHECK_FALSE(x.future.has_value());
    // The distractor is a system turn of another dialogue.
    bool foreign = false;
    for (const auto& o : ds)
      if (o.id != d.id)
        for (std::size_t i = 1; i < o.turns.size(); i += 2) foreign |= o.turns[i].text == x.distractor;
    CHECK(foreign);
  }
}

TEST_CASE("distractors differ from responses when system turns are unique") {
  const auto s = build_samples(fifty(), BuilderConfig{});
  for (const auto& x : s) CHECK(x.distractor != x.response);
}

TEST_CASE("delta two skips to the second next user turn") {
  const std::vector<Dialogue> ds{task("a", {U("u1"), S("s1"), U("u2"), S("s2"), U("u3")}), task("b", {U("x"), S("y")})};
  BuilderConfig cfg;
  cfg.delta = 2;
  cfg.null_rate = 0;
  const auto s = build_samples(ds, cfg);
  REQUIRE(s.size() == 1);
  CHECK(s[0].future == "u3");
}

TEST_CASE("builder errors") {
  const std::vector<Dialogue> one{task("a", {U("u"), S("s"), U("v")})};
  CHECK_THROWS_AS(build_samples(one, BuilderConfig{}), ValidationError);
  std::vector<Dialogue> bad = fifty();
  bad[7].turns[1].speaker = SpeakerRole::User;
  try {
    build_samples(bad, BuilderConfig{});
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("d7") != std::string::npos);
  }
  BuilderConfig cfg;
  cfg.null_rate = 1.5;
  CHECK_THROWS_AS(build_samples(fifty(), cfg), ValidationError);
  cfg.null_rate = 0.1;
  cfg.delta = 0;
  CHECK_THROWS_AS(build_samples(fifty(), cfg), ValidationError);
}

TEST_CASE("draw_distractor support") {
  const std::vector<Dialogue> two{task("a", {U("u"), S("from a")}), task("b", {U("u"), S("from b"), U("v"), S("b2")})};
  Rng rng(1);
  for (int i = 0; i < 50; ++i) CHECK(draw_distractor(two, "b", rng) == "from a");
  const std::vector<Dialogue> one{task("a", {U("u"), S("s")})};
  CHECK_THROWS_AS(draw_distractor(one, "a", rng), ValidationError);
}

TEST_CASE("draw_distractor is uniform over other dialogues") {
  std::vector<Dialogue> ds;
  for (int i = 0; i < 4; ++i) {
    const auto k = std::to_string(i);
    ds.push_back(task(k, {U("u"), S("a" + k), U("v"), S("b" + k), U("w"), S("c" + k)}));
  }
  Rng rng(2024);
  std::map<char, int> hits;
  for (int i = 0; i < 10000; ++i) hits[draw_distractor(ds, "2", rng)[1]]++;
  CHECK(hits.count('2') == 0);
  // 99% multinomial band for p = 1/3 over 10k draws.
  for (char c : {'0', '1', '3'}) {
    CHECK(hits[c] / 10000.0 >= 0.31);
    CHECK(hits[c] / 10000.0 <= 0.36);
  }
}

TEST_CASE("sample files round-trip") {
  fixtures::TempDir tmp;
  const auto s = build_samples(generate_synthetic_corpus(fixtures::split_grammar(), 40), BuilderConfig{});
  save_samples(tmp / "s.jsonl", s);
  const auto back = load_samples(tmp / "s.jsonl");
  CHECK(back == s);
  CHECK(serialize_samples(back) == fixtures::read_bytes(tmp / "s.jsonl"));
  const auto first = serialize_samples(std::span(s).first(1));
  CHECK(first.find("\"future\":") != std::string::npos);
  CHECK(first.find("\"src\":") != std::string::npos);
  CHECK(first.find("\"t\":") != std::string::npos);
  CHECK_THROWS_AS(parse_samples("{\"context\": 3}"), ParseError);
}
