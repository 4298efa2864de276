#include <cmath>
#include <fstream>

#include "doctest.h"
#include "fbnlg/decode.hpp"
#include "fbnlg/error.hpp"
#include "fbnlg/evalkit.hpp"
#include "fbnlg/trainer.hpp"
#include "fixtures.hpp"

using namespace fbnlg;

namespace {

struct Setup {
  std::vector<BridgingSample> samples;
  Vocab vocab;
  ModelConfig model;
};

Setup tiny_setup(std::size_t dialogues = 24) {
  Setup s;
  s.samples = build_samples(generate_synthetic_corpus(fixtures::overfit_grammar(), dialogues), BuilderConfig{});
  s.vocab = build_vocab(s.samples, 1);
  s.model = fixtures::tiny_config(s.vocab.size());
  return s;
}

template <class S>
double max_abs_diff(const Parameters<S>& a, const Parameters<S>& b) {
  std::vector<const Tensor<S>*> tb;
  b.visit([&](std::string_view, const Tensor<S>& t) { tb.push_back(&t); });
  double m = 0;
  std::size_t i = 0;
  a.visit([&](std::string_view, const Tensor<S>& t) {
    m = std::max(m, static_cast<double>((t - *tb[i++]).cwiseAbs().maxCoeff()));
  });
  return m;
}

Gradients<double> filled(const ModelConfig& c, double value) {
  auto g = Parameters<double>::zeros(c);
  g.visit([&](std::string_view, Tensor<double>& t) { t.setConstant(value); });
  return g;
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(validate(c));
  c.alpha_rg = 0;
  c.alpha_rs = 0;
  CHECK_THROWS_AS(validate(c), ValidationError);
  c = TrainConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(validate(c), ValidationError);
  c = TrainConfig{};
  c.rs_flip_prob = 1.1;
  CHECK_THROWS_AS(validate(c), ValidationError);
  c = TrainConfig{};
  c.alpha_rs = -1;
  CHECK_THROWS_AS(validate(c), ValidationError);
}

TEST_CASE("adam on a zero gradient leaves parameters unchanged") {
  const auto c = fixtures::tiny_config(20);
  auto p = init_parameters<double>(c, 1);
  const auto before = p;
  auto st = AdamState<double>::zeros(c);
  adam_update(p, filled(c, 0.0), st, TrainConfig{});
  CHECK(max_abs_diff(p, before) == 0.0);
  CHECK(st.step == 1);
}

TEST_CASE("first adam step moves by lr times the sign") {
  const auto c = fixtures::tiny_config(20);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  for (double g : {0.5, -2.0}) {
    auto p = init_parameters<double>(c, 2);
    const auto before = p;
    auto st = AdamState<double>::zeros(c);
    adam_update(p, filled(c, g), st, cfg);
    auto delta = p;
    axpy(delta, -1.0, before);
    const double expected = -cfg.learning_rate * (g > 0 ? 1.0 : -1.0);
    delta.visit([&](std::string_view, const Tensor<double>& t) {
      CHECK(((t.array() - expected).abs() <= 0.01 * std::abs(expected)).all());
    });
  }
}

TEST_CASE("adam is scale invariant at the first step") {
  const auto c = fixtures::tiny_config(20);
  const auto p0 = init_parameters<double>(c, 3);
  auto g = init_parameters<double>(c, 4);  // arbitrary non-constant gradient
  auto g_scaled = g;
  g_scaled.visit([](std::string_view, Tensor<double>& t) { t *= 37.0; });

  auto a = p0, b = p0;
  auto sa = AdamState<double>::zeros(c), sb = AdamState<double>::zeros(c);
  adam_update(a, g, sa, TrainConfig{});
  adam_update(b, g_scaled, sb, TrainConfig{});
  axpy(a, -1.0, p0);
  axpy(b, -1.0, p0);
  const double na = std::sqrt(squared_norm(a)), nb = std::sqrt(squared_norm(b));
  CHECK(std::abs(nb / na - 1.0) < 0.01);
  double dot = 0;
  std::vector<const Tensor<double>*> tb;
  b.visit([&](std::string_view, const Tensor<double>& t) { tb.push_back(&t); });
  std::size_t i = 0;
  a.visit([&](std::string_view, const Tensor<double>& t) { dot += (t.array() * tb[i++]->array()).sum(); });
  CHECK(dot / (na * nb) > 1.0 - 1e-6);
}

TEST_CASE("adam rejects non-finite gradients atomically") {
  const auto c = fixtures::tiny_config(20);
  auto p = init_parameters<float>(c, 5);
  const auto before = p;
  auto st = AdamState<float>::zeros(c);
  auto g = Parameters<float>::zeros(c);
  g.rs_b(0, 0) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(adam_update(p, g, st, TrainConfig{}), NumericError);
  CHECK(max_abs_diff(p, before) == 0.0);
  CHECK(st.step == 0);
}

TEST_CASE("global norm clipping") {
  const auto c = fixtures::tiny_config(20);
  auto g = init_parameters<double>(c, 6);
  const double norm = std::sqrt(squared_norm(g));
  REQUIRE(norm > 1.0);
  CHECK(clip_global_norm(g, 1.0) == doctest::Approx(norm));
  CHECK(std::sqrt(squared_norm(g)) <= 1.0 + 1e-6);
  auto small = filled(c, 1e-6);
  const auto copy = small;
  clip_global_norm(small, 1.0);
  CHECK(max_abs_diff(small, copy) == 0.0);
}

TEST_CASE("alpha_rs = 0 leaves the RS head at its initialization") {
  auto s = tiny_setup();
  const auto init = init_parameters<float>(s.model, 7);
  TrainConfig cfg;
  cfg.alpha_rs = 0.0;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  const auto [p, m] = train(init, s.samples, s.vocab, cfg);
  CHECK((p.rs_w.array() == init.rs_w.array()).all());
  CHECK(p.rs_b(0, 0) == init.rs_b(0, 0));
  CHECK((p.tok_emb.array() != init.tok_emb.array()).any());
}

TEST_CASE("same seed, same parameters") {
  auto s = tiny_setup();
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  const auto a = train(init_parameters<float>(s.model, 8), s.samples, s.vocab, cfg);
  const auto b = train(init_parameters<float>(s.model, 8), s.samples, s.vocab, cfg);
  CHECK(max_abs_diff(a.first, b.first) == 0.0);
  REQUIRE(a.second.epochs.size() == 2);
  CHECK(a.second.epochs[1].total == b.second.epochs[1].total);
  cfg.seed = 1;
  const auto c = train(init_parameters<float>(s.model, 8), s.samples, s.vocab, cfg);
  CHECK(max_abs_diff(a.first, c.first) > 0.0);
}

TEST_CASE("epoch metrics") {
  auto s = tiny_setup();
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 5;
  std::size_t calls = 0;
  const auto [p, m] = train(init_parameters<float>(s.model, 9), s.samples, s.vocab, cfg,
                            [&](const EpochMetrics&, const Trainer&) { return ++calls < 2; });
  CHECK(calls == 2);
  REQUIRE(m.epochs.size() == 2);
  for (const auto& e : m.epochs) {
    CHECK(std::isfinite(e.total));
    CHECK(e.steps == (s.samples.size() + 4) / 5);
    CHECK(e.tokens > 0);
    CHECK(e.total == doctest::Approx(e.l_rg + e.l_rs));
  }
  CHECK(m.epochs[1].epoch == 1);
}

TEST_CASE("resume continues like the uninterrupted run") {
  fixtures::TempDir tmp;
  auto s = tiny_setup();
  TrainConfig cfg;
  cfg.batch_size = 7;  // epochs end mid-sequence of batches
  Trainer full(init_parameters<float>(s.model, 10), s.samples, s.vocab, cfg);
  for (int i = 0; i < 12; ++i) full.step();

  Trainer first(init_parameters<float>(s.model, 10), s.samples, s.vocab, cfg);
  for (int i = 0; i < 5; ++i) first.step();
  save_checkpoint(tmp / "ck", first.checkpoint());
  Trainer second = Trainer::resume(load_checkpoint(tmp / "ck"), s.samples);
  CHECK(second.global_step() == 5);
  for (int i = 0; i < 7; ++i) second.step();
  CHECK(max_abs_diff(full.params(), second.params()) == 0.0);
  CHECK(max_abs_diff(full.optimizer().v, second.optimizer().v) == 0.0);
}

TEST_CASE("save, load, save is byte-identical") {
  fixtures::TempDir tmp;
  auto s = tiny_setup();
  Trainer t(init_parameters<float>(s.model, 11), s.samples, s.vocab, TrainConfig{});
  t.step();
  save_checkpoint(tmp / "a", t.checkpoint());
  const auto back = load_checkpoint(tmp / "a");
  save_checkpoint(tmp / "b", back);
  for (const auto* f : {"config.json", "vocab.txt", "manifest.txt", "tensors.bin"})
    CHECK(fixtures::read_bytes(tmp / "a" / f) == fixtures::read_bytes(tmp / "b" / f));
  CHECK(back.step == 1);
  CHECK(back.model == s.model);
  CHECK(back.vocab == s.vocab);
  REQUIRE(back.optimizer.has_value());
  CHECK(back.optimizer->step == 1);
  CHECK(max_abs_diff(back.params, t.params()) == 0.0);
  // 4 bytes per scalar for params, m and v.
  CHECK(fixtures::read_bytes(tmp / "a" / "tensors.bin").size() == 12 * t.params().scalar_count());
}

TEST_CASE("checkpoint errors") {
  fixtures::TempDir tmp;
  auto s = tiny_setup();
  Checkpoint ck;
  ck.model = s.model;
  ck.vocab = s.vocab;
  ck.params = init_parameters<float>(s.model, 12);
  const auto dir = tmp / "ck";
  save_checkpoint(dir, ck);
  CHECK_NOTHROW(load_checkpoint(dir));
  CHECK_FALSE(load_checkpoint(dir).optimizer.has_value());
  const auto config = fixtures::read_bytes(dir / "config.json");
  const auto manifest = fixtures::read_bytes(dir / "manifest.txt");
  const auto blob = fixtures::read_bytes(dir / "tensors.bin");

  SUBCASE("version") {
    auto j = nlohmann::json::parse(config);
    j["format_version"] = 99;
    fixtures::write_bytes(dir / "config.json", j.dump());
    CHECK_THROWS_AS(load_checkpoint(dir), CheckpointVersionError);
  }
  SUBCASE("truncated blob") {
    fixtures::write_bytes(dir / "tensors.bin", blob.substr(0, blob.size() - 10));
    CHECK_THROWS_AS(load_checkpoint(dir), CheckpointTruncatedError);
  }
  SUBCASE("corrupted manifest") {
    auto bad = manifest;
    bad.replace(bad.find("pos_emb"), 7, "pos_xxx");
    fixtures::write_bytes(dir / "manifest.txt", bad);
    CHECK_THROWS_AS(load_checkpoint(dir), CheckpointShapeError);
    fixtures::write_bytes(dir / "manifest.txt", "garbage\n");
    CHECK_THROWS_AS(load_checkpoint(dir), CheckpointShapeError);
  }
  SUBCASE("shape mismatch") {
    auto j = nlohmann::json::parse(config);
    j["model"]["d_ff"] = 64;
    fixtures::write_bytes(dir / "config.json", j.dump());
    CHECK_THROWS_AS(load_checkpoint(dir), CheckpointShapeError);
  }
  SUBCASE("bad json") {
    fixtures::write_bytes(dir / "config.json", "{");
    CHECK_THROWS_AS(load_checkpoint(dir), CheckpointError);
  }
  SUBCASE("missing directory") { CHECK_THROWS_AS(load_checkpoint(tmp / "nope"), CheckpointError); }
}

TEST_CASE("loss decreases across epochs on a tiny set") {
  auto s = tiny_setup(40);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 8;
  cfg.epochs = 40;
  const auto [p, m] = train(init_parameters<float>(s.model, 13), s.samples, s.vocab, cfg);
  std::size_t ok = 0;
  for (std::size_t e = 1; e < m.epochs.size(); ++e) ok += m.epochs[e].total <= m.epochs[e - 1].total;
  MESSAGE("non-increasing epochs: " << ok << " of " << m.epochs.size() - 1);
  CHECK(static_cast<double>(ok) >= 0.95 * static_cast<double>(m.epochs.size() - 1));
}

TEST_CASE("coin-flip negatives add ranking signal over positives-only training") {
  const auto g = fixtures::overfit_grammar();
  const auto train_s = build_samples(generate_synthetic_corpus(g, 300), BuilderConfig{});
  auto held = g;
  held.seed = 4242;
  const auto test_s = build_samples(generate_synthetic_corpus(held, 400), BuilderConfig{});
  const auto v = build_vocab(train_s, 1);
  const auto mc = fixtures::tiny_config(v.size());
  DecodeConfig dc;
  dc.max_new_tokens = 1;

  // Averaged over inits. Positives-only training is not at chance here: it
  // still picks up context agreement features, so only the gap is pinned.
  auto rs_acc = [&](double flip) {
    double sum = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      TrainConfig cfg;
      cfg.rs_flip_prob = flip;
      cfg.epochs = 20;
      cfg.learning_rate = 1e-3;
      const auto [p, m] = train(init_parameters<float>(mc, seed), train_s, v, cfg);
      sum += evaluate(TransformerModel(p, v), test_s, dc, "x").rs_accuracy;
    }
    return sum / 5;
  };
  const double control = rs_acc(1.0);
  const double trained = rs_acc(0.5);
  MESSAGE("rs accuracy: positives only " << control << ", coin flip " << trained);
  CHECK(trained >= control + 0.15);
}

TEST_CASE("trainer rejects bad inputs") {
  auto s = tiny_setup();
  CHECK_THROWS_AS(Trainer(init_parameters<float>(s.model, 1), {}, s.vocab, TrainConfig{}), ValidationError);
  auto other = s.model;
  other.vocab_size += 1;
  CHECK_THROWS_AS(Trainer(init_parameters<float>(other, 1), s.samples, s.vocab, TrainConfig{}), ValidationError);
  auto small = fixtures::tiny_config(s.vocab.size(), 8);
  CHECK_THROWS_AS(Trainer(init_parameters<float>(small, 1), s.samples, s.vocab, TrainConfig{}), WindowError);
}

TEST_CASE("divergence aborts with the step number") {
  auto s = tiny_setup();
  auto p = init_parameters<float>(s.model, 15);
  p.rs_b(0, 0) = std::numeric_limits<float>::infinity();
  Trainer t(p, s.samples, s.vocab, TrainConfig{});
  try {
    t.step();
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
}
