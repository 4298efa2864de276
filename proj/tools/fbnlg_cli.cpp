#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "fbnlg/corpus.hpp"
#include "fbnlg/decode.hpp"
#include "fbnlg/error.hpp"
#include "fbnlg/evalkit.hpp"
#include "fbnlg/hash.hpp"
#include "fbnlg/json_io.hpp"
#include "fbnlg/model.hpp"
#include "fbnlg/samples.hpp"
#include "fbnlg/service.hpp"
#include "fbnlg/trainer.hpp"
#include "httplib.h"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fbnlg;

namespace {

/// Raised for bad invocations: exit code 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw UsageError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& bytes) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write " + p.string());
  out << bytes;
}

json parse_json_file(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::parse_error& e) {
    throw UsageError(p.string() + ": " + e.what());
  }
}

json path_entry(const fs::path& p) {
  return {{"path", p.generic_string()},
          {"sha1", fs::is_directory(p) ? git_tree_hash(p) : git_blob_hash_file(p)}};
}

/// `<out>.manifest.json` records everything needed to rerun the command.
void write_manifest(const std::string& command, const json& config, std::uint64_t seed,
                    const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
  json m{{"command", command}, {"config", config}, {"seed", seed}};
  m["inputs"] = json::array();
  for (const auto& p : inputs) m["inputs"].push_back(path_entry(p));
  m["outputs"] = json::array();
  for (const auto& p : outputs) m["outputs"].push_back(path_entry(p));
  fs::path target = outputs.front();
  if (target.filename().empty()) target = target.parent_path();
  write_file(target.string() + ".manifest.json", m.dump(2) + "\n");
}

std::vector<Turn> parse_context(const std::string& text) {
  std::vector<Turn> turns;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw UsageError("context line " + std::to_string(n) + ": expected 'speaker: text'");
    std::string who = line.substr(0, colon);
    who.erase(0, who.find_first_not_of(" \t"));
    who.erase(who.find_last_not_of(" \t") + 1);
    const auto role = parse_speaker(who);
    if (!role) throw UsageError("context line " + std::to_string(n) + ": unknown speaker '" + who + "'");
    std::string body = line.substr(colon + 1);
    body.erase(0, body.find_first_not_of(" \t"));
    body.erase(body.find_last_not_of(" \t\r") + 1);
    if (body.empty()) throw UsageError("context line " + std::to_string(n) + ": empty text");
    turns.push_back({*role, body});
  }
  return turns;
}

std::ostream& log() { return std::cerr; }

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string grammar, out;
  std::size_t n = 100;
  std::optional<std::uint64_t> seed;
};

int run_synth(const SynthArgs& a) {
  GrammarConfig g = load_grammar(a.grammar);
  if (a.seed) g.seed = *a.seed;
  const auto dialogues = generate_synthetic_corpus(g, a.n);
  save_corpus(a.out, dialogues);
  write_manifest("synth", {{"grammar", json::parse(serialize_grammar(g))}, {"n", a.n}}, g.seed, {a.grammar}, {a.out});
  return 0;
}

struct BuildArgs {
  std::vector<std::string> corpora;
  std::string out;
  BuilderConfig cfg;
};

int run_build(const BuildArgs& a) {
  std::vector<Dialogue> all;
  std::vector<fs::path> inputs;
  for (const auto& c : a.corpora) {
    auto d = load_corpus(c);
    all.insert(all.end(), std::make_move_iterator(d.begin()), std::make_move_iterator(d.end()));
    inputs.emplace_back(c);
  }
  const auto samples = build_samples(all, a.cfg);
  save_samples(a.out, samples);
  std::size_t nulls = 0;
  for (const auto& s : samples) nulls += !s.future;
  log() << samples.size() << " samples, " << nulls << " with NULL future\n";
  write_manifest("build-data",
                 {{"delta", a.cfg.delta}, {"null_rate", a.cfg.null_rate}, {"max_context_turns", a.cfg.max_context_turns}},
                 a.cfg.seed, inputs, {a.out});
  return 0;
}

int run_stats(const std::vector<std::string>& corpora) {
  std::vector<std::pair<std::string, CorpusStats>> cols;
  for (const auto& c : corpora) cols.emplace_back(fs::path(c).stem().string(), corpus_stats(load_corpus(c)));
  std::cout << format_stats_table(cols);
  return 0;
}

struct TrainArgs {
  std::string data, config, out, resume;
  std::size_t min_freq = 2;
  std::uint64_t seed = 0;
  std::optional<std::size_t> epochs;
};

int run_train(const TrainArgs& a) {
  const auto samples = load_samples(a.data);
  std::optional<Trainer> trainer;
  json resolved;
  std::vector<fs::path> inputs{a.data};
  if (!a.resume.empty()) {
    Checkpoint ck = load_checkpoint(a.resume);
    if (a.epochs) ck.train.epochs = *a.epochs;
    trainer.emplace(Trainer::resume(ck, samples));
    resolved = {{"model", to_json(ck.model)}, {"train", to_json(ck.train)}, {"resume", a.resume}};
    inputs.emplace_back(a.resume);
  } else {
    ModelConfig mc;
    TrainConfig tc;
    if (!a.config.empty()) {
      const json j = parse_json_file(a.config);
      for (auto it = j.begin(); it != j.end(); ++it)
        if (it.key() != "model" && it.key() != "train") throw UsageError("config: unknown key '" + it.key() + "'");
      if (j.contains("model")) mc = model_config_from_json(j["model"]);
      if (j.contains("train")) tc = train_config_from_json(j["train"]);
      inputs.emplace_back(a.config);
    }
    tc.seed = a.seed;
    if (a.epochs) tc.epochs = *a.epochs;
    Vocab vocab = build_vocab(samples, a.min_freq);
    mc.vocab_size = vocab.size();
    validate(mc);
    trainer.emplace(init_parameters<float>(mc, a.seed), samples, std::move(vocab), tc);
    resolved = {{"model", to_json(mc)}, {"train", to_json(tc)}, {"vocab_min_freq", a.min_freq}};
  }

  const std::size_t epochs = trainer->config().epochs;
  json metrics = json::array();
  while (trainer->epoch() < epochs) {
    const auto m = trainer->run_epoch();
    metrics.push_back({{"epoch", m.epoch}, {"l_rg", m.l_rg}, {"l_rs", m.l_rs}, {"total", m.total},
                       {"steps", m.steps}, {"tokens", m.tokens}});
    log() << "epoch " << m.epoch << "  l_rg " << m.l_rg << "  l_rs " << m.l_rs << "  total " << m.total << "  "
          << static_cast<long long>(m.tokens_per_second) << " tok/s  " << m.wall_seconds << " s\n";
  }
  save_checkpoint(a.out, trainer->checkpoint());
  write_file(fs::path(a.out) / "metrics.json", metrics.dump(2) + "\n");
  write_manifest("train", resolved, trainer->config().seed, inputs, {a.out});
  return 0;
}

std::shared_ptr<TransformerModel> load_model(const std::string& dir) {
  Checkpoint ck = load_checkpoint(dir);
  return std::make_shared<TransformerModel>(std::move(ck.params), std::move(ck.vocab));
}

struct EvalArgs {
  std::string ckpt, data, report, label = "model";
  std::size_t max_new_tokens = 40;
};

int run_eval(const EvalArgs& a) {
  const auto model = load_model(a.ckpt);
  const auto samples = load_samples(a.data);
  DecodeConfig cfg;
  cfg.max_new_tokens = a.max_new_tokens;
  const auto r = evaluate(*model, samples, cfg, a.label);
  write_file(a.report, to_json(r).dump(2) + "\n");
  std::cout << format_eval_table(std::span<const EvalReport>(&r, 1));
  write_manifest("eval", {{"decode", to_json(cfg)}, {"label", a.label}}, cfg.seed, {a.ckpt, a.data}, {a.report});
  return 0;
}

struct GenerateArgs {
  std::string ckpt, context, future = "none", strategy = "greedy", out;
  std::size_t k = 10, max_new_tokens = 40;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

int run_generate(const GenerateArgs& a) {
  const auto model = load_model(a.ckpt);
  std::string text;
  if (a.context == "-") {
    std::ostringstream ss;
    ss << std::cin.rdbuf();
    text = ss.str();
  } else {
    text = read_file(a.context);
  }
  const auto context = parse_context(text);
  DecodeConfig cfg;
  const auto s = parse_strategy(a.strategy);
  if (!s) throw UsageError("unknown strategy '" + a.strategy + "'");
  cfg.strategy = *s;
  cfg.k = a.k;
  cfg.temperature = a.temperature;
  cfg.max_new_tokens = a.max_new_tokens;
  cfg.seed = a.seed;
  const std::optional<std::string> future = a.future == "none" ? std::nullopt : std::optional(a.future);
  const std::string response = model->generate(context, future, cfg) + "\n";
  std::cout << response;
  if (!a.out.empty()) {
    write_file(a.out, response);
    std::vector<fs::path> inputs{a.ckpt};
    if (a.context != "-") inputs.emplace_back(a.context);
    write_manifest("generate", {{"decode", to_json(cfg)}, {"future", future ? json(*future) : json(nullptr)}},
                   cfg.seed, inputs, {a.out});
  }
  return 0;
}

struct GradArgs {
  std::string config;
  std::size_t probes = 200, batch = 3, length = 12;
  double step = 1e-4, tolerance = 1e-4;
  std::uint64_t seed = 0;
};

int run_grad_check(const GradArgs& a) {
  ModelConfig mc;
  mc.vocab_size = 32;
  mc.n_layers = 1;
  mc.n_heads = 2;
  mc.d_model = 16;
  mc.d_ff = 32;
  mc.max_seq_len = 16;
  if (!a.config.empty()) {
    json j = parse_json_file(a.config);
    if (j.contains("model")) j = j["model"];
    json merged = to_json(mc);
    merged.update(j);
    mc = model_config_from_json(merged);
  }
  validate(mc);
  if (a.length > mc.max_seq_len || a.length < 4) throw UsageError("--length must lie in [4, max_seq_len]");
  const auto params = init_parameters<double>(mc, a.seed);
  Rng rng = derive_stream(a.seed, 0x47524144);
  std::vector<EncodedSample> batch;
  for (std::size_t b = 0; b < a.batch; ++b) {
    EncodedSample e;
    const std::size_t len = a.length - b % 3;
    e.ids.push_back(kBos);
    while (e.ids.size() + 1 < len)
      e.ids.push_back(static_cast<TokenId>(kNumSpecial + uniform_index(rng, mc.vocab_size - kNumSpecial)));
    e.ids.push_back(kEos);
    e.loss_mask.assign(e.ids.size(), 0);
    for (std::size_t i = e.ids.size() / 2; i < e.ids.size(); ++i) e.loss_mask[i] = 1;
    e.rs_label = b % 2 == 0 ? 1 : 0;
    if (b == 0) e.rs_label = 1;
    batch.push_back(std::move(e));
  }
  GradCheckOptions opts;
  opts.n_probes = a.probes;
  opts.step = a.step;
  opts.seed = a.seed;
  const auto r = finite_difference_check(params, batch, opts);
  std::cout << "max_rel_error " << r.max_rel_error << " (" << r.worst_tensor << ", " << r.probes << " probes)\n";
  if (!(r.max_rel_error < a.tolerance)) {
    std::cerr << "gradient check failed: " << r.max_rel_error << " >= " << a.tolerance << "\n";
    return 2;
  }
  return 0;
}

struct ServeArgs {
  std::string ckpt, host = "127.0.0.1", static_dir;
  int port = 8080;
  std::size_t max_context = 10;
  long ttl_seconds = 3600;
};

httplib::Server* g_server = nullptr;

int run_serve(const ServeArgs& a) {
  ServiceConfig sc;
  sc.max_context_turns = a.max_context;
  sc.session_ttl = std::chrono::seconds(a.ttl_seconds);
  sc.checkpoint_id = git_tree_hash(a.ckpt);
  ChatService service(load_model(a.ckpt), sc);
  httplib::Server server;
  install_routes(server, service, a.static_dir.empty() ? std::nullopt : std::optional<fs::path>(a.static_dir));
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  log() << "serving " << a.ckpt << " on http://" << a.host << ":" << a.port << "\n";
  if (!server.listen(a.host, a.port)) throw UsageError("cannot listen on " + a.host + ":" + std::to_string(a.port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Future-bridging response generation toolkit"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic corpus from a grammar");
  c_synth->add_option("--grammar", synth.grammar, "Grammar file")->required()->check(CLI::ExistingFile);
  c_synth->add_option("--n", synth.n, "Number of dialogues")->capture_default_str();
  c_synth->add_option("--seed", synth.seed, "Overrides the grammar seed");
  c_synth->add_option("--out", synth.out, "Corpus file")->required();

  BuildArgs build;
  auto* c_build = app.add_subcommand("build-data", "Build bridging samples from corpora");
  c_build->add_option("--corpus", build.corpora, "Corpus files")->required()->check(CLI::ExistingFile);
  c_build->add_option("--delta", build.cfg.delta)->capture_default_str();
  c_build->add_option("--null-rate", build.cfg.null_rate)->capture_default_str();
  c_build->add_option("--max-context", build.cfg.max_context_turns)->capture_default_str();
  c_build->add_option("--seed", build.cfg.seed)->capture_default_str();
  c_build->add_option("--out", build.out, "Sample file")->required();

  std::vector<std::string> stats;
  auto* c_stats = app.add_subcommand("stats", "Print corpus statistics");
  c_stats->add_option("--corpus", stats, "Corpus files")->required()->check(CLI::ExistingFile);

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train a model and write a checkpoint");
  c_train->add_option("--data", tr.data, "Sample file")->required()->check(CLI::ExistingFile);
  c_train->add_option("--vocab-min-freq", tr.min_freq)->capture_default_str();
  c_train->add_option("--config", tr.config, "JSON with optional \"model\" and \"train\" objects")
      ->check(CLI::ExistingFile);
  c_train->add_option("--out", tr.out, "Checkpoint directory")->required();
  c_train->add_option("--seed", tr.seed)->capture_default_str();
  c_train->add_option("--epochs", tr.epochs, "Overrides the configured epoch count");
  c_train->add_option("--resume", tr.resume, "Continue from this checkpoint")->check(CLI::ExistingDirectory);

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a sample file");
  c_eval->add_option("--ckpt", ev.ckpt)->required()->check(CLI::ExistingDirectory);
  c_eval->add_option("--data", ev.data)->required()->check(CLI::ExistingFile);
  c_eval->add_option("--report", ev.report, "JSON report file")->required();
  c_eval->add_option("--label", ev.label)->capture_default_str();
  c_eval->add_option("--max-new-tokens", ev.max_new_tokens)->capture_default_str();

  GenerateArgs gen;
  auto* c_gen = app.add_subcommand("generate", "Generate one system response");
  c_gen->add_option("--ckpt", gen.ckpt)->required()->check(CLI::ExistingDirectory);
  c_gen->add_option("--context", gen.context, "File of 'user: ...' / 'system: ...' lines, or -")->required();
  c_gen->add_option("--future", gen.future, "Future utterance, or none")->capture_default_str();
  c_gen->add_option("--strategy", gen.strategy)->check(CLI::IsMember({"greedy", "topk", "temperature"}))
      ->capture_default_str();
  c_gen->add_option("--k", gen.k)->capture_default_str();
  c_gen->add_option("--temperature", gen.temperature)->capture_default_str();
  c_gen->add_option("--max-new-tokens", gen.max_new_tokens)->capture_default_str();
  c_gen->add_option("--seed", gen.seed)->capture_default_str();
  c_gen->add_option("--out", gen.out, "Also write the response here");

  GradArgs gc;
  auto* c_grad = app.add_subcommand("grad-check", "Compare analytic and numerical gradients");
  c_grad->add_option("--config", gc.config, "JSON model config")->check(CLI::ExistingFile);
  c_grad->add_option("--probes", gc.probes)->capture_default_str();
  c_grad->add_option("--step", gc.step)->capture_default_str();
  c_grad->add_option("--tolerance", gc.tolerance)->capture_default_str();
  c_grad->add_option("--batch", gc.batch)->capture_default_str();
  c_grad->add_option("--length", gc.length)->capture_default_str();
  c_grad->add_option("--seed", gc.seed)->capture_default_str();

  ServeArgs sv;
  auto* c_serve = app.add_subcommand("serve", "Serve the chat API");
  c_serve->add_option("--ckpt", sv.ckpt)->required()->check(CLI::ExistingDirectory);
  c_serve->add_option("--port", sv.port)->capture_default_str();
  c_serve->add_option("--host", sv.host)->capture_default_str();
  c_serve->add_option("--static", sv.static_dir, "Directory of UI assets")->check(CLI::ExistingDirectory);
  c_serve->add_option("--max-context", sv.max_context)->capture_default_str();
  c_serve->add_option("--ttl", sv.ttl_seconds, "Session idle timeout in seconds")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (c_synth->parsed()) return run_synth(synth);
    if (c_build->parsed()) return run_build(build);
    if (c_stats->parsed()) return run_stats(stats);
    if (c_train->parsed()) return run_train(tr);
    if (c_eval->parsed()) return run_eval(ev);
    if (c_gen->parsed()) return run_generate(gen);
    if (c_grad->parsed()) return run_grad_check(gc);
    if (c_serve->parsed()) return run_serve(sv);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
