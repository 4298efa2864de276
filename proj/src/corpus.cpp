#include "fbnlg/corpus.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "fbnlg/error.hpp"
#include "fbnlg/random.hpp"
#include "json.hpp"

namespace fbnlg {

using nlohmann::json;

namespace {

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n\f\v";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
  if (!out) throw Error("write failed: " + path.string());
}

Dialogue parse_record(const json& j, std::size_t line) {
  if (!j.is_object()) throw ParseError(line, "record is not an object");
  Dialogue d;
  auto id = j.find("id");
  if (id == j.end() || !id->is_string()) throw ParseError(line, "missing string field 'id'");
  d.id = id->get<std::string>();

  auto dt = j.find("dtype");
  if (dt == j.end() || !dt->is_string()) throw ParseError(line, "missing string field 'dtype'");
  auto dtype = parse_dtype(dt->get<std::string>());
  if (!dtype) throw ParseError(line, "unknown dtype '" + dt->get<std::string>() + "'");
  d.dtype = *dtype;

  auto turns = j.find("turns");
  if (turns == j.end() || !turns->is_array()) throw ParseError(line, "missing array field 'turns'");
  for (const auto& t : *turns) {
    if (!t.is_object()) throw ParseError(line, "turn is not an object");
    auto sp = t.find("speaker");
    auto tx = t.find("text");
    if (sp == t.end() || !sp->is_string()) throw ParseError(line, "turn without string 'speaker'");
    if (tx == t.end() || !tx->is_string()) throw ParseError(line, "turn without string 'text'");
    auto role = parse_speaker(sp->get<std::string>());
    if (!role) throw ParseError(line, "unknown speaker '" + sp->get<std::string>() + "'");
    d.turns.push_back({*role, std::string(trim(tx->get<std::string>()))});
  }
  return d;
}

json to_json(const Dialogue& d) {
  json turns = json::array();
  for (const auto& t : d.turns) turns.push_back({{"speaker", to_string(t.speaker)}, {"text", t.text}});
  return {{"id", d.id}, {"dtype", to_string(d.dtype)}, {"turns", std::move(turns)}};
}

std::size_t pick_weighted(Rng& rng, const std::vector<double>& weights) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  const double r = uniform01(rng) * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (r < acc) return i;
  }
  return weights.size() - 1;
}

}  // namespace

std::string_view to_string(SpeakerRole r) { return r == SpeakerRole::User ? "user" : "system"; }
std::string_view to_string(DialogueType t) { return t == DialogueType::Chitchat ? "chitchat" : "task"; }

std::optional<SpeakerRole> parse_speaker(std::string_view s) {
  if (s == "user") return SpeakerRole::User;
  if (s == "system") return SpeakerRole::System;
  return std::nullopt;
}

std::optional<DialogueType> parse_dtype(std::string_view s) {
  if (s == "chitchat") return DialogueType::Chitchat;
  if (s == "task") return DialogueType::TaskOriented;
  return std::nullopt;
}

void validate(const Dialogue& d) {
  const auto fail = [&](const std::string& why) {
    throw ValidationError("dialogue '" + d.id + "': " + why);
  };
  if (d.id.empty()) throw ValidationError("dialogue with empty id");
  if (d.turns.size() < 2) fail("needs at least 2 turns");
  for (std::size_t i = 0; i < d.turns.size(); ++i) {
    const auto& t = d.turns[i];
    const auto expected = i % 2 == 0 ? SpeakerRole::User : SpeakerRole::System;
    if (t.speaker != expected) fail("speakers do not alternate at turn " + std::to_string(i));
    if (t.text.empty()) fail("empty text at turn " + std::to_string(i));
    if (trim(t.text).size() != t.text.size()) fail("untrimmed text at turn " + std::to_string(i));
  }
}

void validate(std::span<const Dialogue> dialogues) {
  std::set<std::string_view> ids;
  for (const auto& d : dialogues) {
    validate(d);
    if (!ids.insert(d.id).second) throw ValidationError("duplicate dialogue id '" + d.id + "'");
  }
}

std::vector<Dialogue> parse_corpus(std::string_view content) {
  std::vector<Dialogue> out;
  std::set<std::string> ids;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    auto nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    const auto line = trim(content.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty()) continue;

    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(line_no, std::string("malformed record: ") + e.what());
    }
    Dialogue d = parse_record(j, line_no);
    validate(d);
    if (!ids.insert(d.id).second) throw ValidationError("duplicate dialogue id '" + d.id + "'");
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<Dialogue> load_corpus(const std::filesystem::path& path) {
  return parse_corpus(read_file(path));
}

std::string serialize_corpus(std::span<const Dialogue> dialogues) {
  std::string out;
  for (const auto& d : dialogues) {
    out += to_json(d).dump();
    out += '\n';
  }
  return out;
}

void save_corpus(const std::filesystem::path& path, std::span<const Dialogue> dialogues) {
  write_file(path, serialize_corpus(dialogues));
}

CorpusStats corpus_stats(std::span<const Dialogue> dialogues) {
  CorpusStats s;
  for (const auto& d : dialogues) {
    ++s.n_dialogues;
    s.total_turns += d.turns.size();
    auto& t = s.per_dtype[d.dtype];
    ++t.n_dialogues;
    t.total_turns += d.turns.size();
  }
  if (s.n_dialogues > 0) s.avg_turns = static_cast<double>(s.total_turns) / static_cast<double>(s.n_dialogues);
  for (auto& [_, t] : s.per_dtype)
    t.avg_turns = static_cast<double>(t.total_turns) / static_cast<double>(t.n_dialogues);
  return s;
}

std::string format_stats_table(std::span<const std::pair<std::string, CorpusStats>> columns) {
  std::ostringstream os;
  const int label_w = 26;
  const int col_w = 14;
  os << std::left << std::setw(label_w) << "Stats";
  for (const auto& [name, _] : columns) os << std::right << std::setw(col_w) << name;
  os << '\n';
  os << std::left << std::setw(label_w) << "# dialogues";
  for (const auto& [_, s] : columns) os << std::right << std::setw(col_w) << s.n_dialogues;
  os << '\n';
  os << std::left << std::setw(label_w) << "Total no. of turns";
  for (const auto& [_, s] : columns) os << std::right << std::setw(col_w) << s.total_turns;
  os << '\n';
  os << std::left << std::setw(label_w) << "Avg. turns per dialogue";
  for (const auto& [_, s] : columns) {
    std::ostringstream v;
    v << std::fixed << std::setprecision(2) << s.avg_turns;
    os << std::right << std::setw(col_w) << v.str();
  }
  os << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------

void validate(const GrammarConfig& g) {
  if (g.intents.empty() && (g.chit.empty() || g.chit_fraction <= 0.0))
    throw ValidationError("grammar: needs at least one intent");
  if (!(g.chit_fraction >= 0.0 && g.chit_fraction <= 1.0))
    throw ValidationError("grammar: chit_fraction must lie in [0, 1]");
  if (g.chit_fraction > 0.0) {
    if (g.chit.empty()) throw ValidationError("grammar: chit_fraction > 0 but no chit templates");
    if (g.chit_turns < 2) throw ValidationError("grammar: chit_turns must be >= 2");
  }
  if (g.chit_fraction < 1.0 && g.intents.empty()) throw ValidationError("grammar: needs at least one intent");
  for (const auto& c : g.chit)
    if (trim(c).empty()) throw ValidationError("grammar: empty chit template");
  for (const auto& in : g.intents) {
    const auto fail = [&](const std::string& why) { throw ValidationError("grammar intent '" + in.name + "': " + why); };
    if (!(in.weight > 0.0)) fail("weight must be positive");
    if (trim(in.request).empty()) fail("empty request template");
    if (in.responses.empty()) fail("no responses");
    double total = 0.0;
    for (const auto& r : in.responses) {
      if (trim(r.text).empty()) fail("empty response template");
      if (!(r.probability >= 0.0)) fail("negative response probability");
      const auto& fut = r.future ? *r.future : in.future;
      if (trim(fut).empty()) fail("empty future template");
      total += r.probability;
    }
    if (std::abs(total - 1.0) > 1e-9) fail("response probabilities sum to " + std::to_string(total));
    const bool uses_slot = in.request.find("{slot}") != std::string::npos;
    if (uses_slot && in.slots.empty()) fail("template uses {slot} but no slots given");
  }
}

std::string render_template(std::string_view tmpl, std::string_view slot) {
  static constexpr std::string_view key = "{slot}";
  std::string out;
  std::size_t pos = 0;
  while (true) {
    auto hit = tmpl.find(key, pos);
    if (hit == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    out.append(tmpl.substr(pos, hit - pos));
    out.append(slot);
    pos = hit + key.size();
  }
  return std::string(trim(out));
}

GrammarConfig parse_grammar(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(0, std::string("malformed grammar: ") + e.what());
  }
  GrammarConfig g;
  try {
    g.seed = j.value("seed", std::uint64_t{0});
    g.chit_fraction = j.value("chit_fraction", 0.0);
    g.chit_turns = j.value("chit_turns", std::size_t{4});
    g.chit = j.value("chit", std::vector<std::string>{});
    for (const auto& ji : j.value("intents", json::array())) {
      IntentSpec in;
      in.name = ji.at("name").get<std::string>();
      in.weight = ji.value("weight", 1.0);
      in.request = ji.value("request", "i need help with " + in.name);
      in.future = ji.value("future", std::string{});
      in.slots = ji.value("slots", std::vector<std::string>{});
      for (const auto& jr : ji.at("responses")) {
        ResponseOption r;
        r.text = jr.at("text").get<std::string>();
        r.probability = jr.value("p", 1.0);
        if (jr.contains("future") && !jr["future"].is_null()) r.future = jr["future"].get<std::string>();
        in.responses.push_back(std::move(r));
      }
      g.intents.push_back(std::move(in));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("grammar: ") + e.what());
  }
  validate(g);
  return g;
}

GrammarConfig load_grammar(const std::filesystem::path& path) { return parse_grammar(read_file(path)); }

std::string serialize_grammar(const GrammarConfig& g) {
  json j;
  j["seed"] = g.seed;
  j["chit_fraction"] = g.chit_fraction;
  j["chit_turns"] = g.chit_turns;
  j["chit"] = g.chit;
  j["intents"] = json::array();
  for (const auto& in : g.intents) {
    json ji{{"name", in.name}, {"weight", in.weight}, {"request", in.request}, {"future", in.future}, {"slots", in.slots}};
    ji["responses"] = json::array();
    for (const auto& r : in.responses) {
      json jr{{"text", r.text}, {"p", r.probability}};
      if (r.future) jr["future"] = *r.future;
      ji["responses"].push_back(std::move(jr));
    }
    j["intents"].push_back(std::move(ji));
  }
  return j.dump(2) + "\n";
}

std::vector<Dialogue> generate_synthetic_corpus(const GrammarConfig& cfg, std::size_t n) {
  validate(cfg);
  if (n == 0) throw ValidationError("generate_synthetic_corpus: n must be >= 1");

  std::vector<double> intent_w;
  for (const auto& in : cfg.intents) intent_w.push_back(in.weight);

  std::vector<Dialogue> out;
  out.reserve(n);
  const int width = static_cast<int>(std::to_string(n).size());
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = derive_stream(cfg.seed, i);
    Dialogue d;
    std::ostringstream id;
    id << "synth-" << std::setw(width) << std::setfill('0') << i;
    d.id = id.str();

    const bool chit = cfg.chit_fraction > 0.0 && uniform01(rng) < cfg.chit_fraction;
    if (chit) {
      d.dtype = DialogueType::Chitchat;
      for (std::size_t t = 0; t < cfg.chit_turns; ++t) {
        const auto& text = cfg.chit[uniform_index(rng, cfg.chit.size())];
        d.turns.push_back({t % 2 == 0 ? SpeakerRole::User : SpeakerRole::System, std::string(trim(text))});
      }
    } else {
      d.dtype = DialogueType::TaskOriented;
      const auto& in = cfg.intents[pick_weighted(rng, intent_w)];
      const std::string slot = in.slots.empty() ? std::string{} : in.slots[uniform_index(rng, in.slots.size())];
      std::vector<double> resp_w;
      for (const auto& r : in.responses) resp_w.push_back(r.probability);
      const auto& resp = in.responses[pick_weighted(rng, resp_w)];
      d.turns.push_back({SpeakerRole::User, render_template(in.request, slot)});
      d.turns.push_back({SpeakerRole::System, render_template(resp.text, slot)});
      d.turns.push_back({SpeakerRole::User, render_template(resp.future ? *resp.future : in.future, slot)});
    }
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace fbnlg
