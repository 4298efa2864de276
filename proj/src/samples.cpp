#include "fbnlg/samples.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "fbnlg/error.hpp"
#include "json.hpp"

namespace fbnlg {

using nlohmann::json;

void validate(const BuilderConfig& cfg) {
  if (cfg.delta < 1) throw ValidationError("builder: delta must be >= 1");
  if (!(cfg.null_rate >= 0.0 && cfg.null_rate <= 1.0)) throw ValidationError("builder: null_rate must lie in [0, 1]");
  if (cfg.max_context_turns < 1) throw ValidationError("builder: max_context_turns must be >= 1");
}

DistractorPool::DistractorPool(std::span<const Dialogue> dialogues) {
  for (const auto& d : dialogues) {
    Range r{texts_.size(), texts_.size()};
    for (const auto& t : d.turns)
      if (t.speaker == SpeakerRole::System) texts_.push_back(t.text);
    r.end = texts_.size();
    ids_.push_back(d.id);
    ranges_.push_back(r);
  }
}

const std::string& DistractorPool::draw(std::string_view exclude_id, Rng& rng) const {
  Range skip{0, 0};
  for (std::size_t i = 0; i < ids_.size(); ++i)
    if (ids_[i] == exclude_id) {
      skip = ranges_[i];
      break;
    }
  const std::size_t width = skip.end - skip.begin;
  const std::size_t eligible = texts_.size() - width;
  if (eligible == 0)
    throw ValidationError("no system turn outside dialogue '" + std::string(exclude_id) + "'");
  std::size_t k = uniform_index(rng, eligible);
  if (k >= skip.begin) k += width;
  return texts_[k];
}

std::string draw_distractor(std::span<const Dialogue> dialogues, std::string_view exclude_id, Rng& rng) {
  return DistractorPool(dialogues).draw(exclude_id, rng);
}

std::vector<BridgingSample> build_samples(std::span<const Dialogue> dialogues, const BuilderConfig& cfg) {
  validate(cfg);
  if (dialogues.size() < 2) throw ValidationError("build_samples: need at least 2 dialogues");
  validate(dialogues);

  const DistractorPool pool(dialogues);
  std::vector<BridgingSample> out;
  for (const auto& d : dialogues) {
    const auto id_key = fnv1a(d.id);
    // s_t sits at index 2t-1; u_{t+delta} at 2(t+delta)-2.
    for (std::size_t sys = 1; sys < d.turns.size(); sys += 2) {
      const std::size_t t = (sys + 1) / 2;
      const std::size_t future_idx = sys + 2 * cfg.delta - 1;
      const bool task = d.dtype == DialogueType::TaskOriented;
      if (task && future_idx >= d.turns.size()) continue;

      Rng rng = derive_stream(cfg.seed, id_key, t);
      BridgingSample s;
      const std::size_t n_ctx = std::min(sys, cfg.max_context_turns);
      s.context.assign(d.turns.begin() + static_cast<std::ptrdiff_t>(sys - n_ctx),
                       d.turns.begin() + static_cast<std::ptrdiff_t>(sys));
      s.response = d.turns[sys].text;
      s.source_dialogue = d.id;
      s.turn_index = t;
      if (task) {
        const bool make_null = uniform01(rng) < cfg.null_rate;
        if (!make_null) s.future = d.turns[future_idx].text;
      }
      s.distractor = pool.draw(d.id, rng);
      out.push_back(std::move(s));
    }
  }
  return out;
}

namespace {

json turn_json(const Turn& t) { return {{"speaker", to_string(t.speaker)}, {"text", t.text}}; }

BridgingSample parse_sample(const json& j, std::size_t line) {
  BridgingSample s;
  try {
    for (const auto& jt : j.at("context")) {
      auto role = parse_speaker(jt.at("speaker").get<std::string>());
      if (!role) throw ParseError(line, "unknown speaker");
      s.context.push_back({*role, jt.at("text").get<std::string>()});
    }
    const auto& f = j.at("future");
    if (!f.is_null()) s.future = f.get<std::string>();
    s.response = j.at("response").get<std::string>();
    s.distractor = j.at("distractor").get<std::string>();
    s.source_dialogue = j.at("src").get<std::string>();
    s.turn_index = j.at("t").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ParseError(line, std::string("bad sample record: ") + e.what());
  }
  if (s.context.empty() || s.context.back().speaker != SpeakerRole::User)
    throw ParseError(line, "sample context must end with a user turn");
  return s;
}

}  // namespace

std::string serialize_samples(std::span<const BridgingSample> samples) {
  std::string out;
  for (const auto& s : samples) {
    json ctx = json::array();
    for (const auto& t : s.context) ctx.push_back(turn_json(t));
    json j{{"context", std::move(ctx)},
           {"future", s.future ? json(*s.future) : json(nullptr)},
           {"response", s.response},
           {"distractor", s.distractor},
           {"src", s.source_dialogue},
           {"t", s.turn_index}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<BridgingSample> parse_samples(std::string_view content) {
  std::vector<BridgingSample> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < content.size()) {
    auto nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    auto line = content.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(line_no, std::string("malformed sample: ") + e.what());
    }
    out.push_back(parse_sample(j, line_no));
  }
  return out;
}

void save_samples(const std::filesystem::path& path, std::span<const BridgingSample> samples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << serialize_samples(samples);
}

std::vector<BridgingSample> load_samples(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_samples(ss.str());
}

}  // namespace fbnlg
