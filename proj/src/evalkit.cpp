#include "fbnlg/evalkit.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "fbnlg/error.hpp"
#include "fbnlg/tokenizer.hpp"

namespace fbnlg {

namespace {

using NGram = std::vector<std::string>;

std::map<NGram, std::size_t> ngram_counts(const std::vector<std::string>& toks, std::size_t n) {
  std::map<NGram, std::size_t> out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++out[NGram(toks.begin() + i, toks.begin() + i + n)];
  return out;
}

}  // namespace

BleuReport corpus_bleu(std::span<const std::string> candidates, std::span<const std::string> references,
                       std::size_t max_n, bool smooth) {
  if (candidates.size() != references.size())
    throw ValidationError("bleu: " + std::to_string(candidates.size()) + " candidates but " +
                          std::to_string(references.size()) + " references");
  if (candidates.empty()) throw ValidationError("bleu: no candidates");
  if (max_n < 1) throw ValidationError("bleu: max_n must be >= 1");

  std::vector<std::size_t> matched(max_n, 0), total(max_n, 0);
  BleuReport r;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto c = tokenize(candidates[i]);
    const auto ref = tokenize(references[i]);
    r.candidate_length += c.size();
    r.reference_length += ref.size();
    for (std::size_t n = 1; n <= max_n; ++n) {
      const auto cc = ngram_counts(c, n);
      const auto rc = ngram_counts(ref, n);
      for (const auto& [g, k] : cc) {
        auto it = rc.find(g);
        matched[n - 1] += it == rc.end() ? 0 : std::min(k, it->second);
        total[n - 1] += k;
      }
    }
  }

  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < max_n; ++n) {
    double num = static_cast<double>(matched[n]);
    double den = static_cast<double>(total[n]);
    if (smooth && n > 0 && matched[n] == 0) {
      num += 1.0;
      den += 1.0;
    }
    const double p = den > 0 ? num / den : 0.0;
    r.precisions.push_back(p);
    if (p <= 0.0) zero = true;
    else log_sum += std::log(p);
  }
  const double c = static_cast<double>(r.candidate_length);
  const double ref = static_cast<double>(r.reference_length);
  r.brevity_penalty = c == 0 ? 0.0 : (c > ref ? 1.0 : std::exp(1.0 - ref / c));
  r.bleu = zero ? 0.0 : r.brevity_penalty * std::exp(log_sum / static_cast<double>(max_n));
  return r;
}

double perplexity(const ResponseModel& model, std::span<const BridgingSample> samples) {
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto& s : samples) {
    const auto sc = model.score(s.context, s.future, s.response);
    nll += sc.rg_nll * static_cast<double>(sc.n_tokens);
    tokens += sc.n_tokens;
  }
  if (tokens == 0) throw ValidationError("perplexity: no response tokens");
  return std::exp(nll / static_cast<double>(tokens));
}

EvalReport evaluate(const ResponseModel& model, std::span<const BridgingSample> samples, const DecodeConfig& cfg,
                    std::string label) {
  if (samples.empty()) throw ValidationError("evaluate: empty split");
  EvalReport r;
  r.label = std::move(label);
  r.n_samples = samples.size();
  std::vector<std::string> cands, refs;
  double nll = 0.0;
  std::size_t tokens = 0, wins = 0;
  for (const auto& s : samples) {
    cands.push_back(model.generate(s.context, s.future, cfg));
    refs.push_back(s.response);
    const auto pos = model.score(s.context, s.future, s.response);
    const auto neg = model.score(s.context, s.future, s.distractor);
    nll += pos.rg_nll * static_cast<double>(pos.n_tokens);
    tokens += pos.n_tokens;
    if (pos.rs_probability > neg.rs_probability) ++wins;
  }
  r.bleu = corpus_bleu(cands, refs);
  r.ppl = std::exp(nll / static_cast<double>(tokens));
  r.rs_accuracy = static_cast<double>(wins) / static_cast<double>(samples.size());
  return r;
}

nlohmann::json to_json(const BleuReport& b) {
  return {{"bleu", b.bleu},
          {"precisions", b.precisions},
          {"brevity_penalty", b.brevity_penalty},
          {"candidate_length", b.candidate_length},
          {"reference_length", b.reference_length}};
}

nlohmann::json to_json(const EvalReport& r) {
  return {{"label", r.label},
          {"bleu", to_json(r.bleu)},
          {"ppl", r.ppl},
          {"ppl_tokens", "response tokens and EOS, natural log"},
          {"rs_accuracy", r.rs_accuracy},
          {"n_samples", r.n_samples}};
}

std::string format_eval_table(std::span<const EvalReport> reports) {
  std::size_t w = 5;
  for (const auto& r : reports) w = std::max(w, r.label.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(w)) << "Model" << " | " << std::right << std::setw(6) << "BLEU"
     << " | " << std::setw(8) << "PPL" << " | " << std::setw(6) << "RS acc" << "\n";
  os << std::string(w, '-') << "-|-" << std::string(6, '-') << "-|-" << std::string(8, '-') << "-|-"
     << std::string(6, '-') << "\n";
  os << std::fixed;
  for (const auto& r : reports)
    os << std::left << std::setw(static_cast<int>(w)) << r.label << " | " << std::right << std::setw(6)
       << std::setprecision(1) << 100.0 * r.bleu.bleu << " | " << std::setw(8) << std::setprecision(2) << r.ppl
       << " | " << std::setw(6) << std::setprecision(3) << r.rs_accuracy << "\n";
  return os.str();
}

std::map<std::string, double> oracle_conditional(const GrammarConfig& g, std::span<const Turn> context,
                                                 const std::optional<std::string>& future) {
  validate(g);
  if (context.empty()) throw ValidationError("oracle: empty context");
  for (std::size_t i = 0; i < context.size(); ++i)
    if (context[i].speaker != (i % 2 == 0 ? SpeakerRole::User : SpeakerRole::System))
      throw ValidationError("oracle: context must alternate starting with the user");
  if (context.back().speaker != SpeakerRole::User) throw ValidationError("oracle: context must end with a user turn");

  std::vector<std::string> ctx;
  for (const auto& t : context) ctx.push_back(normalize_text(t.text));
  const std::optional<std::string> fut = future ? std::optional(normalize_text(*future)) : std::nullopt;

  std::map<std::string, double> mass;

  // A task dialogue is request, response, future: only a one-turn context fits.
  if (g.chit_fraction < 1.0 && ctx.size() == 1) {
    double wsum = 0.0;
    for (const auto& in : g.intents) wsum += in.weight;
    for (const auto& in : g.intents) {
      const std::vector<std::string> slots = in.slots.empty() ? std::vector<std::string>{""} : in.slots;
      const double p_slot = 1.0 / static_cast<double>(slots.size());
      for (const auto& slot : slots) {
        if (normalize_text(render_template(in.request, slot)) != ctx[0]) continue;
        for (const auto& r : in.responses) {
          if (fut && normalize_text(render_template(r.future ? *r.future : in.future, slot)) != *fut) continue;
          mass[normalize_text(render_template(r.text, slot))] +=
              (1.0 - g.chit_fraction) * (in.weight / wsum) * p_slot * r.probability;
        }
      }
    }
  }

  // Chit turns are i.i.d. uniform over the templates and carry no future.
  if (g.chit_fraction > 0.0 && !fut && ctx.size() + 1 <= g.chit_turns) {
    const double k = static_cast<double>(g.chit.size());
    double p_ctx = g.chit_fraction;
    for (const auto& t : ctx) {
      std::size_t hits = 0;
      for (const auto& c : g.chit) hits += normalize_text(c) == t;
      p_ctx *= static_cast<double>(hits) / k;
    }
    if (p_ctx > 0.0)
      for (const auto& c : g.chit) mass[normalize_text(c)] += p_ctx / k;
  }

  double total = 0.0;
  for (const auto& [_, p] : mass) total += p;
  if (!(total > 0.0)) throw ValidationError("oracle: context and future are not realizable under the grammar");
  for (auto it = mass.begin(); it != mass.end();) {
    if (it->second <= 0.0) {
      it = mass.erase(it);
    } else {
      it->second /= total;
      ++it;
    }
  }
  return mass;
}

}  // namespace fbnlg
