#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fbnlg/corpus.hpp"
#include "fbnlg/decode.hpp"
#include "fbnlg/samples.hpp"
#include "json.hpp"

namespace fbnlg {

struct BleuReport {
  double bleu = 0.0;               // in [0, 1]
  std::vector<double> precisions;  // p1 .. p_max_n
  double brevity_penalty = 0.0;
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;
};

/// Corpus-level BLEU with clipped n-gram counts and uniform weights. With
/// `smooth`, zero counts for n >= 2 get add-one smoothing; leave it off for
/// reported numbers.
BleuReport corpus_bleu(std::span<const std::string> candidates, std::span<const std::string> references,
                       std::size_t max_n = 4, bool smooth = false);

/// exp(mean NLL over response tokens and EOS of the positive encodings).
double perplexity(const ResponseModel& model, std::span<const BridgingSample> samples);

struct EvalReport {
  std::string label;
  BleuReport bleu;
  double ppl = 0.0;
  double rs_accuracy = 0.0;
  std::size_t n_samples = 0;
};

/// BLEU of generations (use a greedy cfg for reproducible numbers), perplexity
/// and pairwise RS accuracy, counting a tie as a miss.
EvalReport evaluate(const ResponseModel& model, std::span<const BridgingSample> samples, const DecodeConfig& cfg,
                    std::string label = "test");

nlohmann::json to_json(const BleuReport& b);
nlohmann::json to_json(const EvalReport& r);

/// One row per report: Model | BLEU | PPL | RS acc.
std::string format_eval_table(std::span<const EvalReport> reports);

/// Exact P(response | context, future) under the grammar, by enumerating
/// every (dialogue type, intent, slot, response) branch. An absent future
/// marginalizes over futures. Texts are compared after normalize_text and
/// the keys of the result are normalized texts. Throws ValidationError when
/// no branch realizes the input.
std::map<std::string, double> oracle_conditional(const GrammarConfig& grammar, std::span<const Turn> context,
                                                 const std::optional<std::string>& future);

}  // namespace fbnlg
