#include "fbnlg/json_io.hpp"

#include <set>

#include "fbnlg/error.hpp"

namespace fbnlg {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<std::string_view> known, std::string_view what) {
  if (!j.is_object()) throw ValidationError(std::string(what) + ": expected an object");
  const std::set<std::string_view> keys(known);
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!keys.count(it.key())) throw ValidationError(std::string(what) + ": unknown key '" + it.key() + "'");
}

template <class T>
void read(const json& j, const char* key, T& out, std::string_view what) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string(what) + ": bad value for '" + key + "'");
  }
}

}  // namespace

json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"n_layers", c.n_layers},       {"n_heads", c.n_heads},
          {"d_model", c.d_model},       {"d_ff", c.d_ff},               {"max_seq_len", c.max_seq_len},
          {"dropout_rate", c.dropout_rate}};
}

ModelConfig model_config_from_json(const json& j) {
  constexpr std::string_view what = "model config";
  reject_unknown(j, {"vocab_size", "n_layers", "n_heads", "d_model", "d_ff", "max_seq_len", "dropout_rate"}, what);
  ModelConfig c;
  read(j, "vocab_size", c.vocab_size, what);
  read(j, "n_layers", c.n_layers, what);
  read(j, "n_heads", c.n_heads, what);
  read(j, "d_model", c.d_model, what);
  read(j, "d_ff", c.d_ff, what);
  read(j, "max_seq_len", c.max_seq_len, what);
  read(j, "dropout_rate", c.dropout_rate, what);
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"alpha_rg", c.alpha_rg},
          {"alpha_rs", c.alpha_rs},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"grad_clip_norm", c.grad_clip_norm},
          {"rs_flip_prob", c.rs_flip_prob},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
  constexpr std::string_view what = "train config";
  reject_unknown(j,
                 {"alpha_rg", "alpha_rs", "learning_rate", "beta1", "beta2", "epsilon", "batch_size", "epochs",
                  "grad_clip_norm", "rs_flip_prob", "seed"},
                 what);
  TrainConfig c;
  read(j, "alpha_rg", c.alpha_rg, what);
  read(j, "alpha_rs", c.alpha_rs, what);
  read(j, "learning_rate", c.learning_rate, what);
  read(j, "beta1", c.beta1, what);
  read(j, "beta2", c.beta2, what);
  read(j, "epsilon", c.epsilon, what);
  read(j, "batch_size", c.batch_size, what);
  read(j, "epochs", c.epochs, what);
  read(j, "grad_clip_norm", c.grad_clip_norm, what);
  read(j, "rs_flip_prob", c.rs_flip_prob, what);
  read(j, "seed", c.seed, what);
  return c;
}

json to_json(const DecodeConfig& c) {
  return {{"strategy", to_string(c.strategy)},
          {"k", c.k},
          {"temperature", c.temperature},
          {"max_new_tokens", c.max_new_tokens},
          {"seed", c.seed}};
}

DecodeConfig decode_config_from_json(const json& j, DecodeConfig c) {
  constexpr std::string_view what = "decode config";
  reject_unknown(j, {"strategy", "k", "temperature", "max_new_tokens", "seed"}, what);
  if (auto it = j.find("strategy"); it != j.end()) {
    if (!it->is_string()) throw ValidationError("decode config: strategy must be a string");
    auto s = parse_strategy(it->get<std::string>());
    if (!s) throw ValidationError("decode config: unknown strategy '" + it->get<std::string>() + "'");
    c.strategy = *s;
  }
  read(j, "k", c.k, what);
  read(j, "temperature", c.temperature, what);
  read(j, "max_new_tokens", c.max_new_tokens, what);
  read(j, "seed", c.seed, what);
  validate(c);
  return c;
}

}  // namespace fbnlg
