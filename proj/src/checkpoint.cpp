#include <cstring>
#include <fstream>
#include <sstream>

#include "fbnlg/error.hpp"
#include "fbnlg/json_io.hpp"
#include "fbnlg/trainer.hpp"

namespace fbnlg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Entry {
  std::string name;
  Eigen::Index rows;
  Eigen::Index cols;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void put(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("checkpoint: write failed for " + p.string());
}

void append_le(std::string& out, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, sizeof u);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xffu));
}

float read_le(const char* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  float f;
  std::memcpy(&f, &u, sizeof f);
  return f;
}

/// Tensors of a checkpoint in manifest order.
std::vector<std::pair<std::string, Tensor<float>*>> layout(Parameters<float>& params,
                                                           std::optional<AdamState<float>>& opt) {
  std::vector<std::pair<std::string, Tensor<float>*>> out;
  params.visit([&](std::string_view n, Tensor<float>& t) { out.emplace_back(std::string(n), &t); });
  if (opt) {
    opt->m.visit([&](std::string_view n, Tensor<float>& t) { out.emplace_back("m." + std::string(n), &t); });
    opt->v.visit([&](std::string_view n, Tensor<float>& t) { out.emplace_back("v." + std::string(n), &t); });
  }
  return out;
}

std::vector<Entry> parse_manifest(const std::string& text) {
  std::vector<Entry> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    Entry e;
    std::string extra;
    if (!(ls >> e.name >> e.rows >> e.cols) || (ls >> extra) || e.rows < 0 || e.cols < 0)
      throw CheckpointShapeError("checkpoint: corrupted manifest at line " + std::to_string(line_no));
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt) {
  fs::create_directories(dir);
  Checkpoint copy = ckpt;
  json cfg{{"format_version", ckpt.format_version},
           {"model", to_json(ckpt.model)},
           {"train", to_json(ckpt.train)},
           {"step", ckpt.step},
           {"rng", {{"seed", ckpt.train.seed}, {"step", ckpt.step}}},
           {"has_optimizer", ckpt.optimizer.has_value()},
           {"optimizer_step", ckpt.optimizer ? ckpt.optimizer->step : 0}};
  std::string manifest;
  std::string blob;
  for (auto& [name, t] : layout(copy.params, copy.optimizer)) {
    manifest += name + " " + std::to_string(t->rows()) + " " + std::to_string(t->cols()) + "\n";
    for (Eigen::Index i = 0; i < t->size(); ++i) append_le(blob, t->data()[i]);
  }
  put(dir / "config.json", cfg.dump(2) + "\n");
  put(dir / "vocab.txt", ckpt.vocab.serialize());
  put(dir / "manifest.txt", manifest);
  put(dir / "tensors.bin", blob);
}

Checkpoint load_checkpoint(const fs::path& dir) {
  json cfg;
  try {
    cfg = json::parse(slurp(dir / "config.json"));
  } catch (const json::parse_error& e) {
    throw CheckpointError(std::string("checkpoint: malformed config.json: ") + e.what());
  }
  Checkpoint c;
  try {
    c.format_version = cfg.at("format_version").get<int>();
    if (c.format_version != Checkpoint::kFormatVersion)
      throw CheckpointVersionError("checkpoint: format version " + std::to_string(c.format_version) +
                                   ", expected " + std::to_string(Checkpoint::kFormatVersion));
    c.model = model_config_from_json(cfg.at("model"));
    c.train = train_config_from_json(cfg.at("train"));
    c.step = cfg.at("step").get<std::uint64_t>();
    if (cfg.at("has_optimizer").get<bool>()) {
      c.optimizer = AdamState<float>::zeros(c.model);
      c.optimizer->step = cfg.at("optimizer_step").get<std::uint64_t>();
    }
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint: bad config.json: ") + e.what());
  } catch (const ValidationError& e) {
    throw CheckpointError(std::string("checkpoint: bad config.json: ") + e.what());
  }
  try {
    c.vocab = Vocab::load(dir / "vocab.txt");
  } catch (const Error& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  if (c.vocab.size() != c.model.vocab_size) throw CheckpointShapeError("checkpoint: vocab size differs from model config");
  c.params = Parameters<float>::zeros(c.model);

  const auto entries = parse_manifest(slurp(dir / "manifest.txt"));
  auto tensors = layout(c.params, c.optimizer);
  if (entries.size() != tensors.size())
    throw CheckpointShapeError("checkpoint: manifest lists " + std::to_string(entries.size()) + " tensors, expected " +
                               std::to_string(tensors.size()));
  std::size_t bytes = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& [name, t] = tensors[i];
    if (entries[i].name != name || entries[i].rows != t->rows() || entries[i].cols != t->cols())
      throw CheckpointShapeError("checkpoint: manifest entry '" + entries[i].name + "' does not match " + name + " [" +
                                 std::to_string(t->rows()) + " x " + std::to_string(t->cols()) + "]");
    bytes += static_cast<std::size_t>(t->size()) * 4;
  }
  const std::string blob = slurp(dir / "tensors.bin");
  if (blob.size() < bytes)
    throw CheckpointTruncatedError("checkpoint: tensors.bin has " + std::to_string(blob.size()) + " bytes, expected " +
                                   std::to_string(bytes));
  if (blob.size() > bytes) throw CheckpointShapeError("checkpoint: tensors.bin has trailing bytes");

  const char* p = blob.data();
  for (auto& [_, t] : tensors)
    for (Eigen::Index i = 0; i < t->size(); ++i, p += 4) t->data()[i] = read_le(p);
  return c;
}

}  // namespace fbnlg
