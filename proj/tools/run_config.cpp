#include "run_config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "zsseg/error.hpp"

#ifndef ZSSEG_DATA_DIR
#define ZSSEG_DATA_DIR "data"
#endif

namespace zsseg::cli {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<RunConfig::Key> make_keys() {
  const std::string data = ZSSEG_DATA_DIR;
  return {
      {"seed", "0", "seed for data generation, initialisation and shuffling"},
      {"provider", "handcrafted", "vision provider: handcrafted, tinyvit or precomputed"},
      {"patch-size", "8", "vision patch size in pixels"},
      {"feature-dim", "32", "handcrafted feature width"},
      {"vit-weights", "", "tiny ViT weight file; empty builds one from the seed"},
      {"vit-width", "32", "tiny ViT width when built from the seed"},
      {"vit-layers", "2", "tiny ViT depth when built from the seed"},
      {"features", "", "precomputed feature file (SZSF)"},
      {"data-dir", "runs/data", "synthetic dataset directory"},
      {"manifest", "", "dataset manifest; defaults to <data-dir>/manifest.jsonl"},
      {"classes", "", "class-name file; defaults to classes.txt next to the manifest"},
      {"n-train", "2000", "training scenes"},
      {"n-val", "200", "validation scenes"},
      {"n-test", "200", "test scenes"},
      {"image-size", "64", "synthetic canvas side"},
      {"min-objects", "1", "fewest objects per scene"},
      {"max-objects", "3", "most objects per scene"},
      {"noise", "0.04", "background noise amplitude"},
      {"compound-classes", "false", "use '<color> <shape>' concepts"},
      {"lexicon", data + "/lexicon.tsv", "part-of-speech lexicon"},
      {"bank", data + "/bank.txt", "concept bank"},
      {"templates", data + "/templates_desk.txt", "class-name prompt templates"},
      {"fold-plurals", "false", "map plural concepts to their singular bank entry"},
      {"merges", "200", "BPE merges learned from the training captions"},
      {"vocab", "", "BPE vocabulary; defaults to vocab.bpe next to the checkpoint"},
      {"text-width", "32", "text transformer width"},
      {"text-layers", "2", "text transformer depth"},
      {"text-heads", "4", "text attention heads"},
      {"context", "64", "text context length"},
      {"epochs", "5", "training epochs"},
      {"batch-size", "256", "global batch size"},
      {"lr", "5e-4", "base learning rate, scaled by batch-size / 256"},
      {"warmup", "0.1", "warmup fraction of the schedule"},
      {"weight-decay", "0.2", "decoupled weight decay"},
      {"beta1", "0.9", "Adam beta1"},
      {"beta2", "0.98", "Adam beta2"},
      {"eps", "1e-6", "Adam epsilon"},
      {"clip-norm", "0", "global gradient-norm clip; 0 disables"},
      {"checkpoint-every", "0", "steps between checkpoints; 0 keeps only the final one"},
      {"lambda", "0.05", "weight of the concept loss"},
      {"tau", "0.1", "pooling temperature"},
      {"out", "runs/train", "output directory"},
      {"checkpoint", "", "model checkpoint; defaults to <out>/model.szck"},
      {"resume", "false", "continue training from the checkpoint"},
      {"split", "test", "dataset split to evaluate"},
      {"val-split", "val", "split used to pick theta when theta = sweep"},
      {"theta", "none", "background threshold: none, sweep or a value in [-1, 1]"},
      {"shorter-side", "64", "inference resize target for the shorter side"},
      {"window", "64", "sliding-window side"},
      {"stride", "32", "sliding-window stride"},
      {"overlays", "false", "write per-image label maps and overlays"},
      {"predictions", "", "directory of predicted masks to score instead of running the model"},
      {"input", "", "input file (captions, image)"},
      {"output", "", "output file"},
      {"resolutions", "64", "comma-separated shorter sides for visualize"},
      {"cell", "8", "pixels per patch in visualize output"},
  };
}

}  // namespace

const std::vector<RunConfig::Key>& RunConfig::keys() {
  static const std::vector<Key> k = make_keys();
  return k;
}

bool RunConfig::known(std::string_view key) {
  const auto& k = keys();
  return std::any_of(k.begin(), k.end(), [&](const Key& e) { return e.name == key; });
}

RunConfig::RunConfig() {
  for (const auto& k : keys()) values_[k.name] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!known(key)) throw ParameterError("unknown config key '" + key + "'");
  values_[key] = value;
}

const std::string& RunConfig::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ParameterError("unknown config key '" + key + "'");
  return it->second;
}

std::uint64_t RunConfig::u64(const std::string& key) const {
  const auto& s = str(key);
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ParameterError(key + ": expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

std::size_t RunConfig::size(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }

double RunConfig::real(const std::string& key) const {
  const auto& s = str(key);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ParameterError(key + ": expected a number, got '" + s + "'");
}

bool RunConfig::flag(const std::string& key) const {
  const auto& s = str(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ParameterError(key + ": expected true or false, got '" + s + "'");
}

void RunConfig::merge_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read config " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  merge_text(ss.str(), path);
}

void RunConfig::merge_text(std::string_view text, const std::string& origin) {
  std::istringstream is{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    std::string_view line = trim(std::string_view(raw).substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw FormatError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key(trim(line.substr(0, eq)));
    if (!known(key)) throw ParameterError(origin + ":" + std::to_string(line_no) + ": unknown config key '" + key + "'");
    values_[key] = std::string(trim(line.substr(eq + 1)));
  }
}

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& k : keys()) j[k.name] = values_.at(k.name);
  return j;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& k : keys()) out += k.name + " = " + values_.at(k.name) + "\n";
  return out;
}

}  // namespace zsseg::cli
