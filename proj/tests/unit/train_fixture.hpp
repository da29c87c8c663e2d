// Small synthetic training set shared by the trainer and checkpoint tests.
#pragma once

#include <string>
#include <vector>

#include "zsseg/concepts.hpp"
#include "zsseg/synth.hpp"
#include "zsseg/trainer.hpp"

namespace zsseg::testing {

struct TinyCorpus {
  BpeVocab vocab;
  std::vector<TrainExample> examples;
  TextEncoderConfig text;
};

inline TinyCorpus tiny_corpus(std::size_t n, std::size_t width = 16) {
  const std::string data = std::string(ZSSEG_SOURCE_DIR) + "/data/";
  SceneSpec spec = SceneSpec::defaults();
  std::vector<Scene> scenes;
  std::vector<std::string> captions;
  for (std::size_t i = 0; i < n; ++i) {
    scenes.push_back(generate_scene(spec, i));
    captions.push_back(scenes.back().caption);
  }
  TinyCorpus c{train_bpe(captions, 60), {}, {}};
  const auto lexicon = PosLexicon::load(data + "lexicon.tsv");
  const auto bank = ConceptBank::load(data + "bank.txt");
  for (const auto& s : scenes) c.examples.push_back({s.id, s.image, extract_concepts(c.vocab, lexicon, bank, s.caption)});
  c.text.vocab_size = c.vocab.size();
  c.text.width = width;
  c.text.heads = 2;
  c.text.layers = 1;
  c.text.context = 32;
  return c;
}

inline TrainConfig tiny_config(std::size_t epochs = 1, std::size_t batch = 4) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = batch;
  cfg.lr = 0.05;
  return cfg;
}

}  // namespace zsseg::testing
