#include <benchmark/benchmark.h>

#include <random>

#include "zsseg/concepts.hpp"
#include "zsseg/eval.hpp"
#include "zsseg/ops.hpp"
#include "zsseg/pca.hpp"
#include "zsseg/synth.hpp"
#include "zsseg/trainer.hpp"

using namespace zsseg;

namespace {

struct Corpus {
  BpeVocab vocab;
  PosLexicon lexicon;
  ConceptBank bank;
  std::vector<Scene> scenes;
  std::vector<TrainExample> examples;
  std::vector<std::string> templates;
};

const Corpus& corpus() {
  static const Corpus c = [] {
    const std::string data = std::string(ZSSEG_SOURCE_DIR) + "/data/";
    Corpus out{BpeVocab{}, PosLexicon::load(data + "lexicon.tsv"), ConceptBank::load(data + "bank.txt"), {}, {},
               load_lines(data + "templates_desk.txt")};
    std::vector<std::string> captions;
    for (std::uint64_t i = 0; i < 256; ++i) {
      out.scenes.push_back(generate_scene(SceneSpec::defaults(), i));
      captions.push_back(out.scenes.back().caption);
    }
    out.vocab = train_bpe(captions, 200);
    for (const auto& s : out.scenes)
      out.examples.push_back({s.id, s.image, extract_concepts(out.vocab, out.lexicon, out.bank, s.caption)});
    return out;
  }();
  return c;
}

TextEncoderConfig text_config() {
  TextEncoderConfig tc;
  tc.vocab_size = corpus().vocab.size();
  tc.width = 32;
  tc.context = 64;
  return tc;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  const Tensor a = Tensor::randn({n, n}, 1, rng), b = Tensor::randn({n, n}, 1, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_AttentionBackward(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const Tensor q = Tensor::randn({64, 32}, 1, rng, true), k = Tensor::randn({64, 32}, 1, rng, true),
               v = Tensor::randn({64, 32}, 1, rng, true);
  const Segment seg[] = {{0, 64}};
  for (auto _ : state) benchmark::DoNotOptimize(backward(sum(attention(q, k, v, seg, true))));
}
BENCHMARK(BM_AttentionBackward);

void BM_TrainBpe(benchmark::State& state) {
  std::vector<std::string> captions;
  for (const auto& s : corpus().scenes) captions.push_back(s.caption);
  for (auto _ : state) benchmark::DoNotOptimize(train_bpe(captions, 200));
}
BENCHMARK(BM_TrainBpe)->Unit(benchmark::kMillisecond);

void BM_ExtractConcepts(benchmark::State& state) {
  const auto& c = corpus();
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(extract_concepts(c.vocab, c.lexicon, c.bank, c.scenes[i % c.scenes.size()].caption));
    ++i;
  }
}
BENCHMARK(BM_ExtractConcepts);

void BM_HandcraftedFeatures(benchmark::State& state) {
  const auto& img = corpus().scenes[0].image;
  for (auto _ : state) benchmark::DoNotOptimize(handcrafted_features(img, 8, 32));
}
BENCHMARK(BM_HandcraftedFeatures);

void BM_TinyVitEncode(benchmark::State& state) {
  TinyVitConfig vc;
  vc.width = 32;
  const TinyFrozenVit vit = TinyFrozenVit::init(vc, 1);
  const auto& img = corpus().scenes[0].image;
  for (auto _ : state) benchmark::DoNotOptimize(vit.encode(img));
}
BENCHMARK(BM_TinyVitEncode)->Unit(benchmark::kMicrosecond);

void BM_TrainStep(benchmark::State& state) {
  const auto batch_size = static_cast<std::size_t>(state.range(0));
  const auto& c = corpus();
  TrainConfig cfg;
  cfg.batch_size = batch_size;
  cfg.lr = 0.032;
  auto ts = TrainState::init(Model::init(text_config(), 32, 0), 0);
  std::vector<const TrainExample*> batch;
  for (std::size_t i = 0; i < batch_size; ++i) batch.push_back(&c.examples[i]);
  const VisionProvider provider = HandcraftedFeaturizer{};
  for (auto _ : state) {
    if (ts.step >= 1000) ts.step = 0;
    benchmark::DoNotOptimize(train_step(ts, batch, cfg, provider, 1000));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * batch_size));
}
BENCHMARK(BM_TrainStep)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Segment(benchmark::State& state) {
  const auto& c = corpus();
  const Model m = Model::init(text_config(), 32, 0);
  const auto classes = embed_classes(m.text, c.vocab, m.proj, SceneSpec::defaults().class_names(), c.templates);
  const VisionProvider provider = HandcraftedFeaturizer{};
  const auto side = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(segment(provider, classes, c.scenes[1].image, {side, 64, 32}));
}
BENCHMARK(BM_Segment)->Arg(64)->Arg(128)->Unit(benchmark::kMicrosecond);

void BM_Pca(benchmark::State& state) {
  std::mt19937_64 rng(3);
  const Tensor x = Tensor::randn({256, 32}, 1, rng);
  for (auto _ : state) benchmark::DoNotOptimize(pca3(x));
}
BENCHMARK(BM_Pca)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
