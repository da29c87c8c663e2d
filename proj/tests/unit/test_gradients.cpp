// Finite-difference checks of every differentiable op, run in the 64-bit build.
#include <doctest.h>

#include <numeric>

#include "fd_check.hpp"
#include "zsseg/alignment.hpp"
#include "zsseg/encoders.hpp"

using namespace zsseg;
using zsseg::testing::fd_relative_error;
using zsseg::testing::pick;
using zsseg::testing::project_to_scalar;
using zsseg::testing::random_tensor;

static_assert(sizeof(Real) == sizeof(double), "gradient checks need the 64-bit build");

namespace {

constexpr int kInstances = 20;
constexpr double kTolerance = 1e-3;

// Runs `body(rng)` over kInstances seeds; body returns the relative error.
template <typename Body>
void over_instances(Body body) {
  for (int i = 0; i < kInstances; ++i) {
    std::mt19937_64 rng(1000 + i);
    const double err = body(rng);
    INFO("instance " << i);
    CHECK(err < kTolerance);
  }
}

std::vector<std::size_t> random_indices(std::mt19937_64& rng, std::size_t count, std::size_t bound) {
  std::vector<std::size_t> out(count);
  for (auto& v : out) v = pick(rng, 0, bound - 1);
  return out;
}

}  // namespace

TEST_CASE("matmul, transpose and reshape gradients") {
  over_instances([](std::mt19937_64& rng) {
    const std::size_t m = pick(rng, 1, 4), k = pick(rng, 1, 4), n = pick(rng, 1, 4);
    Tensor a = random_tensor({m, k}, rng), b = random_tensor({n, k}, rng);
    Tensor w = random_tensor({m * n}, rng, 1.0, false);
    return fd_relative_error([&] { return project_to_scalar(reshape(matmul(a, transpose(b)), {m * n}), w); }, {a, b});
  });
}

TEST_CASE("elementwise gradients") {
  over_instances([](std::mt19937_64& rng) {
    const std::size_t m = pick(rng, 1, 4), n = pick(rng, 1, 4);
    Tensor a = random_tensor({m, n}, rng), b = random_tensor({m, n}, rng);
    Tensor s = random_tensor({}, rng), bias = random_tensor({n}, rng);
    Tensor w = random_tensor({m, n}, rng, 1.0, false);
    return fd_relative_error(
        [&] {
          Tensor t = add(mul(a, b), scale(sub(a, exp(scale(b, Real(0.5)))), Real(1.7)));
          return project_to_scalar(add_bias(scale_by(t, s), bias), w);
        },
        {a, b, s, bias});
  });
}

TEST_CASE("sum and mean gradients") {
  over_instances([](std::mt19937_64& rng) {
    Tensor a = random_tensor({pick(rng, 1, 4), pick(rng, 1, 4)}, rng);
    Tensor b = random_tensor({pick(rng, 1, 6)}, rng);
    return fd_relative_error([&] { return add(scale(sum(mul(a, a)), Real(0.3)), mean(exp(b))); }, {a, b});
  });
}

TEST_CASE("softmax gradients along both axes and temperatures") {
  over_instances([](std::mt19937_64& rng) {
    const std::size_t m = pick(rng, 1, 4), n = pick(rng, 1, 5);
    const Real tau = static_cast<Real>(std::uniform_real_distribution<double>(0.2, 2.0)(rng));
    Tensor x = random_tensor({m, n}, rng), v = random_tensor({n}, rng);
    Tensor w = random_tensor({m, n}, rng, 1.0, false), wv = random_tensor({n}, rng, 1.0, false);
    return fd_relative_error(
        [&] {
          return add(add(project_to_scalar(softmax(x, 0, tau), w), project_to_scalar(softmax(x, 1, tau), w)),
                     project_to_scalar(softmax(v, 0, tau), wv));
        },
        {x, v});
  });
}

TEST_CASE("l2 row normalisation gradients") {
  over_instances([](std::mt19937_64& rng) {
    const std::size_t m = pick(rng, 1, 4), n = pick(rng, 1, 5);
    Tensor x = random_tensor({m, n}, rng), w = random_tensor({m, n}, rng, 1.0, false);
    return fd_relative_error([&] { return project_to_scalar(l2_normalize_rows(x), w); }, {x});
  });
}

TEST_CASE("row selection gradients") {
  over_instances([](std::mt19937_64& rng) {
    const std::size_t m = pick(rng, 1, 5), n = pick(rng, 1, 4);
    Tensor x = random_tensor({m, n}, rng);
    const auto rows = random_indices(rng, pick(rng, 1, 6), m);
    const std::size_t r = pick(rng, 0, m - 1);
    Tensor w1 = random_tensor({n}, rng, 1.0, false), w2 = random_tensor({rows.size(), n}, rng, 1.0, false);
    return fd_relative_error(
        [&] {
          return add(add(project_to_scalar(mean_rows(x, rows), w1), project_to_scalar(gather_rows(x, rows), w2)),
                     project_to_scalar(row(x, r), w1));
        },
        {x});
  });
}

TEST_CASE("concatenation and column slicing gradients") {
  over_instances([](std::mt19937_64& rng) {
    const std::size_t n = pick(rng, 2, 5);
    Tensor a = random_tensor({pick(rng, 1, 3), n}, rng), v = random_tensor({n}, rng);
    Tensor c = random_tensor({a.rows(), pick(rng, 1, 3)}, rng);
    const std::size_t begin = pick(rng, 0, n - 1), count = pick(rng, 1, n - begin);
    Tensor w1 = random_tensor({a.rows() + 1, n}, rng, 1.0, false);
    Tensor w2 = random_tensor({a.rows(), n + c.cols()}, rng, 1.0, false);
    Tensor w3 = random_tensor({a.rows(), count}, rng, 1.0, false);
    return fd_relative_error(
        [&] {
          const std::vector<Tensor> rows{a, v};
          const std::vector<Tensor> cols{a, c};
          return add(add(project_to_scalar(concat_rows(rows), w1), project_to_scalar(concat_cols(cols), w2)),
                     project_to_scalar(slice_cols(a, begin, count), w3));
        },
        {a, v, c});
  });
}

TEST_CASE("layer norm and gelu gradients") {
  over_instances([](std::mt19937_64& rng) {
    const std::size_t m = pick(rng, 1, 4), n = pick(rng, 2, 6);
    Tensor x = random_tensor({m, n}, rng), gamma = random_tensor({n}, rng), beta = random_tensor({n}, rng);
    Tensor w = random_tensor({m, n}, rng, 1.0, false);
    return fd_relative_error([&] { return project_to_scalar(gelu(layer_norm(x, gamma, beta)), w); }, {x, gamma, beta});
  });
}

TEST_CASE("cross-entropy gradients") {
  over_instances([](std::mt19937_64& rng) {
    const std::size_t m = pick(rng, 1, 5), k = pick(rng, 1, 5);
    Tensor logits = random_tensor({m, k}, rng, 2.0);
    const auto targets = random_indices(rng, m, k);
    return fd_relative_error([&] { return cross_entropy(logits, targets); }, {logits});
  });
}

TEST_CASE("scatter-add and embedding gradients") {
  over_instances([](std::mt19937_64& rng) {
    const std::size_t m = pick(rng, 1, 6), n = pick(rng, 1, 4), groups = pick(rng, 1, 4);
    Tensor x = random_tensor({m, n}, rng), table = random_tensor({pick(rng, 1, 5), n}, rng);
    const auto index = random_indices(rng, m, groups);
    const auto ids = random_indices(rng, pick(rng, 1, 6), table.rows());
    Tensor w1 = random_tensor({groups, n}, rng, 1.0, false), w2 = random_tensor({ids.size(), n}, rng, 1.0, false);
    return fd_relative_error(
        [&] {
          return add(project_to_scalar(scatter_add_rows(x, index, groups), w1),
                     project_to_scalar(embedding(table, ids), w2));
        },
        {x, table});
  });
}

TEST_CASE("packed attention gradients, causal and bidirectional") {
  over_instances([](std::mt19937_64& rng) {
    std::vector<Segment> segments;
    std::size_t rows = 0;
    for (std::size_t s = 0, count = pick(rng, 1, 3); s < count; ++s) {
      const std::size_t len = pick(rng, 1, 4);
      segments.push_back({rows, len});
      rows += len;
    }
    const std::size_t d = pick(rng, 1, 4);
    const bool causal = pick(rng, 0, 1) == 1;
    Tensor q = random_tensor({rows, d}, rng), k = random_tensor({rows, d}, rng), v = random_tensor({rows, d}, rng);
    Tensor w = random_tensor({rows, d}, rng, 1.0, false);
    return fd_relative_error([&] { return project_to_scalar(attention(q, k, v, segments, causal), w); }, {q, k, v});
  });
}

TEST_CASE("transformer block gradients") {
  over_instances([](std::mt19937_64& rng) {
    const std::size_t width = 4, heads = 2;
    const TransformerBlock block = TransformerBlock::init(width, 8, Real(0.3), rng, true);
    const std::vector<Segment> segments{{0, 2}, {2, 3}};
    Tensor x = random_tensor({5, width}, rng), w = random_tensor({5, width}, rng, 1.0, false);
    TensorTable params;
    block.append_parameters("b.", params);
    std::vector<Tensor> leaves{x};
    for (const auto& p : params) leaves.push_back(p.value);
    const bool causal = pick(rng, 0, 1) == 1;
    return fd_relative_error(
        [&] { return project_to_scalar(transformer_block(block, x, segments, heads, causal), w); }, leaves);
  });
}

TEST_CASE("similarity pooling gradients") {
  over_instances([](std::mt19937_64& rng) {
    const std::size_t n = pick(rng, 1, 6), d = pick(rng, 1, 4);
    const Real tau = static_cast<Real>(std::uniform_real_distribution<double>(0.1, 2.0)(rng));
    Tensor z = random_tensor({n, d}, rng), c = random_tensor({d}, rng), w = random_tensor({d}, rng, 1.0, false);
    return fd_relative_error([&] { return project_to_scalar(pool_visual_concept(z, c, tau), w); }, {z, c});
  });
}

TEST_CASE("global contrastive loss gradients") {
  over_instances([](std::mt19937_64& rng) {
    const std::size_t b = pick(rng, 1, 5), dt = pick(rng, 1, 4), dv = pick(rng, 1, 4);
    auto g = TextToVisionProjection::init(dt, dv, rng);
    Tensor scale = Tensor::from({1}, {Real(std::log(3.0))}, true);
    GlobalBatch batch{random_tensor({b, dv}, rng), random_tensor({b, dt}, rng)};
    return fd_relative_error([&] { return global_loss(batch, g, scale); },
                             {batch.vision_globals, batch.text_globals, g.weight, g.bias, scale});
  });
}

TEST_CASE("concept loss gradients through the batch classifier") {
  over_instances([](std::mt19937_64& rng) {
    const std::size_t m = pick(rng, 1, 6), dt = pick(rng, 1, 4), dv = pick(rng, 2, 4);
    auto g = TextToVisionProjection::init(dt, dv, rng);
    ConceptBatch cb;
    cb.text = random_tensor({m, dt}, rng);
    cb.vision = random_tensor({m, dv}, rng);
    // Dense labels: every class in [0, k) appears at least once.
    const std::size_t k = pick(rng, 1, m);
    for (std::size_t i = 0; i < m; ++i) cb.labels.push_back(i < k ? i : pick(rng, 0, k - 1));
    cb.num_classes = k;
    return fd_relative_error([&] { return concept_loss(cb, build_classifier(cb, g)); },
                             {cb.text, cb.vision, g.weight, g.bias});
  });
}

TEST_CASE("full objective gradients from token ids to the total loss") {
  over_instances([](std::mt19937_64& rng) {
    TextEncoderConfig config;
    config.vocab_size = 9;
    config.width = 4;
    config.layers = 1;
    config.heads = 2;
    config.context = 6;
    config.mlp_ratio = 2;
    const TextEncoder text = TextEncoder::init(config, rng);
    const std::size_t dv = 3, b = pick(rng, 2, 3);
    auto g = TextToVisionProjection::init(config.width, dv, rng);
    Tensor scale = Tensor::from({1}, {Real(std::log(5.0))}, true);

    std::vector<TokenizedCaption> captions(b);
    std::vector<Tensor> patches(b);
    for (std::size_t i = 0; i < b; ++i) {
      const std::size_t len = pick(rng, 3, 6);
      auto& c = captions[i];
      c.ids.push_back(BpeVocab::kBos);
      for (std::size_t t = 1; t + 1 < len; ++t) c.ids.push_back(pick(rng, BpeVocab::kNumSpecial, 8));
      c.ids.push_back(BpeVocab::kEos);
      ConceptOccurrence occ;
      occ.concept_id = pick(rng, 0, 1);
      occ.token_indices = {1};
      if (len > 3) occ.token_indices.push_back(2);
      c.concepts.push_back(occ);
      patches[i] = random_tensor({4, dv}, rng);
    }
    std::vector<Tensor> leaves;
    for (const auto& p : text.parameters()) leaves.push_back(p.value);
    leaves.push_back(g.weight);
    leaves.push_back(g.bias);
    leaves.push_back(scale);
    for (const auto& p : patches) leaves.push_back(p);

    auto loss = [&] {
      const TextBatch tb = text.encode_batch(captions);
      std::vector<EncodedPair> pairs(b);
      std::vector<Tensor> globals;
      for (std::size_t i = 0; i < b; ++i) {
        std::vector<std::size_t> all(4);
        std::iota(all.begin(), all.end(), std::size_t{0});
        pairs[i].vision.dense = patches[i];
        pairs[i].text_dense = tb.dense;
        pairs[i].text_offset = tb.segments[i].begin;
        pairs[i].caption = &captions[i];
        globals.push_back(mean_rows(patches[i], all));
      }
      const auto cb = assemble_concept_batch(pairs, g, Real(0.5));
      const Tensor lg = global_loss({concat_rows(globals), tb.globals}, g, scale);
      return total_loss(lg, concept_loss(*cb, build_classifier(*cb, g)), Real(0.7));
    };
    return fd_relative_error(loss, leaves);
  });
}
