// Alignment objectives against explicit-loop oracles, in the 64-bit build.
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fd_check.hpp"
#include "zsseg/alignment.hpp"
#include "zsseg/error.hpp"

using namespace zsseg;
using zsseg::testing::pick;

static_assert(sizeof(Real) == sizeof(double));

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
  return m;
}

std::vector<double> normalized(std::vector<double> v) {
  double n = 0;
  for (double x : v) n += x * x;
  n = std::max(std::sqrt(n), 1e-12);
  for (double& x : v) x /= n;
  return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Mat project(const TextToVisionProjection& g, const Mat& x) {
  const Mat w = to_mat(g.weight);
  Mat out(x.size(), std::vector<double>(w.size()));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t o = 0; o < w.size(); ++o) out[i][o] = dot(w[o], x[i]) + (g.has_bias() ? g.bias.at(o) : 0.0);
  return out;
}

double log_sum_exp(const std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// Symmetric InfoNCE written out row by row and column by column.
double naive_global_loss(const Mat& text, const Mat& vision, const TextToVisionProjection& g, double log_scale) {
  const Mat pt = project(g, text);
  const std::size_t b = text.size();
  Mat s(b, std::vector<double>(b));
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) s[i][j] = std::exp(log_scale) * dot(normalized(pt[i]), normalized(vision[j]));
  double t2i = 0, i2t = 0;
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<double> col(b);
    for (std::size_t j = 0; j < b; ++j) col[j] = s[j][i];
    t2i += log_sum_exp(s[i]) - s[i][i];
    i2t += log_sum_exp(col) - s[i][i];
  }
  return 0.5 * (t2i / b + i2t / b);
}

double naive_concept_loss(const Mat& cv, const Mat& h, const std::vector<std::size_t>& q) {
  double total = 0;
  for (std::size_t i = 0; i < cv.size(); ++i) {
    std::vector<double> logits(h.size());
    for (std::size_t c = 0; c < h.size(); ++c) logits[c] = dot(normalized(cv[i]), normalized(h[c]));
    total += log_sum_exp(logits) - logits[q[i]];
  }
  return total / static_cast<double>(cv.size());
}

Mat scatter_loop(const Mat& rows, const std::vector<std::size_t>& q, std::size_t k) {
  Mat h(k, std::vector<double>(rows.empty() ? 0 : rows[0].size(), 0.0));
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t j = 0; j < rows.size(); ++j)
      if (q[j] == c)
        for (std::size_t d = 0; d < rows[j].size(); ++d) h[c][d] += rows[j][d];
  return h;
}

// Random dense labels in [0, k) with every class used.
std::vector<std::size_t> dense_labels(std::mt19937_64& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> q(n);
  for (std::size_t i = 0; i < n; ++i) q[i] = i < k ? i : pick(rng, 0, k - 1);
  std::shuffle(q.begin(), q.end(), rng);
  return q;
}

ConceptBatch random_concepts(std::mt19937_64& rng, std::size_t n, std::size_t k, std::size_t dt, std::size_t dv) {
  ConceptBatch cb;
  cb.text = Tensor::randn({n, dt}, 1, rng, true);
  cb.vision = Tensor::randn({n, dv}, 1, rng);
  cb.labels = dense_labels(rng, n, k);
  cb.num_classes = k;
  return cb;
}

}  // namespace

TEST_CASE("text concept representation") {
  std::mt19937_64 rng(1);
  Tensor z = Tensor::randn({6, 5}, 1, rng);
  const std::size_t one[] = {3};
  CHECK(text_concept_repr(z, one).to_vector() == to_mat(z)[3]);
  const std::size_t some[] = {0, 2, 5};
  const auto got = text_concept_repr(z, some).to_vector();
  for (std::size_t d = 0; d < 5; ++d) {
    const double want = (z.at(0, d) + z.at(2, d) + z.at(5, d)) / 3.0;
    CHECK(std::abs(got[d] - want) < 1e-6);
  }
  Tensor twin = Tensor::from({2, 2}, {0.3, -1.2, 0.3, -1.2});
  const std::size_t both[] = {0, 1};
  CHECK(text_concept_repr(twin, both).to_vector() == std::vector<Real>{0.3, -1.2});
  CHECK_THROWS_AS(text_concept_repr(z, std::span<const std::size_t>{}), ContractError);
}

TEST_CASE("projection g") {
  std::mt19937_64 rng(2);
  auto g = TextToVisionProjection::init(4, 4, rng);
  std::fill(g.weight.storage_for_update().begin(), g.weight.storage_for_update().end(), 0.0);
  for (std::size_t i = 0; i < 4; ++i) g.weight.storage_for_update()[i * 4 + i] = 1.0;
  Tensor x = Tensor::randn({4}, 1, rng);
  CHECK(project_text(g, x).to_vector() == x.to_vector());
  auto g2 = TextToVisionProjection::init(3, 5, rng);
  g2.bias.storage_for_update()[2] = 0.7;
  CHECK(project_text(g2, Tensor::zeros({3})).to_vector() == g2.bias.to_vector());
  CHECK_THROWS_AS(project_text(g2, Tensor::zeros({4})), DimensionError);
  CHECK_FALSE(TextToVisionProjection::init(3, 5, rng, false).has_bias());
}

TEST_CASE("pooling: single patch, temperature limits and the convex hull") {
  std::mt19937_64 rng(3);
  Tensor single = Tensor::randn({1, 4}, 1, rng);
  for (Real tau : {Real(1e-3), Real(1), Real(1e6)}) {
    const auto c = pool_visual_concept(single, Tensor::randn({4}, 1, rng), tau).to_vector();
    for (std::size_t d = 0; d < 4; ++d) CHECK(std::abs(c[d] - single.at(0, d)) < 1e-12);
  }

  for (int draw = 0; draw < 1000; ++draw) {
    const std::size_t n = pick(rng, 1, 12), d = pick(rng, 1, 8);
    Tensor z = Tensor::randn({n, d}, 1.5, rng);
    Tensor c = Tensor::randn({d}, 1.5, rng);
    const Real tau = static_cast<Real>(std::pow(10.0, std::uniform_real_distribution<double>(-3, 3)(rng)));
    const auto pooled = pool_visual_concept(z, c, tau).to_vector();
    for (std::size_t k = 0; k < d; ++k) {
      double lo = 1e300, hi = -1e300;
      for (std::size_t r = 0; r < n; ++r) {
        lo = std::min(lo, z.at(r, k));
        hi = std::max(hi, z.at(r, k));
      }
      REQUIRE(pooled[k] >= lo - 1e-5);
      REQUIRE(pooled[k] <= hi + 1e-5);
    }
  }

  Tensor z = Tensor::randn({9, 6}, 1, rng);
  Tensor c = Tensor::randn({6}, 1, rng);
  const auto wide = pool_visual_concept(z, c, 1e6).to_vector();
  for (std::size_t d = 0; d < 6; ++d) {
    double m = 0;
    for (std::size_t r = 0; r < 9; ++r) m += z.at(r, d);
    CHECK(std::abs(wide[d] - m / 9.0) < 1e-4);
  }
}

TEST_CASE("pooling at low temperature picks the most similar patch") {
  std::mt19937_64 rng(4);
  int checked = 0;
  while (checked < 200) {
    Tensor z = Tensor::randn({8, 5}, 1, rng);
    Tensor c = Tensor::randn({5}, 1, rng);
    const auto zm = to_mat(z);
    std::vector<double> sims;
    for (const auto& r : zm) sims.push_back(dot(r, c.to_vector()));
    std::vector<std::size_t> order(8);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return sims[a] > sims[b]; });
    if (sims[order[0]] - sims[order[1]] <= 0.1) continue;
    ++checked;
    const auto pooled = pool_visual_concept(z, c, 1e-3).to_vector();
    const double cosine = dot(normalized(pooled), normalized(zm[order[0]]));
    REQUIRE(cosine > 0.999);
  }
}

TEST_CASE("global loss identities and the loop oracle") {
  std::mt19937_64 rng(5);
  auto g = TextToVisionProjection::init(6, 4, rng);
  const Tensor ls = Tensor::from({1}, {kLogitScaleInit});
  for (int i = 0; i < 20; ++i) {
    GlobalBatch one{Tensor::randn({1, 4}, 1, rng), Tensor::randn({1, 6}, 1, rng)};
    CHECK(global_loss(one, g, ls).item() < 1e-6);
  }
  for (int i = 0; i < 20; ++i) {
    const std::size_t b = 5;
    GlobalBatch batch{Tensor::randn({b, 4}, 1, rng), Tensor::randn({b, 6}, 1, rng)};
    const double want = naive_global_loss(to_mat(batch.text_globals), to_mat(batch.vision_globals), g, kLogitScaleInit);
    CHECK(std::abs(global_loss(batch, g, ls).item() - want) < 1e-6);
  }
  // Perfectly separated pairs drive the loss to zero.
  auto id = TextToVisionProjection::init(2, 2, rng, false);
  auto w = id.weight.storage_for_update();
  w[0] = 1, w[1] = 0, w[2] = 0, w[3] = 1;
  GlobalBatch sep{Tensor::from({2, 2}, {1, 0, -1, 0}), Tensor::from({2, 2}, {1, 0, -1, 0})};
  CHECK(global_loss(sep, id, Tensor::from({1}, {kLogitScaleMax})).item() < 1e-12);
  GlobalBatch mismatch{Tensor::randn({2, 4}, 1, rng), Tensor::randn({3, 6}, 1, rng)};
  CHECK_THROWS_AS(global_loss(mismatch, g, ls), DimensionError);
}

TEST_CASE("scatter-summed classifier equals the double loop exactly") {
  std::mt19937_64 rng(6);
  auto g = TextToVisionProjection::init(5, 4, rng);
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = pick(rng, 1, 9);
    const std::size_t k = pick(rng, 1, n);
    const ConceptBatch cb = random_concepts(rng, n, k, 5, 4);
    const Mat want = scatter_loop(to_mat(g.apply(cb.text)), cb.labels, k);
    REQUIRE(to_mat(build_classifier(cb, g)) == want);
  }
  ConceptBatch fixed = random_concepts(rng, 7, 3, 5, 4);
  CHECK(to_mat(build_classifier(fixed, g)) == scatter_loop(to_mat(g.apply(fixed.text)), fixed.labels, 3));
  // k = 1: the column sum.  k = b~: a plain copy.
  ConceptBatch all_one = random_concepts(rng, 4, 1, 5, 4);
  const Mat proj = to_mat(g.apply(all_one.text));
  const Mat h = to_mat(build_classifier(all_one, g));
  for (std::size_t d = 0; d < 4; ++d) CHECK(h[0][d] == proj[0][d] + proj[1][d] + proj[2][d] + proj[3][d]);
  ConceptBatch distinct = random_concepts(rng, 4, 4, 5, 4);
  distinct.labels = {0, 1, 2, 3};
  CHECK(to_mat(build_classifier(distinct, g)) == to_mat(g.apply(distinct.text)));
  distinct.num_classes = 5;
  CHECK_THROWS_AS(build_classifier(distinct, g), ContractError);
}

TEST_CASE("concept loss: identities, worked value and the loop oracle") {
  std::mt19937_64 rng(7);
  auto g = TextToVisionProjection::init(5, 4, rng);
  for (int i = 0; i < 20; ++i) {
    ConceptBatch cb = random_concepts(rng, pick(rng, 1, 6), 1, 5, 4);
    CHECK(concept_loss(cb, build_classifier(cb, g)).item() < 1e-6);
  }
  ConceptBatch worked;
  worked.vision = Tensor::from({2, 2}, {1, 0, 0, 1});
  worked.labels = {0, 1};
  worked.num_classes = 2;
  const double v = concept_loss(worked, Tensor::from({2, 2}, {1, 0, 0, 1})).item();
  CHECK(std::abs(v - (-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0)))) < 1e-12);
  CHECK(v == doctest::Approx(0.3133).epsilon(1e-4));

  for (int i = 0; i < 50; ++i) {
    const std::size_t n = pick(rng, 1, 9), k = pick(rng, 1, n);
    ConceptBatch cb = random_concepts(rng, n, k, 5, 4);
    const Tensor h = build_classifier(cb, g);
    const double want = naive_concept_loss(to_mat(cb.vision), to_mat(h), cb.labels);
    REQUIRE(std::abs(concept_loss(cb, h).item() - want) < 1e-6);

    // Permuting the concept rows together with q leaves the loss unchanged.
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    ConceptBatch pb = cb;
    pb.text = gather_rows(cb.text, perm);
    pb.vision = gather_rows(cb.vision, perm);
    for (std::size_t j = 0; j < n; ++j) pb.labels[j] = cb.labels[perm[j]];
    REQUIRE(std::abs(concept_loss(pb, build_classifier(pb, g)).item() - concept_loss(cb, h).item()) < 1e-6);
  }
}

TEST_CASE("total loss") {
  const Tensor lg = Tensor::scalar(2), ll = Tensor::scalar(10);
  CHECK(total_loss(lg, ll, 0.05).item() == doctest::Approx(2.5));
  std::mt19937_64 rng(8);
  for (int i = 0; i < 20; ++i) {
    const Tensor a = Tensor::randn({}, 3, rng), b = Tensor::randn({}, 3, rng);
    CHECK(total_loss(a, b, 0).item() == a.item());
  }
  CHECK_THROWS_AS(total_loss(lg, ll, -0.1), ParameterError);
}

TEST_CASE("assembling the concept batch") {
  std::mt19937_64 rng(9);
  auto g = TextToVisionProjection::init(6, 4, rng);
  auto make_caption = [](std::vector<std::pair<std::size_t, std::vector<std::size_t>>> concepts) {
    TokenizedCaption c;
    c.ids = {1, 10, 11, 12, 13, 2};
    for (auto& [id, toks] : concepts) c.concepts.push_back({id, "", {}, toks});
    return c;
  };
  auto pair_for = [&](const TokenizedCaption* cap, const Tensor& text, std::size_t offset) {
    EncodedPair p;
    p.vision.dense = Tensor::randn({4, 4}, 1, rng);
    p.text_dense = text;
    p.text_offset = offset;
    p.caption = cap;
    return p;
  };
  const Tensor text = Tensor::randn({12, 6}, 1, rng, true);

  const auto none = make_caption({});
  std::vector<EncodedPair> empty = {pair_for(&none, text, 0)};
  CHECK_FALSE(assemble_concept_batch(empty, g, 0.1).has_value());

  const auto two = make_caption({{0, {1}}, {1, {3, 4}}});
  std::vector<EncodedPair> single = {pair_for(&two, text, 0)};
  const auto cb = assemble_concept_batch(single, g, 0.1);
  REQUIRE(cb);
  CHECK(cb->size() == 2);
  CHECK(cb->labels == std::vector<std::size_t>{0, 1});
  const std::size_t rows[] = {3, 4};
  CHECK(row(cb->text, 1).to_vector() == mean_rows(text, rows).to_vector());

  // The same bank id in two captions shares one class; offsets index the
  // second caption's rows in the packed text.
  const auto a = make_caption({{7, {2}}}), b = make_caption({{3, {1}}, {7, {2}}});
  std::vector<EncodedPair> pairs = {pair_for(&a, text, 0), pair_for(&b, text, 6)};
  const auto shared = assemble_concept_batch(pairs, g, 0.1);
  REQUIRE(shared);
  CHECK(shared->labels == std::vector<std::size_t>{0, 1, 0});
  CHECK(shared->num_classes == 2);
  CHECK(row(shared->text, 2).to_vector() == row(text, 8).to_vector());
}

TEST_CASE("gradients reach the text side and never the frozen vision side") {
  std::mt19937_64 rng(10);
  auto g = TextToVisionProjection::init(6, 4, rng);
  TokenizedCaption cap;
  cap.ids = {1, 10, 11, 2};
  cap.concepts.push_back({0, "", {}, {1, 2}});
  Tensor text = Tensor::randn({4, 6}, 1, rng, true);
  EncodedPair p;
  p.vision.dense = Tensor::randn({5, 4}, 1, rng);
  p.vision.global = Tensor::randn({4}, 1, rng);
  p.text_dense = text;
  p.caption = &cap;
  std::vector<EncodedPair> pairs = {p};
  const auto cb = assemble_concept_batch(pairs, g, 0.1);
  REQUIRE(cb);
  const Tensor ll = concept_loss(*cb, build_classifier(*cb, g));
  const Tensor loss = total_loss(sum(text), ll, 0.05);
  const Gradients grads = backward(loss);
  CHECK_FALSE(grads.contains(p.vision.dense));
  REQUIRE(grads.contains(text));
  const auto gt = grads.of(text);
  CHECK(std::any_of(gt.begin(), gt.end(), [](double v) { return v != 0.0; }));
  CHECK(grads.contains(g.weight));
}
