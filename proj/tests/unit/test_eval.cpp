#include <doctest.h>

#include <cmath>

#include "train_fixture.hpp"
#include "zsseg/error.hpp"
#include "zsseg/eval.hpp"

using namespace zsseg;

namespace {

LabelMap labels_of(std::size_t h, std::size_t w, std::vector<std::uint16_t> v) {
  LabelMap m(h, w);
  m.labels = std::move(v);
  return m;
}

struct Fixture {
  testing::TinyCorpus corpus = testing::tiny_corpus(30);
  Model model = Model::init(corpus.text, 32, 4);
  std::vector<std::string> templates = {"a photo of a {}.", "a {} in the scene."};

  ClassEmbeddings classes(std::vector<std::string> names) const {
    return embed_classes(model.text, corpus.vocab, model.proj, names, templates);
  }
};

Image scene_image(std::uint64_t index) { return generate_scene(SceneSpec::defaults(), index).image; }

}  // namespace

TEST_CASE("mIoU on hand-made maps") {
  const LabelMap gt = labels_of(2, 2, {0, 0, 1, 1});
  CHECK(miou(gt, gt, 2, kIgnoreLabel).mean == 1.0);
  CHECK(miou(labels_of(2, 2, {1, 1, 0, 0}), gt, 2, kIgnoreLabel).mean == 0.0);
  // Class 0: pred {0}, gt {0,1} -> 1/2. Class 1: pred {1,2,3}, gt {2,3} -> 2/3.
  const auto r = miou(labels_of(2, 2, {0, 1, 1, 1}), gt, 2, kIgnoreLabel);
  CHECK(*r.iou[0] == doctest::Approx(0.5));
  CHECK(*r.iou[1] == doctest::Approx(2.0 / 3.0));
  // One of three pixels agrees for a single class seen in both maps.
  const auto third = miou(labels_of(1, 3, {0, 0, 1}), labels_of(1, 3, {1, 0, 1}), 2, kIgnoreLabel);
  CHECK(*third.iou[0] == doctest::Approx(0.5));
  CHECK(*third.iou[1] == doctest::Approx(0.5));
  const auto thirds = miou(labels_of(1, 3, {0, 0, 0}), labels_of(1, 3, {0, 1, 1}), 2, kIgnoreLabel);
  CHECK(*thirds.iou[0] == doctest::Approx(1.0 / 3.0));
  CHECK(thirds.mean == doctest::Approx(1.0 / 6.0));
  // Ignored pixels never count; absent classes are skipped in the mean.
  const auto ign = miou(labels_of(1, 3, {1, 0, 0}), labels_of(1, 3, {kIgnoreLabel, 0, 0}), 3, kIgnoreLabel);
  CHECK(ign.mean == 1.0);
  CHECK(ign.ignored == 1);
  CHECK_FALSE(ign.iou[2].has_value());
  CHECK_THROWS_AS(miou(gt, labels_of(1, 4, {0, 0, 0, 0}), 2, kIgnoreLabel), InputError);
}

TEST_CASE("dataset mIoU sums counts before dividing") {
  MiouAccumulator acc(2, kIgnoreLabel);
  acc.add(labels_of(1, 2, {0, 0}), labels_of(1, 2, {0, 0}));
  acc.add(labels_of(1, 2, {1, 1}), labels_of(1, 2, {0, 1}));
  const auto r = acc.report();
  CHECK(*r.iou[0] == doctest::Approx(2.0 / 3.0));
  CHECK(*r.iou[1] == doctest::Approx(0.5));
}

TEST_CASE("evaluation targets") {
  const LabelMap mask = labels_of(1, 3, {0, 1, 2});
  CHECK(evaluation_target(mask, 2, false).labels == std::vector<std::uint16_t>{kIgnoreLabel, 0, 1});
  CHECK(evaluation_target(mask, 2, true).labels == std::vector<std::uint16_t>{2, 0, 1});
  CHECK_THROWS_AS(evaluation_target(mask, 1, false), InputError);
}

TEST_CASE("window origins cover every position") {
  for (std::size_t extent = 1; extent <= 150; ++extent)
    for (std::size_t window : {1, 7, 32, 64})
      for (std::size_t stride : {1, 3, 16, 32}) {
        if (window > extent || stride > window) continue;
        const auto o = window_origins(extent, window, stride);
        std::vector<int> hit(extent, 0);
        for (auto s : o) {
          REQUIRE(s + window <= extent);
          for (std::size_t i = s; i < s + window; ++i) hit[i] = 1;
        }
        REQUIRE(std::all_of(hit.begin(), hit.end(), [](int h) { return h == 1; }));
        REQUIRE(o.front() == 0);
        REQUIRE(o.back() + window == extent);
      }
  CHECK(window_origins(64, 64, 32) == std::vector<std::size_t>{0});
  CHECK(window_origins(96, 64, 32) == std::vector<std::size_t>{0, 32});
  CHECK(window_origins(100, 64, 32) == std::vector<std::size_t>{0, 32, 36});
  CHECK_THROWS_AS(window_origins(64, 64, 65), ParameterError);
  CHECK(resized_dims(64, 128, 32) == std::pair<std::size_t, std::size_t>{32, 64});
}

TEST_CASE("class embeddings have unit norm; duplicate names give equal rows") {
  const Fixture f;
  const auto ce = f.classes({"circle", "square", "circle"});
  REQUIRE(ce.size() == 3);
  for (std::size_t r = 0; r < 3; ++r) {
    double n = 0;
    for (std::size_t c = 0; c < ce.embeddings.cols(); ++c) n += ce.embeddings.at(r, c) * ce.embeddings.at(r, c);
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-5));
  }
  for (std::size_t c = 0; c < ce.embeddings.cols(); ++c) CHECK(ce.embeddings.at(0, c) == ce.embeddings.at(2, c));
  CHECK(fill_template("a {} here", "dog") == "a dog here");
  CHECK_THROWS_AS(fill_template("no slot", "dog"), ParameterError);
}

TEST_CASE("a single class labels every pixel zero") {
  const Fixture f;
  const auto r = segment(HandcraftedFeaturizer{}, f.classes({"circle"}), scene_image(1), {});
  CHECK(r.labels == LabelMap(64, 64, 0));
}

TEST_CASE("four non-overlapping windows match four separate crops") {
  const Fixture f;
  const auto ce = f.classes({"circle", "square", "triangle", "cross"});
  Image big(128, 128);
  for (std::size_t q = 0; q < 4; ++q) {
    const Image part = scene_image(10 + q);
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x)
        for (std::size_t c = 0; c < 3; ++c) big.at((q / 2) * 64 + y, (q % 2) * 64 + x, c) = part.at(y, x, c);
  }
  const auto whole = segment(HandcraftedFeaturizer{}, ce, big, {128, 64, 64});
  for (std::size_t q = 0; q < 4; ++q) {
    const std::size_t top = (q / 2) * 64, left = (q % 2) * 64;
    const auto alone = segment(HandcraftedFeaturizer{}, ce, crop(big, top, left, 64, 64), {64, 64, 64});
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x) REQUIRE(whole.labels.at(top + y, left + x) == alone.labels.at(y, x));
  }
}

TEST_CASE("a window as large as the image ignores the stride") {
  const Fixture f;
  const auto ce = f.classes({"circle", "square", "ring"});
  const Image img = scene_image(3);
  const auto a = segment(HandcraftedFeaturizer{}, ce, img, {64, 64, 8});
  const auto b = segment(HandcraftedFeaturizer{}, ce, img, {64, 64, 64});
  CHECK(a.labels == b.labels);
  CHECK(a.scores == b.scores);
}

TEST_CASE("background threshold is monotone") {
  const Fixture f;
  const auto ce = f.classes({"circle", "square", "ring", "hexagon"});
  const auto r = segment(HandcraftedFeaturizer{}, ce, scene_image(5), {});
  CHECK(apply_background(r, -1.0).labels == r.labels);
  std::size_t prev = 0;
  for (double theta : default_theta_grid()) {
    const auto b = apply_background(r, theta);
    const auto bg = static_cast<std::size_t>(std::count(b.labels.labels.begin(), b.labels.labels.end(), r.background_id()));
    CHECK(bg >= prev);
    prev = bg;
    for (std::size_t i = 0; i < b.labels.labels.size(); ++i)
      if (b.labels.labels[i] != r.background_id()) REQUIRE(b.labels.labels[i] == r.labels.labels[i]);
  }
  CHECK(apply_background(r, 2.0).labels == LabelMap(64, 64, r.background_id()));
  const auto grid = default_theta_grid();
  REQUIRE(grid.size() == 20);
  CHECK(grid[3] == 0.15);
}

TEST_CASE("threshold sweep keeps the smaller theta on ties") {
  SegmentationResult r;
  r.labels = labels_of(1, 2, {0, 0});
  r.scores = {0.5, 0.5};
  r.num_classes = 1;
  const std::vector<SegmentationResult> results = {r};
  const std::vector<LabelMap> masks = {labels_of(1, 2, {1, 1})};
  const double thetas[] = {0.0, 0.1, 0.6};
  const auto s = sweep_threshold(results, masks, thetas);
  CHECK(s.mious[0] == 1.0);
  CHECK(s.mious[1] == 1.0);
  CHECK(s.best_theta == 0.0);
  CHECK(s.mious[2] == 0.0);
}

TEST_CASE("classification picks the best global score") {
  const Fixture f;
  const auto ce = f.classes({"circle", "square", "ring"});
  const auto c = classify(HandcraftedFeaturizer{}, ce, scene_image(2));
  REQUIRE(c.scores.size() == 3);
  CHECK(c.label == static_cast<std::size_t>(std::max_element(c.scores.begin(), c.scores.end()) - c.scores.begin()));
}
