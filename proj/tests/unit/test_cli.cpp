// Drives the zsseg executable end to end.
#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <random>
#include <sstream>
#include <sys/wait.h>

#include "zsseg/image.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int status = -1;
  std::string out;
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(ZSSEG_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (std::size_t n = fread(buf.data(), 1, buf.size(), pipe)) r.out.append(buf.data(), n);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto p = fs::path(ZSSEG_TEST_TMP) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

json last_json_line(const std::string& out) {
  std::istringstream in(out);
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty() && line.front() == '{') last = line;
  return json::parse(last);
}

}  // namespace

TEST_CASE("concepts reproduces the gold annotations byte for byte") {
  const fs::path fixtures = fs::path(ZSSEG_SOURCE_DIR) / "tests" / "fixtures";
  const auto out = fresh_dir("cli-concepts") / "concepts.jsonl";
  const Run r = cli("concepts --vocab " + (fixtures / "concept_vocab.bpe").string() + " --input " +
                      (fixtures / "concept_captions.txt").string() + " --output " + out.string());
  REQUIRE_MESSAGE(r.status == 0, r.out);
  CHECK(slurp(out) == slurp(fixtures / "concept_gold.jsonl"));
  const json meta = json::parse(slurp(out.string() + ".config.json"));
  CHECK(meta["config"]["merges"] == "200");
}

TEST_CASE("eval-seg on ground-truth predictions scores 1.0") {
  const auto dir = fresh_dir("cli-oracle");
  const Run s = cli("synth --data-dir " + (dir / "data").string() + " --n-train 2 --n-val 2 --n-test 6");
  REQUIRE_MESSAGE(s.status == 0, s.out);
  for (const char* theta : {"none", "0.2"}) {
    const Run r = cli("eval-seg --data-dir " + (dir / "data").string() + " --predictions " +
                        (dir / "data" / "masks").string() + " --theta " + theta + " --out " + (dir / "eval").string());
    REQUIRE_MESSAGE(r.status == 0, r.out);
    const json j = last_json_line(r.out);
    CHECK(j["miou"].get<double>() == 1.0);
    CHECK(j["config"]["split"] == "test");
    CHECK(j["config"]["theta"] == theta);
  }
}

TEST_CASE("bad input fails with a JSON error and a non-zero exit") {
  const Run unknown = cli("synth --no-such-key 3");
  CHECK(unknown.status != 0);
  CHECK(unknown.out.find("\"error\"") != std::string::npos);

  const auto cfg = fresh_dir("cli-bad") / "run.cfg";
  std::ofstream(cfg) << "# comment\nseed = 3\nbogus = 1\n";
  const Run file = cli("synth --config " + cfg.string());
  CHECK(file.status == 1);
  CHECK(last_json_line(file.out)["error"] == "parameter");

  const Run missing = cli("eval-seg --checkpoint /nonexistent/model.szck --data-dir /nonexistent");
  CHECK(missing.status == 1);
  CHECK(last_json_line(missing.out).contains("message"));

  const Run bad_value = cli("synth --n-train minus-one");
  CHECK(bad_value.status != 0);
}

TEST_CASE("config files and flags are echoed, flags winning") {
  const auto dir = fresh_dir("cli-config");
  const auto cfg = dir / "run.cfg";
  std::ofstream(cfg) << "n-train = 3\nn-val = 1\nn-test = 1\nseed = 9\n";
  const Run r = cli("synth --config " + cfg.string() + " --seed 4 --data-dir " + (dir / "data").string());
  REQUIRE_MESSAGE(r.status == 0, r.out);
  const json j = last_json_line(r.out);
  CHECK(j["config"]["seed"] == "4");
  CHECK(j["config"]["n-train"] == "3");
}

TEST_CASE("visualize writes PCA images with several well-populated colour clusters") {
  const auto dir = fresh_dir("cli-vis");
  zsseg::Image img(128, 128);
  std::mt19937_64 rng(5);
  for (std::size_t y = 0; y < 128; ++y)
    for (std::size_t x = 0; x < 128; ++x) {
      const std::size_t region = (y < 64 ? 0 : 2) + (x < 64 ? 0 : 1);
      const std::uint8_t base[4][3] = {{220, 30, 30}, {30, 200, 40}, {40, 40, 210}, {200, 200, 60}};
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<std::uint8_t>(base[region][c] + (rng() % 20));
    }
  const auto input = dir / "quad.ppm";
  zsseg::write_ppm(input.string(), img);
  const Run r = cli("visualize --input " + input.string() + " --resolutions 64,128 --out " + (dir / "out").string());
  REQUIRE_MESSAGE(r.status == 0, r.out);
  for (const char* res : {"64", "128"}) {
    const auto pca = zsseg::read_ppm((dir / "out" / (std::string("quad-pca-") + res + ".ppm")).string());
    // k-means with k = 3 on the pixel colours, seeded from spread-out pixels.
    const std::size_t n = pca.height * pca.width;
    std::array<std::array<double, 3>, 3> centre{};
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t c = 0; c < 3; ++c) centre[k][c] = pca.rgb[(k * (n - 1) / 2) * 3 + c];
    std::vector<std::size_t> assign(n);
    for (int iter = 0; iter < 20; ++iter) {
      std::array<std::array<double, 4>, 3> acc{};
      for (std::size_t i = 0; i < n; ++i) {
        double best = 1e300;
        for (std::size_t k = 0; k < 3; ++k) {
          double d = 0;
          for (std::size_t c = 0; c < 3; ++c) d += std::pow(pca.rgb[i * 3 + c] - centre[k][c], 2);
          if (d < best) best = d, assign[i] = k;
        }
        for (std::size_t c = 0; c < 3; ++c) acc[assign[i]][c] += pca.rgb[i * 3 + c];
        acc[assign[i]][3] += 1;
      }
      for (std::size_t k = 0; k < 3; ++k)
        if (acc[k][3] > 0)
          for (std::size_t c = 0; c < 3; ++c) centre[k][c] = acc[k][c] / acc[k][3];
    }
    std::array<std::size_t, 3> sizes{};
    for (auto a : assign) ++sizes[a];
    for (auto s : sizes) CHECK(static_cast<double>(s) >= 0.05 * static_cast<double>(n));
  }
  const json summary = json::parse(slurp(dir / "out" / "quad-pca.json"));
  CHECK(summary["outputs"].size() == 2);
}
