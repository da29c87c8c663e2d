#include "zsseg/synth.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "zsseg/error.hpp"

ZSSEG_NAMESPACE_BEGIN

namespace fs = std::filesystem;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::size_t uniform_index(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

struct Placement {
  std::size_t cls = 0;
  std::size_t top = 0, left = 0, size = 0;
};

bool boxes_overlap(const Placement& a, const Placement& b) {
  // One pixel of clearance so that shapes never touch.
  return a.top < b.top + b.size + 1 && b.top < a.top + a.size + 1 && a.left < b.left + b.size + 1 &&
         b.left < a.left + a.size + 1;
}

std::string with_article(const std::string& phrase) {
  const char c = phrase.empty() ? 'x' : phrase.front();
  const bool vowel = c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
  return (vowel ? "an " : "a ") + phrase;
}

std::string replace_placeholder(const std::string& tmpl, const std::string& value) {
  const auto pos = tmpl.find("{}");
  if (pos == std::string::npos) throw ParameterError("caption template without '{}': " + tmpl);
  return tmpl.substr(0, pos) + value + tmpl.substr(pos + 2);
}

}  // namespace

std::string_view to_string(ShapeKind shape) {
  switch (shape) {
    case ShapeKind::Circle: return "circle";
    case ShapeKind::Square: return "square";
    case ShapeKind::Triangle: return "triangle";
    case ShapeKind::Cross: return "cross";
    case ShapeKind::Diamond: return "diamond";
    case ShapeKind::Ring: return "ring";
    case ShapeKind::Ellipse: return "ellipse";
    case ShapeKind::Hexagon: return "hexagon";
  }
  return "shape";
}

SceneSpec SceneSpec::defaults() {
  SceneSpec s;
  s.classes = {
      {ShapeKind::Circle, "red", {220, 40, 40}},        {ShapeKind::Square, "green", {40, 190, 60}},
      {ShapeKind::Triangle, "blue", {50, 70, 220}},     {ShapeKind::Cross, "yellow", {230, 210, 40}},
      {ShapeKind::Diamond, "magenta", {210, 50, 200}},  {ShapeKind::Ring, "cyan", {40, 200, 210}},
      {ShapeKind::Ellipse, "orange", {240, 140, 30}},   {ShapeKind::Hexagon, "purple", {120, 50, 160}},
  };
  s.background_palette = {50, 95, 140, 185};
  s.templates = {
      "a photo of {}.",
      "a picture of {}.",
      "an image showing {}.",
      "{} on a gray background.",
      "there is {} in the picture.",
      "a rendering of {}.",
  };
  return s;
}

void SceneSpec::validate() const {
  if (height == 0 || width == 0) throw ParameterError("scene size must be positive");
  if (classes.empty()) throw ParameterError("scene spec needs at least one class");
  if (min_objects == 0 || min_objects > max_objects) throw ParameterError("object count range is empty");
  if (max_objects > classes.size()) throw ParameterError("more objects per scene than classes");
  if (min_size == 0 || min_size > max_size) throw ParameterError("object size range is empty");
  if (max_size > height || max_size > width) throw ParameterError("objects larger than the canvas");
  if (background_palette.empty()) throw ParameterError("empty background palette");
  if (templates.empty()) throw ParameterError("no caption templates");
  if (noise < 0.0 || noise > 1.0) throw ParameterError("noise must lie in [0, 1]");
  for (const auto& t : templates) replace_placeholder(t, "");
}

std::string SceneSpec::class_concept(std::size_t c) const {
  if (c >= classes.size()) throw LookupError("scene class " + std::to_string(c) + " out of range");
  std::string shape(to_string(classes[c].shape));
  return compound_classes ? classes[c].color + " " + shape : shape;
}

std::vector<std::string> SceneSpec::class_names() const {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < classes.size(); ++c) names.push_back(class_concept(c));
  return names;
}

std::string scene_id(std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "s%06llu", static_cast<unsigned long long>(index));
  return buf;
}

std::mt19937_64 scene_rng(std::uint64_t seed, std::uint64_t index) {
  return std::mt19937_64(splitmix64(splitmix64(seed) ^ index));
}

bool shape_contains(ShapeKind shape, double top, double left, double size, double r, double c) {
  const double half = size / 2.0;
  const double u = (c - (left + half)) / half;
  const double v = (r - (top + half)) / half;
  const double rr = u * u + v * v;
  switch (shape) {
    case ShapeKind::Circle: return rr <= 1.0;
    case ShapeKind::Square: return std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
    case ShapeKind::Triangle: return v >= -1.0 && v <= 1.0 && std::abs(u) <= (v + 1.0) / 2.0;
    case ShapeKind::Cross:
      return (std::abs(u) <= 0.34 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.34 && std::abs(u) <= 1.0);
    case ShapeKind::Diamond: return std::abs(u) + std::abs(v) <= 1.0;
    case ShapeKind::Ring: return rr <= 1.0 && rr >= 0.3;
    case ShapeKind::Ellipse: return u * u + (v / 0.6) * (v / 0.6) <= 1.0;
    case ShapeKind::Hexagon: {
      const double s3 = std::sqrt(3.0);
      return std::abs(v) <= s3 / 2.0 && s3 * std::abs(u) + std::abs(v) <= s3;
    }
  }
  return false;
}

Scene generate_scene(const SceneSpec& spec, std::uint64_t index) {
  spec.validate();
  auto rng = scene_rng(spec.seed, index);
  Scene scene;
  scene.id = scene_id(index);

  const std::size_t wanted = uniform_index(rng, spec.min_objects, spec.max_objects);
  std::vector<std::size_t> order(spec.classes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = 0; i < wanted; ++i) std::swap(order[i], order[uniform_index(rng, i, order.size() - 1)]);

  std::vector<Placement> placed;
  for (std::size_t i = 0; i < wanted; ++i) {
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      Placement p;
      p.cls = order[i];
      p.size = uniform_index(rng, spec.min_size, spec.max_size);
      p.top = uniform_index(rng, 0, spec.height - p.size);
      p.left = uniform_index(rng, 0, spec.width - p.size);
      ok = std::none_of(placed.begin(), placed.end(), [&](const Placement& q) { return boxes_overlap(p, q); });
      if (ok) placed.push_back(p);
    }
    if (!ok) break;  // the canvas is full: keep the objects placed so far
  }

  const double gray = spec.background_palette[uniform_index(rng, 0, spec.background_palette.size() - 1)];
  const double amplitude = spec.noise * 255.0;
  std::uniform_real_distribution<double> jitter(-amplitude, amplitude);
  scene.image = Image(spec.height, spec.width);
  scene.mask = LabelMap(spec.height, spec.width, 0);
  for (std::size_t r = 0; r < spec.height; ++r) {
    for (std::size_t c = 0; c < spec.width; ++c) {
      std::array<double, 3> px{gray, gray, gray};
      for (const auto& p : placed) {
        if (shape_contains(spec.classes[p.cls].shape, static_cast<double>(p.top), static_cast<double>(p.left),
                           static_cast<double>(p.size), r + 0.5, c + 0.5)) {
          const auto& rgb = spec.classes[p.cls].rgb;
          px = {double(rgb[0]), double(rgb[1]), double(rgb[2])};
          scene.mask.at(r, c) = static_cast<std::uint16_t>(p.cls + 1);
        }
      }
      const double n = jitter(rng);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        scene.image.at(r, c, ch) = static_cast<std::uint8_t>(std::lround(std::clamp(px[ch] + n, 0.0, 255.0)));
      }
    }
  }

  static constexpr const char* kConnectives[] = {"and", "next to", "above"};
  std::string objects;
  for (std::size_t i = 0; i < placed.size(); ++i) {
    const auto& cls = spec.classes[placed[i].cls];
    if (i > 0) objects += std::string(" ") + kConnectives[uniform_index(rng, 0, 2)] + " ";
    objects += with_article(cls.color + " " + std::string(to_string(cls.shape)));
    scene.classes.push_back(placed[i].cls);
  }
  std::string caption = replace_placeholder(spec.templates[uniform_index(rng, 0, spec.templates.size() - 1)], objects);
  caption[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(caption[0])));
  scene.caption = std::move(caption);
  return scene;
}

std::vector<ManifestEntry> generate_dataset(const SceneSpec& spec, std::size_t n_train, std::size_t n_val,
                                            std::size_t n_test, const std::string& out_dir) {
  spec.validate();
  const fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  fs::create_directories(root / "masks", ec);
  if (ec) throw IoError("cannot create dataset directory " + out_dir + ": " + ec.message());

  std::ofstream manifest(root / "manifest.jsonl", std::ios::binary);
  if (!manifest) throw IoError("cannot write " + (root / "manifest.jsonl").string());
  std::vector<ManifestEntry> entries;
  const std::size_t total = n_train + n_val + n_test;
  for (std::size_t i = 0; i < total; ++i) {
    const Scene scene = generate_scene(spec, i);
    ManifestEntry e;
    e.id = scene.id;
    e.image_path = "images/" + scene.id + ".ppm";
    e.mask_path = "masks/" + scene.id + ".pgm";
    e.caption = scene.caption;
    e.split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
    write_ppm((root / e.image_path).string(), scene.image);
    write_pgm((root / e.mask_path).string(), scene.mask);
    nlohmann::ordered_json j;
    j["id"] = e.id;
    j["image_path"] = e.image_path;
    j["mask_path"] = e.mask_path;
    j["caption"] = e.caption;
    j["split"] = e.split;
    manifest << j.dump() << '\n';
    e.image_path = (root / e.image_path).string();
    e.mask_path = (root / e.mask_path).string();
    entries.push_back(std::move(e));
  }
  if (!manifest) throw IoError("failed writing manifest in " + out_dir);

  std::ofstream classes(root / "classes.txt", std::ios::binary);
  for (const auto& name : spec.class_names()) classes << name << '\n';
  if (!classes) throw IoError("failed writing classes.txt in " + out_dir);
  return entries;
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    const fs::path fp(p);
    return fp.is_absolute() ? p : (base / fp).string();
  };
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.id = j.at("id").get<std::string>();
      e.image_path = resolve(j.at("image_path").get<std::string>());
      e.mask_path = j.contains("mask_path") ? resolve(j.at("mask_path").get<std::string>()) : std::string();
      e.caption = j.value("caption", std::string());
      e.split = j.value("split", std::string());
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return out;
}

std::vector<ManifestEntry> filter_split(const std::vector<ManifestEntry>& entries, std::string_view split) {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries) {
    if (e.split == split) out.push_back(e);
  }
  return out;
}

std::vector<std::string> load_lines(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t");
    out.push_back(line.substr(first, last - first + 1));
  }
  return out;
}

ZSSEG_NAMESPACE_END
