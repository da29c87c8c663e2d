#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "zsseg/image.hpp"

ZSSEG_NAMESPACE_BEGIN

enum class ShapeKind { Circle, Square, Triangle, Cross, Diamond, Ring, Ellipse, Hexagon };

std::string_view to_string(ShapeKind shape);

struct SceneClass {
  ShapeKind shape = ShapeKind::Circle;
  std::string color;
  std::array<std::uint8_t, 3> rgb{};
};

/// Everything that determines a synthetic corpus. Mask value 0 is background,
/// class i is written as i + 1.
struct SceneSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  std::vector<SceneClass> classes;
  std::size_t min_objects = 1;
  std::size_t max_objects = 3;
  std::size_t min_size = 12;
  std::size_t max_size = 24;
  std::vector<std::uint8_t> background_palette;
  double noise = 0.04;  // amplitude as a fraction of full scale
  /// Caption templates; "{}" is replaced by the object list.
  std::vector<std::string> templates;
  /// false: the shape word alone is the concept. true: "<color> <shape>".
  bool compound_classes = false;
  std::uint64_t seed = 0;

  /// Eight colour/shape classes, 64x64 canvas, 1-3 objects of 12-24 px.
  static SceneSpec defaults();
  /// Throws ParameterError when the spec cannot produce a scene.
  void validate() const;
  std::size_t num_classes() const { return classes.size(); }
  /// Concept-bank form of class `c` (0-based).
  std::string class_concept(std::size_t c) const;
  std::vector<std::string> class_names() const;
};

struct Scene {
  std::string id;
  Image image;
  LabelMap mask;
  std::string caption;
  std::vector<std::size_t> classes;  // 0-based, in caption order
};

std::string scene_id(std::uint64_t index);
/// Independent generator for scene `index`: a hash of (seed, index).
std::mt19937_64 scene_rng(std::uint64_t seed, std::uint64_t index);

/// True when the pixel centre (r + 0.5, c + 0.5) lies inside `shape` of side
/// `size` whose bounding box starts at (top, left).
bool shape_contains(ShapeKind shape, double top, double left, double size, double r, double c);

Scene generate_scene(const SceneSpec& spec, std::uint64_t index);

struct ManifestEntry {
  std::string id;
  std::string image_path;  // absolute or relative to the working directory
  std::string mask_path;
  std::string caption;
  std::string split;
};

/// Writes images/<id>.ppm, masks/<id>.pgm, manifest.jsonl and classes.txt
/// under `out_dir`. Ids 0..n_train-1 are train, then val, then test.
std::vector<ManifestEntry> generate_dataset(const SceneSpec& spec, std::size_t n_train, std::size_t n_val,
                                            std::size_t n_test, const std::string& out_dir);

/// Reads a manifest; relative paths are resolved against its directory.
std::vector<ManifestEntry> load_manifest(const std::string& path);
std::vector<ManifestEntry> filter_split(const std::vector<ManifestEntry>& entries, std::string_view split);

/// One name per line; blank lines and '#' comments skipped.
std::vector<std::string> load_lines(const std::string& path);

ZSSEG_NAMESPACE_END
