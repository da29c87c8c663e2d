#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "zsseg/alignment.hpp"
#include "zsseg/bpe.hpp"
#include "zsseg/encoders.hpp"
#include "zsseg/image.hpp"

ZSSEG_NAMESPACE_BEGIN

/// Template-averaged, projected, unit-norm text embedding per class.
struct ClassEmbeddings {
  std::vector<std::string> names;
  Tensor embeddings;  // C x d_v, rows have unit norm
  std::vector<std::string> templates;
  std::vector<std::string> warnings;

  std::size_t size() const { return names.size(); }
};

/// Templates use "{}" as the class-name placeholder.
std::string fill_template(const std::string& tmpl, const std::string& name);

ClassEmbeddings embed_classes(const TextEncoder& text, const BpeVocab& vocab, const TextToVisionProjection& g,
                              const std::vector<std::string>& names, const std::vector<std::string>& templates);

struct SegmentOptions {
  std::size_t shorter_side = 64;
  std::size_t window = 64;
  std::size_t stride = 32;
};

struct SegmentationResult {
  LabelMap labels;
  std::vector<Real> scores;  // winning cosine score per pixel
  std::size_t num_classes = 0;
  std::optional<double> threshold;

  std::size_t background_id() const { return num_classes; }
};

/// Window origins along one axis: multiples of `stride`, with the last window
/// clamped to end at `extent`.
std::vector<std::size_t> window_origins(std::size_t extent, std::size_t window, std::size_t stride);

/// Height and width after scaling so that the shorter side equals `shorter_side`.
std::pair<std::size_t, std::size_t> resized_dims(std::size_t height, std::size_t width, std::size_t shorter_side);

/// Sliding-window dense prediction. Per window, patch cosine scores are
/// upsampled to the window, averaged where windows overlap, upsampled to the
/// input resolution and reduced by per-pixel argmax.
SegmentationResult segment(const VisionProvider& provider, const ClassEmbeddings& classes, const Image& image,
                           const SegmentOptions& options, const std::string& image_id = {});

/// Pixels whose winning score is below `theta` become background_id().
SegmentationResult apply_background(const SegmentationResult& result, double theta);

struct MiouReport {
  std::vector<std::optional<double>> iou;  // nullopt when the class never occurs
  std::vector<std::uint64_t> intersection;
  std::vector<std::uint64_t> union_;
  std::vector<std::uint64_t> gt_pixels;
  std::uint64_t ignored = 0;
  double mean = 0.0;
};

/// Dataset-level IoU: intersections and unions are summed over images first.
class MiouAccumulator {
 public:
  MiouAccumulator(std::size_t num_classes, std::uint16_t ignore_id);
  void add(const LabelMap& pred, const LabelMap& gt);
  MiouReport report() const;

 private:
  std::size_t num_classes_;
  std::uint16_t ignore_id_;
  std::vector<std::uint64_t> inter_, pred_, gt_;
  std::uint64_t ignored_ = 0;
};

MiouReport miou(const LabelMap& pred, const LabelMap& gt, std::size_t num_classes, std::uint16_t ignore_id);

inline constexpr std::uint16_t kIgnoreLabel = 65535;

/// Maps a synthetic mask (0 = background, c + 1 = class c) to evaluation labels.
/// Without background, background pixels are ignored; with it they become
/// class `num_classes`.
LabelMap evaluation_target(const LabelMap& mask, std::size_t num_classes, bool with_background);

struct Classification {
  std::size_t label = 0;
  std::vector<Real> scores;
};

Classification classify(const VisionProvider& provider, const ClassEmbeddings& classes, const Image& image,
                        const std::string& image_id = {});

struct ThresholdSweep {
  std::vector<double> thetas;
  std::vector<double> mious;
  double best_theta = 0.0;
  double best_miou = 0.0;
};

/// Evaluates with-background mIoU for each theta; ties keep the smaller theta.
ThresholdSweep sweep_threshold(std::span<const SegmentationResult> results, std::span<const LabelMap> masks,
                               std::span<const double> thetas);
/// 0.00, 0.05, ..., 0.95
std::vector<double> default_theta_grid();

/// Class-indexed colours; background_id() renders black.
Image colorize(const LabelMap& labels, std::size_t num_classes);
Image overlay(const Image& image, const LabelMap& labels, std::size_t num_classes, double alpha = 0.5);

ZSSEG_NAMESPACE_END
