#include "zsseg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <variant>

#include "zsseg/error.hpp"

ZSSEG_NAMESPACE_BEGIN

namespace {

std::vector<double> unit_rows(const Tensor& x) {
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> out(n * d);
  const auto data = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0.0;
    for (std::size_t j = 0; j < d; ++j) norm += double(data[i * d + j]) * data[i * d + j];
    norm = std::max(std::sqrt(norm), 1e-12);
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = data[i * d + j] / norm;
  }
  return out;
}

}  // namespace

std::string fill_template(const std::string& tmpl, const std::string& name) {
  const auto pos = tmpl.find("{}");
  if (pos == std::string::npos) throw ParameterError("template without '{}': " + tmpl);
  return tmpl.substr(0, pos) + name + tmpl.substr(pos + 2);
}

ClassEmbeddings embed_classes(const TextEncoder& text, const BpeVocab& vocab, const TextToVisionProjection& g,
                              const std::vector<std::string>& names, const std::vector<std::string>& templates) {
  if (names.empty()) throw ParameterError("no class names");
  if (templates.empty()) throw ParameterError("no templates");
  ClassEmbeddings out;
  out.names = names;
  out.templates = templates;
  std::vector<Tensor> rows;
  for (const auto& name : names) {
    std::vector<TokenizedCaption> prompts;
    for (const auto& t : templates) prompts.push_back(tokenize(vocab, fill_template(t, name)));
    const TextBatch batch = text.encode_batch(prompts);
    if (batch.truncated > 0) {
      out.warnings.push_back("class '" + name + "': " + std::to_string(batch.truncated) +
                             " prompt(s) truncated to the text context");
    }
    const Tensor projected = g.apply(batch.globals).detach();
    std::vector<std::size_t> all(projected.rows());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    rows.push_back(mean_rows(projected, all));
  }
  out.embeddings = l2_normalize_rows(concat_rows(rows)).detach();
  return out;
}

std::vector<std::size_t> window_origins(std::size_t extent, std::size_t window, std::size_t stride) {
  if (window == 0 || stride == 0) throw ParameterError("window and stride must be positive");
  if (stride > window) throw ParameterError("stride larger than the window leaves gaps");
  if (window > extent) throw ParameterError("window larger than the resized image");
  std::vector<std::size_t> out;
  for (std::size_t pos = 0;; pos += stride) {
    if (pos + window >= extent) {
      out.push_back(extent - window);
      break;
    }
    out.push_back(pos);
  }
  return out;
}

std::pair<std::size_t, std::size_t> resized_dims(std::size_t height, std::size_t width, std::size_t shorter_side) {
  if (height == 0 || width == 0 || shorter_side == 0) throw InputError("cannot resize an empty image");
  if (height <= width) {
    const auto w = static_cast<std::size_t>(std::lround(double(width) * double(shorter_side) / double(height)));
    return {shorter_side, std::max<std::size_t>(w, 1)};
  }
  const auto h = static_cast<std::size_t>(std::lround(double(height) * double(shorter_side) / double(width)));
  return {std::max<std::size_t>(h, 1), shorter_side};
}

SegmentationResult segment(const VisionProvider& provider, const ClassEmbeddings& classes, const Image& image,
                           const SegmentOptions& options, const std::string& image_id) {
  const std::size_t patch = vision_patch_size(provider);
  if (image.height < std::max<std::size_t>(patch, 1) || image.width < std::max<std::size_t>(patch, 1)) {
    throw InputError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     " is smaller than one patch");
  }
  if (classes.size() == 0) throw ParameterError("no classes to segment");
  const auto [rh, rw] = resized_dims(image.height, image.width, options.shorter_side);
  const auto rows = window_origins(rh, options.window, options.stride);
  const auto cols = window_origins(rw, options.window, options.stride);
  const bool precomputed = std::holds_alternative<PrecomputedFeatures>(provider);
  if (precomputed && (rows.size() != 1 || cols.size() != 1 || rh != image.height || rw != image.width)) {
    throw InputError("precomputed features only support a single window at the native resolution");
  }

  const Image resized = resize_bilinear(image, rh, rw);
  const std::size_t C = classes.size();
  const std::size_t d = classes.embeddings.cols();
  const auto class_vecs = classes.embeddings.data();
  std::vector<double> canvas(C * rh * rw, 0.0);
  std::vector<std::uint32_t> counts(rh * rw, 0);

  for (auto top : rows) {
    for (auto left : cols) {
      const Image win = crop(resized, top, left, options.window, options.window);
      const VisionRepr repr = encode_image(provider, win, image_id);
      if (repr.dense.cols() != d) {
        throw DimensionError("vision features have width " + std::to_string(repr.dense.cols()) +
                             " but class embeddings have " + std::to_string(d));
      }
      const std::size_t gr = repr.grid_rows, gc = repr.grid_cols;
      const auto patches = unit_rows(repr.dense);
      std::vector<Real> plane(gr * gc);
      for (std::size_t k = 0; k < C; ++k) {
        for (std::size_t p = 0; p < gr * gc; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < d; ++j) s += patches[p * d + j] * class_vecs[k * d + j];
          plane[p] = static_cast<Real>(s);
        }
        const auto up = resize_plane_bilinear(plane, gr, gc, options.window, options.window);
        double* dst = &canvas[k * rh * rw];
        for (std::size_t r = 0; r < options.window; ++r) {
          for (std::size_t c = 0; c < options.window; ++c) dst[(top + r) * rw + left + c] += up[r * options.window + c];
        }
      }
      for (std::size_t r = 0; r < options.window; ++r) {
        for (std::size_t c = 0; c < options.window; ++c) ++counts[(top + r) * rw + left + c];
      }
    }
  }

  SegmentationResult out;
  out.num_classes = C;
  out.labels = LabelMap(image.height, image.width, 0);
  out.scores.assign(image.height * image.width, Real(-2));
  std::vector<Real> plane(rh * rw);
  for (std::size_t k = 0; k < C; ++k) {
    for (std::size_t i = 0; i < rh * rw; ++i) plane[i] = static_cast<Real>(canvas[k * rh * rw + i] / counts[i]);
    const auto full = resize_plane_bilinear(plane, rh, rw, image.height, image.width);
    for (std::size_t i = 0; i < full.size(); ++i) {
      if (full[i] > out.scores[i]) {
        out.scores[i] = full[i];
        out.labels.labels[i] = static_cast<std::uint16_t>(k);
      }
    }
  }
  return out;
}

SegmentationResult apply_background(const SegmentationResult& result, double theta) {
  SegmentationResult out = result;
  out.threshold = theta;
  for (std::size_t i = 0; i < out.scores.size(); ++i) {
    if (out.scores[i] < theta) out.labels.labels[i] = static_cast<std::uint16_t>(out.background_id());
  }
  return out;
}

MiouAccumulator::MiouAccumulator(std::size_t num_classes, std::uint16_t ignore_id)
    : num_classes_(num_classes), ignore_id_(ignore_id), inter_(num_classes), pred_(num_classes), gt_(num_classes) {
  if (num_classes == 0) throw ParameterError("mIoU needs at least one class");
}

void MiouAccumulator::add(const LabelMap& pred, const LabelMap& gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw InputError("prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                     " does not match ground truth " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
  }
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const auto g = gt.labels[i];
    if (g == ignore_id_) {
      ++ignored_;
      continue;
    }
    const auto p = pred.labels[i];
    if (g >= num_classes_) throw InputError("ground-truth label " + std::to_string(g) + " out of range");
    ++gt_[g];
    if (p < num_classes_) ++pred_[p];
    if (p == g) ++inter_[g];
  }
}

MiouReport MiouAccumulator::report() const {
  MiouReport r;
  r.ignored = ignored_;
  r.intersection = inter_;
  r.gt_pixels = gt_;
  double total = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < num_classes_; ++k) {
    const std::uint64_t uni = pred_[k] + gt_[k] - inter_[k];
    r.union_.push_back(uni);
    if (uni == 0) {
      r.iou.push_back(std::nullopt);
      continue;
    }
    const double iou = double(inter_[k]) / double(uni);
    r.iou.push_back(iou);
    total += iou;
    ++present;
  }
  r.mean = present ? total / double(present) : 0.0;
  return r;
}

MiouReport miou(const LabelMap& pred, const LabelMap& gt, std::size_t num_classes, std::uint16_t ignore_id) {
  MiouAccumulator acc(num_classes, ignore_id);
  acc.add(pred, gt);
  return acc.report();
}

LabelMap evaluation_target(const LabelMap& mask, std::size_t num_classes, bool with_background) {
  LabelMap out = mask;
  for (auto& v : out.labels) {
    if (v == 0) {
      v = with_background ? static_cast<std::uint16_t>(num_classes) : kIgnoreLabel;
    } else {
      if (v > num_classes) throw InputError("mask value " + std::to_string(v) + " exceeds the class count");
      v = static_cast<std::uint16_t>(v - 1);
    }
  }
  return out;
}

Classification classify(const VisionProvider& provider, const ClassEmbeddings& classes, const Image& image,
                        const std::string& image_id) {
  const VisionRepr repr = encode_image(provider, image, image_id);
  const std::size_t d = classes.embeddings.cols();
  if (repr.global.numel() != d) throw DimensionError("global vision feature width does not match class embeddings");
  const auto g = unit_rows(reshape(repr.global, {1, d}));
  const auto e = classes.embeddings.data();
  Classification out;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += g[j] * e[k * d + j];
    out.scores.push_back(static_cast<Real>(s));
  }
  out.label = static_cast<std::size_t>(std::max_element(out.scores.begin(), out.scores.end()) - out.scores.begin());
  return out;
}

ThresholdSweep sweep_threshold(std::span<const SegmentationResult> results, std::span<const LabelMap> masks,
                               std::span<const double> thetas) {
  if (results.size() != masks.size()) throw InputError("sweep: results and masks differ in count");
  if (results.empty() || thetas.empty()) throw ParameterError("sweep: nothing to evaluate");
  ThresholdSweep out;
  const std::size_t C = results.front().num_classes;
  std::vector<LabelMap> targets;
  for (const auto& m : masks) targets.push_back(evaluation_target(m, C, true));
  for (double theta : thetas) {
    MiouAccumulator acc(C + 1, kIgnoreLabel);
    for (std::size_t i = 0; i < results.size(); ++i) acc.add(apply_background(results[i], theta).labels, targets[i]);
    const double m = acc.report().mean;
    out.thetas.push_back(theta);
    out.mious.push_back(m);
    if (out.mious.size() == 1 || m > out.best_miou) {
      out.best_miou = m;
      out.best_theta = theta;
    }
  }
  return out;
}

std::vector<double> default_theta_grid() {
  std::vector<double> out;
  for (int i = 0; i < 20; ++i) out.push_back(static_cast<double>(i) / 20.0);
  return out;
}

Image colorize(const LabelMap& labels, std::size_t num_classes) {
  Image out(labels.height, labels.width);
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    const auto k = labels.labels[i];
    if (k >= num_classes) continue;  // background and ignored stay black
    // Evenly spaced hues at full saturation.
    const double h = 6.0 * double(k) / double(num_classes);
    const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
    double rgb[3] = {0, 0, 0};
    switch (static_cast<int>(h)) {
      case 0: rgb[0] = 1, rgb[1] = x; break;
      case 1: rgb[0] = x, rgb[1] = 1; break;
      case 2: rgb[1] = 1, rgb[2] = x; break;
      case 3: rgb[1] = x, rgb[2] = 1; break;
      case 4: rgb[0] = x, rgb[2] = 1; break;
      default: rgb[0] = 1, rgb[2] = x; break;
    }
    for (int ch = 0; ch < 3; ++ch) out.rgb[i * 3 + ch] = static_cast<std::uint8_t>(std::lround(rgb[ch] * 255.0));
  }
  return out;
}

Image overlay(const Image& image, const LabelMap& labels, std::size_t num_classes, double alpha) {
  if (image.height != labels.height || image.width != labels.width) throw InputError("overlay size mismatch");
  const Image colors = colorize(labels, num_classes);
  Image out = image;
  for (std::size_t i = 0; i < out.rgb.size(); ++i) {
    out.rgb[i] = static_cast<std::uint8_t>(std::lround((1.0 - alpha) * image.rgb[i] + alpha * colors.rgb[i]));
  }
  return out;
}

ZSSEG_NAMESPACE_END
