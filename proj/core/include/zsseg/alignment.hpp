#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "zsseg/bpe.hpp"
#include "zsseg/checkpoint.hpp"
#include "zsseg/encoders.hpp"

ZSSEG_NAMESPACE_BEGIN

/// Linear map g from the text space into the frozen visual space. There is
/// no vision-side projection: text is projected straight onto patch features.
struct TextToVisionProjection {
  Tensor weight;  // d_v x d_t
  Tensor bias;    // d_v; undefined when built without bias

  static TextToVisionProjection init(std::size_t text_dim, std::size_t vision_dim, std::mt19937_64& rng,
                                     bool with_bias = true);
  std::size_t text_dim() const { return weight.cols(); }
  std::size_t vision_dim() const { return weight.rows(); }
  bool has_bias() const { return bias.defined(); }

  /// Projects each row of x (n x d_t) to n x d_v.
  Tensor apply(const Tensor& x) const;
  void append_parameters(TensorTable& out) const;
  void load_parameters(const TensorTable& table);
};

/// Loss weights: total = global + lambda * concept; tau sharpens pooling.
struct LossConfig {
  Real lambda = Real(0.05);
  Real tau = Real(0.1);
};

/// Learnable CLIP-style logit scale stored as a log value. exp(value) is kept
/// in (0, 100].
inline constexpr double kLogitScaleInit = 2.659260036932778;  // ln(1 / 0.07)
inline constexpr double kLogitScaleMax = 4.605170185988092;   // ln(100)

struct GlobalBatch {
  Tensor vision_globals;  // b x d_v
  Tensor text_globals;    // b x d_t
};

/// Concept pairs collected over a batch; rows of `text` and `vision` are aligned.
struct ConceptBatch {
  Tensor text;    // b~ x d_t, text concepts before projection
  Tensor vision;  // b~ x d_v, similarity-pooled visual concepts
  std::vector<std::size_t> labels;  // q: dense re-indexing of bank ids
  std::size_t num_classes = 0;      // k
  struct Source {
    std::size_t pair = 0;
    std::size_t bank_id = 0;
  };
  std::vector<Source> provenance;

  std::size_t size() const { return labels.size(); }
};

/// Mean of the token rows listed in `token_indices`.
Tensor text_concept_repr(const Tensor& dense_text, std::span<const std::size_t> token_indices);

/// g(c) for a single concept vector.
Tensor project_text(const TextToVisionProjection& g, const Tensor& c);

/// softmax(z_v c / tau) over patches, then the weighted sum of patch rows.
Tensor pool_visual_concept(const Tensor& dense_vision, const Tensor& projected_concept, Real tau);

/// Similarity matrix exp(logit_scale) * norm(g(Z_t)) norm(Z_v)^T, rows = text.
Tensor global_similarity(const GlobalBatch& batch, const TextToVisionProjection& g, const Tensor& logit_scale);
/// Symmetric InfoNCE over the global similarity matrix.
Tensor global_loss(const GlobalBatch& batch, const TextToVisionProjection& g, const Tensor& logit_scale);

/// h_i = sum_j [q_j == i] g(C_t)_j; every class must appear at least once.
Tensor build_classifier(const ConceptBatch& concepts, const TextToVisionProjection& g);

/// Cross-entropy of norm(C_v) norm(h)^T against q, averaged over concepts.
Tensor concept_loss(const ConceptBatch& concepts, const Tensor& classifier);

Tensor total_loss(const Tensor& global, const Tensor& concept_term, Real lambda);

/// One image-caption pair after encoding. The caption's token t lives at row
/// `text_offset + t` of `text_dense`, so a packed batch can be shared.
struct EncodedPair {
  VisionRepr vision;
  Tensor text_dense;
  std::size_t text_offset = 0;
  const TokenizedCaption* caption = nullptr;
};

/// Builds concept pairs for every concept of every caption, in pair order then
/// concept order. Returns nullopt when the batch holds no concept at all.
std::optional<ConceptBatch> assemble_concept_batch(std::span<const EncodedPair> pairs, const TextToVisionProjection& g,
                                                   Real tau);

ZSSEG_NAMESPACE_END
