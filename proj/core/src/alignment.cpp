#include "zsseg/alignment.hpp"

#include <cmath>
#include <numeric>
#include <unordered_map>

#include "zsseg/error.hpp"

ZSSEG_NAMESPACE_BEGIN

TextToVisionProjection TextToVisionProjection::init(std::size_t text_dim, std::size_t vision_dim, std::mt19937_64& rng,
                                                    bool with_bias) {
  TextToVisionProjection g;
  const Real stddev = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(text_dim)));
  g.weight = Tensor::randn({vision_dim, text_dim}, stddev, rng, true);
  if (with_bias) g.bias = Tensor::zeros({vision_dim}, true);
  return g;
}

Tensor TextToVisionProjection::apply(const Tensor& x) const {
  if (x.rank() != 2 || x.cols() != text_dim()) {
    throw DimensionError("projection expects rows of width " + std::to_string(text_dim()) + ", got " +
                         shape_string(x.shape()));
  }
  Tensor y = matmul(x, transpose(weight));
  return has_bias() ? add_bias(y, bias) : y;
}

void TextToVisionProjection::append_parameters(TensorTable& out) const {
  out.push_back({"proj.weight", weight});
  if (has_bias()) out.push_back({"proj.bias", bias});
}

void TextToVisionProjection::load_parameters(const TensorTable& table) {
  assign_tensor(weight, find_tensor(table, "proj.weight"), "proj.weight");
  if (has_bias()) assign_tensor(bias, find_tensor(table, "proj.bias"), "proj.bias");
}

Tensor text_concept_repr(const Tensor& dense_text, std::span<const std::size_t> token_indices) {
  if (token_indices.empty()) throw ContractError("text concept with an empty token set");
  return mean_rows(dense_text, token_indices);
}

Tensor project_text(const TextToVisionProjection& g, const Tensor& c) {
  if (c.rank() != 1) throw DimensionError("project_text expects a vector, got " + shape_string(c.shape()));
  return reshape(g.apply(reshape(c, {1, c.dim(0)})), {g.vision_dim()});
}

Tensor pool_visual_concept(const Tensor& dense_vision, const Tensor& projected_concept, Real tau) {
  if (dense_vision.rank() != 2 || projected_concept.rank() != 1 || projected_concept.dim(0) != dense_vision.cols()) {
    throw DimensionError("pooling: concept " + shape_string(projected_concept.shape()) + " does not match patches " +
                         shape_string(dense_vision.shape()));
  }
  const std::size_t n = dense_vision.rows(), d = dense_vision.cols();
  const Tensor sims = reshape(matmul(dense_vision, reshape(projected_concept, {d, 1})), {n});
  const Tensor weights = softmax(sims, 0, tau);
  return reshape(matmul(reshape(weights, {1, n}), dense_vision), {d});
}

Tensor global_similarity(const GlobalBatch& batch, const TextToVisionProjection& g, const Tensor& logit_scale) {
  if (batch.text_globals.rows() != batch.vision_globals.rows()) {
    throw DimensionError("global batch: " + std::to_string(batch.text_globals.rows()) + " captions vs " +
                         std::to_string(batch.vision_globals.rows()) + " images");
  }
  const Tensor text = l2_normalize_rows(g.apply(batch.text_globals));
  const Tensor vision = l2_normalize_rows(batch.vision_globals);
  return scale_by(matmul(text, transpose(vision)), exp(logit_scale));
}

Tensor global_loss(const GlobalBatch& batch, const TextToVisionProjection& g, const Tensor& logit_scale) {
  const Tensor sim = global_similarity(batch, g, logit_scale);
  std::vector<std::size_t> targets(sim.rows());
  std::iota(targets.begin(), targets.end(), std::size_t{0});
  return scale(add(cross_entropy(sim, targets), cross_entropy(transpose(sim), targets)), Real(0.5));
}

Tensor build_classifier(const ConceptBatch& concepts, const TextToVisionProjection& g) {
  std::vector<bool> seen(concepts.num_classes, false);
  for (auto q : concepts.labels) {
    if (q >= concepts.num_classes) throw ContractError("concept label " + std::to_string(q) + " >= k");
    seen[q] = true;
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) throw ContractError("concept labels are not a dense indexing: class " + std::to_string(i) + " is empty");
  }
  return scatter_add_rows(g.apply(concepts.text), concepts.labels, concepts.num_classes);
}

Tensor concept_loss(const ConceptBatch& concepts, const Tensor& classifier) {
  if (classifier.rank() != 2 || classifier.rows() != concepts.num_classes ||
      classifier.cols() != concepts.vision.cols()) {
    throw DimensionError("classifier " + shape_string(classifier.shape()) + " does not match " +
                         std::to_string(concepts.num_classes) + " classes of width " +
                         std::to_string(concepts.vision.cols()));
  }
  const Tensor logits = matmul(l2_normalize_rows(concepts.vision), transpose(l2_normalize_rows(classifier)));
  return cross_entropy(logits, concepts.labels);
}

Tensor total_loss(const Tensor& global, const Tensor& concept_term, Real lambda) {
  if (lambda < Real(0)) throw ParameterError("lambda must be non-negative");
  return add(global, scale(concept_term, lambda));
}

std::optional<ConceptBatch> assemble_concept_batch(std::span<const EncodedPair> pairs, const TextToVisionProjection& g,
                                                   Real tau) {
  ConceptBatch out;
  std::vector<Tensor> text_rows;
  std::vector<std::size_t> owner;
  std::unordered_map<std::size_t, std::size_t> dense_ids;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto& pair = pairs[p];
    if (!pair.caption) throw ContractError("encoded pair without a caption");
    for (const auto& occ : pair.caption->concepts) {
      std::vector<std::size_t> rows = occ.token_indices;
      for (auto& r : rows) r += pair.text_offset;
      text_rows.push_back(text_concept_repr(pair.text_dense, rows));
      owner.push_back(p);
      auto [it, inserted] = dense_ids.emplace(occ.concept_id, dense_ids.size());
      out.labels.push_back(it->second);
      out.provenance.push_back({p, occ.concept_id});
    }
  }
  if (text_rows.empty()) return std::nullopt;
  out.num_classes = dense_ids.size();
  out.text = concat_rows(text_rows);

  const Tensor projected = g.apply(out.text);
  std::vector<Tensor> vision_rows;
  vision_rows.reserve(text_rows.size());
  for (std::size_t i = 0; i < text_rows.size(); ++i) {
    vision_rows.push_back(pool_visual_concept(pairs[owner[i]].vision.dense, row(projected, i), tau));
  }
  out.vision = concat_rows(vision_rows);
  return out;
}

ZSSEG_NAMESPACE_END
