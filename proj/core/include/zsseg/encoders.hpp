#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "zsseg/bpe.hpp"
#include "zsseg/checkpoint.hpp"
#include "zsseg/image.hpp"
#include "zsseg/ops.hpp"

ZSSEG_NAMESPACE_BEGIN

/// Dense token features plus the [EOS] row as the caption's global vector.
struct TextRepr {
  Tensor dense;   // n_t x d_t
  Tensor global;  // d_t
};

/// Grid-ordered patch features plus a global vector.
struct VisionRepr {
  Tensor dense;   // n_v x d_v, row r * cols + c is patch (r, c)
  Tensor global;  // d_v
  std::size_t grid_rows = 0;
  std::size_t grid_cols = 0;
  std::size_t patch_size = 0;
};

/// Pre-LN transformer block weights; `w_qkv` packs query, key and value.
struct TransformerBlock {
  Tensor ln1_gain, ln1_bias;
  Tensor w_qkv, b_qkv;
  Tensor w_out, b_out;
  Tensor ln2_gain, ln2_bias;
  Tensor w_fc, b_fc;
  Tensor w_proj, b_proj;

  static TransformerBlock init(std::size_t width, std::size_t mlp_width, Real stddev, std::mt19937_64& rng,
                               bool trainable);
  void append_parameters(const std::string& prefix, TensorTable& out) const;
  void bind_parameters(const std::string& prefix, const TensorTable& table);
};

/// Runs one block over packed sequences.
Tensor transformer_block(const TransformerBlock& block, const Tensor& x, std::span<const Segment> segments,
                         std::size_t heads, bool causal);

// ---------------------------------------------------------------- text ----

struct TextEncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t width = 32;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t context = 64;
  std::size_t mlp_ratio = 4;
};

/// Packed batch output: all token rows stacked, one segment per caption.
struct TextBatch {
  Tensor dense;    // sum(n_t) x d_t
  Tensor globals;  // b x d_t
  std::vector<Segment> segments;
  std::size_t truncated = 0;
};

/// Causal text transformer: token + learned position embeddings, `layers`
/// pre-LN blocks, final layer norm. All weights are trainable.
class TextEncoder {
 public:
  TextEncoder() = default;
  static TextEncoder init(const TextEncoderConfig& config, std::mt19937_64& rng);

  const TextEncoderConfig& config() const { return config_; }

  /// Captions longer than the context are cut to context - 1 tokens plus [EOS].
  TextBatch encode_batch(std::span<const TokenizedCaption> captions) const;
  TextRepr encode(const TokenizedCaption& caption) const;

  TensorTable parameters() const;
  void load_parameters(const TensorTable& table);

 private:
  TextEncoderConfig config_;
  Tensor token_embedding_;
  Tensor position_embedding_;
  std::vector<TransformerBlock> blocks_;
  Tensor final_gain_, final_bias_;
};

// -------------------------------------------------------------- vision ----

/// Deterministic per-patch descriptor: mean RGB, RGB standard deviation,
/// normalised grid position, 4-bin gradient orientation histogram, zero
/// padding up to `dim`. Channels are in [0, 1].
struct HandcraftedFeaturizer {
  std::size_t patch_size = 8;
  std::size_t dim = 32;
};

struct TinyVitConfig {
  std::size_t patch_size = 8;
  std::size_t width = 32;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t max_grid = 16;
};

/// Small ViT with a [CLS] token whose weights are loaded from a tensor table
/// and never receive gradients.
class TinyFrozenVit {
 public:
  TinyFrozenVit() = default;
  static TinyFrozenVit init(const TinyVitConfig& config, std::uint64_t seed);
  static TinyFrozenVit load(const std::string& path);
  void save(const std::string& path) const;

  const TinyVitConfig& config() const { return config_; }
  VisionRepr encode(const Image& image) const;
  TensorTable parameters() const;

 private:
  TinyVitConfig config_;
  Tensor patch_weight_, patch_bias_;
  Tensor cls_token_;
  Tensor position_embedding_;  // (1 + max_grid^2) x width
  std::vector<TransformerBlock> blocks_;
  Tensor final_gain_, final_bias_;
};

/// Features computed offline, keyed by image id ("SZSF" file).
class PrecomputedFeatures {
 public:
  struct Entry {
    std::vector<Real> dense;
    std::vector<Real> global;
  };

  PrecomputedFeatures() = default;
  PrecomputedFeatures(std::size_t patches, std::size_t dim) : patches_(patches), dim_(dim) {}

  void add(const std::string& id, Entry entry);
  VisionRepr lookup(std::string_view id) const;
  std::size_t patches() const { return patches_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }

  void save(const std::string& path) const;
  static PrecomputedFeatures load(const std::string& path);

 private:
  std::size_t patches_ = 0;
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::unordered_map<std::string, Entry> entries_;
};

using VisionProvider = std::variant<HandcraftedFeaturizer, TinyFrozenVit, PrecomputedFeatures>;

VisionRepr handcrafted_features(const Image& image, std::size_t patch_size, std::size_t dim);

/// `image_id` is only consulted by the precomputed provider.
VisionRepr encode_image(const VisionProvider& provider, const Image& image, std::string_view image_id = {});
std::size_t vision_dim(const VisionProvider& provider);
std::size_t vision_patch_size(const VisionProvider& provider);
/// Raw bytes of every provider weight, for frozen-weight checks.
std::vector<std::uint8_t> provider_weight_bytes(const VisionProvider& provider);

ZSSEG_NAMESPACE_END
