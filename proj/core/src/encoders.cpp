#include "zsseg/encoders.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "zsseg/error.hpp"

ZSSEG_NAMESPACE_BEGIN

namespace {

constexpr Real kInitStd = Real(0.02);

Tensor ones(std::size_t n, bool trainable) { return Tensor::full({n}, Real(1), trainable); }
Tensor zeros(std::size_t n, bool trainable) { return Tensor::zeros({n}, trainable); }

void bind_tensor(Tensor& target, const TensorTable& table, const std::string& name) {
  const Tensor& src = find_tensor(table, name);
  assign_tensor(target, src, name);
}

void append_bytes(std::vector<std::uint8_t>& out, const Tensor& t) {
  for (Real v : t.data()) {
    const float f = static_cast<float>(v);
    std::uint8_t b[sizeof(float)];
    std::memcpy(b, &f, sizeof(float));
    out.insert(out.end(), b, b + sizeof(float));
  }
}

}  // namespace

TransformerBlock TransformerBlock::init(std::size_t width, std::size_t mlp_width, Real stddev, std::mt19937_64& rng,
                                        bool trainable) {
  TransformerBlock b;
  b.ln1_gain = ones(width, trainable);
  b.ln1_bias = zeros(width, trainable);
  b.w_qkv = Tensor::randn({width, 3 * width}, stddev, rng, trainable);
  b.b_qkv = zeros(3 * width, trainable);
  b.w_out = Tensor::randn({width, width}, stddev, rng, trainable);
  b.b_out = zeros(width, trainable);
  b.ln2_gain = ones(width, trainable);
  b.ln2_bias = zeros(width, trainable);
  b.w_fc = Tensor::randn({width, mlp_width}, stddev, rng, trainable);
  b.b_fc = zeros(mlp_width, trainable);
  b.w_proj = Tensor::randn({mlp_width, width}, stddev, rng, trainable);
  b.b_proj = zeros(width, trainable);
  return b;
}

void TransformerBlock::append_parameters(const std::string& prefix, TensorTable& out) const {
  out.push_back({prefix + "ln1.gain", ln1_gain});
  out.push_back({prefix + "ln1.bias", ln1_bias});
  out.push_back({prefix + "attn.w_qkv", w_qkv});
  out.push_back({prefix + "attn.b_qkv", b_qkv});
  out.push_back({prefix + "attn.w_out", w_out});
  out.push_back({prefix + "attn.b_out", b_out});
  out.push_back({prefix + "ln2.gain", ln2_gain});
  out.push_back({prefix + "ln2.bias", ln2_bias});
  out.push_back({prefix + "mlp.w_fc", w_fc});
  out.push_back({prefix + "mlp.b_fc", b_fc});
  out.push_back({prefix + "mlp.w_proj", w_proj});
  out.push_back({prefix + "mlp.b_proj", b_proj});
}

void TransformerBlock::bind_parameters(const std::string& prefix, const TensorTable& table) {
  bind_tensor(ln1_gain, table, prefix + "ln1.gain");
  bind_tensor(ln1_bias, table, prefix + "ln1.bias");
  bind_tensor(w_qkv, table, prefix + "attn.w_qkv");
  bind_tensor(b_qkv, table, prefix + "attn.b_qkv");
  bind_tensor(w_out, table, prefix + "attn.w_out");
  bind_tensor(b_out, table, prefix + "attn.b_out");
  bind_tensor(ln2_gain, table, prefix + "ln2.gain");
  bind_tensor(ln2_bias, table, prefix + "ln2.bias");
  bind_tensor(w_fc, table, prefix + "mlp.w_fc");
  bind_tensor(b_fc, table, prefix + "mlp.b_fc");
  bind_tensor(w_proj, table, prefix + "mlp.w_proj");
  bind_tensor(b_proj, table, prefix + "mlp.b_proj");
}

Tensor transformer_block(const TransformerBlock& block, const Tensor& x, std::span<const Segment> segments,
                         std::size_t heads, bool causal) {
  const std::size_t width = x.cols();
  if (heads == 0 || width % heads != 0) {
    throw ParameterError("width " + std::to_string(width) + " is not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t head_dim = width / heads;
  const Tensor h = layer_norm(x, block.ln1_gain, block.ln1_bias);
  const Tensor qkv = add_bias(matmul(h, block.w_qkv), block.b_qkv);
  std::vector<Tensor> head_out;
  head_out.reserve(heads);
  for (std::size_t i = 0; i < heads; ++i) {
    const Tensor q = slice_cols(qkv, i * head_dim, head_dim);
    const Tensor k = slice_cols(qkv, width + i * head_dim, head_dim);
    const Tensor v = slice_cols(qkv, 2 * width + i * head_dim, head_dim);
    head_out.push_back(attention(q, k, v, segments, causal));
  }
  const Tensor attended = heads == 1 ? head_out.front() : concat_cols(head_out);
  const Tensor x1 = add(x, add_bias(matmul(attended, block.w_out), block.b_out));
  const Tensor h2 = layer_norm(x1, block.ln2_gain, block.ln2_bias);
  const Tensor mlp = add_bias(matmul(gelu(add_bias(matmul(h2, block.w_fc), block.b_fc)), block.w_proj), block.b_proj);
  return add(x1, mlp);
}

// ---------------------------------------------------------------- text ----

TextEncoder TextEncoder::init(const TextEncoderConfig& config, std::mt19937_64& rng) {
  if (config.vocab_size == 0) throw ParameterError("text encoder: vocab_size must be positive");
  if (config.context < 2) throw ParameterError("text encoder: context must be at least 2");
  if (config.heads == 0 || config.width % config.heads != 0) {
    throw ParameterError("text encoder: width must be divisible by heads");
  }
  TextEncoder enc;
  enc.config_ = config;
  enc.token_embedding_ = Tensor::randn({config.vocab_size, config.width}, kInitStd, rng, true);
  enc.position_embedding_ = Tensor::randn({config.context, config.width}, kInitStd, rng, true);
  for (std::size_t l = 0; l < config.layers; ++l) {
    enc.blocks_.push_back(TransformerBlock::init(config.width, config.mlp_ratio * config.width, kInitStd, rng, true));
  }
  enc.final_gain_ = ones(config.width, true);
  enc.final_bias_ = zeros(config.width, true);
  return enc;
}

TextBatch TextEncoder::encode_batch(std::span<const TokenizedCaption> captions) const {
  if (captions.empty()) throw ContractError("encode_batch: no captions");
  TextBatch out;
  std::vector<std::size_t> ids, positions, eos_rows;
  for (const auto& caption : captions) {
    if (caption.ids.empty()) throw ContractError("encode_batch: empty token sequence");
    std::size_t n = caption.ids.size();
    const bool truncate = n > config_.context;
    if (truncate) {
      ++out.truncated;
      n = config_.context;
    }
    out.segments.push_back({ids.size(), n});
    for (std::size_t i = 0; i + 1 < n; ++i) {
      ids.push_back(caption.ids[i]);
      positions.push_back(i);
    }
    ids.push_back(caption.ids.back());
    positions.push_back(n - 1);
    eos_rows.push_back(ids.size() - 1);
  }
  Tensor x = add(embedding(token_embedding_, ids), embedding(position_embedding_, positions));
  for (const auto& block : blocks_) x = transformer_block(block, x, out.segments, config_.heads, true);
  out.dense = layer_norm(x, final_gain_, final_bias_);
  out.globals = gather_rows(out.dense, eos_rows);
  return out;
}

TextRepr TextEncoder::encode(const TokenizedCaption& caption) const {
  auto batch = encode_batch(std::span<const TokenizedCaption>(&caption, 1));
  return {batch.dense, row(batch.globals, 0)};
}

TensorTable TextEncoder::parameters() const {
  TensorTable out;
  out.push_back({"text.token_embedding", token_embedding_});
  out.push_back({"text.position_embedding", position_embedding_});
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    blocks_[l].append_parameters("text.block" + std::to_string(l) + ".", out);
  }
  out.push_back({"text.final_ln.gain", final_gain_});
  out.push_back({"text.final_ln.bias", final_bias_});
  return out;
}

void TextEncoder::load_parameters(const TensorTable& table) {
  bind_tensor(token_embedding_, table, "text.token_embedding");
  bind_tensor(position_embedding_, table, "text.position_embedding");
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    blocks_[l].bind_parameters("text.block" + std::to_string(l) + ".", table);
  }
  bind_tensor(final_gain_, table, "text.final_ln.gain");
  bind_tensor(final_bias_, table, "text.final_ln.bias");
}

// -------------------------------------------------------------- vision ----

VisionRepr handcrafted_features(const Image& image, std::size_t patch_size, std::size_t dim) {
  if (dim < 12) throw ParameterError("handcrafted features need at least 12 dimensions, got " + std::to_string(dim));
  if (patch_size == 0 || image.height == 0 || image.width == 0 || image.height % patch_size != 0 ||
      image.width % patch_size != 0) {
    throw DimensionError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                         " is not divisible into " + std::to_string(patch_size) + "-pixel patches");
  }
  const std::size_t rows = image.height / patch_size, cols = image.width / patch_size;
  const std::size_t n = rows * cols;
  const double pixels = static_cast<double>(patch_size * patch_size);
  std::vector<Real> dense(n * dim, Real(0));
  std::vector<double> gray(patch_size * patch_size);

  for (std::size_t pr = 0; pr < rows; ++pr) {
    for (std::size_t pc = 0; pc < cols; ++pc) {
      Real* f = &dense[(pr * cols + pc) * dim];
      double sum[3] = {0, 0, 0}, sq[3] = {0, 0, 0};
      for (std::size_t y = 0; y < patch_size; ++y) {
        for (std::size_t x = 0; x < patch_size; ++x) {
          double g = 0.0;
          for (std::size_t ch = 0; ch < 3; ++ch) {
            const double v = image.at(pr * patch_size + y, pc * patch_size + x, ch) / 255.0;
            sum[ch] += v;
            sq[ch] += v * v;
            g += v;
          }
          gray[y * patch_size + x] = g / 3.0;
        }
      }
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double m = sum[ch] / pixels;
        f[ch] = static_cast<Real>(m);
        f[3 + ch] = static_cast<Real>(std::sqrt(std::max(0.0, sq[ch] / pixels - m * m)));
      }
      f[6] = static_cast<Real>((static_cast<double>(pr) + 0.5) / static_cast<double>(rows));
      f[7] = static_cast<Real>((static_cast<double>(pc) + 0.5) / static_cast<double>(cols));

      // Central differences clamped to the patch, so neighbours never leak in.
      double hist[4] = {0, 0, 0, 0};
      for (std::size_t y = 0; y < patch_size; ++y) {
        for (std::size_t x = 0; x < patch_size; ++x) {
          const std::size_t xl = x == 0 ? 0 : x - 1, xr = std::min(x + 1, patch_size - 1);
          const std::size_t yu = y == 0 ? 0 : y - 1, yd = std::min(y + 1, patch_size - 1);
          const double gx = (gray[y * patch_size + xr] - gray[y * patch_size + xl]) / std::max<double>(1, xr - xl);
          const double gy = (gray[yd * patch_size + x] - gray[yu * patch_size + x]) / std::max<double>(1, yd - yu);
          const double mag = std::hypot(gx, gy);
          if (mag == 0.0) continue;
          double angle = std::atan2(gy, gx);
          if (angle < 0) angle += std::numbers::pi;
          auto bin = static_cast<std::size_t>(angle / (std::numbers::pi / 4.0));
          hist[std::min<std::size_t>(bin, 3)] += mag;
        }
      }
      for (std::size_t b = 0; b < 4; ++b) f[8 + b] = static_cast<Real>(hist[b] / pixels);
    }
  }

  std::vector<Real> global(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += dense[i * dim + j];
    global[j] = static_cast<Real>(acc / static_cast<double>(n));
  }
  VisionRepr out;
  out.dense = Tensor::from({n, dim}, std::move(dense));
  out.global = Tensor::from({dim}, std::move(global));
  out.grid_rows = rows;
  out.grid_cols = cols;
  out.patch_size = patch_size;
  return out;
}

TinyFrozenVit TinyFrozenVit::init(const TinyVitConfig& config, std::uint64_t seed) {
  if (config.heads == 0 || config.width % config.heads != 0) throw ParameterError("tiny vit: width must be divisible by heads");
  std::mt19937_64 rng(seed);
  TinyFrozenVit vit;
  vit.config_ = config;
  const std::size_t patch_dim = config.patch_size * config.patch_size * 3;
  const Real patch_std = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(patch_dim)));
  vit.patch_weight_ = Tensor::randn({patch_dim, config.width}, patch_std, rng);
  vit.patch_bias_ = zeros(config.width, false);
  vit.cls_token_ = Tensor::randn({1, config.width}, kInitStd, rng);
  vit.position_embedding_ = Tensor::randn({1 + config.max_grid * config.max_grid, config.width}, kInitStd, rng);
  const Real block_std = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(config.width)));
  for (std::size_t l = 0; l < config.layers; ++l) {
    vit.blocks_.push_back(TransformerBlock::init(config.width, 4 * config.width, block_std, rng, false));
  }
  vit.final_gain_ = ones(config.width, false);
  vit.final_bias_ = zeros(config.width, false);
  return vit;
}

TensorTable TinyFrozenVit::parameters() const {
  TensorTable out;
  out.push_back({"vit.config", Tensor::from({5}, {static_cast<Real>(config_.patch_size), static_cast<Real>(config_.width),
                                                  static_cast<Real>(config_.layers), static_cast<Real>(config_.heads),
                                                  static_cast<Real>(config_.max_grid)})});
  out.push_back({"vit.patch.weight", patch_weight_});
  out.push_back({"vit.patch.bias", patch_bias_});
  out.push_back({"vit.cls", cls_token_});
  out.push_back({"vit.position_embedding", position_embedding_});
  for (std::size_t l = 0; l < blocks_.size(); ++l) blocks_[l].append_parameters("vit.block" + std::to_string(l) + ".", out);
  out.push_back({"vit.final_ln.gain", final_gain_});
  out.push_back({"vit.final_ln.bias", final_bias_});
  return out;
}

void TinyFrozenVit::save(const std::string& path) const { save_tensor_table(path, parameters()); }

TinyFrozenVit TinyFrozenVit::load(const std::string& path) {
  const TensorTable table = load_tensor_table(path);
  const auto cfg = find_tensor(table, "vit.config").to_vector();
  if (cfg.size() != 5) throw FormatError("vit.config must hold 5 values");
  TinyVitConfig config;
  config.patch_size = static_cast<std::size_t>(cfg[0]);
  config.width = static_cast<std::size_t>(cfg[1]);
  config.layers = static_cast<std::size_t>(cfg[2]);
  config.heads = static_cast<std::size_t>(cfg[3]);
  config.max_grid = static_cast<std::size_t>(cfg[4]);
  TinyFrozenVit vit = init(config, 0);
  bind_tensor(vit.patch_weight_, table, "vit.patch.weight");
  bind_tensor(vit.patch_bias_, table, "vit.patch.bias");
  bind_tensor(vit.cls_token_, table, "vit.cls");
  bind_tensor(vit.position_embedding_, table, "vit.position_embedding");
  for (std::size_t l = 0; l < vit.blocks_.size(); ++l) vit.blocks_[l].bind_parameters("vit.block" + std::to_string(l) + ".", table);
  bind_tensor(vit.final_gain_, table, "vit.final_ln.gain");
  bind_tensor(vit.final_bias_, table, "vit.final_ln.bias");
  return vit;
}

VisionRepr TinyFrozenVit::encode(const Image& image) const {
  const std::size_t p = config_.patch_size;
  if (image.height == 0 || image.width == 0 || image.height % p != 0 || image.width % p != 0) {
    throw DimensionError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                         " is not divisible into " + std::to_string(p) + "-pixel patches");
  }
  const std::size_t rows = image.height / p, cols = image.width / p;
  if (rows > config_.max_grid || cols > config_.max_grid) {
    throw DimensionError("patch grid " + std::to_string(rows) + "x" + std::to_string(cols) + " exceeds the ViT's " +
                         std::to_string(config_.max_grid) + "x" + std::to_string(config_.max_grid) + " positions");
  }
  const std::size_t n = rows * cols, patch_dim = p * p * 3;
  std::vector<Real> patches(n * patch_dim);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x)
          for (std::size_t ch = 0; ch < 3; ++ch)
            patches[(r * cols + c) * patch_dim + (y * p + x) * 3 + ch] =
                static_cast<Real>(image.at(r * p + y, c * p + x, ch) / 255.0);

  const Tensor embedded = add_bias(matmul(Tensor::from({n, patch_dim}, std::move(patches)), patch_weight_), patch_bias_);
  const Tensor parts[] = {cls_token_, embedded};
  std::vector<std::size_t> pos{0};
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) pos.push_back(1 + r * config_.max_grid + c);
  Tensor x = add(concat_rows(parts), gather_rows(position_embedding_, pos));
  const Segment seg[] = {{0, n + 1}};
  for (const auto& block : blocks_) x = transformer_block(block, x, seg, config_.heads, false);
  x = layer_norm(x, final_gain_, final_bias_);

  std::vector<std::size_t> patch_rows(n);
  for (std::size_t i = 0; i < n; ++i) patch_rows[i] = i + 1;
  VisionRepr out;
  out.dense = gather_rows(x, patch_rows).detach();
  out.global = row(x, 0).detach();
  out.grid_rows = rows;
  out.grid_cols = cols;
  out.patch_size = p;
  return out;
}

void PrecomputedFeatures::add(const std::string& id, Entry entry) {
  if (entry.dense.size() != patches_ * dim_ || entry.global.size() != dim_) {
    throw DimensionError("precomputed features for '" + id + "' do not match " + std::to_string(patches_) + "x" +
                         std::to_string(dim_));
  }
  if (!entries_.count(id)) ids_.push_back(id);
  entries_[id] = std::move(entry);
}

VisionRepr PrecomputedFeatures::lookup(std::string_view id) const {
  auto it = entries_.find(std::string(id));
  if (it == entries_.end()) throw LookupError("no precomputed features for image id '" + std::string(id) + "'");
  VisionRepr out;
  out.dense = Tensor::from({patches_, dim_}, it->second.dense);
  out.global = Tensor::from({dim_}, it->second.global);
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(patches_))));
  if (side * side == patches_) {
    out.grid_rows = out.grid_cols = side;
  } else {
    out.grid_rows = 1;
    out.grid_cols = patches_;
  }
  return out;
}

void PrecomputedFeatures::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os.write("SZSF", 4);
  le::put_u32(os, 1);
  le::put_u32(os, static_cast<std::uint32_t>(ids_.size()));
  le::put_u32(os, static_cast<std::uint32_t>(patches_));
  le::put_u32(os, static_cast<std::uint32_t>(dim_));
  for (const auto& id : ids_) {
    const auto& e = entries_.at(id);
    le::put_u32(os, static_cast<std::uint32_t>(id.size()));
    os.write(id.data(), static_cast<std::streamsize>(id.size()));
    for (Real v : e.dense) le::put_f32(os, static_cast<float>(v));
    for (Real v : e.global) le::put_f32(os, static_cast<float>(v));
  }
  if (!os) throw IoError("failed writing " + path);
}

PrecomputedFeatures PrecomputedFeatures::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "SZSF", 4) != 0) throw FormatError(path + ": bad feature file magic (expected SZSF)");
  if (const auto v = le::get_u32(is); v != 1) throw FormatError(path + ": unsupported feature file version " + std::to_string(v));
  const auto count = le::get_u32(is);
  const auto patches = le::get_u32(is);
  const auto dim = le::get_u32(is);
  PrecomputedFeatures out(patches, dim);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = le::get_u32(is);
    std::string id(len, '\0');
    if (!is.read(id.data(), len)) throw FormatError(path + ": truncated feature file");
    Entry e;
    e.dense.resize(out.patches_ * out.dim_);
    e.global.resize(out.dim_);
    for (auto& v : e.dense) v = static_cast<Real>(le::get_f32(is));
    for (auto& v : e.global) v = static_cast<Real>(le::get_f32(is));
    out.add(id, std::move(e));
  }
  return out;
}

VisionRepr encode_image(const VisionProvider& provider, const Image& image, std::string_view image_id) {
  if (const auto* h = std::get_if<HandcraftedFeaturizer>(&provider)) return handcrafted_features(image, h->patch_size, h->dim);
  if (const auto* v = std::get_if<TinyFrozenVit>(&provider)) return v->encode(image);
  return std::get<PrecomputedFeatures>(provider).lookup(image_id);
}

std::size_t vision_dim(const VisionProvider& provider) {
  if (const auto* h = std::get_if<HandcraftedFeaturizer>(&provider)) return h->dim;
  if (const auto* v = std::get_if<TinyFrozenVit>(&provider)) return v->config().width;
  return std::get<PrecomputedFeatures>(provider).dim();
}

std::size_t vision_patch_size(const VisionProvider& provider) {
  if (const auto* h = std::get_if<HandcraftedFeaturizer>(&provider)) return h->patch_size;
  if (const auto* v = std::get_if<TinyFrozenVit>(&provider)) return v->config().patch_size;
  return 0;
}

std::vector<std::uint8_t> provider_weight_bytes(const VisionProvider& provider) {
  std::vector<std::uint8_t> out;
  if (const auto* v = std::get_if<TinyFrozenVit>(&provider)) {
    for (const auto& [name, t] : v->parameters()) append_bytes(out, t);
  }
  return out;
}

ZSSEG_NAMESPACE_END
