#include "zsseg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "zsseg/error.hpp"

ZSSEG_NAMESPACE_BEGIN

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// 64-bit counters are stored as four exact 16-bit chunks in f32 tensors.
Tensor encode_u64(std::uint64_t x) {
  std::vector<Real> chunks;
  for (int i = 0; i < 4; ++i) chunks.push_back(static_cast<Real>((x >> (16 * i)) & 0xffffu));
  return Tensor::from({4}, chunks);
}

std::uint64_t decode_u64(const Tensor& t, const std::string& name) {
  if (t.rank() != 1 || t.numel() != 4) throw FormatError("checkpoint entry '" + name + "' is not a packed counter");
  std::uint64_t x = 0;
  for (int i = 0; i < 4; ++i) {
    const Real v = t.at(static_cast<std::size_t>(i));
    if (v < 0 || v > 65535 || v != std::floor(v)) throw FormatError("checkpoint entry '" + name + "' is corrupt");
    x |= static_cast<std::uint64_t>(v) << (16 * i);
  }
  return x;
}

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool decays(const NamedTensor& p) { return p.value.rank() >= 2; }

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) throw ParameterError("batch_size must be at least 1");
  if (!(lr >= 0.0)) throw ParameterError("lr must be non-negative");
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0) throw ParameterError("warmup_fraction must lie in [0, 1)");
  if (weight_decay < 0.0) throw ParameterError("weight_decay must be non-negative");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ParameterError("Adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ParameterError("eps must be positive");
  if (loss.lambda < 0) throw ParameterError("lambda must be non-negative");
  if (!(loss.tau > 0)) throw ParameterError("tau must be positive");
  if (clip_norm < 0.0) throw ParameterError("clip_norm must be non-negative");
}

std::size_t warmup_steps(const TrainConfig& config, std::size_t total_steps) {
  return static_cast<std::size_t>(std::llround(config.warmup_fraction * static_cast<double>(total_steps)));
}

double lr_at(const TrainConfig& config, std::size_t step, std::size_t total_steps) {
  if (step > total_steps) throw ContractError("lr_at: step beyond the schedule");
  const double peak = config.peak_lr();
  const std::size_t warm = warmup_steps(config, total_steps);
  if (step < warm) return peak * static_cast<double>(step) / static_cast<double>(warm);
  if (total_steps == warm) return peak;
  const double progress = static_cast<double>(step - warm) / static_cast<double>(total_steps - warm);
  return 0.5 * peak * (1.0 + std::cos(std::numbers::pi * progress));
}

Model Model::init(const TextEncoderConfig& text_config, std::size_t vision_dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Model m;
  m.text = TextEncoder::init(text_config, rng);
  m.proj = TextToVisionProjection::init(text_config.width, vision_dim, rng);
  m.logit_scale = Tensor::from({1}, {static_cast<Real>(kLogitScaleInit)}, true);
  return m;
}

TensorTable Model::parameters() const {
  TensorTable out = text.parameters();
  proj.append_parameters(out);
  out.push_back({"logit_scale", logit_scale});
  return out;
}

TensorTable Model::to_table() const {
  TensorTable out = parameters();
  const auto& c = text.config();
  out.push_back({"text.config", Tensor::from({6}, {Real(c.vocab_size), Real(c.width), Real(c.layers), Real(c.heads),
                                                   Real(c.context), Real(c.mlp_ratio)})});
  out.push_back({"proj.config", Tensor::from({2}, {Real(proj.vision_dim()), Real(proj.has_bias() ? 1 : 0)})});
  return out;
}

Model Model::from_table(const TensorTable& table) {
  const Tensor& tc = find_tensor(table, "text.config");
  const Tensor& pc = find_tensor(table, "proj.config");
  if (tc.numel() != 6 || pc.numel() != 2) throw FormatError("model table has malformed config entries");
  TextEncoderConfig c;
  c.vocab_size = static_cast<std::size_t>(tc.at(0));
  c.width = static_cast<std::size_t>(tc.at(1));
  c.layers = static_cast<std::size_t>(tc.at(2));
  c.heads = static_cast<std::size_t>(tc.at(3));
  c.context = static_cast<std::size_t>(tc.at(4));
  c.mlp_ratio = static_cast<std::size_t>(tc.at(5));
  std::mt19937_64 rng(0);
  Model m;
  m.text = TextEncoder::init(c, rng);
  m.proj = TextToVisionProjection::init(c.width, static_cast<std::size_t>(pc.at(0)), rng, pc.at(1) != 0);
  m.logit_scale = Tensor::from({1}, {Real(0)}, true);
  m.text.load_parameters(table);
  m.proj.load_parameters(table);
  assign_tensor(m.logit_scale, find_tensor(table, "logit_scale"), "logit_scale");
  return m;
}

Model Model::clone() const {
  TensorTable copy = to_table();
  for (auto& e : copy) e.value = e.value.detach();
  return from_table(copy);
}

TrainState TrainState::init(Model model, std::uint64_t seed) {
  TrainState s;
  s.model = std::move(model);
  s.seed = seed;
  for (const auto& p : s.model.parameters()) {
    s.m.emplace_back(p.value.numel(), Real(0));
    s.v.emplace_back(p.value.numel(), Real(0));
  }
  return s;
}

std::string to_json_line(const StepMetrics& m) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "{\"step\":%zu,\"lr\":%.9g,\"loss_g\":%.9g,\"loss_l\":%.9g,\"loss_tot\":%.9g,\"b_tilde\":%zu,\"k\":%zu,"
                "\"ms_vision\":%.3f,\"ms_text\":%.3f,\"ms_concepts\":%.3f,\"ms_losses\":%.3f,\"ms_update\":%.3f}",
                m.step, m.lr, m.loss_g, m.loss_l, m.loss_tot, m.b_tilde, m.k, m.ms_vision, m.ms_text, m.ms_concepts,
                m.ms_losses, m.ms_update);
  return buf;
}

StepMetrics train_step(TrainState& state, std::span<const TrainExample* const> batch, const TrainConfig& config,
                       const VisionProvider& provider, std::size_t total_steps) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  StepMetrics metrics;
  metrics.step = state.step;
  const Model& model = state.model;

  auto t0 = Clock::now();
  std::vector<VisionRepr> vision;
  std::vector<Tensor> vision_globals;
  vision.reserve(batch.size());
  for (const auto* ex : batch) {
    vision.push_back(encode_image(provider, ex->image, ex->id));
    vision_globals.push_back(vision.back().global);
  }
  metrics.ms_vision = ms_since(t0);

  t0 = Clock::now();
  std::vector<TokenizedCaption> captions;
  captions.reserve(batch.size());
  for (const auto* ex : batch) {
    captions.push_back(ex->caption);
    truncate_to_context(captions.back(), model.text.config().context);
  }
  const TextBatch text = model.text.encode_batch(captions);
  metrics.ms_text = ms_since(t0);

  t0 = Clock::now();
  std::vector<EncodedPair> pairs(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    pairs[i].vision = vision[i];
    pairs[i].text_dense = text.dense;
    pairs[i].text_offset = text.segments[i].begin;
    pairs[i].caption = &captions[i];
  }
  const auto concepts = assemble_concept_batch(pairs, model.proj, config.loss.tau);
  metrics.ms_concepts = ms_since(t0);

  t0 = Clock::now();
  const GlobalBatch global{concat_rows(vision_globals), text.globals};
  const Tensor loss_g = global_loss(global, model.proj, model.logit_scale);
  Tensor loss_tot = loss_g;
  metrics.loss_l = 0.0;
  if (concepts) {
    metrics.b_tilde = concepts->size();
    metrics.k = concepts->num_classes;
    const Tensor loss_l = concept_loss(*concepts, build_classifier(*concepts, model.proj));
    metrics.loss_l = loss_l.item();
    // With lambda = 0 the concept term is reported but kept out of the graph.
    if (config.loss.lambda > 0) loss_tot = total_loss(loss_g, loss_l, config.loss.lambda);
  }
  metrics.loss_g = loss_g.item();
  metrics.loss_tot = loss_tot.item();
  if (!std::isfinite(metrics.loss_tot) || !std::isfinite(metrics.loss_l)) {
    std::string ids;
    for (const auto* ex : batch) ids += (ids.empty() ? "" : ",") + ex->id;
    throw NumericError("non-finite loss at step " + std::to_string(state.step) + " (loss_g=" +
                       std::to_string(metrics.loss_g) + ", loss_l=" + std::to_string(metrics.loss_l) +
                       ") batch ids: " + ids);
  }
  const Gradients grads = backward(loss_tot);
  metrics.ms_losses = ms_since(t0);

  t0 = Clock::now();
  const TensorTable params = model.parameters();
  if (params.size() != state.m.size() || params.size() != state.v.size()) {
    throw ContractError("optimizer state does not match the parameter list");
  }
  double clip = 1.0;
  if (config.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& p : params) {
      if (!grads.contains(p.value)) continue;
      for (Real g : grads.of(p.value)) sq += double(g) * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > config.clip_norm) clip = config.clip_norm / norm;
  }
  const double lr = lr_at(config, std::min(state.step + 1, total_steps), total_steps);
  metrics.lr = lr;
  const double t = static_cast<double>(state.step + 1);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (!grads.contains(p.value)) continue;
    const auto g = grads.of(p.value);
    Tensor target = p.value;
    auto w = target.storage_for_update();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const double decay = decays(p) ? 1.0 - lr * config.weight_decay : 1.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = double(g[j]) * clip;
      m[j] = static_cast<Real>(config.beta1 * m[j] + (1.0 - config.beta1) * gj);
      v[j] = static_cast<Real>(config.beta2 * v[j] + (1.0 - config.beta2) * gj * gj);
      const double step = lr * (double(m[j]) / bc1) / (std::sqrt(double(v[j]) / bc2) + config.eps);
      w[j] = static_cast<Real>(double(w[j]) * decay - step);
    }
  }
  auto scale = state.model.logit_scale.storage_for_update();
  scale[0] = std::min(scale[0], static_cast<Real>(kLogitScaleMax));
  ++state.step;
  metrics.ms_update = ms_since(t0);
  return metrics;
}

std::size_t steps_per_epoch(std::size_t examples, std::size_t batch_size) {
  if (batch_size == 0) throw ParameterError("batch_size must be at least 1");
  return (examples + batch_size - 1) / batch_size;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t examples) {
  std::vector<std::size_t> order(examples);
  for (std::size_t i = 0; i < examples; ++i) order[i] = i;
  std::mt19937_64 rng(mix(mix(seed) ^ (0x5eedULL + epoch)));
  for (std::size_t i = examples; i > 1; --i) {
    std::swap(order[i - 1], order[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)]);
  }
  return order;
}

void train(TrainState& state, std::span<const TrainExample> examples, const TrainConfig& config,
           const VisionProvider& provider, const TrainHooks& hooks) {
  config.validate();
  if (examples.empty()) throw ContractError("train: no examples");
  const auto frozen = provider_weight_bytes(provider);
  auto check_frozen = [&] {
    if (provider_weight_bytes(provider) != frozen) throw ContractError("vision provider weights changed during training");
  };
  const std::size_t per_epoch = steps_per_epoch(examples.size(), config.batch_size);
  const std::size_t total = per_epoch * config.epochs;
  std::vector<const TrainExample*> batch;
  while (state.step < total) {
    const std::size_t epoch = state.step / per_epoch;
    const std::size_t within = state.step % per_epoch;
    const auto order = epoch_order(state.seed, epoch, examples.size());
    const std::size_t begin = within * config.batch_size;
    const std::size_t end = std::min(begin + config.batch_size, examples.size());
    batch.clear();
    for (std::size_t i = begin; i < end; ++i) batch.push_back(&examples[order[i]]);
    const StepMetrics m = train_step(state, batch, config, provider, total);
    if (hooks.on_step) hooks.on_step(m);
    if (config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0 && state.step < total) {
      check_frozen();
      if (hooks.on_checkpoint) hooks.on_checkpoint(state);
    }
  }
  check_frozen();
  if (hooks.on_checkpoint) hooks.on_checkpoint(state);
}

namespace {

TensorTable state_table(const TrainState& state) {
  TensorTable out = state.model.to_table();
  const TensorTable params = state.model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.push_back({"optim.m." + params[i].name, Tensor::from(params[i].value.shape(), state.m[i])});
    out.push_back({"optim.v." + params[i].name, Tensor::from(params[i].value.shape(), state.v[i])});
  }
  out.push_back({"state.step", encode_u64(state.step)});
  out.push_back({"state.seed", encode_u64(state.seed)});
  return out;
}

void restore_optimizer(TrainState& state, const TensorTable& table) {
  state.step = decode_u64(find_tensor(table, "state.step"), "state.step");
  state.seed = decode_u64(find_tensor(table, "state.seed"), "state.seed");
  const TensorTable params = state.model.parameters();
  state.m.clear();
  state.v.clear();
  for (const auto& p : params) {
    for (const char* kind : {"optim.m.", "optim.v."}) {
      const std::string name = kind + p.name;
      const Tensor& t = find_tensor(table, name);
      if (t.shape() != p.value.shape()) {
        throw ShapeError("checkpoint tensor '" + name + "' has shape " + shape_string(t.shape()) + ", expected " +
                         shape_string(p.value.shape()));
      }
      (kind[6] == 'm' ? state.m : state.v).push_back(t.to_vector());
    }
  }
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::string& path) { save_tensor_table(path, state_table(state)); }

TrainState load_checkpoint(const std::string& path) {
  const TensorTable table = load_tensor_table(path);
  TrainState state;
  state.model = Model::from_table(table);
  restore_optimizer(state, table);
  return state;
}

void load_checkpoint_into(TrainState& state, const std::string& path) {
  const TensorTable table = load_tensor_table(path);
  state.model.text.load_parameters(table);
  state.model.proj.load_parameters(table);
  assign_tensor(state.model.logit_scale, find_tensor(table, "logit_scale"), "logit_scale");
  restore_optimizer(state, table);
}

ZSSEG_NAMESPACE_END
