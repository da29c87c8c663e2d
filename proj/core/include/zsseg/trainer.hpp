#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "zsseg/alignment.hpp"
#include "zsseg/checkpoint.hpp"
#include "zsseg/encoders.hpp"

ZSSEG_NAMESPACE_BEGIN

struct TrainConfig {
  std::size_t epochs = 5;
  std::size_t batch_size = 256;
  double lr = 5e-4;  // before the batch_size / 256 scaling
  double warmup_fraction = 0.1;
  double weight_decay = 0.2;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-6;
  std::uint64_t seed = 0;
  LossConfig loss;
  std::size_t checkpoint_every = 0;  // steps; 0 disables periodic checkpoints
  double clip_norm = 0.0;            // global gradient norm; 0 disables clipping

  void validate() const;
  double peak_lr() const { return lr * static_cast<double>(batch_size) / 256.0; }
};

std::size_t warmup_steps(const TrainConfig& config, std::size_t total_steps);
/// Linear warmup to peak_lr(), then cosine decay to zero at total_steps.
double lr_at(const TrainConfig& config, std::size_t step, std::size_t total_steps);

/// Everything that is trained: text tower, projection g, log logit scale.
struct Model {
  TextEncoder text;
  TextToVisionProjection proj;
  Tensor logit_scale;  // rank-1, one element

  static Model init(const TextEncoderConfig& text_config, std::size_t vision_dim, std::uint64_t seed);
  /// Named trainable tensors in a fixed order.
  TensorTable parameters() const;
  /// Parameters plus the architecture description needed to rebuild the model.
  TensorTable to_table() const;
  static Model from_table(const TensorTable& table);
  /// Independent copy; the original and the copy share no storage.
  Model clone() const;
};

struct TrainState {
  Model model;
  std::size_t step = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<Real>> m;  // first moments, aligned with model.parameters()
  std::vector<std::vector<Real>> v;  // second moments

  static TrainState init(Model model, std::uint64_t seed);
};

struct TrainExample {
  std::string id;
  Image image;
  TokenizedCaption caption;
};

struct StepMetrics {
  std::size_t step = 0;
  double lr = 0.0;
  double loss_g = 0.0;
  double loss_l = 0.0;
  double loss_tot = 0.0;
  std::size_t b_tilde = 0;
  std::size_t k = 0;
  double ms_vision = 0.0;
  double ms_text = 0.0;
  double ms_concepts = 0.0;
  double ms_losses = 0.0;
  double ms_update = 0.0;
};

std::string to_json_line(const StepMetrics& m);

/// One optimisation step on `batch`. Raises NumericError naming the batch ids
/// when the loss is not finite. `total_steps` drives the schedule.
StepMetrics train_step(TrainState& state, std::span<const TrainExample* const> batch, const TrainConfig& config,
                       const VisionProvider& provider, std::size_t total_steps);

std::size_t steps_per_epoch(std::size_t examples, std::size_t batch_size);
/// Shuffled example order for an epoch, a pure function of (seed, epoch).
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t examples);

struct TrainHooks {
  std::function<void(const StepMetrics&)> on_step;
  std::function<void(const TrainState&)> on_checkpoint;
};

/// Runs the remaining steps of the configured schedule, resuming from
/// state.step. Vision weights are compared against their initial bytes at
/// every checkpoint and at the end.
void train(TrainState& state, std::span<const TrainExample> examples, const TrainConfig& config,
           const VisionProvider& provider, const TrainHooks& hooks = {});

void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);
/// Loads checkpoint tensors into an existing state, checking every shape.
void load_checkpoint_into(TrainState& state, const std::string& path);

ZSSEG_NAMESPACE_END
