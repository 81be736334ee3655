#ifndef FLIP_TRAINER_HPP_
#define FLIP_TRAINER_HPP_

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "flip/config.hpp"
#include "flip/dataset.hpp"
#include "flip/encoders.hpp"
#include "flip/objective.hpp"
#include "flip/tokenizer.hpp"

namespace flip {

using Model = ClipModel<float>;
using ParamArray = Eigen::ArrayXf;

/// lr = base_lr * batch_size / 256.
double effective_lr(const TrainConfig& config);

/// Linear warmup to effective_lr, then cosine decay to zero at total_samples.
/// `samples` counts from the start of the schedule.
double lr_at(std::int64_t samples, const TrainConfig& config);

struct TrainState {
  Model model;
  std::vector<ParamArray> first_moment;
  std::vector<ParamArray> second_moment;
  std::int64_t step = 0;
  std::int64_t samples_seen = 0;
  /// samples_seen at which the active lr schedule starts (non-zero after
  /// switching to unmasked tuning).
  std::int64_t schedule_origin = 0;
  /// Steps since the moments were last reset; drives bias correction.
  std::int64_t optimizer_steps = 0;

  TrainState() = default;
  TrainState(const TrainState& other);
  TrainState& operator=(const TrainState& other);
  TrainState(TrainState&&) = default;
  TrainState& operator=(TrainState&&) = default;

  static TrainState init(const TrainConfig& config);
  void reset_moments();
};

struct AdamWSettings {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.0;
  double eps = 1e-8;

  static AdamWSettings from(const TrainConfig& config) {
    return {config.betas[0], config.betas[1], config.weight_decay, 1e-8};
  }
};

struct AdamWOutcome {
  bool applied = false;
  std::string message;
};

/// Bias-corrected Adam with decoupled weight decay. Parameters flagged as
/// non-decaying (the logit scale) skip the decay. A non-finite gradient
/// leaves the state untouched and reports which parameter carried it.
AdamWOutcome adamw_step(TrainState& state, const std::vector<ParamArray>& grads, double lr, const AdamWSettings& settings);

/// Inputs of one optimization step.
struct TrainBatch {
  ImageBatch images;
  TokenizedBatch text;
  std::vector<std::uint64_t> image_mask_seeds;
  std::vector<std::uint64_t> text_mask_seeds;
};

struct StepReport {
  double contrastive = 0.0;
  std::optional<double> reconstruction;
  double total = 0.0;
  double lr = 0.0;
  Index image_tokens = 0;  // visible patches per image
  Index text_tokens = 0;
};

/// masks -> both towers -> projection -> InfoNCE (+ reconstruction) ->
/// backward -> AdamW -> logit scale clamp. Throws NumericError on a
/// non-finite loss or gradient, leaving the state unchanged.
StepReport train_step(TrainState& state, const TrainConfig& config, const TrainBatch& batch);

/// Configuration of the unmasked tuning phase derived from a pre-training
/// configuration: no image masking, base lr divided by 100, warmup at 20%
/// of a phase lasting tune_fraction of pre-training.
TrainConfig tuning_config(const TrainConfig& pretrain);

/// Deterministic data order and batch assembly over a dataset.
class Trainer {
 public:
  Trainer(TrainConfig config, const Dataset& train, Tokenizer tokenizer);
  Trainer(TrainConfig config, const Dataset& train, Tokenizer tokenizer, TrainState state);

  TrainState& state() { return state_; }
  const TrainState& state() const { return state_; }
  const TrainConfig& config() const { return active_; }

  /// Batch for the step starting at the current samples_seen.
  TrainBatch next_batch() const;
  StepReport step();
  /// Steps while samples_seen - schedule_origin < the active total_samples.
  void run(const std::function<void(const StepReport&, const TrainState&)>& on_step = {});

  /// Switches to the tuning configuration, resets the optimizer moments and
  /// runs the tuning phase.
  void unmasked_tune(const std::function<void(const StepReport&, const TrainState&)>& on_step = {});

  std::int64_t steps_per_epoch() const;

 private:
  const std::vector<Index>& permutation(std::int64_t epoch) const;

  TrainConfig active_;
  const Dataset& train_;
  Tokenizer tokenizer_;
  TokenizedBatch tokens_;
  TrainState state_;
  mutable std::int64_t cached_epoch_ = -1;
  mutable std::vector<Index> cached_order_;
};

/// Standalone tuning entry point: returns the tuned copy of `state`.
TrainState unmasked_tune(TrainState state, const TrainConfig& pretrain, const Dataset& train, const Tokenizer& tokenizer);

}  // namespace flip

#endif  // FLIP_TRAINER_HPP_
