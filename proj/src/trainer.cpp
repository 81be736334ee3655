#include "flip/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flip/errors.hpp"
#include "flip/random.hpp"

namespace flip {

namespace {

constexpr std::uint64_t kImageMaskStream = 1;
constexpr std::uint64_t kTextMaskStream = 2;
constexpr std::uint64_t kShuffleStream = 3;

// Tuning lr relative to pre-training (4e-8 against 4e-6 at scale).
constexpr double kTuneLrFactor = 0.01;
// Tuning warmup as a fraction of the tuning phase.
constexpr double kTuneWarmupFraction = 0.2;

}  // namespace

double effective_lr(const TrainConfig& config) {
  if (config.batch_size <= 0) throw ConfigError("batch_size must be positive");
  return config.base_lr * static_cast<double>(config.batch_size) / 256.0;
}

double lr_at(std::int64_t samples, const TrainConfig& config) {
  const double peak = effective_lr(config);
  const auto warmup = config.warmup_samples;
  const auto total = config.total_samples;
  if (samples <= 0) return warmup > 0 ? 0.0 : (total > 0 ? peak : 0.0);
  if (samples >= total) return 0.0;
  if (samples < warmup) return peak * static_cast<double>(samples) / static_cast<double>(warmup);
  const double progress = static_cast<double>(samples - warmup) / static_cast<double>(total - warmup);
  return 0.5 * peak * (1.0 + std::cos(M_PI * progress));
}

TrainState::TrainState(const TrainState& other)
    : model(other.model.clone()),
      first_moment(other.first_moment),
      second_moment(other.second_moment),
      step(other.step),
      samples_seen(other.samples_seen),
      schedule_origin(other.schedule_origin),
      optimizer_steps(other.optimizer_steps) {}

TrainState& TrainState::operator=(const TrainState& other) {
  if (this != &other) {
    TrainState copy(other);
    *this = std::move(copy);
  }
  return *this;
}

TrainState TrainState::init(const TrainConfig& config) {
  config.validate();
  TrainState state;
  state.model = Model::init(config.encoder(), config.seed, config.lambda_rec > 0.0);
  state.reset_moments();
  return state;
}

void TrainState::reset_moments() {
  first_moment.clear();
  second_moment.clear();
  for (auto& p : model.parameters()) {
    first_moment.push_back(ParamArray::Zero(p.tensor->size()));
    second_moment.push_back(ParamArray::Zero(p.tensor->size()));
  }
  optimizer_steps = 0;
}

AdamWOutcome adamw_step(TrainState& state, const std::vector<ParamArray>& grads, double lr, const AdamWSettings& s) {
  auto params = state.model.parameters();
  if (grads.size() != params.size() || state.first_moment.size() != params.size()) {
    throw DimensionError("adamw_step: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].tensor->size()) {
      throw DimensionError("adamw_step: gradient shape mismatch for " + params[i].name);
    }
    if (!grads[i].allFinite()) return {false, "non-finite gradient in " + params[i].name};
  }
  const std::int64_t t = state.optimizer_steps + 1;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(t));
  const float b1 = static_cast<float>(s.beta1), b2 = static_cast<float>(s.beta2);
  const float step_size = static_cast<float>(lr / c1);
  const float inv_sqrt_c2 = static_cast<float>(1.0 / std::sqrt(c2));
  const float eps = static_cast<float>(s.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].tensor->data();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const auto& g = grads[i];
    if (params[i].decay && s.weight_decay > 0.0) w *= static_cast<float>(1.0 - lr * s.weight_decay);
    m = b1 * m + (1.0f - b1) * g;
    v = b2 * v + (1.0f - b2) * g.square();
    w -= step_size * m / (v.sqrt() * inv_sqrt_c2 + eps);
  }
  state.optimizer_steps = t;
  return {true, {}};
}

StepReport train_step(TrainState& state, const TrainConfig& config, const TrainBatch& batch) {
  const Index b = batch.images.count;
  if (b != batch.text.size()) throw DimensionError("train_step: image and caption batch sizes differ");
  Model& model = state.model;
  const auto& geom = model.config.image;

  StepReport report;
  report.lr = lr_at(state.samples_seen - state.schedule_origin, config);

  const Tensor<float> patches = patchify<float>(batch.images, geom.patch_size);
  const PatchMask image_mask = sample_patch_mask(geom.num_patches(), config.mask_ratio, batch.image_mask_seeds);
  const TextMask text_mask =
      sample_text_mask(batch.text, config.text_mask.ratio, config.text_mask.policy, batch.text_mask_seeds);
  report.image_tokens = image_mask.visible_per_sample();
  report.text_tokens = text_mask.visible_per_sample();

  const auto image = encode_image(model.image, patches, image_mask);
  const auto text = encode_text(model.text, batch.text, text_mask);
  const EmbeddingBatch<float> emb{project_and_normalize(image.pooled, model.image.projection),
                                  project_and_normalize(text.pooled, model.text.projection), model.logit_scale};
  std::optional<Tensor<float>> rec;
  if (config.lambda_rec > 0.0) {
    if (!model.decoder) throw ConfigError("lambda_rec > 0 but the model has no reconstruction decoder");
    rec = reconstruction_loss(*model.decoder, image.tokens, image_mask, patches).loss;
  }
  const auto losses = combine_losses(info_nce(emb), rec, config.lambda_rec);
  report.contrastive = losses.contrastive.item();
  if (losses.reconstruction) report.reconstruction = losses.reconstruction->item();
  report.total = losses.total.item();
  if (!std::isfinite(report.total)) {
    throw NumericError("non-finite loss at step " + std::to_string(state.step));
  }

  model.zero_grad();
  backward(losses.total);
  std::vector<ParamArray> grads;
  for (auto& p : model.parameters()) grads.push_back(p.tensor->grad());

  const AdamWOutcome outcome = adamw_step(state, grads, report.lr, AdamWSettings::from(config));
  if (!outcome.applied) {
    throw NumericError(outcome.message + " at step " + std::to_string(state.step));
  }
  auto& scale = model.logit_scale.data();
  scale = scale.min(static_cast<float>(max_logit_scale()));

  ++state.step;
  state.samples_seen += b;
  return report;
}

TrainConfig tuning_config(const TrainConfig& pretrain) {
  TrainConfig tune = pretrain;
  tune.mask_ratio = 0.0;
  tune.base_lr = pretrain.base_lr * kTuneLrFactor;
  const auto raw = static_cast<std::int64_t>(std::llround(pretrain.tune_fraction * static_cast<double>(pretrain.total_samples)));
  // whole batches only
  tune.total_samples = (raw / pretrain.batch_size) * pretrain.batch_size;
  tune.warmup_samples = static_cast<std::int64_t>(std::llround(kTuneWarmupFraction * static_cast<double>(tune.total_samples)));
  return tune;
}

Trainer::Trainer(TrainConfig config, const Dataset& train, Tokenizer tokenizer)
    : Trainer(config, train, std::move(tokenizer), TrainState::init(config)) {}

Trainer::Trainer(TrainConfig config, const Dataset& train, Tokenizer tokenizer, TrainState state)
    : active_(std::move(config)), train_(train), tokenizer_(std::move(tokenizer)), state_(std::move(state)) {
  active_.validate();
  if (train_.size() < active_.batch_size) throw ConfigError("training set is smaller than one batch");
  std::vector<std::string> captions;
  for (const auto& r : train_.records) captions.push_back(r.caption);
  tokens_ = tokenizer_.encode_batch(captions);
}

std::int64_t Trainer::steps_per_epoch() const { return train_.size() / active_.batch_size; }

const std::vector<Index>& Trainer::permutation(std::int64_t epoch) const {
  if (epoch != cached_epoch_) {
    cached_order_ = train_.all_indices();
    Rng rng(seed_hash({active_.seed, static_cast<std::uint64_t>(epoch), kShuffleStream}));
    rng.shuffle(cached_order_);
    cached_epoch_ = epoch;
  }
  return cached_order_;
}

TrainBatch Trainer::next_batch() const {
  const Index b = active_.batch_size;
  const std::int64_t global_step = state_.samples_seen / b;
  const std::int64_t epoch = global_step / steps_per_epoch();
  const std::int64_t offset = (global_step % steps_per_epoch()) * b;
  const auto& order = permutation(epoch);
  std::vector<Index> idx(order.begin() + offset, order.begin() + offset + b);

  TrainBatch batch;
  batch.images = train_.images(idx);
  batch.text.length = tokens_.length;
  batch.text.pad_id = tokens_.pad_id;
  for (Index i : idx) {
    const auto first = tokens_.ids.begin() + i * tokens_.length;
    batch.text.ids.insert(batch.text.ids.end(), first, first + tokens_.length);
    batch.text.valid_lengths.push_back(tokens_.valid_lengths[static_cast<std::size_t>(i)]);
    const auto e = static_cast<std::uint64_t>(epoch), s = static_cast<std::uint64_t>(i);
    batch.image_mask_seeds.push_back(seed_hash({active_.seed, e, s, kImageMaskStream}));
    batch.text_mask_seeds.push_back(seed_hash({active_.seed, e, s, kTextMaskStream}));
  }
  return batch;
}

StepReport Trainer::step() { return train_step(state_, active_, next_batch()); }

void Trainer::run(const std::function<void(const StepReport&, const TrainState&)>& on_step) {
  while (state_.samples_seen - state_.schedule_origin + active_.batch_size <= active_.total_samples) {
    const StepReport r = step();
    if (on_step) on_step(r, state_);
  }
}

void Trainer::unmasked_tune(const std::function<void(const StepReport&, const TrainState&)>& on_step) {
  active_ = tuning_config(active_);
  state_.schedule_origin = state_.samples_seen;
  state_.reset_moments();
  run(on_step);
}

TrainState unmasked_tune(TrainState state, const TrainConfig& pretrain, const Dataset& train, const Tokenizer& tokenizer) {
  Trainer trainer(pretrain, train, tokenizer, std::move(state));
  trainer.unmasked_tune();
  return std::move(trainer.state());
}

}  // namespace flip
