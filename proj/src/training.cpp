#include "fuseret/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fuseret/preprocess.hpp"

namespace fuseret {

void TrainConfig::validate() const {
  if (!(lr_max > 0.0)) throw std::invalid_argument("train: lr_max must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("train: weight_decay must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("train: betas must lie in [0,1)");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("train: eps must be positive");
  mixup.validate();
  schedule.validate();
}

Index batches_per_epoch(Index n_samples, int batch_size) {
  return (n_samples + batch_size - 1) / batch_size;
}

TrainState make_train_state(const TrainConfig& cfg, int fold, Index n_train) {
  const auto f = static_cast<std::uint64_t>(fold);
  TrainState s{{}, 0, 0, stream(cfg.seed, "data", f), stream(cfg.seed, "mixup", f),
               stream(cfg.seed, "crops", f)};
  s.total_steps = static_cast<std::int64_t>(cfg.epochs) * batches_per_epoch(n_train, cfg.batch_size);
  return s;
}

Batch make_batch(std::span<const LoadedSample> samples, std::span<const Index> indices,
                 Extent3 crop, Modality modality, Rng& crops) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
  const auto B = static_cast<Index>(indices.size());
  const LoadedSample& first = samples[static_cast<std::size_t>(indices[0])];
  Batch b;
  if (modality != Modality::octa_only) {
    Shape s{B};
    s.insert(s.end(), first.image.shape().begin(), first.image.shape().end());
    b.x2d = TensorF(s);
  }
  const Index vc = first.volume.dim(0);
  const Index per3 = vc * crop[0] * crop[1] * crop[2];
  if (modality != Modality::cfp_only) b.x3d = TensorF({B, vc, crop[0], crop[1], crop[2]});
  for (Index k = 0; k < B; ++k) {
    const LoadedSample& s = samples[static_cast<std::size_t>(indices[static_cast<std::size_t>(k)])];
    b.grades.push_back(s.grade);
    const Extent3 off = draw_crop_offsets(s.volume.shape(), crop, crops);
    if (b.x2d.defined()) {
      if (s.image.shape() != first.image.shape()) {
        throw DimensionError("make_batch: image " + s.eye_id + " has shape " +
                             shape_str(s.image.shape()));
      }
      std::copy(s.image.data().begin(), s.image.data().end(),
                b.x2d.data().begin() + k * s.image.numel());
    }
    if (b.x3d.defined()) {
      auto c = crop3d(s.volume, crop, off);
      if (c.numel() != per3) throw DimensionError("make_batch: volume " + s.eye_id);
      std::copy(c.data().begin(), c.data().end(), b.x3d.data().begin() + k * per3);
    }
  }
  b.labels = one_hot<float>(b.grades, kNumGrades);
  return b;
}

StepResult train_step(FusionModel<float>& model, const Batch& batch, const TrainConfig& cfg,
                      TrainState& state) {
  if (state.step >= state.total_steps) {
    throw std::logic_error("train_step: schedule exhausted at step " + std::to_string(state.step));
  }
  StepResult r;
  r.lr = onecycle_lr(state.step, state.total_steps, cfg.lr_max, cfg.schedule);
  model.zero_grad();
  auto z = model.features(batch.x2d, batch.x3d, NormMode::train);
  TensorF loss;
  if (cfg.mixup.enabled) {
    r.lambda = sample_lambda(cfg.mixup, state.mixup);
    auto mixed = mix_features(z, batch.labels, r.lambda, sample_pairing(z.dim(0), state.mixup));
    loss = mixed_loss(model.classify(mixed.mixed), mixed.labels_i, mixed.labels_j, r.lambda);
  } else {
    loss = softmax_cross_entropy(model.classify(z), batch.labels);
  }
  r.loss = static_cast<double>(loss.item());
  if (!std::isfinite(r.loss)) throw NonFiniteError("train_step: non-finite loss");
  loss.backward();
  auto params = model.trainable();
  adamw_step<float>(params, state.optimizer, r.lr, cfg.adamw());
  ++state.step;
  return r;
}

EpochStats train_epoch(FusionModel<float>& model, std::span<const LoadedSample> samples,
                       const TrainConfig& cfg, Extent3 crop, int epoch, TrainState& state) {
  if (samples.empty()) throw std::invalid_argument("train_epoch: no samples");
  std::vector<Index> order(samples.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), state.data);

  EpochStats stats;
  stats.epoch = epoch;
  const auto n = static_cast<Index>(order.size());
  double total = 0.0;
  for (Index start = 0, b = 0; start < n; start += cfg.batch_size, ++b) {
    const Index end = std::min<Index>(n, start + cfg.batch_size);
    std::span<const Index> idx(order.data() + start, static_cast<std::size_t>(end - start));
    try {
      const Batch batch = make_batch(samples, idx, crop, model.config().modality, state.crops);
      const StepResult r = train_step(model, batch, cfg, state);
      stats.batch_loss.push_back(r.loss);
      stats.lr.push_back(r.lr);
      total += r.loss * static_cast<double>(end - start);
    } catch (const NonFiniteError& e) {
      throw NonFiniteError("epoch " + std::to_string(epoch) + " batch " + std::to_string(b) +
                           ": " + e.what());
    }
  }
  stats.mean_loss = total / static_cast<double>(n);
  return stats;
}

}  // namespace fuseret
