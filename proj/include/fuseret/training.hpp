#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fuseret/dataset.hpp"
#include "fuseret/mixup.hpp"
#include "fuseret/model.hpp"
#include "fuseret/optim.hpp"

namespace fuseret {

struct TrainConfig {
  double lr_max = 1e-3;
  double weight_decay = 1e-4;
  int batch_size = 4;
  int epochs = 20;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  MixupConfig mixup;
  bool se_enabled = true;
  OneCycleConfig schedule;

  void validate() const;
  AdamWConfig adamw() const { return {beta1, beta2, eps, weight_decay}; }
};

/// Optimizer moments, schedule position and the three training streams of
/// one fold. Streams are keyed by (seed, fold) so folds are independent.
struct TrainState {
  OptimizerState optimizer;
  std::int64_t step = 0;
  std::int64_t total_steps = 0;
  Rng data;
  Rng mixup;
  Rng crops;
};

TrainState make_train_state(const TrainConfig& cfg, int fold, Index n_train);

Index batches_per_epoch(Index n_samples, int batch_size);

struct Batch {
  TensorF x2d;  // [B,3,S,S], undefined for volume-only models
  TensorF x3d;  // [B,2,d,h,w], undefined for image-only models
  TensorF labels;
  std::vector<int> grades;
};

/// Crop offsets are drawn for every sample whatever the modality, so the
/// crop stream advances identically across ablation rows.
Batch make_batch(std::span<const LoadedSample> samples, std::span<const Index> indices,
                 Extent3 crop, Modality modality, Rng& crops);

struct StepResult {
  double loss = 0.0;
  double lr = 0.0;
  double lambda = 1.0;
};

/// Forward to the fusion layer, mix (when enabled), classify, loss, backward,
/// AdamW at the scheduled rate. Advances state.step.
StepResult train_step(FusionModel<float>& model, const Batch& batch, const TrainConfig& cfg,
                      TrainState& state);

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  std::vector<double> batch_loss;
  std::vector<double> lr;
};

/// One pass over `samples` in a shuffled order; the last partial batch is
/// kept. Non-finite values abort with the epoch and batch index.
EpochStats train_epoch(FusionModel<float>& model, std::span<const LoadedSample> samples,
                       const TrainConfig& cfg, Extent3 crop, int epoch, TrainState& state);

}  // namespace fuseret
