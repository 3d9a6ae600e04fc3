#pragma once

#include <cstdint>
#include <vector>

#include "mirn/adam.hpp"
#include "mirn/dataset.hpp"
#include "mirn/model.hpp"

namespace mirn {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 32;
  std::uint64_t shuffle_seed = 0;
  double lr = 0.001;  // handed to the Adam state
};

struct EpochStats {
  double train_loss = 0.0;
  double val_accuracy = 0.0;  // NaN when there is no validation set
};

struct FitHistory {
  std::vector<EpochStats> epochs;
};

/// Assembles [B,500,12] + labels from a span of segments.
Tensor make_batch(const std::vector<LabeledSegment>& segments,
                  const std::vector<std::size_t>& indices, std::size_t begin,
                  std::size_t end, std::vector<int>* labels);

/// One pass over the data: deterministic shuffle by (seed, epoch index),
/// minibatches of cfg.batch_size (final partial batch included), batch norm
/// in train mode. Returns the mean of the per-batch mean losses.
double train_epoch(ModelParams& p, AdamState& opt,
                   const std::vector<LabeledSegment>& segments,
                   const TrainConfig& cfg, int epoch_index);

/// Runs cfg.epochs epochs, recording train loss and validation accuracy
/// (batch norm in infer mode). No early stopping: the final-epoch model is
/// the result.
FitHistory fit(ModelParams& p, const std::vector<LabeledSegment>& train,
               const std::vector<LabeledSegment>& val, const TrainConfig& cfg);

}  // namespace mirn
