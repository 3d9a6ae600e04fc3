#include "mirn/trainer.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "mirn/rng.hpp"

namespace mirn {

Tensor make_batch(const std::vector<LabeledSegment>& segments,
                  const std::vector<std::size_t>& indices, std::size_t begin,
                  std::size_t end, std::vector<int>* labels) {
  const std::size_t b_n = end - begin;
  Tensor batch({b_n, kSegmentSamples, kNumLeads});
  if (labels) labels->resize(b_n);
  for (std::size_t b = 0; b < b_n; ++b) {
    const LabeledSegment& seg = segments[indices[begin + b]];
    check_shape(seg.window, {kSegmentSamples, kNumLeads}, "segment window");
    double* dst = batch.data() + b * kSegmentSamples * kNumLeads;
    const double* src = seg.window.data();
    for (std::size_t i = 0; i < kSegmentSamples * kNumLeads; ++i) dst[i] = src[i];
    if (labels) (*labels)[b] = static_cast<int>(seg.label);
  }
  return batch;
}

double train_epoch(ModelParams& p, AdamState& opt,
                   const std::vector<LabeledSegment>& segments,
                   const TrainConfig& cfg, int epoch_index) {
  if (segments.empty()) throw EmptyDataError("no training segments");
  if (cfg.batch_size < 1) throw ConfigError("batch size must be >= 1");

  std::vector<std::size_t> order(segments.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg.shuffle_seed, seed_purpose::kShuffle,
                      static_cast<std::uint64_t>(epoch_index)));
  rng.shuffle(order);

  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  double loss_sum = 0.0;
  std::size_t batches = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += bs) {
    const std::size_t end = std::min(begin + bs, order.size());
    std::vector<int> labels;
    const Tensor batch = make_batch(segments, order, begin, end, &labels);

    BatchGradients bg = loss_and_gradients(batch, labels, p);
    adam_step(trainable_params(p), bg.grads, opt);
    for (std::size_t i = 0; i < p.bn.size(); ++i) {
      p.bn[i].running_mean = bg.bn_updated[i].running_mean;
      p.bn[i].running_var = bg.bn_updated[i].running_var;
    }
    loss_sum += bg.loss;
    ++batches;
  }
  return loss_sum / static_cast<double>(batches);
}

namespace {

// plain argmax accuracy, ties to the lowest class index
double validation_accuracy(const ModelParams& p,
                           const std::vector<LabeledSegment>& val) {
  std::vector<std::size_t> order(val.size());
  std::iota(order.begin(), order.end(), 0);

  std::size_t correct = 0;
  constexpr std::size_t kChunk = 64;
  for (std::size_t begin = 0; begin < val.size(); begin += kChunk) {
    const std::size_t end = std::min(begin + kChunk, val.size());
    std::vector<int> labels;
    const Tensor batch = make_batch(val, order, begin, end, &labels);
    const Tensor probs = forward(batch, p, Mode::kInfer);
    for (std::size_t b = 0; b < end - begin; ++b) {
      std::size_t arg = 0;
      for (std::size_t c = 1; c < kNumClasses; ++c) {
        if (probs(b, c) > probs(b, arg)) arg = c;
      }
      if (arg == static_cast<std::size_t>(labels[b])) ++correct;
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(val.size());
}

}  // namespace

FitHistory fit(ModelParams& p, const std::vector<LabeledSegment>& train,
               const std::vector<LabeledSegment>& val, const TrainConfig& cfg) {
  if (train.empty()) throw EmptyDataError("empty training set");
  if (cfg.epochs < 1) throw ConfigError("epoch count must be >= 1");

  AdamState opt = AdamState::init(trainable_params(std::as_const(p)));
  opt.lr = cfg.lr;

  FitHistory history;
  history.epochs.reserve(static_cast<std::size_t>(cfg.epochs));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochStats stats;
    stats.train_loss = train_epoch(p, opt, train, cfg, epoch);
    stats.val_accuracy = val.empty()
                             ? std::numeric_limits<double>::quiet_NaN()
                             : validation_accuracy(p, val);
    history.epochs.push_back(stats);
  }
  return history;
}

}  // namespace mirn
