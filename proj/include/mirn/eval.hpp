#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mirn/dataset.hpp"
#include "mirn/model.hpp"
#include "mirn/trainer.hpp"

namespace mirn {

struct ConfusionMatrix {
  // [true class][predicted class]
  std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> counts{};

  std::uint64_t total() const;
  std::uint64_t trace() const;
  double accuracy_percent() const;  // 100 * trace / total
};

std::string confusion_to_csv(const ConfusionMatrix& m);

struct EvalResult {
  double accuracy = 0.0;  // percent
  ConfusionMatrix confusion;
};

/// Batch-norm in infer mode; prediction = argmax of the 7 probabilities,
/// ties broken by the lowest class index.
EvalResult evaluate(const ModelParams& p,
                    const std::vector<LabeledSegment>& segments);

struct Interval {
  double mean = 0.0;
  double half_width = 0.0;
};

/// Two-sided 95% Student-t interval on the fold mean (df = n-1).
Interval confidence_interval(const std::vector<double>& accuracies);

struct FoldReport {
  int fold = 0;
  double accuracy = 0.0;
  ConfusionMatrix confusion;
  std::size_t train_segments = 0, val_segments = 0, test_segments = 0;
  std::uint64_t seed = 0;
};

struct CvSummary {
  std::vector<double> fold_accuracies;
  double mean_accuracy = 0.0;
  double ci95_half_width = 0.0;
  std::uint64_t seed = 0;
};

struct CvResult {
  CvSummary summary;
  std::vector<FoldReport> folds;
  std::vector<FitHistory> histories;
  std::vector<std::string> warnings;
};

/// Unique subjects in sorted id order, each labelled by the majority vote
/// over its segments (ties to the lowest class index).
std::vector<SubjectInfo> subject_roster(
    const std::vector<LabeledSegment>& segments);

/// Segments whose subject id appears in `subjects`, original order kept.
std::vector<LabeledSegment> select_subjects(
    const std::vector<LabeledSegment>& all,
    const std::vector<std::string>& subjects);

/// Five independent subject-disjoint 60/10/30 splits; each fold trains a
/// freshly initialized model and evaluates it on that fold's held-out test
/// subjects.
CvResult run_cross_validation(const std::vector<LabeledSegment>& dataset,
                              const TrainConfig& cfg, std::uint64_t seed);

/// Deterministic per-class templates: every lead of class c carries a
/// (1+c) Hz sinusoid with a class-specific lead-amplitude pattern, plus
/// seeded Gaussian noise (sigma in mV). Each segment gets its own subject id.
std::vector<LabeledSegment> synth_dataset(int num_per_class, std::uint64_t seed,
                                          double noise_sigma = 0.05);

/// The noiseless class template, [500,12] mV.
Tensor synth_template(int class_index);

}  // namespace mirn
