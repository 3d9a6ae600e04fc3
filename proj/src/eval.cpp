#include "mirn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include "mirn/rng.hpp"

namespace mirn {

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t n = 0;
  for (const auto& row : counts) {
    for (std::uint64_t c : row) n += c;
  }
  return n;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < kNumClasses; ++i) n += counts[i][i];
  return n;
}

double ConfusionMatrix::accuracy_percent() const {
  const std::uint64_t n = total();
  if (n == 0) throw EmptyDataError("empty confusion matrix");
  return 100.0 * static_cast<double>(trace()) / static_cast<double>(n);
}

std::string confusion_to_csv(const ConfusionMatrix& m) {
  std::ostringstream os;
  os << "true\\pred";
  for (const std::string& name : class_names()) os << ',' << name;
  os << '\n';
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    os << class_names()[i];
    for (std::size_t j = 0; j < kNumClasses; ++j) os << ',' << m.counts[i][j];
    os << '\n';
  }
  return os.str();
}

EvalResult evaluate(const ModelParams& p,
                    const std::vector<LabeledSegment>& segments) {
  if (segments.empty()) throw EmptyDataError("no segments to evaluate");

  EvalResult r;
  std::vector<std::size_t> order(segments.size());
  std::iota(order.begin(), order.end(), 0);

  constexpr std::size_t kChunk = 64;
  for (std::size_t begin = 0; begin < segments.size(); begin += kChunk) {
    const std::size_t end = std::min(begin + kChunk, segments.size());
    std::vector<int> labels;
    const Tensor batch = make_batch(segments, order, begin, end, &labels);
    const Tensor probs = forward(batch, p, Mode::kInfer);
    for (std::size_t b = 0; b < end - begin; ++b) {
      std::size_t arg = 0;
      for (std::size_t c = 1; c < kNumClasses; ++c) {
        if (probs(b, c) > probs(b, arg)) arg = c;
      }
      r.confusion.counts[static_cast<std::size_t>(labels[b])][arg] += 1;
    }
  }
  r.accuracy = r.confusion.accuracy_percent();
  return r;
}

namespace {

// two-sided 97.5% quantiles of Student's t
double t_quantile_975(std::size_t df) {
  static const double table[] = {
      12.706, 4.3027, 3.1824, 2.7764, 2.5706, 2.4469, 2.3646, 2.3060,
      2.2622, 2.2281, 2.2010, 2.1788, 2.1604, 2.1448, 2.1314, 2.1199,
      2.1098, 2.1009, 2.0930, 2.0860, 2.0796, 2.0739, 2.0687, 2.0639,
      2.0595, 2.0555, 2.0518, 2.0484, 2.0452, 2.0423};
  if (df == 0) throw EmptyDataError("confidence interval needs df >= 1");
  if (df <= 30) return table[df - 1];
  return 1.9600;
}

}  // namespace

Interval confidence_interval(const std::vector<double>& accuracies) {
  const std::size_t n = accuracies.size();
  if (n < 2) {
    throw EmptyDataError("confidence interval needs at least 2 values");
  }
  Interval ci;
  ci.mean = std::accumulate(accuracies.begin(), accuracies.end(), 0.0) /
            static_cast<double>(n);
  double ss = 0.0;
  for (double a : accuracies) ss += (a - ci.mean) * (a - ci.mean);
  const double sample_std = std::sqrt(ss / static_cast<double>(n - 1));
  ci.half_width = t_quantile_975(n - 1) * sample_std /
                  std::sqrt(static_cast<double>(n));
  return ci;
}

namespace {

ClassLabel majority_label(const std::vector<ClassLabel>& labels) {
  std::array<std::size_t, kNumClasses> votes{};
  for (ClassLabel l : labels) votes[static_cast<std::size_t>(l)] += 1;
  std::size_t best = 0;
  for (std::size_t c = 1; c < kNumClasses; ++c) {
    if (votes[c] > votes[best]) best = c;
  }
  return static_cast<ClassLabel>(best);
}

}  // namespace

std::vector<SubjectInfo> subject_roster(
    const std::vector<LabeledSegment>& segments) {
  std::map<std::string, std::vector<ClassLabel>> by_subject;
  for (const LabeledSegment& seg : segments) {
    by_subject[seg.subject_id].push_back(seg.label);
  }
  std::vector<SubjectInfo> subjects;
  subjects.reserve(by_subject.size());
  for (const auto& [id, labels] : by_subject) {
    subjects.push_back({id, majority_label(labels)});
  }
  return subjects;
}

std::vector<LabeledSegment> select_subjects(
    const std::vector<LabeledSegment>& all,
    const std::vector<std::string>& subjects) {
  std::vector<LabeledSegment> out;
  for (const LabeledSegment& seg : all) {
    if (std::find(subjects.begin(), subjects.end(), seg.subject_id) !=
        subjects.end()) {
      out.push_back(seg);
    }
  }
  return out;
}

CvResult run_cross_validation(const std::vector<LabeledSegment>& dataset,
                              const TrainConfig& cfg, std::uint64_t seed) {
  if (dataset.empty()) throw EmptyDataError("empty dataset");

  const std::vector<SubjectInfo> subjects = subject_roster(dataset);
  constexpr int kFolds = 5;
  SplitResult splits = make_splits(subjects, kFolds, seed);

  struct FoldOutcome {
    FoldReport report;
    FitHistory history;
  };
  const auto run_fold = [&](int f) {
    const SplitPlan& plan = splits.folds[static_cast<std::size_t>(f)];
    const auto train = select_subjects(dataset, plan.train);
    const auto val = select_subjects(dataset, plan.val);
    const auto test = select_subjects(dataset, plan.test);

    const std::uint64_t fold_seed =
        derive_seed(seed, seed_purpose::kInit, static_cast<std::uint64_t>(f));
    ModelParams model = init_model(fold_seed);
    TrainConfig fold_cfg = cfg;
    fold_cfg.shuffle_seed = derive_seed(seed, seed_purpose::kShuffle,
                                        static_cast<std::uint64_t>(f));
    FoldOutcome out;
    out.history = fit(model, train, val, fold_cfg);

    const EvalResult eval = evaluate(model, test);
    out.report.fold = f;
    out.report.accuracy = eval.accuracy;
    out.report.confusion = eval.confusion;
    out.report.train_segments = train.size();
    out.report.val_segments = val.size();
    out.report.test_segments = test.size();
    out.report.seed = fold_seed;
    return out;
  };

  // folds are independent; run them concurrently and merge in fold order
  std::vector<std::future<FoldOutcome>> pending;
  pending.reserve(kFolds);
  for (int f = 0; f < kFolds; ++f) {
    pending.push_back(std::async(std::launch::async, run_fold, f));
  }

  CvResult result;
  result.warnings = splits.warnings;
  result.summary.seed = seed;
  for (auto& fut : pending) {
    FoldOutcome out = fut.get();
    result.summary.fold_accuracies.push_back(out.report.accuracy);
    result.folds.push_back(std::move(out.report));
    result.histories.push_back(std::move(out.history));
  }

  const Interval ci = confidence_interval(result.summary.fold_accuracies);
  result.summary.mean_accuracy = ci.mean;
  result.summary.ci95_half_width = ci.half_width;
  return result;
}

Tensor synth_template(int class_index) {
  if (class_index < 0 || class_index >= static_cast<int>(kNumClasses)) {
    throw ShapeError("class index out of range");
  }
  const double freq_hz = 1.0 + class_index;  // 1..7 Hz
  const std::size_t c = static_cast<std::size_t>(class_index);
  // lead-amplitude pattern: each class drives its own pair of leads hard,
  // the rest carry a faint copy
  const std::size_t hot_a = c;
  const std::size_t hot_b = (c + 7) % kNumLeads;
  Tensor window({kSegmentSamples, kNumLeads});
  for (std::size_t lead = 0; lead < kNumLeads; ++lead) {
    const double amp = (lead == hot_a || lead == hot_b) ? 4.0 : 0.5;
    const double phase =
        2.0 * std::numbers::pi * static_cast<double>(lead) / 12.0;
    for (std::size_t i = 0; i < kSegmentSamples; ++i) {
      const double t = static_cast<double>(i) / 100.0;  // seconds
      window(i, lead) =
          amp * std::sin(2.0 * std::numbers::pi * freq_hz * t + phase);
    }
  }
  return window;
}

std::vector<LabeledSegment> synth_dataset(int num_per_class, std::uint64_t seed,
                                          double noise_sigma) {
  std::vector<LabeledSegment> out;
  out.reserve(static_cast<std::size_t>(num_per_class) * kNumClasses);
  Rng rng(derive_seed(seed, seed_purpose::kSynth));
  for (int c = 0; c < static_cast<int>(kNumClasses); ++c) {
    const Tensor base = synth_template(c);
    for (int k = 0; k < num_per_class; ++k) {
      LabeledSegment seg;
      seg.window = base;
      for (std::size_t i = 0; i < seg.window.size(); ++i) {
        if (noise_sigma > 0.0) {
          seg.window[i] += rng.normal(0.0, noise_sigma);
        }
      }
      seg.label = static_cast<ClassLabel>(c);
      seg.subject_id = "synth_c" + std::to_string(c) + "_" + std::to_string(k);
      out.push_back(std::move(seg));
    }
  }
  return out;
}

}  // namespace mirn
