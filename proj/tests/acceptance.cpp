// Acceptance suite: exercises the verifiable guarantees of the pipeline and
// prints one pass/fail line per criterion. Exits nonzero if any fail.
//
// Criterion 10 (full PTB reproduction) needs the PTB corpus, which ships with
// the user. Set MIRN_PTB_INDEX to an index file of record paths to run it;
// it is reported informationally and never gates the exit status.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "mirn/dataset.hpp"
#include "mirn/eval.hpp"
#include "mirn/gradcheck.hpp"
#include "mirn/model.hpp"
#include "mirn/rng.hpp"
#include "mirn/trainer.hpp"
#include "support/oracles.hpp"
#include "support/tmpdir.hpp"
#include "support/wfdb_writer.hpp"

using namespace mirn;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int criterion, const char* name, bool ok, const std::string& detail,
            Clock::time_point started) {
  const double secs =
      std::chrono::duration<double>(Clock::now() - started).count();
  std::printf("[%s] criterion %2d: %-28s %s (%.2fs)\n", ok ? "PASS" : "FAIL",
              criterion, name, detail.c_str(), secs);
  std::fflush(stdout);
  if (!ok) ++failures;
}

// ---- 1: parameter budget ----
void criterion_parameter_budget() {
  const auto t0 = Clock::now();
  bool ok = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ModelParams p = init_model(seed);
    ok = ok && count_parameters(p) == 5997;
    ok = ok && p.frontend_w.size() == 2000 && p.conv_in_w.size() == 756;
    for (const Tensor& w : p.res_conv_w) ok = ok && w.size() == 441;
    ok = ok && p.final_conv_w.size() == 441;
    ok = ok && p.dense_w.size() + p.dense_b.size() == 56;
  }
  // 2000 + 756 + 6*441 + 441 + 7*14 + 56
  ok = ok && (2000 + 756 + 6 * 441 + 441 + 7 * 14 + 56) == 5997;
  report(1, "parameter budget 5997", ok, "10 seeds, decomposition checked", t0);
}

// ---- 2: shape pipeline ----
void criterion_shape_pipeline() {
  const auto t0 = Clock::now();
  Rng rng(2);
  const ModelParams p = init_model(2);
  const Tensor batch = test::random_tensor(rng, {2, 500, 12});
  const ForwardTrace trace = forward_trace(batch, p, Mode::kInfer);

  bool ok = trace.after_frontend.shape() == std::vector<std::size_t>{2, 9, 20, 12};
  const std::vector<std::size_t> stage{2, 9, 20, 7};
  ok = ok && trace.after_conv_in.shape() == stage;
  for (const Tensor& t : trace.after_block) ok = ok && t.shape() == stage;
  ok = ok && trace.after_final_conv.shape() == stage;
  ok = ok && trace.after_final_bn.shape() == stage;
  ok = ok && trace.probs.shape() == std::vector<std::size_t>{2, 7};
  report(2, "shape pipeline", ok, "2x500x12 -> 2x9x20x12 -> 2x9x20x7 -> 2x7", t0);
}

// ---- 3: gradient correctness ----
void criterion_gradients() {
  const auto t0 = Clock::now();
  Rng rng(3);
  int cases = 0;
  double worst = 0.0;
  bool ok = true;
  const auto check = [&](const GradCheckReport& rep) {
    ++cases;
    worst = std::max(worst, rep.max_rel_error);
    ok = ok && rep.passed;
  };

  for (int trial = 0; trial < 15; ++trial) {
    {  // conv1d, 40-sample signals
      Conv1dSpec spec{3, 5, 3};
      const Tensor x = test::random_tensor(rng, {40});
      const Tensor w = test::random_tensor(rng, {3, 5});
      const Tensor probe = test::random_tensor(rng, {12, 3});
      const Conv1dGrads g = conv1d_backward(x, w, spec, probe);
      check(grad_check(
          [&](const std::vector<Tensor>& a) {
            return test::contract(conv1d_forward(a[0], a[1], spec), probe);
          },
          {x, w}, {g.signal, g.weights}, 1e-6, 1e-5));
    }
    {  // dilated conv2d, 5x6x3 volumes
      const int dil = trial % 2 ? 2 : 4;
      Conv2dSpec spec{2, 3, 3, dil, dil};
      const Tensor x = test::random_tensor(rng, {5, 6, 3});
      const Tensor w = test::random_tensor(rng, {2, 3, 3, 3});
      const Tensor probe = test::random_tensor(rng, {5, 6, 2});
      const Conv2dGrads g = conv2d_dilated_backward(x, w, spec, probe);
      check(grad_check(
          [&](const std::vector<Tensor>& a) {
            return test::contract(conv2d_dilated_forward(a[0], a[1], spec), probe);
          },
          {x, w}, {g.input, g.weights}, 1e-6, 1e-5));
    }
    {  // relu away from the kink
      Tensor x({6, 4});
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double mag = rng.uniform(0.05, 1.5);
        x[i] = rng.next_double() < 0.5 ? -mag : mag;
      }
      const Tensor probe = test::random_tensor(rng, {6, 4});
      const Tensor dx = relu_backward(x, probe);
      check(grad_check(
          [&](const std::vector<Tensor>& a) {
            return test::contract(relu(a[0]), probe);
          },
          {x}, {dx}, 1e-6, 1e-5));
    }
    {  // batch norm through the batch statistics
      const Tensor x = test::random_tensor(rng, {4, 3}, -2.0, 2.0);
      BatchNormState st = BatchNormState::init(3);
      st.gamma = test::random_tensor(rng, {3}, 0.5, 1.5);
      st.beta = test::random_tensor(rng, {3});
      const Tensor probe = test::random_tensor(rng, {4, 3});
      BatchNormCache cache;
      batchnorm_forward(x, st, Mode::kTrain, &cache);
      const BatchNormGrads g = batchnorm_backward(cache, probe);
      check(grad_check(
          [&](const std::vector<Tensor>& a) {
            BatchNormState s = st;
            s.gamma = a[1];
            s.beta = a[2];
            return test::contract(batchnorm_forward(a[0], s, Mode::kTrain).y,
                                  probe);
          },
          {x, st.gamma, st.beta}, {g.x, g.gamma, g.beta}, 1e-6, 1e-5));
    }
    {  // global average pooling
      const Tensor x = test::random_tensor(rng, {4, 5, 3});
      const Tensor probe = test::random_tensor(rng, {3});
      const Tensor dx = global_avg_pool_backward(x.shape(), probe);
      check(grad_check(
          [&](const std::vector<Tensor>& a) {
            return test::contract(global_avg_pool(a[0]), probe);
          },
          {x}, {dx}, 1e-6, 1e-5));
    }
    {  // dense + softmax + cross-entropy
      const Tensor f = test::random_tensor(rng, {7});
      const Tensor w = test::random_tensor(rng, {7, 7});
      const Tensor b = test::random_tensor(rng, {7});
      const int label = static_cast<int>(rng.below(7));
      const DenseSoftmaxResult fwd = dense_softmax_xent(f, w, b, label);
      const DenseSoftmaxGrads g =
          dense_softmax_xent_backward(f, w, fwd.probs, label, 1.0);
      check(grad_check(
          [&](const std::vector<Tensor>& a) {
            return dense_softmax_xent(a[0], a[1], a[2], label).loss;
          },
          {f, w, b}, {g.features, g.weights, g.bias}, 1e-6, 1e-5));
    }
  }

  // end-to-end loss gradient on a reduced network (same layer sequence)
  for (int trial = 0; trial < 10; ++trial) {
    Conv1dSpec front{4, 8, 4};
    const Tensor batch = test::random_tensor(rng, {2, 40, 3});
    const std::vector<Tensor> point{
        batch,
        test::random_tensor(rng, {4, 8}, -0.4, 0.4),       // frontend
        test::random_tensor(rng, {3, 3, 3, 3}, -0.4, 0.4),  // conv_in
        test::random_tensor(rng, {3, 3, 3, 3}, -0.4, 0.4),  // res conv 1
        test::random_tensor(rng, {3, 3, 3, 3}, -0.4, 0.4),  // res conv 2
        test::random_tensor(rng, {3}, 0.5, 1.5),            // bn1 gamma
        test::random_tensor(rng, {3}),                      // bn1 beta
        test::random_tensor(rng, {3}, 0.5, 1.5),            // bn2 gamma
        test::random_tensor(rng, {3}),                      // bn2 beta
        test::random_tensor(rng, {3, 3, 3, 3}, -0.4, 0.4),  // final conv
        test::random_tensor(rng, {3}, 0.5, 1.5),            // bn3 gamma
        test::random_tensor(rng, {3}),                      // bn3 beta
        test::random_tensor(rng, {4, 3}),                   // dense w
        test::random_tensor(rng, {4}),                      // dense b
    };
    const std::vector<int> labels{static_cast<int>(rng.below(4)),
                                  static_cast<int>(rng.below(4))};
    const BatchNormState bn = BatchNormState::init(3);

    const auto build = [&](const std::vector<Tensor>& a, GradTape& t,
                           std::vector<GradTape::ValueId>* leaves) {
      std::vector<GradTape::ValueId> id(a.size());
      for (std::size_t k = 0; k < a.size(); ++k) id[k] = t.leaf(a[k]);
      if (leaves) *leaves = id;
      auto x = tape_frontend_conv(t, id[0], id[1], front);
      x = tape_relu(t, x);
      x = tape_conv2d(t, x, id[2], Conv2dSpec{3, 3, 3, 1, 1});
      auto branch = tape_conv2d(t, x, id[3], Conv2dSpec{3, 3, 3, 1, 1});
      branch = tape_relu(t, branch);
      branch = tape_batchnorm(t, branch, id[5], id[6], bn, Mode::kTrain, nullptr);
      branch = tape_conv2d(t, branch, id[4], Conv2dSpec{3, 3, 3, 2, 2});
      branch = tape_relu(t, branch);
      branch = tape_batchnorm(t, branch, id[7], id[8], bn, Mode::kTrain, nullptr);
      x = tape_add(t, branch, x);
      x = tape_conv2d(t, x, id[9], Conv2dSpec{3, 3, 3, 4, 4});
      x = tape_batchnorm(t, x, id[10], id[11], bn, Mode::kTrain, nullptr);
      x = tape_global_avg_pool(t, x);
      x = tape_dense(t, x, id[12], id[13]);
      return tape_softmax_xent_mean(t, x, labels, nullptr);
    };

    GradTape t;
    std::vector<GradTape::ValueId> leaves;
    const auto loss = build(point, t, &leaves);
    const auto grads = t.backward(loss, Tensor::scalar(1.0));
    std::vector<Tensor> analytic;
    for (const auto id : leaves) analytic.push_back(grads[id]);
    check(grad_check(
        [&](const std::vector<Tensor>& a) {
          GradTape local;
          return local.value(build(a, local, nullptr))[0];
        },
        point, analytic, 1e-6, 1e-5));
  }

  // spot check of the production-size model: random coordinates from every
  // parameter group against finite differences of the training loss
  {
    const ModelParams p = init_model(33);
    Tensor batch({2, 500, 12});
    for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = rng.normal(0, 1);
    const std::vector<int> labels{2, 5};
    const BatchGradients bg = loss_and_gradients(batch, labels, p);

    const auto loss_at = [&](const ModelParams& q) {
      const Tensor probs = forward(batch, q, Mode::kTrain);
      double loss = 0.0;
      for (std::size_t b = 0; b < 2; ++b) {
        loss -= std::log(probs(b, static_cast<std::size_t>(labels[b])));
      }
      return loss / 2.0;
    };

    const std::size_t groups = bg.grads.size();
    double worst_full = 0.0;
    for (std::size_t probe = 0; probe < 50; ++probe) {
      const std::size_t k = probe % groups;  // cycle through every group
      ModelParams q = p;
      Tensor& target = *trainable_params(q)[k];
      const std::size_t i = rng.below(target.size());
      const double saved = target[i];
      const double h = 1e-6;
      target[i] = saved + h;
      const double fp = loss_at(q);
      target[i] = saved - h;
      const double fm = loss_at(q);
      const double numeric = (fp - fm) / (2.0 * h);
      const double ana = bg.grads[k][i];
      const double rel = std::fabs(numeric - ana) /
                         std::max({std::fabs(numeric), std::fabs(ana), 1e-3});
      worst_full = std::max(worst_full, rel);
    }
    worst = std::max(worst, worst_full);
    ok = ok && worst_full <= 1e-5;
  }

  char detail[128];
  std::snprintf(detail, sizeof detail,
                "%d cases + 50 full-size probes, max rel err %.2e", cases,
                worst);
  report(3, "gradient correctness", ok && cases >= 100, detail, t0);
}

// ---- 4: dilated convolution oracle ----
void criterion_conv_oracle() {
  const auto t0 = Clock::now();
  Rng rng(4);
  double worst = 0.0;
  const int dilations[] = {1, 2, 4, 16};
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t h = 3 + rng.below(7);    // 3..9
    const std::size_t w = 3 + rng.below(18);   // 3..20
    const std::size_t c = 1 + rng.below(3);
    const std::size_t f = 1 + rng.below(3);
    const int dil = dilations[rng.below(4)];
    const Tensor in = test::random_tensor(rng, {h, w, c});
    const Tensor wk = test::random_tensor(rng, {f, 3, 3, c});
    Conv2dSpec spec{static_cast<int>(f), 3, 3, dil, dil};
    worst = std::max(worst, test::max_abs_diff(
                                conv2d_dilated_forward(in, wk, spec),
                                test::naive_conv2d(in, wk, dil, dil)));
  }
  char detail[128];
  std::snprintf(detail, sizeof detail, "200 instances, max abs diff %.2e", worst);
  report(4, "dilated conv oracle", worst <= 1e-12, detail, t0);
}

// ---- 5: residual identity ----
void criterion_residual_identity() {
  const auto t0 = Clock::now();
  Rng rng(5);
  const DilationSchedule sched;
  double worst = 0.0;
  for (std::size_t block = 0; block < 3; ++block) {
    const Tensor x = test::random_tensor(rng, {2, 9, 20, 7}, -2.0, 2.0);
    const Tensor zero({7, 3, 3, 7});
    const BatchNormState bn = BatchNormState::init(7);
    Conv2dSpec d1{7, 3, 3, sched.rates[2 * block].first,
                  sched.rates[2 * block].second};
    Conv2dSpec d2{7, 3, 3, sched.rates[2 * block + 1].first,
                  sched.rates[2 * block + 1].second};
    for (Mode mode : {Mode::kTrain, Mode::kInfer}) {
      const ResidualBlockResult r =
          residual_block(x, zero, zero, bn, bn, d1, d2, mode);
      worst = std::max(worst, test::max_abs_diff(r.y, x));
    }
  }
  char detail[64];
  std::snprintf(detail, sizeof detail, "max |y-x| = %.2e", worst);
  report(5, "residual identity", worst <= 1e-15, detail, t0);
}

// ---- 6: Adam closed form ----
void criterion_adam() {
  const auto t0 = Clock::now();
  Rng rng(6);
  bool ok = true;
  for (int trial = 0; trial < 20; ++trial) {
    const double g = rng.uniform(-8.0, 8.0);
    Tensor theta({1}, {rng.uniform(-1.0, 1.0)});
    const double before = theta[0];
    AdamState s = AdamState::init({&theta});
    adam_step({&theta}, {Tensor({1}, {g})}, s);
    const double want = -0.001 * g / (std::fabs(g) + 1e-7);
    ok = ok && std::fabs((theta[0] - before) - want) <= 1e-9;
  }
  Tensor theta({4}, {1.0, -2.0, 3.0, -4.0});
  const Tensor orig = theta;
  AdamState s = AdamState::init({&theta});
  for (int step = 0; step < 3; ++step) adam_step({&theta}, {Tensor({4})}, s);
  ok = ok && test::max_abs_diff(theta, orig) == 0.0;
  report(6, "adam closed form", ok, "20 gradients + zero-grad steps", t0);
}

// ---- 7: confidence interval reproduction ----
void criterion_confidence_interval() {
  const auto t0 = Clock::now();
  const Interval ci = confidence_interval({100, 99.97, 99.97, 100, 100});
  const bool mean_ok = std::fabs(ci.mean - 99.988) <= 1e-9 &&
                       std::round(ci.mean * 100.0) / 100.0 == 99.99;
  const bool hw_ok = std::fabs(ci.half_width - 0.0204) <= 0.0005;
  char detail[96];
  std::snprintf(detail, sizeof detail, "mean %.3f, half-width %.4f", ci.mean,
                ci.half_width);
  report(7, "95% CI reproduction", mean_ok && hw_ok, detail, t0);
}

// ---- 8: desk-scale end-to-end ----
void criterion_desk_scale() {
  const auto t0 = Clock::now();
  const auto data = synth_dataset(50, 8);
  TrainConfig cfg;    // 20 epochs
  cfg.batch_size = 8;  // 27 steps/epoch: the step-count regime of a full corpus
  const CvResult cv = run_cross_validation(data, cfg, 8);
  char detail[160];
  std::snprintf(detail, sizeof detail,
                "mean test accuracy %.2f%% +- %.2f over folds [%.1f %.1f %.1f "
                "%.1f %.1f]",
                cv.summary.mean_accuracy, cv.summary.ci95_half_width,
                cv.summary.fold_accuracies[0], cv.summary.fold_accuracies[1],
                cv.summary.fold_accuracies[2], cv.summary.fold_accuracies[3],
                cv.summary.fold_accuracies[4]);
  report(8, "desk-scale 5-fold pipeline", cv.summary.mean_accuracy >= 99.0,
         detail, t0);
}

// ---- 9: WFDB round trip ----
void criterion_wfdb_round_trip() {
  const auto t0 = Clock::now();
  test::TempDir tmp("acceptance_wfdb");
  Rng rng(9);
  bool ok = true;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t signals = 12 + rng.below(4);
    const std::size_t samples = 16 + rng.below(64);
    const auto rec = test::random_record(
        rng, "r" + std::to_string(trial), signals, samples,
        {"# Reason for admission: Healthy control"});
    test::write_wfdb(tmp.path, rec);

    std::ifstream hea(tmp.str(rec.record_name + ".hea"));
    std::string text((std::istreambuf_iterator<char>(hea)),
                     std::istreambuf_iterator<char>());
    const WfdbHeader h = parse_header(text);
    ok = ok && h.record_name == rec.record_name &&
         h.num_signals == static_cast<int>(signals) &&
         h.sampling_frequency == rec.fs &&
         h.num_samples == static_cast<long>(samples);

    std::ifstream dat(tmp.str(rec.record_name + ".dat"), std::ios::binary);
    const std::vector<std::uint8_t> bytes(
        (std::istreambuf_iterator<char>(dat)), std::istreambuf_iterator<char>());
    const Tensor mv = parse_signal(bytes, h);
    for (std::size_t s = 0; s < signals && ok; ++s) {
      ok = ok && h.signals[s].gain == rec.signals[s].gain &&
           h.signals[s].baseline == rec.signals[s].adc_zero &&
           h.signals[s].name == rec.signals[s].name;
      for (std::size_t t = 0; t < samples && ok; ++t) {
        const long adc = std::llround(mv(t, s) * h.signals[s].gain +
                                      h.signals[s].baseline);
        ok = ok && adc == rec.adc[s][t];
      }
    }
  }
  report(9, "WFDB round trip", ok, "50 random format-16 records", t0);
}

// ---- 10: PTB reproduction (conditional, informational) ----
void criterion_ptb() {
  const auto t0 = Clock::now();
  const char* index = std::getenv("MIRN_PTB_INDEX");
  if (!index) {
    std::printf(
        "[SKIP] criterion 10: PTB reproduction         set MIRN_PTB_INDEX to "
        "an index of PTB record paths (see README)\n");
    return;
  }
  const IngestSummary summary = ingest_index(index);
  std::vector<LabeledSegment> segments;
  for (const EcgRecord& rec : summary.accepted) {
    auto segs = segment(rec);
    segments.insert(segments.end(), segs.begin(), segs.end());
  }
  std::array<int, kNumClasses> subjects_per_class{};
  for (const SubjectInfo& s : subject_roster(segments)) {
    subjects_per_class[static_cast<std::size_t>(s.label)] += 1;
  }
  std::printf("  PTB subjects per class:");
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::printf(" %s=%d", class_names()[c].c_str(), subjects_per_class[c]);
  }
  std::printf("\n  accepted %zu records (%zu segments), rejected %zu\n",
              summary.accepted.size(), segments.size(),
              summary.rejected.size());

  const CvResult cv = run_cross_validation(segments, TrainConfig{}, 0);
  char detail[128];
  std::snprintf(detail, sizeof detail, "mean accuracy %.2f%% +- %.2f",
                cv.summary.mean_accuracy, cv.summary.ci95_half_width);
  report(10, "PTB reproduction (info)", true, detail, t0);
}

}  // namespace

int main() {
  criterion_parameter_budget();
  criterion_shape_pipeline();
  criterion_gradients();
  criterion_conv_oracle();
  criterion_residual_identity();
  criterion_adam();
  criterion_confidence_interval();
  criterion_desk_scale();
  criterion_wfdb_round_trip();
  criterion_ptb();

  if (failures > 0) {
    std::printf("%d criterion(s) FAILED\n", failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
