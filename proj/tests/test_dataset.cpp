#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "doctest.h"
#include "mirn/dataset.hpp"
#include "mirn/rng.hpp"
#include "support/tmpdir.hpp"
#include "support/wfdb_writer.hpp"

using namespace mirn;

// ---------- labeling ----------

namespace {

WfdbHeader header_with_comments(std::vector<std::string> comments) {
  WfdbHeader h;
  h.record_name = "r";
  h.num_signals = 12;
  h.sampling_frequency = 1000.0;
  h.comments = std::move(comments);
  return h;
}

}  // namespace

TEST_CASE("label_record maps diagnoses onto the taxonomy") {
  SUBCASE("healthy control") {
    const LabelResult r = label_record(
        header_with_comments({"# Reason for admission: Healthy control"}));
    CHECK(r.label == ClassLabel::kHealthy);
  }
  SUBCASE("raw PTB spacing quirk folds into infero-lateral") {
    const LabelResult r = label_record(header_with_comments(
        {"# Reason for admission: Myocardial infarction",
         "# Acute infarction (localization): infero-latera l"}));
    CHECK(r.label == ClassLabel::kInferoLateral);
  }
  SUBCASE("case folding") {
    const LabelResult r = label_record(header_with_comments(
        {"# Reason for admission: MYOCARDIAL INFARCTION",
         "# Acute infarction (localization): Antero-Septal"}));
    CHECK(r.label == ClassLabel::kAnteroSeptal);
  }
  SUBCASE("posterior falls outside the six classes") {
    const LabelResult r = label_record(header_with_comments(
        {"# Reason for admission: Myocardial infarction",
         "# Acute infarction (localization): posterior"}));
    CHECK_FALSE(r.label.has_value());
    CHECK(r.reject_reason.find("posterior") != std::string::npos);
  }
  SUBCASE("non-MI pathology is rejected") {
    const LabelResult r = label_record(
        header_with_comments({"# Reason for admission: Cardiomyopathy"}));
    CHECK_FALSE(r.label.has_value());
    CHECK(r.reject_reason.find("Cardiomyopathy") != std::string::npos);
  }
  SUBCASE("missing metadata is rejected with a reason") {
    const LabelResult none = label_record(header_with_comments({}));
    CHECK_FALSE(none.label.has_value());
    CHECK_FALSE(none.reject_reason.empty());

    const LabelResult no_loc = label_record(header_with_comments(
        {"# Reason for admission: Myocardial infarction"}));
    CHECK_FALSE(no_loc.label.has_value());
    CHECK(no_loc.reject_reason.find("localization") != std::string::npos);
  }
}

// ---------- downsampling ----------

TEST_CASE("downsample_10x: DC preservation and output length") {
  Tensor x({499, 2});
  for (std::size_t i = 0; i < 499; ++i) {
    x(i, 0) = 3.25;
    x(i, 1) = -1.5;
  }
  const Tensor y = downsample_10x(x);
  REQUIRE(y.shape() == std::vector<std::size_t>{50, 2});
  for (std::size_t i = 0; i < 50; ++i) {
    CHECK(y(i, 0) == doctest::Approx(3.25).epsilon(1e-15));
    CHECK(y(i, 1) == doctest::Approx(-1.5).epsilon(1e-15));
  }
}

TEST_CASE("downsample_10x: 5 Hz tone keeps its amplitude within 2%") {
  const std::size_t n = 10000;  // 10 s at 1000 Hz
  Tensor x({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    x(i, 0) = std::sin(2.0 * std::numbers::pi * 5.0 * static_cast<double>(i) / 1000.0);
  }
  const Tensor y = downsample_10x(x);
  REQUIRE(y.extent(0) == 1000);
  double peak = 0.0;
  for (std::size_t i = 100; i < 900; ++i) {
    peak = std::max(peak, std::fabs(y(i, 0)));
  }
  CHECK(peak >= 0.98);
  CHECK(peak <= 1.02);
}

TEST_CASE("downsample_10x rejects non-matrix input") {
  CHECK_THROWS_AS(downsample_10x(Tensor({10})), ShapeError);
}

// ---------- segmentation ----------

TEST_CASE("segment: window arithmetic and propagation") {
  EcgRecord rec;
  rec.subject_id = "patient042";
  rec.record_id = "s0042";
  rec.label = ClassLabel::kInferior;

  SUBCASE("11520 samples make 23 segments") {
    rec.signal = Tensor({11520, kNumLeads});
    for (std::size_t i = 0; i < rec.signal.size(); ++i) {
      rec.signal[i] = static_cast<double>(i % 977);
    }
    const auto segs = segment(rec);
    REQUIRE(segs.size() == 23);
    for (const LabeledSegment& s : segs) {
      CHECK(s.subject_id == "patient042");
      CHECK(s.label == ClassLabel::kInferior);
      CHECK(s.window.shape() == std::vector<std::size_t>{500, 12});
    }
    // sample conservation: 23*500 <= 11520 < 24*500
    CHECK(segs.size() * 500 <= 11520);
    CHECK((segs.size() + 1) * 500 > 11520);
    // windows are consecutive from sample 0
    CHECK(segs[1].window(0, 3) == rec.signal(500, 3));
    CHECK(segs[22].window(499, 11) == rec.signal(11499, 11));
  }

  SUBCASE("499 samples make none") {
    rec.signal = Tensor({499, kNumLeads});
    CHECK(segment(rec).empty());
  }
}

// ---------- splits ----------

TEST_CASE("make_splits: 174 subjects partition 105/17/52") {
  std::vector<SubjectInfo> subjects;
  for (int i = 0; i < 174; ++i) {
    subjects.push_back({"s" + std::to_string(i), ClassLabel::kHealthy});
  }
  const SplitResult r = make_splits(subjects, 5, 99);
  REQUIRE(r.folds.size() == 5);
  for (const SplitPlan& plan : r.folds) {
    CHECK(plan.train.size() == 105);
    CHECK(plan.val.size() == 17);
    CHECK(plan.test.size() == 52);
  }
}

TEST_CASE("make_splits: disjointness and coverage over 50 seeds") {
  std::vector<SubjectInfo> subjects;
  for (int c = 0; c < 7; ++c) {
    for (int i = 0; i < 5 + 3 * c; ++i) {
      subjects.push_back({"c" + std::to_string(c) + "_" + std::to_string(i),
                          static_cast<ClassLabel>(c)});
    }
  }
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const SplitResult r = make_splits(subjects, 5, seed);
    for (const SplitPlan& plan : r.folds) {
      std::set<std::string> all;
      for (const auto& s : plan.train) all.insert(s);
      for (const auto& s : plan.val) all.insert(s);
      for (const auto& s : plan.test) all.insert(s);
      CHECK(all.size() == subjects.size());
      CHECK(plan.train.size() + plan.val.size() + plan.test.size() ==
            subjects.size());
    }
  }
}

TEST_CASE("make_splits: every class reaches every set when counts permit") {
  std::vector<SubjectInfo> subjects;
  for (int c = 0; c < 7; ++c) {
    for (int i = 0; i < 4; ++i) {
      subjects.push_back({"c" + std::to_string(c) + "_" + std::to_string(i),
                          static_cast<ClassLabel>(c)});
    }
  }
  const SplitResult r = make_splits(subjects, 5, 3);
  for (const SplitPlan& plan : r.folds) {
    for (int c = 0; c < 7; ++c) {
      const auto has_class = [&](const std::vector<std::string>& ids) {
        const std::string prefix = "c" + std::to_string(c) + "_";
        for (const auto& id : ids) {
          if (id.rfind(prefix, 0) == 0) return true;
        }
        return false;
      };
      CHECK(has_class(plan.train));
      CHECK(has_class(plan.val));
      CHECK(has_class(plan.test));
    }
  }
  CHECK_FALSE(r.warnings.empty());  // 4 < 3*fold_count
}

TEST_CASE("make_splits: distinct folds shuffle differently") {
  std::vector<SubjectInfo> subjects;
  for (int i = 0; i < 40; ++i) {
    subjects.push_back({"s" + std::to_string(i), ClassLabel::kAnterior});
  }
  const SplitResult r = make_splits(subjects, 5, 7);
  bool all_equal = true;
  for (int f = 1; f < 5; ++f) {
    if (r.folds[0].test != r.folds[static_cast<std::size_t>(f)].test) {
      all_equal = false;
    }
  }
  CHECK_FALSE(all_equal);

  // same seed, same fold -> identical plan
  const SplitResult again = make_splits(subjects, 5, 7);
  CHECK(again.folds[2].train == r.folds[2].train);
  CHECK(again.folds[2].val == r.folds[2].val);
  CHECK(again.folds[2].test == r.folds[2].test);
}

TEST_CASE("make_splits: undersized classes fall back to training with a warning") {
  std::vector<SubjectInfo> subjects;
  subjects.push_back({"lone", ClassLabel::kInferoLateral});
  for (int i = 0; i < 20; ++i) {
    subjects.push_back({"h" + std::to_string(i), ClassLabel::kHealthy});
  }
  const SplitResult r = make_splits(subjects, 5, 1);
  bool warned = false;
  for (const auto& w : r.warnings) {
    if (w.find("infero-lateral") != std::string::npos) warned = true;
  }
  CHECK(warned);
  for (const SplitPlan& plan : r.folds) {
    CHECK(std::find(plan.train.begin(), plan.train.end(), "lone") !=
          plan.train.end());
  }
}

// ---------- record loading and ingest ----------

namespace {

std::vector<std::string> mi_comments(const std::string& localization) {
  return {"# Reason for admission: Myocardial infarction",
          "# Acute infarction (localization): " + localization};
}

// 15-signal record whose ADC is constant per signal: signal s holds s*100
test::SynthRecord constant_record(const std::string& name, std::size_t samples,
                                  std::vector<std::string> comments) {
  test::SynthRecord rec;
  rec.record_name = name;
  rec.comments = std::move(comments);
  const auto leads = test::ptb_lead_names();
  for (std::size_t s = 0; s < leads.size(); ++s) {
    test::SynthSignal sig;
    sig.name = leads[s];
    sig.gain = 1000.0;
    sig.adc_zero = 0;
    rec.signals.push_back(sig);
    rec.adc.emplace_back(samples, static_cast<std::int16_t>(s * 100));
  }
  return rec;
}

}  // namespace

TEST_CASE("load_record: lead selection, units, subject id, downsampling") {
  test::TempDir tmp("load");
  const auto rec = constant_record("s0001", 10000,
                                   {"# Reason for admission: Healthy control"});
  test::write_wfdb(tmp.path / "patient007", rec);

  const RecordOutcome out =
      load_record((tmp.path / "patient007" / "s0001.hea").string());
  REQUIRE(out.record.has_value());
  CHECK(out.record->subject_id == "patient007");
  CHECK(out.record->record_id == "s0001");
  CHECK(out.record->label == ClassLabel::kHealthy);
  REQUIRE(out.record->signal.shape() == std::vector<std::size_t>{1000, 12});
  // the 12 standard leads in order; Frank leads dropped; mV = adc/1000
  for (std::size_t l = 0; l < 12; ++l) {
    CHECK(out.record->signal(500, l) ==
          doctest::Approx(static_cast<double>(l) * 0.1).epsilon(1e-12));
  }
}

TEST_CASE("load_record: rejections carry reasons") {
  test::TempDir tmp("reject");

  auto bad_rate = constant_record("r500", 1000,
                                  {"# Reason for admission: Healthy control"});
  bad_rate.fs = 500.0;
  test::write_wfdb(tmp.path, bad_rate);
  const RecordOutcome rate = load_record(tmp.str("r500"));
  CHECK_FALSE(rate.record.has_value());
  CHECK(rate.reject_reason.find("sampling rate") != std::string::npos);

  auto missing = constant_record("nolead", 1000,
                                 {"# Reason for admission: Healthy control"});
  missing.signals[3].name = "foo";  // clobber avr
  test::write_wfdb(tmp.path, missing);
  const RecordOutcome lead = load_record(tmp.str("nolead"));
  CHECK_FALSE(lead.record.has_value());
  CHECK(lead.reject_reason.find("avr") != std::string::npos);

  const auto posterior = constant_record("post", 1000, mi_comments("posterior"));
  test::write_wfdb(tmp.path, posterior);
  const RecordOutcome rej = load_record(tmp.str("post"));
  CHECK_FALSE(rej.record.has_value());
  CHECK(rej.reject_reason.find("posterior") != std::string::npos);
}

TEST_CASE("ingest_index: fixture corpus counts and determinism") {
  test::TempDir tmp("ingest");
  // three accepted records (2 segments each after decimation) + one rejected
  test::write_wfdb(tmp.path / "p1",
                   constant_record("a", 10000,
                                   {"# Reason for admission: Healthy control"}));
  test::write_wfdb(tmp.path / "p2",
                   constant_record("b", 10000, mi_comments("antero-septal")));
  test::write_wfdb(tmp.path / "p3",
                   constant_record("c", 10000, mi_comments("infero-latera l")));
  test::write_wfdb(tmp.path / "p4",
                   constant_record("d", 10000, mi_comments("posterior")));

  std::ofstream index(tmp.str("index.txt"));
  index << "# fixture corpus\n";
  index << "p1/a.hea\np2/b.hea\np3/c.hea\np4/d.hea\n";
  index.close();

  const IngestSummary summary = ingest_index(tmp.str("index.txt"));
  REQUIRE(summary.accepted.size() == 3);
  REQUIRE(summary.rejected.size() == 1);
  CHECK(summary.rejected[0].first == "p4/d.hea");
  CHECK(summary.accepted[1].label == ClassLabel::kAnteroSeptal);
  CHECK(summary.accepted[2].label == ClassLabel::kInferoLateral);

  std::size_t total_segments = 0;
  for (const EcgRecord& r : summary.accepted) {
    total_segments += segment(r).size();
  }
  CHECK(total_segments == 6);  // 10000 -> 1000 rows -> 2 windows each

  CHECK_THROWS_AS(ingest_index(tmp.str("missing.txt")), Error);
}

// ---------- dataset file ----------

TEST_CASE("MIDS file: round trip, determinism and errors") {
  test::TempDir tmp("mids");
  Rng rng(17);
  std::vector<LabeledSegment> segs;
  for (int k = 0; k < 5; ++k) {
    LabeledSegment s;
    s.window = Tensor({kSegmentSamples, kNumLeads});
    for (std::size_t i = 0; i < s.window.size(); ++i) {
      s.window[i] = static_cast<double>(static_cast<float>(rng.uniform(-4, 4)));
    }
    s.label = static_cast<ClassLabel>(k % 7);
    s.subject_id = "subj" + std::to_string(k / 2);
    segs.push_back(std::move(s));
  }

  const std::string path = tmp.str("data.mids");
  write_segments(path, segs);
  const auto back = read_segments(path);
  REQUIRE(back.size() == 5);
  for (std::size_t k = 0; k < 5; ++k) {
    CHECK(back[k].subject_id == segs[k].subject_id);
    CHECK(back[k].label == segs[k].label);
    for (std::size_t i = 0; i < back[k].window.size(); ++i) {
      CHECK(back[k].window[i] == segs[k].window[i]);  // f32-representable
    }
  }

  // rewriting what was read is byte-identical
  const std::string again = tmp.str("again.mids");
  write_segments(again, back);
  std::ifstream f1(path, std::ios::binary), f2(again, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)),
                       std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)),
                       std::istreambuf_iterator<char>());
  CHECK(b1 == b2);

  SUBCASE("bad magic") {
    std::ofstream bad(tmp.str("bad.mids"), std::ios::binary);
    bad << "NOPE";
    bad.close();
    CHECK_THROWS_AS(read_segments(tmp.str("bad.mids")), BadMagicError);
  }
  SUBCASE("truncation") {
    const std::string cut = tmp.str("cut.mids");
    std::ofstream out(cut, std::ios::binary);
    out.write(b1.data(), static_cast<std::streamsize>(b1.size() / 2));
    out.close();
    CHECK_THROWS_AS(read_segments(cut), TruncatedError);
  }
}
