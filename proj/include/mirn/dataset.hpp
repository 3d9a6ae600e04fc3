#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mirn/model.hpp"
#include "mirn/tensor.hpp"

namespace mirn {

// ---- WFDB parsing ----

struct WfdbSignalSpec {
  std::string file;
  int format = 0;
  double gain = 0.0;     // ADC units per mV
  double baseline = 0.0;  // ADC value of 0 mV
  std::string name;       // description field, e.g. "i", "v6", "vx"
};

struct WfdbHeader {
  std::string record_name;
  int num_signals = 0;
  double sampling_frequency = 250.0;
  long num_samples = 0;  // 0 when the header leaves it unspecified
  std::vector<WfdbSignalSpec> signals;
  std::vector<std::string> comments;  // '#' lines, kept verbatim
};

/// Parses .hea content. Only plain signal format 16 is accepted; malformed
/// lines raise ParseError with the offending line number.
WfdbHeader parse_header(const std::string& text);

/// Format 16: interleaved 16-bit little-endian two's-complement ADC samples.
/// Returns [N, num_signals] in millivolts: (adc - baseline) / gain.
Tensor parse_signal(const std::vector<std::uint8_t>& bytes,
                    const WfdbHeader& header);

// ---- records and segments ----

struct EcgRecord {
  std::string subject_id;
  std::string record_id;
  Tensor signal;  // [N,12] mV at 100 Hz, leads i,ii,iii,avr,avl,avf,v1..v6
  ClassLabel label = ClassLabel::kHealthy;
};

struct LabeledSegment {
  Tensor window;  // [500,12] mV
  ClassLabel label = ClassLabel::kHealthy;
  std::string subject_id;
};

struct LabelResult {
  std::optional<ClassLabel> label;
  std::string reject_reason;  // set when label is empty
};

/// Maps the header's diagnosis comments onto the 7-class taxonomy:
/// "Healthy control" -> class 0; "Myocardial infarction" with a localization
/// matching one of the six names (whitespace-normalized, case-folded) ->
/// classes 1-6; everything else is rejected with a reason.
LabelResult label_record(const WfdbHeader& header);

/// 1000 Hz -> 100 Hz per lead: width-10 moving average (anti-aliasing),
/// then every 10th sample. [N,C] -> [ceil(N/10),C].
Tensor downsample_10x(const Tensor& signal);

/// Consecutive non-overlapping 500-sample windows from sample 0; the
/// trailing remainder is discarded. A record shorter than 500 samples
/// yields no segments.
std::vector<LabeledSegment> segment(const EcgRecord& record);

/// Reads <path>.hea / the referenced .dat, selects the 12 standard leads,
/// converts to mV, downsamples to 100 Hz and labels. The subject id is the
/// record's parent directory name (PTB layout), or the record name when the
/// path has no parent.
struct RecordOutcome {
  std::optional<EcgRecord> record;
  std::string reject_reason;
};
/// With require_label = false a record whose diagnosis cannot be mapped is
/// still loaded (class defaults to healthy) so it can be run through
/// inference; structural problems still reject it.
RecordOutcome load_record(const std::string& hea_path,
                          bool require_label = true);

// ---- splits ----

struct SubjectInfo {
  std::string id;
  ClassLabel label = ClassLabel::kHealthy;
};

struct SplitPlan {
  int fold = 0;
  std::vector<std::string> train, val, test;
};

struct SplitResult {
  std::vector<SplitPlan> folds;
  std::vector<std::string> warnings;
};

/// Per fold: independent seeded shuffle, then a class-stratified 60/10/30
/// partition by subject (train absorbs the rounding remainder). The three
/// lists are disjoint and cover every subject.
SplitResult make_splits(const std::vector<SubjectInfo>& subjects,
                        int fold_count, std::uint64_t seed);

// ---- ingest driver ----

struct IngestSummary {
  std::vector<EcgRecord> accepted;
  std::vector<std::pair<std::string, std::string>> rejected;  // path, reason
};

/// Index file: one record path per line (absolute or relative to the index
/// file's directory, with or without the .hea suffix). Blank lines and lines
/// starting with '#' are skipped.
IngestSummary ingest_index(const std::string& index_path);

// ---- dataset file ----
// Magic "MIDS", version 0x01, segment count (u32 LE), then per segment:
// subject id length (u8) + ASCII id, label byte, 500x12 f32 LE row-major mV.

void write_segments(const std::string& path,
                    const std::vector<LabeledSegment>& segments);
std::vector<LabeledSegment> read_segments(const std::string& path);

}  // namespace mirn
