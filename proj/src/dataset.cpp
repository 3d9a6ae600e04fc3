#include "mirn/dataset.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mirn/rng.hpp"

namespace fs = std::filesystem;

namespace mirn {

namespace {

std::string fold_case(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string strip_spaces(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (!std::isspace(static_cast<unsigned char>(c))) out += c;
  }
  return out;
}

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

// value of the first comment whose text starts with `key` (case-insensitive)
std::optional<std::string> comment_value(const WfdbHeader& header,
                                         const std::string& key) {
  for (const std::string& raw : header.comments) {
    std::string body = trim(raw);
    if (!body.empty() && body[0] == '#') body = trim(body.substr(1));
    const std::string folded = fold_case(body);
    if (folded.rfind(key, 0) == 0) {
      return trim(body.substr(key.size()));
    }
  }
  return std::nullopt;
}

}  // namespace

LabelResult label_record(const WfdbHeader& header) {
  LabelResult r;
  const auto reason = comment_value(header, "reason for admission:");
  if (!reason) {
    r.reject_reason = "missing diagnosis metadata";
    return r;
  }
  const std::string reason_folded = fold_case(trim(*reason));
  if (reason_folded == "healthy control") {
    r.label = ClassLabel::kHealthy;
    return r;
  }
  if (reason_folded != "myocardial infarction") {
    r.reject_reason = "diagnosis outside the taxonomy: " + *reason;
    return r;
  }

  const auto loc = comment_value(header, "acute infarction (localization):");
  if (!loc) {
    r.reject_reason = "missing infarction localization";
    return r;
  }
  const std::string wanted = strip_spaces(fold_case(*loc));
  const auto& names = class_names();
  for (std::size_t c = 1; c < names.size(); ++c) {
    if (strip_spaces(fold_case(names[c])) == wanted) {
      r.label = static_cast<ClassLabel>(c);
      return r;
    }
  }
  r.reject_reason = "localization outside the six-class taxonomy: " + *loc;
  return r;
}

Tensor downsample_10x(const Tensor& signal) {
  if (signal.rank() != 2) {
    throw ShapeError("downsample input must be [N,C], got " + signal.shape_str());
  }
  const std::size_t n = signal.extent(0);
  const std::size_t c_n = signal.extent(1);
  const std::size_t out_n = (n + 9) / 10;

  Tensor out({out_n, c_n});
  for (std::size_t k = 0; k < out_n; ++k) {
    const long center = static_cast<long>(k) * 10;
    const std::size_t lo = static_cast<std::size_t>(std::max(0L, center - 4));
    const std::size_t hi =
        std::min(n - 1, static_cast<std::size_t>(center + 5));
    const double width = static_cast<double>(hi - lo + 1);
    for (std::size_t c = 0; c < c_n; ++c) {
      double acc = 0.0;
      for (std::size_t i = lo; i <= hi; ++i) acc += signal(i, c);
      out(k, c) = acc / width;
    }
  }
  return out;
}

std::vector<LabeledSegment> segment(const EcgRecord& record) {
  if (record.signal.rank() != 2 || record.signal.extent(1) != kNumLeads) {
    throw ShapeError("record signal must be [N,12], got " +
                     record.signal.shape_str());
  }
  const std::size_t n = record.signal.extent(0);
  const std::size_t count = n / kSegmentSamples;

  std::vector<LabeledSegment> segments;
  segments.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    LabeledSegment seg;
    seg.window = Tensor({kSegmentSamples, kNumLeads});
    for (std::size_t i = 0; i < kSegmentSamples; ++i) {
      for (std::size_t l = 0; l < kNumLeads; ++l) {
        seg.window(i, l) = record.signal(s * kSegmentSamples + i, l);
      }
    }
    seg.label = record.label;
    seg.subject_id = record.subject_id;
    segments.push_back(std::move(seg));
  }
  return segments;
}

namespace {

const std::array<std::string, kNumLeads>& standard_leads() {
  static const std::array<std::string, kNumLeads> leads = {
      "i", "ii", "iii", "avr", "avl", "avf",
      "v1", "v2", "v3", "v4", "v5", "v6"};
  return leads;
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::vector<std::uint8_t> read_binary_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

RecordOutcome load_record(const std::string& hea_path, bool require_label) {
  RecordOutcome out;
  fs::path path(hea_path);
  if (path.extension() != ".hea") path += ".hea";

  const WfdbHeader header = parse_header(read_text_file(path.string()));

  const LabelResult label = label_record(header);
  if (!label.label && require_label) {
    out.reject_reason = label.reject_reason;
    return out;
  }
  if (header.sampling_frequency != 1000.0) {
    out.reject_reason = "sampling rate " +
                        std::to_string(header.sampling_frequency) +
                        " Hz, expected 1000";
    return out;
  }

  // the 12 standard leads, located by name
  std::array<std::size_t, kNumLeads> column{};
  for (std::size_t l = 0; l < kNumLeads; ++l) {
    bool found = false;
    for (std::size_t s = 0; s < header.signals.size(); ++s) {
      if (fold_case(header.signals[s].name) == standard_leads()[l]) {
        column[l] = s;
        found = true;
        break;
      }
    }
    if (!found) {
      out.reject_reason = "missing standard lead " + standard_leads()[l];
      return out;
    }
  }

  for (const WfdbSignalSpec& sig : header.signals) {
    if (sig.file != header.signals[0].file) {
      throw ParseError("signals split across multiple files are not supported");
    }
  }
  const fs::path dat_path = path.parent_path() / header.signals[0].file;
  const Tensor all = parse_signal(read_binary_file(dat_path.string()), header);

  Tensor leads({all.extent(0), kNumLeads});
  for (std::size_t t = 0; t < all.extent(0); ++t) {
    for (std::size_t l = 0; l < kNumLeads; ++l) {
      leads(t, l) = all(t, column[l]);
    }
  }

  EcgRecord rec;
  rec.record_id = header.record_name;
  std::string parent = path.parent_path().filename().string();
  if (parent == "." || parent == "..") parent.clear();
  rec.subject_id = parent.empty() ? header.record_name : parent;
  rec.signal = downsample_10x(leads);
  rec.label = label.label.value_or(ClassLabel::kHealthy);
  out.record = std::move(rec);
  return out;
}

SplitResult make_splits(const std::vector<SubjectInfo>& subjects,
                        int fold_count, std::uint64_t seed) {
  if (fold_count < 1) throw ConfigError("fold count must be >= 1");
  SplitResult result;

  std::array<std::vector<std::string>, kNumClasses> by_class;
  for (const SubjectInfo& s : subjects) {
    by_class[static_cast<std::size_t>(s.label)].push_back(s.id);
  }

  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const std::size_t n = by_class[c].size();
    if (n == 0) continue;
    if (n < 3) {
      result.warnings.push_back("class " + class_names()[c] + " has only " +
                                std::to_string(n) +
                                " subject(s); assigned to training only");
    } else if (n < static_cast<std::size_t>(3 * fold_count)) {
      result.warnings.push_back("class " + class_names()[c] + " has only " +
                                std::to_string(n) + " subjects for " +
                                std::to_string(fold_count) + " folds");
    }
  }

  for (int f = 0; f < fold_count; ++f) {
    Rng rng(derive_seed(seed, seed_purpose::kFold, static_cast<std::uint64_t>(f)));
    SplitPlan plan;
    plan.fold = f;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      std::vector<std::string> ids = by_class[c];
      if (ids.empty()) continue;
      rng.shuffle(ids);
      const std::size_t n = ids.size();
      std::size_t test_n = 0, val_n = 0;
      if (n >= 3) {
        test_n = std::max<std::size_t>(1, (n * 3) / 10);
        val_n = std::max<std::size_t>(1, n / 10);
      }
      for (std::size_t i = 0; i < n; ++i) {
        if (i < test_n) {
          plan.test.push_back(ids[i]);
        } else if (i < test_n + val_n) {
          plan.val.push_back(ids[i]);
        } else {
          plan.train.push_back(ids[i]);
        }
      }
    }
    result.folds.push_back(std::move(plan));
  }
  return result;
}

IngestSummary ingest_index(const std::string& index_path) {
  std::ifstream is(index_path);
  if (!is) throw Error("cannot open index " + index_path);
  const fs::path base = fs::path(index_path).parent_path();

  IngestSummary summary;
  std::string line;
  while (std::getline(is, line)) {
    const std::string entry = trim(line);
    if (entry.empty() || entry[0] == '#') continue;
    fs::path rec(entry);
    if (rec.is_relative()) rec = base / rec;

    RecordOutcome outcome = load_record(rec.string());
    if (outcome.record) {
      summary.accepted.push_back(std::move(*outcome.record));
    } else {
      summary.rejected.emplace_back(entry, outcome.reject_reason);
    }
  }
  return summary;
}

// ---- dataset file ----

namespace {

constexpr char kMagic[4] = {'M', 'I', 'D', 'S'};
constexpr std::uint8_t kVersion = 0x01;

void write_u32_le(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {
      static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
      static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_f32_le(std::ostream& os, float f) {
  write_u32_le(os, std::bit_cast<std::uint32_t>(f));
}

bool read_bytes(std::istream& is, void* dst, std::size_t n) {
  is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  return static_cast<std::size_t>(is.gcount()) == n;
}

std::uint32_t read_u32_le(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!read_bytes(is, b, 4)) throw TruncatedError("truncated dataset " + path);
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_segments(const std::string& path,
                    const std::vector<LabeledSegment>& segments) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path + " for writing");
  os.write(kMagic, 4);
  os.put(static_cast<char>(kVersion));
  write_u32_le(os, static_cast<std::uint32_t>(segments.size()));

  for (const LabeledSegment& seg : segments) {
    check_shape(seg.window, {kSegmentSamples, kNumLeads}, "segment window");
    if (seg.subject_id.size() > 255) {
      throw Error("subject id too long: " + seg.subject_id);
    }
    os.put(static_cast<char>(seg.subject_id.size()));
    os.write(seg.subject_id.data(),
             static_cast<std::streamsize>(seg.subject_id.size()));
    os.put(static_cast<char>(static_cast<std::uint8_t>(seg.label)));
    for (std::size_t i = 0; i < seg.window.size(); ++i) {
      write_f32_le(os, static_cast<float>(seg.window[i]));
    }
  }
  if (!os) throw Error("write failed: " + path);
}

std::vector<LabeledSegment> read_segments(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);

  char magic[4];
  if (!read_bytes(is, magic, 4) ||
      !std::equal(magic, magic + 4, kMagic)) {
    throw BadMagicError("not a dataset file: " + path);
  }
  char version = 0;
  if (!is.get(version) || static_cast<std::uint8_t>(version) != kVersion) {
    throw BadMagicError("unsupported dataset version in " + path);
  }
  const std::uint32_t count = read_u32_le(is, path);

  std::vector<LabeledSegment> segments;
  segments.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    unsigned char id_len = 0;
    if (!read_bytes(is, &id_len, 1)) throw TruncatedError("truncated dataset " + path);
    LabeledSegment seg;
    seg.subject_id.resize(id_len);
    if (!read_bytes(is, seg.subject_id.data(), id_len)) {
      throw TruncatedError("truncated dataset " + path);
    }
    unsigned char label = 0;
    if (!read_bytes(is, &label, 1)) throw TruncatedError("truncated dataset " + path);
    if (label >= kNumClasses) {
      throw ParseError("segment " + std::to_string(k) + " has class byte " +
                       std::to_string(label) + " in " + path);
    }
    seg.label = static_cast<ClassLabel>(label);
    seg.window = Tensor({kSegmentSamples, kNumLeads});
    for (std::size_t i = 0; i < seg.window.size(); ++i) {
      seg.window[i] = static_cast<double>(
          std::bit_cast<float>(read_u32_le(is, path)));
    }
    segments.push_back(std::move(seg));
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw ParseError("trailing data after the last segment in " + path);
  }
  return segments;
}

}  // namespace mirn
