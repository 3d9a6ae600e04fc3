#include <cctype>
#include <cstdlib>
#include <sstream>
#include <string>
#include <vector>

#include "mirn/dataset.hpp"

namespace mirn {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> tokenize(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> tokens;
  std::string tok;
  while (is >> tok) tokens.push_back(tok);
  return tokens;
}

[[noreturn]] void fail(std::size_t line_no, const std::string& msg) {
  throw ParseError("header line " + std::to_string(line_no) + ": " + msg);
}

long parse_long(const std::string& tok, std::size_t line_no, const char* what) {
  std::size_t pos = 0;
  long v = 0;
  try {
    v = std::stol(tok, &pos);
  } catch (const std::exception&) {
    fail(line_no, std::string("cannot parse ") + what + " from '" + tok + "'");
  }
  if (pos != tok.size()) {
    fail(line_no, std::string("trailing characters in ") + what + " '" + tok + "'");
  }
  return v;
}

double parse_double(const std::string& tok, std::size_t line_no,
                    const char* what) {
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(tok, &pos);
  } catch (const std::exception&) {
    fail(line_no, std::string("cannot parse ") + what + " from '" + tok + "'");
  }
  if (pos != tok.size()) {
    fail(line_no, std::string("trailing characters in ") + what + " '" + tok + "'");
  }
  return v;
}

// gain token: number, optional "(baseline)", optional "/units"
void parse_gain_token(const std::string& tok, std::size_t line_no,
                      WfdbSignalSpec& sig, bool& baseline_given) {
  std::string body = tok;
  const std::size_t slash = body.find('/');
  if (slash != std::string::npos) body = body.substr(0, slash);

  const std::size_t open = body.find('(');
  if (open != std::string::npos) {
    const std::size_t close = body.find(')', open);
    if (close == std::string::npos) fail(line_no, "unterminated baseline in '" + tok + "'");
    sig.baseline = static_cast<double>(
        parse_long(body.substr(open + 1, close - open - 1), line_no, "baseline"));
    baseline_given = true;
    body = body.substr(0, open);
  }
  sig.gain = parse_double(body, line_no, "gain");
}

}  // namespace

WfdbHeader parse_header(const std::string& text) {
  std::vector<std::string> lines;
  {
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(line);
    }
  }

  WfdbHeader h;
  std::size_t i = 0;
  // record line: first line that is neither blank nor a comment
  for (; i < lines.size(); ++i) {
    const std::string t = trim(lines[i]);
    if (t.empty()) continue;
    if (t[0] == '#') {
      h.comments.push_back(lines[i]);
      continue;
    }
    break;
  }
  if (i == lines.size()) throw ParseError("header has no record line");

  {
    const std::size_t line_no = i + 1;
    const std::vector<std::string> tok = tokenize(lines[i]);
    if (tok.size() < 2) fail(line_no, "record line needs a name and a signal count");
    if (tok[0].find('/') != std::string::npos) {
      fail(line_no, "multi-segment records are not supported: '" + tok[0] + "'");
    }
    h.record_name = tok[0];
    const long ns = parse_long(tok[1], line_no, "signal count");
    if (ns < 1) fail(line_no, "signal count must be >= 1");
    h.num_signals = static_cast<int>(ns);
    if (tok.size() >= 3) {
      // may carry /counter modifiers; take the numeric prefix
      std::string fs = tok[2];
      const std::size_t slash = fs.find('/');
      if (slash != std::string::npos) fs = fs.substr(0, slash);
      h.sampling_frequency = parse_double(fs, line_no, "sampling frequency");
      if (h.sampling_frequency <= 0) fail(line_no, "sampling frequency must be > 0");
    }
    if (tok.size() >= 4) {
      const long n = parse_long(tok[3], line_no, "sample count");
      if (n < 0) fail(line_no, "sample count must be >= 0");
      h.num_samples = n;
    }
  }
  ++i;

  int parsed = 0;
  for (; i < lines.size() && parsed < h.num_signals; ++i) {
    const std::size_t line_no = i + 1;
    const std::string t = trim(lines[i]);
    if (t.empty()) continue;
    if (t[0] == '#') {
      h.comments.push_back(lines[i]);
      continue;
    }
    const std::vector<std::string> tok = tokenize(t);
    if (tok.size() < 2) fail(line_no, "signal line needs a file name and a format");

    WfdbSignalSpec sig;
    sig.file = tok[0];
    for (char c : tok[1]) {
      if (!std::isdigit(static_cast<unsigned char>(c))) {
        fail(line_no, "unsupported format spec '" + tok[1] + "' (only plain format 16)");
      }
    }
    const long fmt = parse_long(tok[1], line_no, "format");
    if (fmt != 16) {
      fail(line_no, "unsupported signal format " + std::to_string(fmt) +
                        " (only format 16)");
    }
    sig.format = 16;

    bool baseline_given = false;
    sig.gain = 200.0;  // WFDB default when the field is absent
    if (tok.size() >= 3) parse_gain_token(tok[2], line_no, sig, baseline_given);
    if (sig.gain <= 0) fail(line_no, "gain must be positive");
    if (!baseline_given && tok.size() >= 5) {
      sig.baseline = static_cast<double>(parse_long(tok[4], line_no, "adc zero"));
    }
    if (tok.size() >= 9) {
      std::string desc = tok[8];
      for (std::size_t k = 9; k < tok.size(); ++k) desc += " " + tok[k];
      sig.name = desc;
    }
    h.signals.push_back(std::move(sig));
    ++parsed;
  }
  if (parsed < h.num_signals) {
    throw ParseError("header declares " + std::to_string(h.num_signals) +
                     " signals but defines only " + std::to_string(parsed));
  }
  // trailing comments
  for (; i < lines.size(); ++i) {
    const std::string t = trim(lines[i]);
    if (!t.empty() && t[0] == '#') h.comments.push_back(lines[i]);
  }
  return h;
}

Tensor parse_signal(const std::vector<std::uint8_t>& bytes,
                    const WfdbHeader& header) {
  const std::size_t s_n = static_cast<std::size_t>(header.num_signals);
  const std::size_t frame_bytes = 2 * s_n;
  if (bytes.size() % frame_bytes != 0) {
    throw TruncatedError("signal data of " + std::to_string(bytes.size()) +
                         " bytes is not a whole number of " +
                         std::to_string(s_n) + "-signal frames");
  }
  const std::size_t n = bytes.size() / frame_bytes;
  if (n == 0) throw TruncatedError("signal data is empty");
  if (header.num_samples > 0 &&
      n != static_cast<std::size_t>(header.num_samples)) {
    throw TruncatedError("header declares " + std::to_string(header.num_samples) +
                         " samples but the data holds " + std::to_string(n));
  }

  Tensor mv({n, s_n});
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t s = 0; s < s_n; ++s) {
      const std::size_t off = (t * s_n + s) * 2;
      const std::int16_t adc = static_cast<std::int16_t>(
          static_cast<std::uint16_t>(bytes[off]) |
          (static_cast<std::uint16_t>(bytes[off + 1]) << 8));
      const WfdbSignalSpec& spec = header.signals[s];
      mv(t, s) = (static_cast<double>(adc) - spec.baseline) / spec.gain;
    }
  }
  return mv;
}

}  // namespace mirn
