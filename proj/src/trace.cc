#include "vidplat/trace.h"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "vidplat/domain.h"

namespace vidplat {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double parse_field(const std::string& text, int line_no, const char* name) {
  try {
    size_t used = 0;
    double v = std::stod(text, &used);
    if (used != text.size() || !std::isfinite(v) || v < 0.0) throw 0;
    return v;
  } catch (...) {
    throw Error(ErrorCode::kInvalidArgument,
                "trace line " + std::to_string(line_no) + ": bad " + name +
                    " '" + text + "'");
  }
}

}  // namespace

RecruitmentTrace parse_trace_csv(std::istream& in) {
  RecruitmentTrace trace;
  std::string line;
  int line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "join_offset_s,training_s") {
        throw Error(ErrorCode::kInvalidArgument,
                    "trace line " + std::to_string(line_no) +
                        ": expected header 'join_offset_s,training_s'");
      }
      header = true;
      continue;
    }
    const size_t comma = line.find(',');
    TraceEntry entry;
    entry.join_offset_s = parse_field(
        trim(line.substr(0, comma)), line_no, "join_offset_s");
    if (comma != std::string::npos) {
      std::string training = trim(line.substr(comma + 1));
      if (!training.empty()) {
        entry.training_s = parse_field(training, line_no, "training_s");
      }
    }
    if (!trace.entries.empty() &&
        entry.join_offset_s < trace.entries.back().join_offset_s) {
      throw Error(ErrorCode::kInvalidArgument,
                  "trace line " + std::to_string(line_no) +
                      ": join offsets must be non-decreasing");
    }
    trace.entries.push_back(entry);
  }
  if (!header) {
    throw Error(ErrorCode::kInvalidArgument, "trace: missing header");
  }
  return trace;
}

RecruitmentTrace load_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::kNotFound, "cannot open trace file '" + path + "'");
  }
  return parse_trace_csv(in);
}

void write_trace_csv(std::ostream& out, const RecruitmentTrace& trace) {
  out << "join_offset_s,training_s\n" << std::setprecision(12);
  for (const TraceEntry& e : trace.entries) {
    out << e.join_offset_s << ',';
    if (e.training_s) out << *e.training_s;
    out << '\n';
  }
}

}  // namespace vidplat
