#ifndef VIDPLAT_TRACE_H_
#define VIDPLAT_TRACE_H_

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace vidplat {

// Rater sign-up pattern observed after a task is published.
struct TraceEntry {
  double join_offset_s = 0.0;
  std::optional<double> training_s;
};

struct RecruitmentTrace {
  std::vector<TraceEntry> entries;  // join offsets non-decreasing

  size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

// CSV with header `join_offset_s,training_s`; training_s may be blank.
// Throws kInvalidArgument with the offending line number.
RecruitmentTrace parse_trace_csv(std::istream& in);
RecruitmentTrace load_trace_csv(const std::string& path);
void write_trace_csv(std::ostream& out, const RecruitmentTrace& trace);

}  // namespace vidplat

#endif  // VIDPLAT_TRACE_H_
