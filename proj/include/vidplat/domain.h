#ifndef VIDPLAT_DOMAIN_H_
#define VIDPLAT_DOMAIN_H_

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vidplat {

enum class ErrorCode {
  kInvalidArgument,
  kNotFound,
  kConflict,
  kFailedPrecondition,
  kResourceExhausted,
  kDataLoss,
  kInternal,
};

std::string_view to_string(ErrorCode code);

// Every module reports failures through this type; the code lets the HTTP
// layer and the CLI map errors onto status codes and exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// Raw content supplied by the researcher, split into fixed-length chunks.
struct SourceContent {
  std::string id;
  double duration = 0.0;
  double chunk_length = 0.0;

  // Throws kInvalidArgument unless duration > 0, 0 < chunk_length <= duration
  // and the id is usable inside a demo key.
  static SourceContent make(std::string id, double duration,
                            double chunk_length);

  int chunk_count() const;
  double chunk_start(int chunk_index) const;
  double chunk_end(int chunk_index) const;
};

enum class EventKind { kFreezeFrame, kChangeBitrate, kChangePlaybackRate };

std::string_view to_string(EventKind kind);
std::optional<EventKind> parse_event_kind(std::string_view name);

// A low-quality event applied to a source interval. The meaning of
// `magnitude` depends on the kind: freeze seconds, target kbps, or a
// playback-rate multiplier in (0, 1].
struct QualityEvent {
  EventKind kind = EventKind::kFreezeFrame;
  double start = 0.0;
  double end = 0.0;
  double magnitude = 0.0;
};

bool operator==(const QualityEvent& a, const QualityEvent& b);

// A source plus an ordered list of quality events. Construction rounds all
// floats to millisecond precision and sorts events by (start, kind,
// magnitude), so two semantically equal demos compare and hash equal.
class Demo {
 public:
  Demo() = default;
  Demo(std::string source_id, std::vector<QualityEvent> events);

  const std::string& source_id() const { return source_id_; }
  const std::vector<QualityEvent>& events() const { return events_; }
  const std::string& key() const { return key_; }
  bool pristine() const { return events_.empty(); }

  friend bool operator==(const Demo& a, const Demo& b) {
    return a.key_ == b.key_;
  }

 private:
  std::string source_id_;
  std::vector<QualityEvent> events_;
  std::string key_;
};

// Canonical key: `<source_id>|<kind>:<start>:<end>:<magnitude>;...` with
// three-decimal floats and events in (start, kind, magnitude) order.
std::string demo_key(const Demo& demo);

// Inverse of demo_key. Throws kInvalidArgument on malformed input.
Demo parse_demo_key(std::string_view key);

// Rounds to the three-decimal grid used by demo keys.
double round_ms(double value);

struct Violation {
  std::string field;
  std::string message;
};

// Returns every violated event invariant; empty means valid. Throws
// kNotFound when the demo refers to a different source.
std::vector<Violation> validate_demo(const Demo& demo,
                                     const SourceContent& source);

// One boolean golden-standard question per event kind. The expected answer
// is whether the demo contains an event of that kind.
struct ControlQuestion {
  std::string id;
  std::string text;
  bool expected = false;
};

std::vector<ControlQuestion> derive_control_questions(const Demo& demo);

struct Assignment {
  std::string id;
  std::string demo_key;
  std::string rater_id;
  double issued_at = 0.0;
  std::vector<ControlQuestion> control_questions;
};

enum class Verdict { kPending, kValid, kInvalid };

std::string_view to_string(Verdict verdict);

struct Rating {
  std::string assignment_id;
  int score = 0;
  double watch_seconds = 0.0;
  std::vector<bool> control_answers;
  Verdict verdict = Verdict::kPending;

  // Only Pending -> Valid and Pending -> Invalid are allowed.
  void set_verdict(Verdict next);
};

bool valid_score(int score);

// Flat key/value eligibility predicates. Keys prefixed with `min_` or
// `max_` compare numerically against the attribute named by the remainder;
// all other keys require string equality.
using Attributes = std::map<std::string, std::string>;
using Eligibility = std::map<std::string, std::string>;

}  // namespace vidplat

#endif  // VIDPLAT_DOMAIN_H_
