#include "vidplat/domain.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <tuple>

namespace vidplat {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kNotFound: return "not_found";
    case ErrorCode::kConflict: return "conflict";
    case ErrorCode::kFailedPrecondition: return "failed_precondition";
    case ErrorCode::kResourceExhausted: return "resource_exhausted";
    case ErrorCode::kDataLoss: return "data_loss";
    case ErrorCode::kInternal: return "internal";
  }
  return "unknown";
}

SourceContent SourceContent::make(std::string id, double duration,
                                  double chunk_length) {
  if (id.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "source id must not be empty");
  }
  if (id.find_first_of("|;:\n") != std::string::npos) {
    throw Error(ErrorCode::kInvalidArgument,
                "source id must not contain '|', ';', ':' or newlines");
  }
  if (!(duration > 0.0) || !std::isfinite(duration)) {
    throw Error(ErrorCode::kInvalidArgument, "source duration must be > 0");
  }
  if (!(chunk_length > 0.0) || chunk_length > duration) {
    throw Error(ErrorCode::kInvalidArgument,
                "chunk_length must be in (0, duration]");
  }
  return SourceContent{std::move(id), duration, chunk_length};
}

int SourceContent::chunk_count() const {
  // Tolerate float noise such as 16.0 / 4.0000000001.
  return static_cast<int>(std::ceil(duration / chunk_length - 1e-9));
}

double SourceContent::chunk_start(int chunk_index) const {
  return chunk_index * chunk_length;
}

double SourceContent::chunk_end(int chunk_index) const {
  return std::min(duration, (chunk_index + 1) * chunk_length);
}

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::kFreezeFrame: return "FreezeFrame";
    case EventKind::kChangeBitrate: return "ChangeBitrate";
    case EventKind::kChangePlaybackRate: return "ChangePlaybackRate";
  }
  return "Unknown";
}

std::optional<EventKind> parse_event_kind(std::string_view name) {
  if (name == "FreezeFrame") return EventKind::kFreezeFrame;
  if (name == "ChangeBitrate") return EventKind::kChangeBitrate;
  if (name == "ChangePlaybackRate") return EventKind::kChangePlaybackRate;
  return std::nullopt;
}

double round_ms(double value) {
  double rounded = std::round(value * 1000.0) / 1000.0;
  return rounded == 0.0 ? 0.0 : rounded;  // drop negative zero
}

bool operator==(const QualityEvent& a, const QualityEvent& b) {
  return a.kind == b.kind && a.start == b.start && a.end == b.end &&
         a.magnitude == b.magnitude;
}

namespace {

std::string format_ms(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", round_ms(value));
  return buf;
}

std::string build_key(const std::string& source_id,
                      const std::vector<QualityEvent>& events) {
  std::string key = source_id;
  key += '|';
  for (size_t i = 0; i < events.size(); ++i) {
    if (i > 0) key += ';';
    const QualityEvent& e = events[i];
    key += to_string(e.kind);
    key += ':';
    key += format_ms(e.start);
    key += ':';
    key += format_ms(e.end);
    key += ':';
    key += format_ms(e.magnitude);
  }
  return key;
}

double parse_number(std::string_view text, std::string_view key) {
  std::string owned(text);
  char* end = nullptr;
  double value = std::strtod(owned.c_str(), &end);
  if (owned.empty() || end != owned.c_str() + owned.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                "malformed number '" + owned + "' in demo key '" +
                    std::string(key) + "'");
  }
  return value;
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  size_t pos = 0;
  while (true) {
    size_t next = text.find(sep, pos);
    if (next == std::string_view::npos) {
      parts.push_back(text.substr(pos));
      break;
    }
    parts.push_back(text.substr(pos, next - pos));
    pos = next + 1;
  }
  return parts;
}

}  // namespace

Demo::Demo(std::string source_id, std::vector<QualityEvent> events)
    : source_id_(std::move(source_id)), events_(std::move(events)) {
  for (QualityEvent& e : events_) {
    e.start = round_ms(e.start);
    e.end = round_ms(e.end);
    e.magnitude = round_ms(e.magnitude);
  }
  std::sort(events_.begin(), events_.end(),
            [](const QualityEvent& a, const QualityEvent& b) {
              return std::tie(a.start, a.kind, a.magnitude, a.end) <
                     std::tie(b.start, b.kind, b.magnitude, b.end);
            });
  key_ = build_key(source_id_, events_);
}

std::string demo_key(const Demo& demo) { return demo.key(); }

Demo parse_demo_key(std::string_view key) {
  size_t bar = key.find('|');
  if (bar == std::string_view::npos || bar == 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "demo key '" + std::string(key) + "' has no source prefix");
  }
  std::string source_id(key.substr(0, bar));
  std::string_view rest = key.substr(bar + 1);
  std::vector<QualityEvent> events;
  if (!rest.empty()) {
    for (std::string_view item : split(rest, ';')) {
      std::vector<std::string_view> fields = split(item, ':');
      if (fields.size() != 4) {
        throw Error(ErrorCode::kInvalidArgument,
                    "malformed event '" + std::string(item) + "'");
      }
      std::optional<EventKind> kind = parse_event_kind(fields[0]);
      if (!kind) {
        throw Error(ErrorCode::kInvalidArgument,
                    "unknown event kind '" + std::string(fields[0]) + "'");
      }
      events.push_back(QualityEvent{*kind, parse_number(fields[1], key),
                                    parse_number(fields[2], key),
                                    parse_number(fields[3], key)});
    }
  }
  return Demo(std::move(source_id), std::move(events));
}

std::vector<Violation> validate_demo(const Demo& demo,
                                     const SourceContent& source) {
  if (demo.source_id() != source.id) {
    throw Error(ErrorCode::kNotFound,
                "unknown source_id '" + demo.source_id() + "'");
  }
  std::vector<Violation> out;
  const double duration = round_ms(source.duration);
  const auto& events = demo.events();
  for (size_t i = 0; i < events.size(); ++i) {
    const QualityEvent& e = events[i];
    std::string field = "events[" + std::to_string(i) + "]";
    if (e.start < 0.0) {
      out.push_back({field + ".start", "start before 0"});
    }
    if (!(e.start < e.end)) {
      out.push_back({field + ".time_range", "start must precede end"});
    }
    if (e.end > duration) {
      out.push_back({field + ".end", "end exceeds duration"});
    }
    switch (e.kind) {
      case EventKind::kFreezeFrame:
        if (!(e.magnitude > 0.0)) {
          out.push_back({field + ".magnitude", "freeze duration must be > 0"});
        }
        break;
      case EventKind::kChangeBitrate:
        if (!(e.magnitude > 0.0)) {
          out.push_back({field + ".magnitude", "bitrate must be > 0"});
        }
        break;
      case EventKind::kChangePlaybackRate:
        if (!(e.magnitude > 0.0 && e.magnitude <= 1.0)) {
          out.push_back({field + ".magnitude", "rate must be in (0,1]"});
        }
        break;
    }
  }
  // Playback-rate events must not overlap; events are sorted by start.
  const QualityEvent* last_rate = nullptr;
  for (size_t i = 0; i < events.size(); ++i) {
    if (events[i].kind != EventKind::kChangePlaybackRate) continue;
    if (last_rate != nullptr && events[i].start < last_rate->end) {
      out.push_back({"events[" + std::to_string(i) + "]",
                     "overlapping playback-rate events"});
    }
    last_rate = &events[i];
  }
  return out;
}

std::vector<ControlQuestion> derive_control_questions(const Demo& demo) {
  bool stall = false, bitrate = false, rate = false;
  for (const QualityEvent& e : demo.events()) {
    switch (e.kind) {
      case EventKind::kFreezeFrame: stall = true; break;
      case EventKind::kChangeBitrate: bitrate = true; break;
      case EventKind::kChangePlaybackRate: rate = true; break;
    }
  }
  return {
      {"saw_stall", "Did the video pause or freeze at any point?", stall},
      {"saw_quality_change",
       "Did you notice a resolution or quality change in the video?", bitrate},
      {"saw_slowdown", "Did any part of the video play slower than normal?",
       rate},
  };
}

std::string_view to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::kPending: return "pending";
    case Verdict::kValid: return "valid";
    case Verdict::kInvalid: return "invalid";
  }
  return "unknown";
}

void Rating::set_verdict(Verdict next) {
  if (verdict != Verdict::kPending || next == Verdict::kPending) {
    throw Error(ErrorCode::kFailedPrecondition,
                "verdict for assignment '" + assignment_id +
                    "' can only leave Pending once");
  }
  verdict = next;
}

bool valid_score(int score) { return score >= 1 && score <= 5; }

}  // namespace vidplat
