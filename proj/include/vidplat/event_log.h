#ifndef VIDPLAT_EVENT_LOG_H_
#define VIDPLAT_EVENT_LOG_H_

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace vidplat {

struct EventLogEntry {
  uint64_t seq = 0;
  double ts = 0.0;
  std::string kind;
  nlohmann::json payload;

  friend bool operator==(const EventLogEntry&, const EventLogEntry&) = default;
};

// One JSONL line with a CRC-32 over the canonical body.
std::string encode_entry(const EventLogEntry& entry);
// Throws kDataLoss (naming the sequence number when readable) on checksum
// or format failure.
EventLogEntry decode_entry(const std::string& line);

// Receives events as they happen.
class EventSink {
 public:
  virtual ~EventSink() = default;
  virtual void emit(double ts, const std::string& kind,
                    nlohmann::json payload) = 0;
};

class MemoryEventLog : public EventSink {
 public:
  void emit(double ts, const std::string& kind,
            nlohmann::json payload) override;

  const std::vector<EventLogEntry>& entries() const { return entries_; }
  std::vector<EventLogEntry> take();
  void clear() { entries_.clear(); }

 private:
  std::vector<EventLogEntry> entries_;
  uint64_t next_seq_ = 1;
};

// Append-only JSONL file.
class JsonlWriter {
 public:
  explicit JsonlWriter(const std::string& path);
  void append(const EventLogEntry& entry);
  void flush();

 private:
  std::ofstream out_;
};

void write_jsonl(const std::string& path,
                 const std::vector<EventLogEntry>& entries);

// Reads and verifies a log. A final line without a trailing newline is a
// torn write and is ignored; any other bad line aborts with kDataLoss.
std::vector<EventLogEntry> read_jsonl(const std::string& path);

}  // namespace vidplat

#endif  // VIDPLAT_EVENT_LOG_H_
