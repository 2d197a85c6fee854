#include "vidplat/event_log.h"

#include <sstream>

#include <zlib.h>

#include "vidplat/domain.h"

namespace vidplat {

using nlohmann::json;

namespace {

json body_of(const EventLogEntry& e) {
  return {{"seq", e.seq}, {"ts", e.ts}, {"kind", e.kind}, {"payload", e.payload}};
}

uint32_t checksum(const std::string& text) {
  return static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(text.data()),
            static_cast<uInt>(text.size())));
}

}  // namespace

std::string encode_entry(const EventLogEntry& entry) {
  json line = body_of(entry);
  line["crc"] = checksum(line.dump());
  return line.dump();
}

EventLogEntry decode_entry(const std::string& line) {
  json doc;
  try {
    doc = json::parse(line);
  } catch (const json::exception&) {
    throw Error(ErrorCode::kDataLoss, "unparseable log line: " + line);
  }
  std::string where = doc.contains("seq") ? "sequence " + doc["seq"].dump()
                                          : std::string("unknown sequence");
  if (!doc.is_object() || !doc.contains("crc") || !doc.contains("seq") ||
      !doc.contains("ts") || !doc.contains("kind") || !doc.contains("payload")) {
    throw Error(ErrorCode::kDataLoss, "malformed log entry at " + where);
  }
  EventLogEntry e;
  try {
    e.seq = doc["seq"].get<uint64_t>();
    e.ts = doc["ts"].get<double>();
    e.kind = doc["kind"].get<std::string>();
    e.payload = doc["payload"];
  } catch (const json::exception&) {
    throw Error(ErrorCode::kDataLoss, "malformed log entry at " + where);
  }
  if (doc["crc"] != checksum(body_of(e).dump())) {
    throw Error(ErrorCode::kDataLoss, "checksum mismatch at " + where);
  }
  return e;
}

void MemoryEventLog::emit(double ts, const std::string& kind, json payload) {
  entries_.push_back(EventLogEntry{next_seq_++, ts, kind, std::move(payload)});
}

std::vector<EventLogEntry> MemoryEventLog::take() {
  std::vector<EventLogEntry> out = std::move(entries_);
  entries_.clear();
  return out;
}

JsonlWriter::JsonlWriter(const std::string& path)
    : out_(path, std::ios::app | std::ios::binary) {
  if (!out_) {
    throw Error(ErrorCode::kInternal, "cannot open '" + path + "' for append");
  }
}

void JsonlWriter::append(const EventLogEntry& entry) {
  out_ << encode_entry(entry) << '\n';
}

void JsonlWriter::flush() { out_.flush(); }

void write_jsonl(const std::string& path,
                 const std::vector<EventLogEntry>& entries) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw Error(ErrorCode::kInternal, "cannot write '" + path + "'");
  for (const EventLogEntry& e : entries) out << encode_entry(e) << '\n';
}

std::vector<EventLogEntry> read_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kNotFound, "cannot open '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  std::vector<EventLogEntry> out;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) break;  // torn tail
    std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    EventLogEntry e = decode_entry(line);
    if (!out.empty() && e.seq != out.back().seq + 1) {
      throw Error(ErrorCode::kDataLoss,
                  "sequence gap at " + std::to_string(e.seq));
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace vidplat
