#include "vidplat/demo_studio.h"

#include <algorithm>
#include <cmath>

namespace vidplat {

using nlohmann::json;

json to_json(const PlaybackManifest& manifest) {
  json segments = json::array();
  for (const Segment& s : manifest.segments) {
    segments.push_back({{"source_interval", {s.source_start, s.source_end}},
                        {"effective_rate", s.rate},
                        {"bitrate_kbps", s.bitrate_kbps > 0.0
                                             ? json(s.bitrate_kbps)
                                             : json("source-default")},
                        {"freeze_before", s.freeze_before}});
  }
  json questions = json::array();
  for (const ControlQuestion& q : manifest.control_questions) {
    questions.push_back({{"id", q.id}, {"text", q.text}});
  }
  return {{"demo_key", manifest.demo_key},
          {"segments", std::move(segments)},
          {"total_wall_duration", manifest.total_wall_duration},
          {"control_questions", std::move(questions)}};
}

PlaybackManifest manifest_from_json(const json& doc) {
  PlaybackManifest m;
  m.demo_key = doc.at("demo_key").get<std::string>();
  for (const json& s : doc.at("segments")) {
    Segment seg;
    seg.source_start = s.at("source_interval").at(0).get<double>();
    seg.source_end = s.at("source_interval").at(1).get<double>();
    seg.rate = s.at("effective_rate").get<double>();
    const json& bitrate = s.at("bitrate_kbps");
    seg.bitrate_kbps = bitrate.is_number() ? bitrate.get<double>() : 0.0;
    seg.freeze_before = s.at("freeze_before").get<double>();
    m.segments.push_back(seg);
  }
  m.total_wall_duration = doc.at("total_wall_duration").get<double>();
  // Expected answers never leave the server, so they are not in the JSON.
  m.control_questions = derive_control_questions(parse_demo_key(m.demo_key));
  return m;
}

Demo generate_demo_with_rebuf(const SourceContent& source, int chunk_index,
                              double rebuf_time) {
  if (chunk_index < 0 || chunk_index >= source.chunk_count()) {
    throw Error(ErrorCode::kInvalidArgument,
                "chunk " + std::to_string(chunk_index) + " out of range [0," +
                    std::to_string(source.chunk_count()) + ")");
  }
  if (!(rebuf_time > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "rebuf_time must be > 0");
  }
  return Demo(source.id,
              {QualityEvent{EventKind::kFreezeFrame,
                            source.chunk_start(chunk_index),
                            source.chunk_end(chunk_index), rebuf_time}});
}

PlaybackManifest render_manifest(const Demo& demo,
                                 const SourceContent& source) {
  std::vector<Violation> violations = validate_demo(demo, source);
  if (!violations.empty()) {
    std::string message = "invalid demo '" + demo.key() + "':";
    for (const Violation& v : violations) {
      message += " " + v.field + ": " + v.message + ";";
    }
    throw Error(ErrorCode::kInvalidArgument, message);
  }

  const double duration = round_ms(source.duration);
  std::vector<double> cuts = {0.0, duration};
  for (const QualityEvent& e : demo.events()) {
    cuts.push_back(e.start);
    cuts.push_back(e.end);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  PlaybackManifest manifest;
  manifest.demo_key = demo.key();
  for (size_t i = 0; i + 1 < cuts.size(); ++i) {
    Segment seg;
    seg.source_start = cuts[i];
    seg.source_end = cuts[i + 1];
    for (const QualityEvent& e : demo.events()) {
      const bool covers = e.start <= seg.source_start && e.end >= seg.source_end;
      switch (e.kind) {
        case EventKind::kFreezeFrame:
          if (e.start == seg.source_start) seg.freeze_before += e.magnitude;
          break;
        case EventKind::kChangeBitrate:
          if (covers) seg.bitrate_kbps = e.magnitude;
          break;
        case EventKind::kChangePlaybackRate:
          if (covers) seg.rate = e.magnitude;
          break;
      }
    }
    manifest.total_wall_duration += seg.wall_seconds();
    manifest.segments.push_back(seg);
  }
  manifest.control_questions = derive_control_questions(demo);
  return manifest;
}

double demo_wall_duration(const Demo& demo, const SourceContent& source) {
  return render_manifest(demo, source).total_wall_duration;
}

DemoCache::DemoCache(std::shared_ptr<Renderer> renderer)
    : renderer_(std::move(renderer)) {}

std::shared_ptr<const PlaybackManifest> DemoCache::get_or_build(
    const Demo& demo, const SourceContent& source) {
  std::promise<std::shared_ptr<const PlaybackManifest>> promise;
  std::shared_future<std::shared_ptr<const PlaybackManifest>> future;
  bool owner = false;
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = entries_.find(demo.key());
    if (it != entries_.end()) {
      future = it->second;
    } else {
      future = promise.get_future().share();
      entries_.emplace(demo.key(), future);
      ++builds_;
      owner = true;
    }
  }
  if (owner) {
    try {
      promise.set_value(std::make_shared<const PlaybackManifest>(
          renderer_->render(demo, source)));
    } catch (...) {
      {
        std::lock_guard<std::mutex> lock(mu_);
        entries_.erase(demo.key());
      }
      promise.set_exception(std::current_exception());
    }
  }
  return future.get();
}

int DemoCache::builds() const {
  std::lock_guard<std::mutex> lock(mu_);
  return builds_;
}

}  // namespace vidplat
