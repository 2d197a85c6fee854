#ifndef VIDPLAT_DEMO_STUDIO_H_
#define VIDPLAT_DEMO_STUDIO_H_

#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vidplat/domain.h"

namespace vidplat {

// One contiguous source interval played at a fixed rate. `bitrate_kbps` of
// zero means the source default.
struct Segment {
  double source_start = 0.0;
  double source_end = 0.0;
  double rate = 1.0;
  double bitrate_kbps = 0.0;
  double freeze_before = 0.0;

  double wall_seconds() const {
    return freeze_before + (source_end - source_start) / rate;
  }
};

struct PlaybackManifest {
  std::string demo_key;
  std::vector<Segment> segments;
  double total_wall_duration = 0.0;
  std::vector<ControlQuestion> control_questions;
};

nlohmann::json to_json(const PlaybackManifest& manifest);
PlaybackManifest manifest_from_json(const nlohmann::json& doc);

// One FreezeFrame of `rebuf_time` seconds at the start of chunk
// `chunk_index`; the event range covers the stalled chunk.
Demo generate_demo_with_rebuf(const SourceContent& source, int chunk_index,
                              double rebuf_time);

// Turns a demo into playback segments. Freezes are placed before the
// segment that starts at the freeze time; bitrate changes only annotate.
// Throws kInvalidArgument for invalid demos (including overlapping
// playback-rate events).
PlaybackManifest render_manifest(const Demo& demo, const SourceContent& source);

// Wall-clock seconds a rater needs to watch the demo.
double demo_wall_duration(const Demo& demo, const SourceContent& source);

// Hook for a real encoder; the default renderer only builds manifests.
class Renderer {
 public:
  virtual ~Renderer() = default;
  virtual PlaybackManifest render(const Demo& demo,
                                  const SourceContent& source) = 0;
};

class ManifestRenderer : public Renderer {
 public:
  PlaybackManifest render(const Demo& demo,
                          const SourceContent& source) override {
    return render_manifest(demo, source);
  }
};

// Key-addressed manifest cache. Concurrent lookups of the same key share a
// single build.
class DemoCache {
 public:
  explicit DemoCache(std::shared_ptr<Renderer> renderer =
                         std::make_shared<ManifestRenderer>());

  std::shared_ptr<const PlaybackManifest> get_or_build(
      const Demo& demo, const SourceContent& source);

  int builds() const;

 private:
  std::shared_ptr<Renderer> renderer_;
  mutable std::mutex mu_;
  std::map<std::string,
           std::shared_future<std::shared_ptr<const PlaybackManifest>>>
      entries_;
  int builds_ = 0;
};

}  // namespace vidplat

#endif  // VIDPLAT_DEMO_STUDIO_H_
