#ifndef VIDPLAT_GENERATORS_H_
#define VIDPLAT_GENERATORS_H_

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "vidplat/domain.h"
#include "vidplat/stats.h"

namespace vidplat {

// Which demos need how many more ratings. Every key in `counts` has a demo
// registered in `demos`.
class DemandMap {
 public:
  // Adds `count` (>= 1) ratings of demand for the demo.
  void add(const Demo& demo, int count);
  void merge(const DemandMap& other);

  bool empty() const { return counts_.empty(); }
  size_t size() const { return counts_.size(); }
  int total() const;
  int count(const std::string& key) const;

  const std::map<std::string, int>& counts() const { return counts_; }
  const std::map<std::string, Demo>& demos() const { return demos_; }
  const Demo& demo(const std::string& key) const;

  nlohmann::json to_json() const;

  friend bool operator==(const DemandMap& a, const DemandMap& b) {
    return a.counts_ == b.counts_;
  }

 private:
  std::map<std::string, int> counts_;
  std::map<std::string, Demo> demos_;
};

// Valid ratings only, per demo key.
using RatingHistory = std::map<std::string, RatingSample>;

enum class GeneratorKind {
  kBufferingStall,
  kChunkWeight,
  kAdaptiveGrid2d,
  kAdaptivePlt,
};

std::string_view to_string(GeneratorKind kind);
std::optional<GeneratorKind> parse_generator_kind(std::string_view name);

// Parameters for all built-in generators; each generator reads its subset.
// Bitrates are in kbps, latencies and PLTs in seconds.
struct GeneratorParams {
  double epsilon = 0.15;
  int min_ratings = 3;
  int max_ratings = 0;  // per-demo cap; 0 disables it

  // buffering_stall: refine chunks whose 1 s stall MOS is below alpha.
  double alpha = 3.0;
  std::vector<double> explore_times = {0.5, 2.0};

  // chunk_weight
  double tau_group = 0.25;
  std::vector<double> bitrate_levels = {1000.0, 2500.0, 5000.0};
  std::vector<double> stall_levels = {0.5, 1.0, 2.0};

  // adaptive_grid_2d / adaptive_plt
  double alpha_diff = 0.5;
  double d_min = 0.0, d_max = 0.0, delta_d = 0.0, min_delta_d = 0.0;
  double l_min = 0.0, l_max = 0.0, delta_l = 0.0, min_delta_l = 0.0;
  double plt_min = 0.0, plt_max = 0.0, eta = 0.0, min_step = 0.0;
};

struct GeneratorSpec {
  GeneratorKind kind = GeneratorKind::kBufferingStall;
  GeneratorParams params;

  StopRule stop_rule() const {
    return StopRule{params.epsilon, params.min_ratings, params.max_ratings};
  }

  // Throws kInvalidArgument naming the offending parameter.
  void validate(const SourceContent& source) const;

  // `{"name": ..., "params": {...}}`; unknown parameter names are rejected.
  static GeneratorSpec from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

// What a generator remembers about a demo it emitted.
struct DemoTag {
  int stage = 0;       // 0 = initial/coarse demo, 1 = refinement
  int chunk = -1;      // chunk generators
  double rebuf = 0.0;  // buffering_stall freeze length
  double x = 0.0;      // bitrate (grid) or PLT
  double y = 0.0;      // MTP latency (grid)

  friend bool operator==(const DemoTag&, const DemoTag&) = default;
};

// Neighbouring pair of grid samples awaiting a refinement decision.
struct GridEdge {
  std::string a;
  std::string b;
  int axis = 0;  // 0 = x, 1 = y
  double gap = 0.0;
  bool done = false;

  friend bool operator==(const GridEdge&, const GridEdge&) = default;
};

struct ChunkGroup {
  int representative = -1;
  double mos = 0.0;
  std::vector<int> members;

  friend bool operator==(const ChunkGroup&, const ChunkGroup&) = default;
};

// Everything a generator carries between update calls, as a plain value.
struct GeneratorState {
  std::map<std::string, Demo> registry;
  std::map<std::string, DemoTag> tags;
  std::map<std::string, int> requested;
  std::set<std::string> triggered;
  std::vector<ChunkGroup> groups;
  std::vector<GridEdge> edges;

  nlohmann::json to_json() const;
  static GeneratorState from_json(const nlohmann::json& doc);

  friend bool operator==(const GeneratorState&,
                         const GeneratorState&) = default;
};

struct GeneratorStep {
  DemandMap demand;
  GeneratorState state;
};

// Initial demand. buffering_stall asks for one rating per chunk demo; the
// other generators ask for min_ratings per demo.
GeneratorStep initialize(const GeneratorSpec& spec,
                         const SourceContent& source);

// New demand given every valid rating so far. Pure: the result depends only
// on the arguments. An empty demand means nothing more is needed for now.
// Throws kNotFound if `history` names a demo this generator never emitted.
GeneratorStep update(const GeneratorSpec& spec, const SourceContent& source,
                     const RatingHistory& history,
                     const GeneratorState& state);

// Per-generator refinement rules, exposed for direct testing. Each mutates
// `state` and appends to `out`.
void buffering_stall_update(const GeneratorSpec& spec,
                            const SourceContent& source,
                            const RatingHistory& history,
                            GeneratorState& state, DemandMap& out);
void chunk_weight_update(const GeneratorSpec& spec,
                         const SourceContent& source,
                         const RatingHistory& history, GeneratorState& state,
                         DemandMap& out);
void adaptive_grid_2d_update(const GeneratorSpec& spec,
                             const SourceContent& source,
                             const RatingHistory& history,
                             GeneratorState& state, DemandMap& out);
void adaptive_plt_update(const GeneratorSpec& spec,
                         const SourceContent& source,
                         const RatingHistory& history, GeneratorState& state,
                         DemandMap& out);

// Demo builders shared with the simulator and tests.
Demo make_grid_demo(const SourceContent& source, double bitrate_kbps,
                    double latency_s);
Demo make_plt_demo(const SourceContent& source, double plt_s);
Demo make_chunk_refinement_demo(const SourceContent& source, int chunk,
                                double bitrate_kbps, double stall_s);

// Evenly spaced samples from lo to hi (inclusive); hi is appended when the
// step does not land on it exactly.
std::vector<double> axis_samples(double lo, double hi, double step);

}  // namespace vidplat

#endif  // VIDPLAT_GENERATORS_H_
