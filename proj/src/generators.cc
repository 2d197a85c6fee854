#include "vidplat/generators.h"

#include <algorithm>
#include <cmath>
#include <functional>

#include "vidplat/demo_studio.h"

namespace vidplat {

using nlohmann::json;

void DemandMap::add(const Demo& demo, int count) {
  if (count < 1) {
    throw Error(ErrorCode::kInvalidArgument,
                "demand for '" + demo.key() + "' must be >= 1");
  }
  counts_[demo.key()] += count;
  demos_.emplace(demo.key(), demo);
}

void DemandMap::merge(const DemandMap& other) {
  for (const auto& [key, count] : other.counts_) {
    add(other.demos_.at(key), count);
  }
}

int DemandMap::total() const {
  int sum = 0;
  for (const auto& [key, count] : counts_) sum += count;
  return sum;
}

int DemandMap::count(const std::string& key) const {
  auto it = counts_.find(key);
  return it == counts_.end() ? 0 : it->second;
}

const Demo& DemandMap::demo(const std::string& key) const {
  auto it = demos_.find(key);
  if (it == demos_.end()) {
    throw Error(ErrorCode::kNotFound, "no demo registered for '" + key + "'");
  }
  return it->second;
}

json DemandMap::to_json() const {
  json doc = json::object();
  for (const auto& [key, count] : counts_) doc[key] = count;
  return doc;
}

std::string_view to_string(GeneratorKind kind) {
  switch (kind) {
    case GeneratorKind::kBufferingStall: return "buffering_stall";
    case GeneratorKind::kChunkWeight: return "chunk_weight";
    case GeneratorKind::kAdaptiveGrid2d: return "adaptive_grid_2d";
    case GeneratorKind::kAdaptivePlt: return "adaptive_plt";
  }
  return "unknown";
}

std::optional<GeneratorKind> parse_generator_kind(std::string_view name) {
  if (name == "buffering_stall") return GeneratorKind::kBufferingStall;
  if (name == "chunk_weight") return GeneratorKind::kChunkWeight;
  if (name == "adaptive_grid_2d") return GeneratorKind::kAdaptiveGrid2d;
  if (name == "adaptive_plt") return GeneratorKind::kAdaptivePlt;
  return std::nullopt;
}

namespace {

[[noreturn]] void bad_param(const std::string& name, const std::string& why) {
  throw Error(ErrorCode::kInvalidArgument, "params." + name + ": " + why);
}

void require(bool ok, const std::string& name, const std::string& why) {
  if (!ok) bad_param(name, why);
}

struct ParamField {
  const char* name;
  std::function<void(GeneratorParams&, const json&)> read;
  std::function<json(const GeneratorParams&)> write;
};

template <typename T>
ParamField scalar(const char* name, T GeneratorParams::*member) {
  return ParamField{
      name,
      [name, member](GeneratorParams& p, const json& v) {
        if (!v.is_number()) bad_param(name, "expected a number");
        if constexpr (std::is_integral_v<T>) {
          if (!v.is_number_integer()) bad_param(name, "expected an integer");
        }
        p.*member = v.get<T>();
      },
      [member](const GeneratorParams& p) { return json(p.*member); }};
}

ParamField list(const char* name,
                std::vector<double> GeneratorParams::*member) {
  return ParamField{
      name,
      [name, member](GeneratorParams& p, const json& v) {
        if (!v.is_array()) bad_param(name, "expected a list of numbers");
        std::vector<double> values;
        for (const json& item : v) {
          if (!item.is_number()) bad_param(name, "expected a list of numbers");
          values.push_back(item.get<double>());
        }
        p.*member = std::move(values);
      },
      [member](const GeneratorParams& p) { return json(p.*member); }};
}

const std::vector<ParamField>& param_fields() {
  static const std::vector<ParamField> fields = {
      scalar("epsilon", &GeneratorParams::epsilon),
      scalar("alpha", &GeneratorParams::alpha),
      scalar("alpha_diff", &GeneratorParams::alpha_diff),
      scalar("tau_group", &GeneratorParams::tau_group),
      list("explore_times", &GeneratorParams::explore_times),
      list("bitrate_levels", &GeneratorParams::bitrate_levels),
      list("stall_levels", &GeneratorParams::stall_levels),
      scalar("d_min", &GeneratorParams::d_min),
      scalar("d_max", &GeneratorParams::d_max),
      scalar("l_min", &GeneratorParams::l_min),
      scalar("l_max", &GeneratorParams::l_max),
      scalar("delta_d", &GeneratorParams::delta_d),
      scalar("delta_l", &GeneratorParams::delta_l),
      scalar("min_delta_d", &GeneratorParams::min_delta_d),
      scalar("min_delta_l", &GeneratorParams::min_delta_l),
      scalar("plt_min", &GeneratorParams::plt_min),
      scalar("plt_max", &GeneratorParams::plt_max),
      scalar("eta", &GeneratorParams::eta),
      scalar("min_step", &GeneratorParams::min_step),
      scalar("min_ratings", &GeneratorParams::min_ratings),
      scalar("max_ratings", &GeneratorParams::max_ratings),
  };
  return fields;
}

bool all_positive(const std::vector<double>& values) {
  return std::all_of(values.begin(), values.end(),
                     [](double v) { return v > 0.0; });
}

}  // namespace

void GeneratorSpec::validate(const SourceContent& source) const {
  const GeneratorParams& p = params;
  require(p.epsilon > 0.0, "epsilon", "must be > 0");
  require(p.min_ratings >= 2, "min_ratings", "must be >= 2");
  require(p.max_ratings == 0 || p.max_ratings >= p.min_ratings, "max_ratings",
          "must be 0 (uncapped) or >= min_ratings");
  switch (kind) {
    case GeneratorKind::kBufferingStall:
      require(all_positive(p.explore_times), "explore_times",
              "every freeze length must be > 0");
      break;
    case GeneratorKind::kChunkWeight:
      require(p.tau_group >= 0.0, "tau_group", "must be >= 0");
      require(!p.bitrate_levels.empty() && all_positive(p.bitrate_levels),
              "bitrate_levels", "must be a non-empty list of kbps > 0");
      require(!p.stall_levels.empty() && all_positive(p.stall_levels),
              "stall_levels", "must be a non-empty list of seconds > 0");
      break;
    case GeneratorKind::kAdaptiveGrid2d:
      require(p.alpha_diff > 0.0, "alpha_diff", "must be > 0");
      require(p.d_min > 0.0, "d_min", "must be > 0 kbps");
      require(p.d_max >= p.d_min, "d_max", "must be >= d_min");
      require(p.delta_d > 0.0, "delta_d", "must be > 0");
      require(p.min_delta_d > 0.0, "min_delta_d", "must be > 0");
      require(p.l_min >= 0.0, "l_min", "must be >= 0");
      require(p.l_max >= p.l_min, "l_max", "must be >= l_min");
      require(p.delta_l > 0.0, "delta_l", "must be > 0");
      require(p.min_delta_l > 0.0, "min_delta_l", "must be > 0");
      break;
    case GeneratorKind::kAdaptivePlt:
      require(p.alpha_diff > 0.0, "alpha_diff", "must be > 0");
      require(p.plt_min >= 0.0, "plt_min", "must be >= 0");
      require(p.plt_max >= p.plt_min, "plt_max", "must be >= plt_min");
      require(p.eta > 0.0, "eta", "must be > 0");
      require(p.min_step > 0.0, "min_step", "must be > 0");
      break;
  }
  require(source.chunk_count() >= 1, "source", "needs at least one chunk");
}

GeneratorSpec GeneratorSpec::from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("name") || !doc["name"].is_string()) {
    throw Error(ErrorCode::kInvalidArgument,
                "generator.name: expected a generator name");
  }
  std::optional<GeneratorKind> kind =
      parse_generator_kind(doc["name"].get<std::string>());
  if (!kind) {
    throw Error(ErrorCode::kInvalidArgument,
                "generator.name: unknown generator '" +
                    doc["name"].get<std::string>() + "'");
  }
  GeneratorSpec spec;
  spec.kind = *kind;
  if (doc.contains("params")) {
    const json& params = doc["params"];
    if (!params.is_object()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "generator.params: expected an object");
    }
    for (const auto& [name, value] : params.items()) {
      const auto& fields = param_fields();
      auto it = std::find_if(fields.begin(), fields.end(),
                             [&](const ParamField& f) { return name == f.name; });
      if (it == fields.end()) bad_param(name, "unknown parameter");
      it->read(spec.params, value);
    }
  }
  return spec;
}

json GeneratorSpec::to_json() const {
  json params = json::object();
  for (const ParamField& f : param_fields()) params[f.name] = f.write(this->params);
  return {{"name", std::string(to_string(kind))}, {"params", params}};
}

json GeneratorState::to_json() const {
  json doc;
  doc["demos"] = json::array();
  for (const auto& [key, demo] : registry) doc["demos"].push_back(key);
  doc["tags"] = json::object();
  for (const auto& [key, tag] : tags) {
    doc["tags"][key] = {{"stage", tag.stage}, {"chunk", tag.chunk},
                        {"rebuf", tag.rebuf}, {"x", tag.x}, {"y", tag.y}};
  }
  doc["requested"] = requested;
  doc["triggered"] = triggered;
  doc["groups"] = json::array();
  for (const ChunkGroup& g : groups) {
    doc["groups"].push_back({{"representative", g.representative},
                             {"mos", g.mos},
                             {"members", g.members}});
  }
  doc["edges"] = json::array();
  for (const GridEdge& e : edges) {
    doc["edges"].push_back({{"a", e.a}, {"b", e.b}, {"axis", e.axis},
                            {"gap", e.gap}, {"done", e.done}});
  }
  return doc;
}

GeneratorState GeneratorState::from_json(const json& doc) {
  GeneratorState s;
  for (const json& key : doc.at("demos")) {
    Demo demo = parse_demo_key(key.get<std::string>());
    s.registry.emplace(demo.key(), demo);
  }
  for (const auto& [key, t] : doc.at("tags").items()) {
    s.tags[key] = DemoTag{t.at("stage"), t.at("chunk"), t.at("rebuf"),
                          t.at("x"), t.at("y")};
  }
  s.requested = doc.at("requested").get<std::map<std::string, int>>();
  s.triggered = doc.at("triggered").get<std::set<std::string>>();
  for (const json& g : doc.at("groups")) {
    s.groups.push_back(ChunkGroup{g.at("representative"), g.at("mos"),
                                  g.at("members").get<std::vector<int>>()});
  }
  for (const json& e : doc.at("edges")) {
    s.edges.push_back(GridEdge{e.at("a"), e.at("b"), e.at("axis"),
                               e.at("gap"), e.at("done")});
  }
  return s;
}

std::vector<double> axis_samples(double lo, double hi, double step) {
  std::vector<double> out;
  const double tol = step * 1e-9;
  for (int i = 0;; ++i) {
    double v = lo + i * step;
    if (v > hi + tol) break;
    out.push_back(round_ms(v));
  }
  if (out.empty() || out.back() < round_ms(hi)) out.push_back(round_ms(hi));
  return out;
}

Demo make_grid_demo(const SourceContent& source, double bitrate_kbps,
                    double latency_s) {
  std::vector<QualityEvent> events = {
      {EventKind::kChangeBitrate, 0.0, source.duration, bitrate_kbps}};
  if (round_ms(latency_s) > 0.0) {
    // Each chunk-long clip is stretched by latency_s of extra wall time.
    const double rate = source.chunk_length / (source.chunk_length + latency_s);
    events.push_back({EventKind::kChangePlaybackRate, 0.0, source.duration,
                      rate});
  }
  return Demo(source.id, std::move(events));
}

Demo make_plt_demo(const SourceContent& source, double plt_s) {
  if (round_ms(plt_s) <= 0.0) return Demo(source.id, {});
  return Demo(source.id, {{EventKind::kFreezeFrame, 0.0, source.chunk_end(0),
                           plt_s}});
}

Demo make_chunk_refinement_demo(const SourceContent& source, int chunk,
                                double bitrate_kbps, double stall_s) {
  const double a = source.chunk_start(chunk);
  const double b = source.chunk_end(chunk);
  return Demo(source.id, {{EventKind::kChangeBitrate, a, b, bitrate_kbps},
                          {EventKind::kFreezeFrame, a, b, stall_s}});
}

namespace {

const RatingSample kEmptySample;

const RatingSample& sample_of(const RatingHistory& history,
                              const std::string& key) {
  auto it = history.find(key);
  return it == history.end() ? kEmptySample : it->second;
}

// Registers and requests a demo unless it was emitted before.
bool emit(GeneratorState& state, DemandMap& out, const Demo& demo,
          const DemoTag& tag, int count) {
  if (state.registry.count(demo.key()) > 0) return false;
  state.registry.emplace(demo.key(), demo);
  state.tags.emplace(demo.key(), tag);
  state.requested[demo.key()] = count;
  out.add(demo, count);
  return true;
}

// One more rating for every unstable demo with nothing outstanding.
void apply_stop_rule(const StopRule& rule, const RatingHistory& history,
                     GeneratorState& state, DemandMap& out) {
  for (const auto& [key, demo] : state.registry) {
    const RatingSample& sample = sample_of(history, key);
    const int outstanding =
        state.requested[key] - static_cast<int>(sample.size());
    if (outstanding <= 0 && rule.needs_more(sample)) {
      state.requested[key] += 1;
      out.add(demo, 1);
    }
  }
}

// Chunk-ordered stage-0 demos that just became stable and were not yet
// acted upon.
std::vector<std::pair<int, std::string>> newly_stable_chunks(
    const StopRule& rule, const RatingHistory& history,
    const GeneratorState& state) {
  std::vector<std::pair<int, std::string>> out;
  for (const auto& [key, tag] : state.tags) {
    if (tag.stage != 0 || tag.chunk < 0) continue;
    if (state.triggered.count("chunk:" + std::to_string(tag.chunk)) > 0) {
      continue;
    }
    const RatingSample& sample = sample_of(history, key);
    if (!sample.empty() && rule.stable(sample)) out.emplace_back(tag.chunk, key);
  }
  std::sort(out.begin(), out.end());
  return out;
}

void add_grid(const std::vector<double>& xs, const std::vector<double>& ys,
              const std::function<Demo(double, double)>& make, int count,
              GeneratorState& state, DemandMap& out) {
  std::vector<std::vector<std::string>> keys(xs.size(),
                                             std::vector<std::string>(ys.size()));
  for (size_t i = 0; i < xs.size(); ++i) {
    for (size_t j = 0; j < ys.size(); ++j) {
      Demo demo = make(xs[i], ys[j]);
      emit(state, out, demo, DemoTag{0, -1, 0.0, xs[i], ys[j]}, count);
      keys[i][j] = demo.key();
    }
  }
  for (size_t i = 0; i < xs.size(); ++i) {
    for (size_t j = 0; j < ys.size(); ++j) {
      if (i + 1 < xs.size() && keys[i][j] != keys[i + 1][j]) {
        state.edges.push_back(
            GridEdge{keys[i][j], keys[i + 1][j], 0, xs[i + 1] - xs[i], false});
      }
      if (j + 1 < ys.size() && keys[i][j] != keys[i][j + 1]) {
        state.edges.push_back(
            GridEdge{keys[i][j], keys[i][j + 1], 1, ys[j + 1] - ys[j], false});
      }
    }
  }
}

// Bisects every stable neighbouring pair whose MOS differs by more than
// alpha_diff, as long as the half gap is not below the axis' minimum step.
void refine_grid(const GeneratorSpec& spec, const RatingHistory& history,
                 const std::function<Demo(double, double)>& make,
                 const double min_gap[2], GeneratorState& state,
                 DemandMap& out) {
  const StopRule rule = spec.stop_rule();
  const size_t n = state.edges.size();
  for (size_t i = 0; i < n; ++i) {
    if (state.edges[i].done) continue;
    const GridEdge edge = state.edges[i];
    const RatingSample& sa = sample_of(history, edge.a);
    const RatingSample& sb = sample_of(history, edge.b);
    if (sa.empty() || sb.empty() || !rule.stable(sa) || !rule.stable(sb)) {
      continue;
    }
    state.edges[i].done = true;
    const double diff = std::fabs(mos(sa) - mos(sb));
    const double half = edge.gap / 2.0;
    if (!(diff > spec.params.alpha_diff)) continue;
    if (half < min_gap[edge.axis] * (1.0 - 1e-9)) continue;
    const DemoTag& ta = state.tags.at(edge.a);
    const DemoTag& tb = state.tags.at(edge.b);
    const double x = round_ms((ta.x + tb.x) / 2.0);
    const double y = round_ms((ta.y + tb.y) / 2.0);
    Demo mid = make(x, y);
    emit(state, out, mid, DemoTag{1, -1, 0.0, x, y}, spec.params.min_ratings);
    state.edges.push_back(GridEdge{edge.a, mid.key(), edge.axis, half, false});
    state.edges.push_back(GridEdge{mid.key(), edge.b, edge.axis, half, false});
  }
}

}  // namespace

void buffering_stall_update(const GeneratorSpec& spec,
                            const SourceContent& source,
                            const RatingHistory& history,
                            GeneratorState& state, DemandMap& out) {
  const StopRule rule = spec.stop_rule();
  for (const auto& [chunk, key] : newly_stable_chunks(rule, history, state)) {
    // Only the 1 s probe branches; refinement demos never do.
    if (state.tags.at(key).rebuf != 1.0) continue;
    state.triggered.insert("chunk:" + std::to_string(chunk));
    if (!(mos(sample_of(history, key)) < spec.params.alpha)) continue;
    for (double t : spec.params.explore_times) {
      emit(state, out, generate_demo_with_rebuf(source, chunk, t),
           DemoTag{1, chunk, round_ms(t), 0.0, 0.0}, 1);
    }
  }
}

void chunk_weight_update(const GeneratorSpec& spec,
                         const SourceContent& source,
                         const RatingHistory& history, GeneratorState& state,
                         DemandMap& out) {
  const StopRule rule = spec.stop_rule();
  for (const auto& [chunk, key] : newly_stable_chunks(rule, history, state)) {
    state.triggered.insert("chunk:" + std::to_string(chunk));
    const double m = mos(sample_of(history, key));
    ChunkGroup* best = nullptr;
    for (ChunkGroup& g : state.groups) {
      const double d = std::fabs(g.mos - m);
      if (d <= spec.params.tau_group &&
          (best == nullptr || d < std::fabs(best->mos - m))) {
        best = &g;
      }
    }
    if (best != nullptr) {
      best->members.push_back(chunk);
      continue;
    }
    state.groups.push_back(ChunkGroup{chunk, m, {chunk}});
    for (double bitrate : spec.params.bitrate_levels) {
      for (double stall : spec.params.stall_levels) {
        emit(state, out,
             make_chunk_refinement_demo(source, chunk, bitrate, stall),
             DemoTag{1, chunk, round_ms(stall), bitrate, 0.0},
             spec.params.min_ratings);
      }
    }
  }
}

void adaptive_grid_2d_update(const GeneratorSpec& spec,
                             const SourceContent& source,
                             const RatingHistory& history,
                             GeneratorState& state, DemandMap& out) {
  const double min_gap[2] = {spec.params.min_delta_d, spec.params.min_delta_l};
  refine_grid(spec, history,
              [&](double x, double y) { return make_grid_demo(source, x, y); },
              min_gap, state, out);
}

void adaptive_plt_update(const GeneratorSpec& spec,
                         const SourceContent& source,
                         const RatingHistory& history, GeneratorState& state,
                         DemandMap& out) {
  const double min_gap[2] = {spec.params.min_step, spec.params.min_step};
  refine_grid(spec, history,
              [&](double x, double) { return make_plt_demo(source, x); },
              min_gap, state, out);
}

GeneratorStep initialize(const GeneratorSpec& spec,
                         const SourceContent& source) {
  spec.validate(source);
  GeneratorStep step;
  const GeneratorParams& p = spec.params;
  switch (spec.kind) {
    case GeneratorKind::kBufferingStall:
      for (int c = 0; c < source.chunk_count(); ++c) {
        emit(step.state, step.demand, generate_demo_with_rebuf(source, c, 1.0),
             DemoTag{0, c, 1.0, 0.0, 0.0}, 1);
      }
      break;
    case GeneratorKind::kChunkWeight:
      for (int c = 0; c < source.chunk_count(); ++c) {
        emit(step.state, step.demand, generate_demo_with_rebuf(source, c, 1.0),
             DemoTag{0, c, 1.0, 0.0, 0.0}, p.min_ratings);
      }
      break;
    case GeneratorKind::kAdaptiveGrid2d:
      add_grid(axis_samples(p.d_min, p.d_max, p.delta_d),
               axis_samples(p.l_min, p.l_max, p.delta_l),
               [&](double x, double y) { return make_grid_demo(source, x, y); },
               p.min_ratings, step.state, step.demand);
      break;
    case GeneratorKind::kAdaptivePlt:
      add_grid(axis_samples(p.plt_min, p.plt_max, p.eta), {0.0},
               [&](double x, double) { return make_plt_demo(source, x); },
               p.min_ratings, step.state, step.demand);
      break;
  }
  return step;
}

GeneratorStep update(const GeneratorSpec& spec, const SourceContent& source,
                     const RatingHistory& history,
                     const GeneratorState& state) {
  for (const auto& [key, sample] : history) {
    if (state.registry.count(key) == 0) {
      throw Error(ErrorCode::kNotFound,
                  "history references unknown demo '" + key + "'");
    }
  }
  GeneratorStep step{DemandMap{}, state};
  apply_stop_rule(spec.stop_rule(), history, step.state, step.demand);
  switch (spec.kind) {
    case GeneratorKind::kBufferingStall:
      buffering_stall_update(spec, source, history, step.state, step.demand);
      break;
    case GeneratorKind::kChunkWeight:
      chunk_weight_update(spec, source, history, step.state, step.demand);
      break;
    case GeneratorKind::kAdaptiveGrid2d:
      adaptive_grid_2d_update(spec, source, history, step.state, step.demand);
      break;
    case GeneratorKind::kAdaptivePlt:
      adaptive_plt_update(spec, source, history, step.state, step.demand);
      break;
  }
  return step;
}

}  // namespace vidplat
