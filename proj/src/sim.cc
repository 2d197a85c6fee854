#include "vidplat/sim.h"

#include <algorithm>
#include <climits>
#include <cmath>
#include <iomanip>
#include <limits>
#include <queue>
#include <set>
#include <sstream>

#include "vidplat/demo_studio.h"
#include "vidplat/generators.h"
#include "vidplat/orchestrator.h"
#include "vidplat/raters.h"
#include "vidplat/stats.h"

namespace vidplat {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& path, const std::string& why) {
  throw Error(ErrorCode::kInvalidArgument, path + ": " + why);
}

void reject_unknown(const json& doc, const std::string& where,
                    std::initializer_list<const char*> known) {
  if (!doc.is_object()) bad(where, "expected an object");
  for (const auto& [name, value] : doc.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || name == k;
    if (!ok) bad(where.empty() ? name : where + "." + name, "unknown field");
  }
}

double num(const json& doc, const char* name, double fallback) {
  if (!doc.contains(name)) return fallback;
  if (!doc[name].is_number()) bad(name, "expected a number");
  return doc[name].get<double>();
}

int chunk_of(double t, const SourceContent& source) {
  const int c = static_cast<int>(std::floor(t / source.chunk_length + 1e-9));
  return std::clamp(c, 0, source.chunk_count() - 1);
}

}  // namespace

// ---------------------------------------------------------------------------
// Behavior

double QoeModel::true_mos(const Demo& demo, const SourceContent& source) const {
  const bool plt_model = !plt_steps.empty() || plt_slope > 0.0;
  double q = base;
  for (const QualityEvent& e : demo.events()) {
    const double span = (e.end - e.start) / source.duration;
    switch (e.kind) {
      case EventKind::kFreezeFrame: {
        if (plt_model && e.start == 0.0) {
          q -= plt_slope * e.magnitude;
          for (const auto& [threshold, drop] : plt_steps) {
            if (e.magnitude >= threshold) q -= drop;
          }
          break;
        }
        const size_t c = static_cast<size_t>(chunk_of(e.start, source));
        const double w = c < chunk_weights.size() ? chunk_weights[c] : 1.0;
        q -= stall_penalty_per_s * e.magnitude * w;
        break;
      }
      case EventKind::kChangeBitrate:
        if (e.magnitude < bitrate_ref_kbps) {
          q -= bitrate_penalty * std::log2(bitrate_ref_kbps / e.magnitude) * span;
        }
        break;
      case EventKind::kChangePlaybackRate:
        q -= slowdown_penalty * (1.0 - e.magnitude) * span;
        break;
    }
  }
  return std::clamp(q, 1.0, 5.0);
}

QoeModel QoeModel::from_json(const json& doc) {
  reject_unknown(doc, "qoe",
                 {"base", "stall_penalty_per_s", "chunk_weights",
                  "bitrate_ref_kbps", "bitrate_penalty", "slowdown_penalty",
                  "plt_steps", "plt_slope"});
  QoeModel m;
  m.base = num(doc, "base", m.base);
  m.stall_penalty_per_s = num(doc, "stall_penalty_per_s", m.stall_penalty_per_s);
  m.bitrate_ref_kbps = num(doc, "bitrate_ref_kbps", m.bitrate_ref_kbps);
  m.bitrate_penalty = num(doc, "bitrate_penalty", m.bitrate_penalty);
  m.slowdown_penalty = num(doc, "slowdown_penalty", m.slowdown_penalty);
  m.plt_slope = num(doc, "plt_slope", m.plt_slope);
  try {
    if (doc.contains("chunk_weights")) {
      m.chunk_weights = doc["chunk_weights"].get<std::vector<double>>();
    }
    if (doc.contains("plt_steps")) {
      for (const json& step : doc["plt_steps"]) {
        m.plt_steps.emplace_back(step.at(0).get<double>(),
                                 step.at(1).get<double>());
      }
    }
  } catch (const json::exception&) {
    bad("qoe", "chunk_weights must be numbers, plt_steps [threshold, drop] pairs");
  }
  if (!(m.bitrate_ref_kbps > 0.0)) bad("qoe.bitrate_ref_kbps", "must be > 0");
  return m;
}

json QoeModel::to_json() const {
  json steps = json::array();
  for (const auto& [t, d] : plt_steps) steps.push_back({t, d});
  return {{"base", base},
          {"stall_penalty_per_s", stall_penalty_per_s},
          {"chunk_weights", chunk_weights},
          {"bitrate_ref_kbps", bitrate_ref_kbps},
          {"bitrate_penalty", bitrate_penalty},
          {"slowdown_penalty", slowdown_penalty},
          {"plt_steps", std::move(steps)},
          {"plt_slope", plt_slope}};
}

double LatencyDistribution::sample(std::mt19937_64& rng) const {
  switch (kind) {
    case Kind::kConstant:
      return a;
    case Kind::kUniform:
      return std::uniform_real_distribution<double>(a, b)(rng);
    case Kind::kExponential:
      return std::exponential_distribution<double>(1.0 / a)(rng);
  }
  return a;
}

LatencyDistribution LatencyDistribution::from_json(const json& doc) {
  LatencyDistribution d;
  if (doc.is_number()) {
    d.a = doc.get<double>();
  } else {
    reject_unknown(doc, "rating_latency",
                   {"kind", "value", "low", "high", "mean"});
    const std::string kind = doc.value("kind", "constant");
    if (kind == "constant") {
      d.a = num(doc, "value", d.a);
    } else if (kind == "uniform") {
      d.kind = Kind::kUniform;
      d.a = num(doc, "low", 0.0);
      d.b = num(doc, "high", 0.0);
      if (!(d.b >= d.a)) bad("rating_latency.high", "must be >= low");
    } else if (kind == "exponential") {
      d.kind = Kind::kExponential;
      d.a = num(doc, "mean", 0.0);
      if (!(d.a > 0.0)) bad("rating_latency.mean", "must be > 0");
    } else {
      bad("rating_latency.kind", "expected constant, uniform or exponential");
    }
  }
  if (!(d.a >= 0.0)) bad("rating_latency", "must be >= 0");
  return d;
}

json LatencyDistribution::to_json() const {
  switch (kind) {
    case Kind::kConstant:
      return {{"kind", "constant"}, {"value", a}};
    case Kind::kUniform:
      return {{"kind", "uniform"}, {"low", a}, {"high", b}};
    case Kind::kExponential:
      return {{"kind", "exponential"}, {"mean", a}};
  }
  return nullptr;
}

double BehaviorModel::true_mos(const Demo& demo,
                               const SourceContent& source) const {
  if (true_mos_fn) return std::clamp(true_mos_fn(demo), 1.0, 5.0);
  return qoe.true_mos(demo, source);
}

int BehaviorModel::draw_score(double mu, std::mt19937_64& rng) const {
  double x = mu;
  if (noise_sigma > 0.0) x = std::normal_distribution<double>(mu, noise_sigma)(rng);
  return static_cast<int>(std::lround(std::clamp(x, 1.0, 5.0)));
}

void BehaviorModel::validate() const {
  if (!(noise_sigma >= 0.0)) bad("noise_sigma", "must be >= 0");
  if (!(reliability >= 0.0 && reliability <= 1.0)) {
    bad("reliability", "must be in [0,1]");
  }
  if (!(abandon_prob >= 0.0 && abandon_prob <= 1.0)) {
    bad("abandon_prob", "must be in [0,1]");
  }
  if (!(training_s >= 0.0)) bad("training_s", "must be >= 0");
}

BehaviorModel BehaviorModel::from_json(const json& doc) {
  reject_unknown(doc, "",
                 {"noise_sigma", "rating_latency", "reliability",
                  "abandon_prob", "training_s", "qoe"});
  BehaviorModel m;
  m.noise_sigma = num(doc, "noise_sigma", m.noise_sigma);
  m.reliability = num(doc, "reliability", m.reliability);
  m.abandon_prob = num(doc, "abandon_prob", m.abandon_prob);
  m.training_s = num(doc, "training_s", m.training_s);
  if (doc.contains("rating_latency")) {
    m.rating_latency = LatencyDistribution::from_json(doc["rating_latency"]);
  }
  if (doc.contains("qoe")) m.qoe = QoeModel::from_json(doc["qoe"]);
  m.validate();
  return m;
}

json BehaviorModel::to_json() const {
  return {{"noise_sigma", noise_sigma},
          {"rating_latency", rating_latency.to_json()},
          {"reliability", reliability},
          {"abandon_prob", abandon_prob},
          {"training_s", training_s},
          {"qoe", qoe.to_json()}};
}

// ---------------------------------------------------------------------------
// Plans

std::string_view to_string(PlanKind kind) {
  switch (kind) {
    case PlanKind::kPlanA: return "plan_a";
    case PlanKind::kPlanB: return "plan_b";
    case PlanKind::kConsolidated: return "vidplat";
  }
  return "?";
}

std::optional<PlanKind> parse_plan_kind(std::string_view name) {
  if (name == "a" || name == "plan_a") return PlanKind::kPlanA;
  if (name == "b" || name == "plan_b") return PlanKind::kPlanB;
  if (name == "vidplat" || name == "consolidated") return PlanKind::kConsolidated;
  return std::nullopt;
}

void StrategyPlan::validate() const {
  if (ratings_per_demo < 1) bad("plan.ratings_per_demo", "must be >= 1");
  if (raters_per_task < 0) bad("plan.raters_per_task", "must be >= 0");
  if (plan_a_levels.empty()) bad("plan.plan_a_levels", "must not be empty");
  for (double l : plan_a_levels) {
    if (!(l >= 0.0)) bad("plan.plan_a_levels", "levels must be >= 0");
  }
}

StrategyPlan StrategyPlan::from_json(const json& doc) {
  reject_unknown(doc, "plan",
                 {"kind", "ratings_per_demo", "raters_per_task",
                  "plan_a_levels", "extend_trace"});
  StrategyPlan p;
  if (doc.contains("kind")) {
    auto k = doc["kind"].is_string()
                 ? parse_plan_kind(doc["kind"].get<std::string>())
                 : std::nullopt;
    if (!k) bad("plan.kind", "expected a, b or vidplat");
    p.kind = *k;
  }
  try {
    p.ratings_per_demo = doc.value("ratings_per_demo", p.ratings_per_demo);
    p.raters_per_task = doc.value("raters_per_task", p.raters_per_task);
    p.plan_a_levels = doc.value("plan_a_levels", p.plan_a_levels);
    p.extend_trace = doc.value("extend_trace", p.extend_trace);
  } catch (const json::exception&) {
    bad("plan", "field of the wrong type");
  }
  p.validate();
  return p;
}

json StrategyPlan::to_json() const {
  return {{"kind", std::string(to_string(kind))},
          {"ratings_per_demo", ratings_per_demo},
          {"raters_per_task", raters_per_task},
          {"plan_a_levels", plan_a_levels},
          {"extend_trace", extend_trace}};
}

uint64_t plan_a_demo_count(int n, int d) {
  if (n < 1 || d < 1) {
    throw Error(ErrorCode::kInvalidArgument, "need n >= 1 and d >= 1");
  }
  uint64_t out = 1;
  for (int i = 0; i < n; ++i) {
    if (out > std::numeric_limits<uint64_t>::max() / static_cast<uint64_t>(d)) {
      throw Error(ErrorCode::kResourceExhausted,
                  std::to_string(d) + "^" + std::to_string(n) +
                      " overflows 64 bits");
    }
    out *= static_cast<uint64_t>(d);
  }
  return out;
}

uint64_t plan_b_demo_count(int n, int groups, int b_levels, int f_levels) {
  if (n < 1 || groups < 1 || groups > n || b_levels < 1 || f_levels < 1) {
    throw Error(ErrorCode::kInvalidArgument,
                "need 1 <= groups <= n and B, F >= 1");
  }
  return static_cast<uint64_t>(n) +
         static_cast<uint64_t>(groups) * b_levels * f_levels;
}

std::vector<Demo> plan_a_demos(const StrategyPlan& plan,
                               const GeneratorSpec& generator,
                               const SourceContent& source, size_t limit) {
  const GeneratorParams& p = generator.params;
  std::vector<Demo> out;
  auto check = [&](uint64_t n) {
    if (n > limit) {
      throw Error(ErrorCode::kResourceExhausted,
                  "Plan-A would enumerate " + std::to_string(n) +
                      " demos (limit " + std::to_string(limit) + ")");
    }
  };
  switch (generator.kind) {
    case GeneratorKind::kBufferingStall:
    case GeneratorKind::kChunkWeight: {
      const int n = source.chunk_count();
      const int d = static_cast<int>(plan.plan_a_levels.size());
      check(plan_a_demo_count(n, d));
      std::vector<int> digits(n, 0);
      while (true) {
        std::vector<QualityEvent> events;
        for (int c = 0; c < n; ++c) {
          const double level = plan.plan_a_levels[digits[c]];
          if (round_ms(level) <= 0.0) continue;
          const Demo one = generate_demo_with_rebuf(source, c, level);
          events.insert(events.end(), one.events().begin(), one.events().end());
        }
        out.emplace_back(source.id, std::move(events));
        int i = 0;
        while (i < n && ++digits[i] == d) digits[i++] = 0;
        if (i == n) break;
      }
      break;
    }
    case GeneratorKind::kAdaptiveGrid2d: {
      const auto xs = axis_samples(p.d_min, p.d_max, p.min_delta_d);
      const auto ys = axis_samples(p.l_min, p.l_max, p.min_delta_l);
      check(xs.size() * ys.size());
      for (double x : xs) {
        for (double y : ys) out.push_back(make_grid_demo(source, x, y));
      }
      break;
    }
    case GeneratorKind::kAdaptivePlt: {
      const auto xs = axis_samples(p.plt_min, p.plt_max, p.min_step);
      check(xs.size());
      for (double x : xs) out.push_back(make_plt_demo(source, x));
      break;
    }
  }
  // Distinct level vectors can coincide after rounding; keep one of each.
  std::sort(out.begin(), out.end(),
            [](const Demo& a, const Demo& b) { return a.key() < b.key(); });
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Reports

json SimReport::to_json() const {
  auto phase_json = [](const PhaseBreakdown& p) {
    return json{{"recruitment_s", p.recruitment},
                {"training_s", p.training},
                {"rating_s", p.rating}};
  };
  json per_round = json::array();
  for (const PhaseBreakdown& p : round_phases) per_round.push_back(phase_json(p));
  return {{"plan", plan},
          {"generator", generator},
          {"seed", seed},
          {"cost", cost},
          {"invalid", invalid},
          {"expired", expired},
          {"spend", spend},
          {"paid_hours", paid_hours},
          {"latency_s", latency_s},
          {"demos", demos},
          {"rounds", rounds},
          {"raters_joined", raters_joined},
          {"raters_rated", raters_rated},
          {"rating_minutes_per_rater", rating_minutes_per_rater},
          {"se_max", se_max},
          {"phases", phase_json(phases)},
          {"round_phases", std::move(per_round)},
          {"per_demo_counts", per_demo_counts}};
}

SimReport SimReport::from_json(const json& doc) {
  SimReport r;
  try {
    auto phase = [](const json& p) {
      return PhaseBreakdown{p.at("recruitment_s").get<double>(),
                            p.at("training_s").get<double>(),
                            p.at("rating_s").get<double>()};
    };
    r.plan = doc.at("plan").get<std::string>();
    r.generator = doc.at("generator").get<std::string>();
    r.seed = doc.at("seed").get<uint64_t>();
    r.cost = doc.at("cost").get<int>();
    r.invalid = doc.at("invalid").get<int>();
    r.expired = doc.at("expired").get<int>();
    r.spend = doc.at("spend").get<double>();
    r.paid_hours = doc.at("paid_hours").get<double>();
    r.latency_s = doc.at("latency_s").get<double>();
    r.demos = doc.at("demos").get<int>();
    r.rounds = doc.at("rounds").get<int>();
    r.raters_joined = doc.at("raters_joined").get<int>();
    r.raters_rated = doc.at("raters_rated").get<int>();
    r.rating_minutes_per_rater = doc.at("rating_minutes_per_rater").get<double>();
    r.se_max = doc.at("se_max").get<double>();
    r.phases = phase(doc.at("phases"));
    for (const json& p : doc.at("round_phases")) {
      r.round_phases.push_back(phase(p));
    }
    r.per_demo_counts =
        doc.at("per_demo_counts").get<std::map<std::string, int>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument,
                std::string("report schema mismatch: ") + e.what());
  }
  return r;
}

std::string SimReport::to_csv() const {
  std::ostringstream out;
  out << std::setprecision(12);
  out << "metric,value\n";
  out << "plan," << plan << "\n";
  out << "generator," << generator << "\n";
  out << "seed," << seed << "\n";
  out << "cost," << cost << "\n";
  out << "invalid," << invalid << "\n";
  out << "expired," << expired << "\n";
  out << "spend," << spend << "\n";
  out << "paid_hours," << paid_hours << "\n";
  out << "latency_s," << latency_s << "\n";
  out << "demos," << demos << "\n";
  out << "rounds," << rounds << "\n";
  out << "raters_joined," << raters_joined << "\n";
  out << "raters_rated," << raters_rated << "\n";
  out << "rating_minutes_per_rater," << rating_minutes_per_rater << "\n";
  out << "se_max," << se_max << "\n";
  out << "recruitment_s," << phases.recruitment << "\n";
  out << "training_s," << phases.training << "\n";
  out << "rating_s," << phases.rating << "\n";
  return out.str();
}

Reductions compare(const SimReport& base, const SimReport& next) {
  if (base.latency_s == 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "base latency is zero");
  }
  if (base.cost == 0 || next.cost == 0) {
    throw Error(ErrorCode::kInvalidArgument, "zero cost in a compared report");
  }
  Reductions r;
  r.latency = (base.latency_s - next.latency_s) / base.latency_s;
  r.cost_vs_base = static_cast<double>(base.cost - next.cost) / base.cost;
  r.cost_vs_new = static_cast<double>(base.cost - next.cost) / next.cost;
  r.spend_vs_base =
      base.spend > 0.0 ? (base.spend - next.spend) / base.spend : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Engine

namespace {

struct SimEvent {
  enum class Type { kTrainingDone, kSubmit, kAbandon };

  double t = 0.0;
  uint64_t seq = 0;
  Type type = Type::kSubmit;
  std::string rater;
  std::string assignment;
  int score = 0;
  double watch = 0.0;
  std::vector<bool> answers;
};

struct Later {
  bool operator()(const SimEvent& a, const SimEvent& b) const {
    if (a.t != b.t) return a.t > b.t;
    return a.seq > b.seq;
  }
};

struct RaterTrack {
  int round = 0;
  double joined = 0.0;
  double training = 0.0;
  double rating_seconds = 0.0;
  int submitted = 0;
  bool busy = false;
};

class Simulation {
 public:
  Simulation(const SimInput& in, TaskConfig task, UpdateMode mode,
             std::optional<DemandMap> quota)
      : in_(in),
        mode_(mode),
        quota_(std::move(quota)),
        orch_(std::move(task), &log_, mode),
        platform_(in.trace, in.plan.extend_trace, mix_seed(in.seed, 7, 0)),
        rng_(mix_seed(in.seed, 11, 0)) {}

  SimResult run();

 private:
  int task_pool() const {
    return in_.plan.raters_per_task > 0 ? in_.plan.raters_per_task
                                        : in_.plan.ratings_per_demo;
  }
  bool hires_pool() const { return in_.plan.kind != PlanKind::kConsolidated; }

  void push(SimEvent e) {
    e.seq = next_seq_++;
    events_.push(std::move(e));
  }
  void start_round(double t);
  void close_round(double t);
  void on_candidate(const Candidate& c, double t);
  void handle(const SimEvent& e);
  void try_assign(const std::string& rater, double t);
  void wake_all(double t);
  SimReport build_report() const;

  const SimInput& in_;
  UpdateMode mode_;
  std::optional<DemandMap> quota_;
  MemoryEventLog log_;
  Orchestrator orch_;
  TracePlatform platform_;
  std::mt19937_64 rng_;
  std::priority_queue<SimEvent, std::vector<SimEvent>, Later> events_;
  uint64_t next_seq_ = 0;
  std::map<std::string, RaterTrack> raters_;
  std::set<std::string> waiting_;
  int round_ = 0;
  double round_start_ = 0.0;
  std::string last_rater_;
  std::vector<PhaseBreakdown> round_phases_;
  bool done_ = false;
  double finished_at_ = 0.0;
  int joined_ = 0;
  double now_ = 0.0;
};

void Simulation::start_round(double t) {
  round_start_ = t;
  last_rater_.clear();
  int count = task_pool();
  if (!hires_pool()) {
    count = in_.plan.extend_trace ? INT_MAX
                                  : static_cast<int>(in_.trace.size());
  }
  log_.emit(t, "round_started", {{"round", round_}, {"hiring", count}});
  platform_.publish(round_, count, orch_.config().pay_rate,
                    orch_.config().eligibility, t);
}

void Simulation::close_round(double t) {
  PhaseBreakdown p;
  auto it = raters_.find(last_rater_);
  if (it != raters_.end()) {
    p.recruitment = it->second.joined - round_start_;
    p.training = it->second.training;
    p.rating = t - it->second.joined - it->second.training;
  } else {
    p.rating = t - round_start_;
  }
  round_phases_.push_back(p);
  log_.emit(t, "round_complete", {{"round", round_}});
}

void Simulation::on_candidate(const Candidate& c, double t) {
  if (done_) return;
  if (hires_pool() && c.round != round_) return;  // that task has closed
  if (!hires_pool() && orch_.is_complete()) return;
  if (joined_ >= 1000000) {
    throw Error(ErrorCode::kResourceExhausted,
                "simulation hired a million raters without finishing");
  }
  const std::string id = "r" + std::to_string(++joined_);
  const RaterProfile& p = orch_.join(id, c.attributes, t);
  if (p.state != RaterState::kTraining) return;
  RaterTrack track;
  track.round = round_;
  track.joined = t;
  track.training = c.training_s.value_or(in_.behavior.training_s);
  raters_[id] = track;
  SimEvent e;
  e.t = t + track.training;
  e.type = SimEvent::Type::kTrainingDone;
  e.rater = id;
  push(std::move(e));
}

void Simulation::try_assign(const std::string& rater, double t) {
  RaterTrack& track = raters_.at(rater);
  if (track.busy || orch_.raters().get(rater).state != RaterState::kActive) {
    waiting_.erase(rater);
    return;
  }
  std::optional<IssuedAssignment> issued = orch_.next(rater, t);
  if (!issued) {
    if (orch_.queue().remaining_capacity(rater) > 0) {
      waiting_.insert(rater);
    } else {
      waiting_.erase(rater);
    }
    return;
  }
  waiting_.erase(rater);
  track.busy = true;
  const Assignment& a = issued->assignment;
  SimEvent e;
  e.rater = rater;
  e.assignment = a.id;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (in_.behavior.abandon_prob > 0.0 && u(rng_) < in_.behavior.abandon_prob) {
    e.type = SimEvent::Type::kAbandon;
    e.t = t + orch_.config().idle_timeout_s;
    push(std::move(e));
    return;
  }
  const double wall = issued->manifest->total_wall_duration;
  const double latency = in_.behavior.rating_latency.sample(rng_);
  const bool valid = u(rng_) < in_.behavior.reliability;
  const double mu =
      in_.behavior.true_mos(orch_.demo(a.demo_key), orch_.config().source);
  e.type = SimEvent::Type::kSubmit;
  e.t = t + wall + latency;
  e.score = in_.behavior.draw_score(mu, rng_);
  e.watch = wall;
  for (const ControlQuestion& q : a.control_questions) {
    e.answers.push_back(q.expected);
  }
  if (!valid) {
    if (e.answers.empty()) {
      e.watch = wall * 0.5;
    } else {
      e.answers.front() = !e.answers.front();
    }
  }
  push(std::move(e));
}

void Simulation::wake_all(double t) {
  const std::vector<std::string> idle(waiting_.begin(), waiting_.end());
  for (const std::string& r : idle) try_assign(r, t);
}

void Simulation::handle(const SimEvent& e) {
  switch (e.type) {
    case SimEvent::Type::kTrainingDone:
      if (orch_.raters().get(e.rater).state != RaterState::kTraining) return;
      orch_.complete_training(e.rater, e.t);
      try_assign(e.rater, e.t);
      return;
    case SimEvent::Type::kSubmit: {
      RaterTrack& track = raters_.at(e.rater);
      const Assignment a = *orch_.queue().find_in_flight(e.assignment);
      track.busy = false;
      track.rating_seconds += e.t - a.issued_at;
      track.submitted += 1;
      last_rater_ = e.rater;
      orch_.submit(e.assignment, e.score, e.watch, e.answers, e.t);
      try_assign(e.rater, e.t);
      wake_all(e.t);
      return;
    }
    case SimEvent::Type::kAbandon:
      raters_.at(e.rater).busy = false;
      last_rater_ = e.rater;
      orch_.expire_assignment(e.assignment, e.t);
      orch_.release(e.rater, "idle_timeout", e.t);
      wake_all(e.t);
      return;
  }
}

SimResult Simulation::run() {
  if (quota_) {
    orch_.enqueue(*quota_, 0.0);
  } else {
    orch_.activate(0.0);
  }
  start_round(0.0);
  while (!done_) {
    if (orch_.is_complete()) {
      const double t = now_;
      close_round(t);
      if (mode_ == UpdateMode::kBatched && !orch_.flush_updates(t).empty()) {
        for (const auto& [id, track] : raters_) {
          const RaterState s = orch_.raters().get(id).state;
          if (s == RaterState::kActive || s == RaterState::kTraining) {
            orch_.release(id, "task_closed", t);
          }
        }
        waiting_.clear();
        ++round_;
        start_round(t);
        continue;
      }
      done_ = true;
      finished_at_ = t;
      break;
    }
    const std::optional<double> join = platform_.next_join_time();
    if (events_.empty() && !join) {
      throw Error(ErrorCode::kResourceExhausted,
                  "recruitment trace exhausted with " +
                      std::to_string(orch_.queue().total_demanded()) +
                      " ratings still demanded (round " +
                      std::to_string(round_) + ")");
    }
    if (join && (events_.empty() || *join <= events_.top().t)) {
      now_ = *join;
      for (const Candidate& c : platform_.poll_joins(*join)) {
        on_candidate(c, *join);
      }
      continue;
    }
    SimEvent e = events_.top();
    events_.pop();
    now_ = e.t;
    handle(e);
  }
  return SimResult{build_report(), log_.take()};
}

SimReport Simulation::build_report() const {
  SimReport r;
  r.plan = std::string(to_string(in_.plan.kind));
  r.generator = std::string(to_string(orch_.config().generator.kind));
  r.seed = in_.seed;
  r.cost = orch_.valid_ratings();
  r.invalid = orch_.invalid_ratings();
  r.expired = orch_.expired_assignments();
  r.spend = orch_.spend();
  r.paid_hours = orch_.paid_seconds() / 3600.0;
  r.latency_s = finished_at_;
  r.demos = static_cast<int>(orch_.queue().entries().size());
  r.rounds = static_cast<int>(round_phases_.size());
  r.raters_joined = joined_;
  double rating_seconds = 0.0;
  for (const auto& [id, track] : raters_) {
    if (track.submitted == 0) continue;
    ++r.raters_rated;
    rating_seconds += track.rating_seconds;
  }
  if (r.raters_rated > 0) {
    r.rating_minutes_per_rater = rating_seconds / r.raters_rated / 60.0;
  }
  for (const auto& [key, entry] : orch_.queue().entries()) {
    auto it = orch_.history().find(key);
    const int n = it == orch_.history().end()
                      ? 0
                      : static_cast<int>(it->second.size());
    r.per_demo_counts[key] = n;
    if (n >= 2) r.se_max = std::max(r.se_max, standard_error(it->second));
  }
  r.round_phases = round_phases_;
  for (const PhaseBreakdown& p : round_phases_) {
    r.phases.recruitment += p.recruitment;
    r.phases.training += p.training;
    r.phases.rating += p.rating;
  }
  return r;
}

SimResult run_with(const SimInput& in, std::optional<DemandMap> quota) {
  in.plan.validate();
  in.behavior.validate();
  if (in.trace.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "trace: no joins");
  }
  TaskConfig task = in.task;
  task.seed = in.seed;
  UpdateMode mode = UpdateMode::kImmediate;
  switch (in.plan.kind) {
    case PlanKind::kPlanA:
      mode = UpdateMode::kNone;
      if (!quota) {
        DemandMap demand;
        for (const Demo& d :
             plan_a_demos(in.plan, task.generator, task.source)) {
          demand.add(d, in.plan.ratings_per_demo);
        }
        quota = std::move(demand);
      }
      break;
    case PlanKind::kPlanB:
      mode = UpdateMode::kBatched;
      task.generator.params.min_ratings = in.plan.ratings_per_demo;
      task.generator.params.max_ratings = in.plan.ratings_per_demo;
      break;
    case PlanKind::kConsolidated:
      break;
  }
  task.validate();
  Simulation sim(in, std::move(task), mode, std::move(quota));
  return sim.run();
}

}  // namespace

SimResult run(const SimInput& input) { return run_with(input, std::nullopt); }

// ---------------------------------------------------------------------------
// Sweeps and oracles

uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b) {
  auto splitmix = [](uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  return splitmix(splitmix(splitmix(seed) ^ a) ^ b);
}

RecruitmentTrace synthetic_trace(int count, double first_join_s, double gap_s,
                                 std::optional<double> training_s) {
  RecruitmentTrace trace;
  for (int i = 0; i < count; ++i) {
    trace.entries.push_back({first_join_s + gap_s * i, training_s});
  }
  return trace;
}

std::vector<SweepRow> variance_sweep(const SweepConfig& config) {
  if (config.trials < 1) {
    throw Error(ErrorCode::kInvalidArgument, "trials must be >= 1");
  }
  if (config.demos < 1) {
    throw Error(ErrorCode::kInvalidArgument, "demos must be >= 1");
  }
  if (config.a < 1) throw Error(ErrorCode::kInvalidArgument, "a must be >= 1");
  int b_max = config.a;
  for (int b : config.b_values) {
    if (b < config.a) {
      throw Error(ErrorCode::kInvalidArgument,
                  "every b must be >= a (got b=" + std::to_string(b) + ")");
    }
    b_max = std::max(b_max, b);
  }

  SimInput in;
  in.plan.kind = PlanKind::kPlanA;
  in.task.source = SourceContent::make("sweep", config.demos * 2.0, 2.0);
  in.task.budget_ratings = 0;
  in.task.max_spend = 0.0;
  in.task.budget_ratings = config.demos * b_max;
  in.task.fatigue_cap = config.demos;
  in.task.per_source_cap = config.demos;
  in.trace = config.trace ? *config.trace
                          : synthetic_trace(b_max + 5, 60.0, 30.0, 120.0);
  in.plan.raters_per_task = static_cast<int>(in.trace.size());
  in.behavior.noise_sigma = 0.0;
  in.behavior.rating_latency.a = 3.0;

  std::vector<Demo> demos;
  for (int c = 0; c < config.demos; ++c) {
    demos.push_back(generate_demo_with_rebuf(in.task.source, c, 1.0));
  }

  std::vector<SweepRow> rows;
  for (int b : config.b_values) {
    std::vector<double> reductions;
    for (int trial = 0; trial < config.trials; ++trial) {
      in.seed = mix_seed(config.seed, static_cast<uint64_t>(b),
                         static_cast<uint64_t>(trial));
      std::mt19937_64 rng(in.seed);
      std::uniform_int_distribution<int> need(config.a, b);
      DemandMap drawn;
      DemandMap baseline;
      for (const Demo& d : demos) {
        drawn.add(d, need(rng));
        baseline.add(d, b);
      }
      const SimReport base = run_with(in, baseline).report;
      const SimReport next = run_with(in, drawn).report;
      reductions.push_back(compare(base, next).cost_vs_base);
    }
    SweepRow row;
    row.b = b;
    double sum = 0.0;
    for (double r : reductions) sum += r;
    row.mean_reduction = sum / reductions.size();
    if (reductions.size() > 1) {
      double ss = 0.0;
      for (double r : reductions) {
        ss += (r - row.mean_reduction) * (r - row.mean_reduction);
      }
      row.std = std::sqrt(ss / (reductions.size() - 1));
    }
    row.limit = 1.0 - ((config.a + b) / 2.0) / b;
    rows.push_back(row);
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << std::setprecision(15);
  out << "b,mean_reduction,std,limit\n";
  for (const SweepRow& r : rows) {
    out << r.b << "," << r.mean_reduction << "," << r.std << "," << r.limit
        << "\n";
  }
  return out.str();
}

std::vector<int> oracle_stop_count(double noise_sigma, double epsilon,
                                   int min_ratings, uint64_t seed, int trials,
                                   double true_mos, int max_ratings) {
  if (!(epsilon > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "epsilon must be > 0");
  }
  // A stream that never settles needs a cap to terminate.
  const int cap = max_ratings > 0 ? max_ratings : 100000;
  const int floor_n = std::max(min_ratings, 2);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<int> out;
  out.reserve(trials);
  for (int t = 0; t < trials; ++t) {
    long n = 0;
    long sum = 0;
    long sum_sq = 0;
    while (true) {
      const double x = true_mos + noise_sigma * noise(rng);
      const long s = std::lround(std::min(5.0, std::max(1.0, x)));
      ++n;
      sum += s;
      sum_sq += s * s;
      if (n >= cap) break;
      if (n < floor_n) continue;
      const double var =
          static_cast<double>(n * sum_sq - sum * sum) / (n * (n - 1.0));
      if (std::sqrt(var / n) <= epsilon) break;
    }
    out.push_back(static_cast<int>(n));
  }
  return out;
}

}  // namespace vidplat
