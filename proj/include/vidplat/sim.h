#ifndef VIDPLAT_SIM_H_
#define VIDPLAT_SIM_H_

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "vidplat/domain.h"
#include "vidplat/event_log.h"
#include "vidplat/task_config.h"
#include "vidplat/trace.h"

namespace vidplat {

// Synthetic ground truth: an additive penalty model over a demo's events,
// clamped to [1, 5].
struct QoeModel {
  double base = 4.5;
  double stall_penalty_per_s = 0.8;
  std::vector<double> chunk_weights;  // per chunk; missing entries weigh 1
  double bitrate_ref_kbps = 5000.0;
  double bitrate_penalty = 0.6;       // per halving below the reference
  double slowdown_penalty = 4.0;      // per unit of (1 - rate)
  // Page-load steps: a freeze starting at 0 of at least `threshold` seconds
  // costs `drop`. plt_slope adds a linear cost per second of that freeze.
  std::vector<std::pair<double, double>> plt_steps;
  double plt_slope = 0.0;

  double true_mos(const Demo& demo, const SourceContent& source) const;

  static QoeModel from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

struct LatencyDistribution {
  enum class Kind { kConstant, kUniform, kExponential };
  Kind kind = Kind::kConstant;
  double a = 5.0;  // constant value, uniform low, or exponential mean
  double b = 0.0;  // uniform high

  double sample(std::mt19937_64& rng) const;

  static LatencyDistribution from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

// How simulated raters behave once they hold an assignment.
struct BehaviorModel {
  QoeModel qoe;
  // Overrides `qoe` when set; not serialized.
  std::function<double(const Demo&)> true_mos_fn;
  double noise_sigma = 0.5;
  LatencyDistribution rating_latency;  // seconds beyond the wall duration
  double reliability = 1.0;            // probability a rating is valid
  double abandon_prob = 0.0;           // probability an assignment is dropped
  double training_s = 480.0;           // when the trace has no training time

  double true_mos(const Demo& demo, const SourceContent& source) const;
  // round(clamp(N(true_mos, sigma), 1, 5))
  int draw_score(double true_mos, std::mt19937_64& rng) const;

  void validate() const;
  static BehaviorModel from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

enum class PlanKind { kPlanA, kPlanB, kConsolidated };

std::string_view to_string(PlanKind kind);
// Accepts "a", "b", "vidplat" and the long names.
std::optional<PlanKind> parse_plan_kind(std::string_view name);

struct StrategyPlan {
  PlanKind kind = PlanKind::kConsolidated;
  // Plan-A / Plan-B: fixed ratings per demo.
  int ratings_per_demo = 9;
  // Plan-A / Plan-B: raters hired per task; 0 means ratings_per_demo.
  int raters_per_task = 0;
  // Plan-A on chunk generators: stall levels per chunk (0 = no stall).
  std::vector<double> plan_a_levels = {0.0, 0.5, 1.0};
  bool extend_trace = false;

  void validate() const;
  static StrategyPlan from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

struct PhaseBreakdown {
  double recruitment = 0.0;
  double training = 0.0;
  double rating = 0.0;

  double total() const { return recruitment + training + rating; }

  friend bool operator==(const PhaseBreakdown&,
                         const PhaseBreakdown&) = default;
};

struct SimReport {
  std::string plan;
  std::string generator;
  uint64_t seed = 0;
  int cost = 0;  // valid ratings collected
  int invalid = 0;
  int expired = 0;
  double spend = 0.0;
  double paid_hours = 0.0;
  double latency_s = 0.0;  // publication to last needed rating
  int demos = 0;
  int rounds = 0;
  int raters_joined = 0;
  int raters_rated = 0;
  double rating_minutes_per_rater = 0.0;
  double se_max = 0.0;  // over demos with at least two ratings
  PhaseBreakdown phases;  // sums to latency_s
  std::vector<PhaseBreakdown> round_phases;
  std::map<std::string, int> per_demo_counts;

  nlohmann::json to_json() const;
  // Throws kInvalidArgument on schema mismatch.
  static SimReport from_json(const nlohmann::json& doc);
  // `metric,value` rows; per-demo counts are JSON-only.
  std::string to_csv() const;

  friend bool operator==(const SimReport&, const SimReport&) = default;
};

struct SimInput {
  StrategyPlan plan;
  TaskConfig task;  // source, generator, caps, budget, pay rate
  RecruitmentTrace trace;
  BehaviorModel behavior;
  uint64_t seed = 1;
};

struct SimResult {
  SimReport report;
  std::vector<EventLogEntry> events;
};

// Runs one strategy. Throws kResourceExhausted when the trace runs out
// before the demand is met.
SimResult run(const SimInput& input);

// d^n; throws kResourceExhausted on overflow.
uint64_t plan_a_demo_count(int n, int d);
// n + groups * B * F
uint64_t plan_b_demo_count(int n, int groups, int b_levels, int f_levels);

// The demos Plan-A rates: every stall-level combination for chunk
// generators, the fine grid for the interval generators. Throws
// kResourceExhausted above `limit` demos.
std::vector<Demo> plan_a_demos(const StrategyPlan& plan,
                               const GeneratorSpec& generator,
                               const SourceContent& source,
                               size_t limit = 100000);

struct Reductions {
  double latency = 0.0;        // (L_base - L_new) / L_base
  double cost_vs_base = 0.0;   // (C_base - C_new) / C_base
  double cost_vs_new = 0.0;    // (C_base - C_new) / C_new
  double spend_vs_base = 0.0;  // (S_base - S_new) / S_base
};

// Throws kInvalidArgument on a zero denominator.
Reductions compare(const SimReport& base, const SimReport& next);

struct SweepRow {
  int b = 0;
  double mean_reduction = 0.0;
  double std = 0.0;
  double limit = 0.0;  // 1 - ((a + b) / 2) / b
};

struct SweepConfig {
  int a = 10;
  std::vector<int> b_values = {10, 20, 30, 40, 50};
  int trials = 200;
  int demos = 10;  // demos per trial
  uint64_t seed = 1;
  std::optional<RecruitmentTrace> trace;  // synthetic when absent
};

// Per trial, every demo needs U{a..b} ratings; the baseline collects b
// each. Both run as quota-mode simulations on the same trace, seeded by
// (seed, b, trial).
std::vector<SweepRow> variance_sweep(const SweepConfig& config);
std::string sweep_csv(const std::vector<SweepRow>& rows);

// Ratings-to-stop under the SE rule on synthetic score streams, computed
// independently of the engine. max_ratings of 0 means uncapped.
std::vector<int> oracle_stop_count(double noise_sigma, double epsilon,
                                   int min_ratings, uint64_t seed, int trials,
                                   double true_mos = 3.5, int max_ratings = 0);

// `count` joins, the first at `first_join_s`, then every `gap_s`.
RecruitmentTrace synthetic_trace(int count, double first_join_s, double gap_s,
                                 std::optional<double> training_s);

uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b);

}  // namespace vidplat

#endif  // VIDPLAT_SIM_H_
