#ifndef VIDPLAT_ORCHESTRATOR_H_
#define VIDPLAT_ORCHESTRATOR_H_

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vidplat/demo_studio.h"
#include "vidplat/event_log.h"
#include "vidplat/generators.h"
#include "vidplat/raters.h"
#include "vidplat/scheduler.h"
#include "vidplat/task_config.h"

namespace vidplat {

// How valid ratings reach the generator.
enum class UpdateMode {
  kImmediate,  // update after every valid rating (single consolidated task)
  kBatched,    // update only on flush_updates (one crowdsourcing task per
               // round); every demo asked for is topped up to min_ratings
  kNone,       // fixed quotas, no generator
};

struct IssuedAssignment {
  Assignment assignment;
  std::shared_ptr<const PlaybackManifest> manifest;
};

struct SubmitResult {
  std::string assignment_id;
  Verdict verdict = Verdict::kPending;
  std::string reason;
  DemandMap emitted;
  bool rater_released = false;
  bool duplicate = false;
};

struct DemoResult {
  std::string demo_key;
  int n_valid = 0;
  std::optional<double> mos;
  std::optional<double> se;
  std::optional<std::pair<double, double>> ci90;
};

// The single-writer loop of one task: generator host, demand queue, rater
// lifecycle, quality control and demo rendering. Time is always passed in,
// so the same loop runs under the simulator and the service.
class Orchestrator : private GeneratorHost {
 public:
  Orchestrator(TaskConfig config, EventSink* sink = nullptr,
               UpdateMode mode = UpdateMode::kImmediate,
               std::string id_prefix = "");

  // Runs the generator's initialize step and enqueues the result.
  DemandMap activate(double now);
  // Quota mode: enqueue fixed demand directly.
  void enqueue(const DemandMap& demand, double now);
  // Batched mode: runs one generator update over all ratings so far.
  DemandMap flush_updates(double now);

  // Admits the rater (Rejected if ineligible) and starts training.
  const RaterProfile& join(const std::string& rater_id,
                           const Attributes& attributes, double now);
  void complete_training(const std::string& rater_id, double now);

  std::optional<IssuedAssignment> next(const std::string& rater_id,
                                       double now);

  // Quality-checks and settles a rating. Resubmitting a settled assignment
  // returns the original verdict with duplicate = true.
  SubmitResult submit(const std::string& assignment_id, int score,
                      double watch_seconds,
                      const std::vector<bool>& control_answers, double now);

  // Releases an active rater for good; its in-flight work is expired.
  void release(const std::string& rater_id, const std::string& reason,
               double now);

  // Expires one in-flight assignment and restores its demand.
  void expire_assignment(const std::string& assignment_id, double now);
  // In-flight assignments older than idle_timeout_s: expired, and their
  // raters released. Returns the expired assignment ids.
  std::vector<std::string> expire_idle(double now);

  bool is_complete() const;
  bool budget_exhausted() const;
  int recruitment_target() const;
  int raters_in_pipeline() const;

  std::vector<DemoResult> results() const;

  const TaskConfig& config() const { return config_; }
  const DemandQueue& queue() const { return queue_; }
  const RaterRegistry& raters() const { return raters_; }
  const RatingHistory& history() const { return history_; }
  const GeneratorState& generator_state() const { return generator_state_; }
  const DemoCache& demo_cache() const { return cache_; }
  int valid_ratings() const { return valid_; }
  int invalid_ratings() const { return invalid_; }
  int expired_assignments() const { return expired_; }
  double paid_seconds() const { return paid_seconds_; }
  double spend() const { return paid_seconds_ / 3600.0 * config_.pay_rate; }
  int slow_updates() const { return slow_updates_; }
  const Demo& demo(const std::string& key) const { return queue_.demo(key); }
  std::shared_ptr<const PlaybackManifest> manifest(const std::string& key);

  // Canonical serialized state; equal states produce byte-equal dumps.
  nlohmann::json snapshot() const;

 private:
  DemandMap on_valid_rating(const std::string& demo_key, int score) override;
  DemandMap run_update(double now);
  void emit(double now, const std::string& kind, nlohmann::json payload);
  DemandMap top_up(DemandMap demand);

  TaskConfig config_;
  EventSink* sink_;
  UpdateMode mode_;
  DemandQueue queue_;
  RaterRegistry raters_;
  DemoCache cache_;
  RatingHistory history_;
  GeneratorState generator_state_;
  bool activated_ = false;
  int valid_ = 0;
  int invalid_ = 0;
  int expired_ = 0;
  double paid_seconds_ = 0.0;
  int slow_updates_ = 0;
  double now_ = 0.0;
  std::map<std::string, SubmitResult> settled_;
  std::map<std::string, std::string> expired_ids_;
};

}  // namespace vidplat

#endif  // VIDPLAT_ORCHESTRATOR_H_
