#ifndef VIDPLAT_SCHEDULER_H_
#define VIDPLAT_SCHEDULER_H_

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "vidplat/domain.h"
#include "vidplat/generators.h"

namespace vidplat {

struct SchedulerConfig {
  int fatigue_cap = 12;     // assignments per rater
  int per_source_cap = 6;   // assignments per rater on one source
};

// Per-demo counters. `demanded` is what is still waiting to be issued; the
// audit counters satisfy demanded == enqueued - issued + restored.
struct QueueEntry {
  int demanded = 0;
  int in_flight = 0;
  int enqueued = 0;
  int issued = 0;
  int restored = 0;
};

// Receives valid ratings and answers with follow-up demand.
class GeneratorHost {
 public:
  virtual ~GeneratorHost() = default;
  virtual DemandMap on_valid_rating(const std::string& demo_key,
                                    int score) = 0;
};

// The demand queue: randomized assignment-level allocation under per-rater
// constraints. Not thread-safe; callers serialize access.
class DemandQueue {
 public:
  DemandQueue(SchedulerConfig config, uint64_t seed,
              std::string id_prefix = "");

  void enqueue(const DemandMap& demand);

  // Raters become eligible for assignments once added and stop being
  // eligible for good once removed.
  void add_rater(const std::string& rater_id);
  void remove_rater(const std::string& rater_id);
  bool is_active(const std::string& rater_id) const;

  // Uniform draw over demos with demand left that the rater has not seen,
  // subject to the fatigue and per-source caps. Throws kNotFound for an
  // unknown rater and kFailedPrecondition for a removed one.
  std::optional<Assignment> next_assignment(const std::string& rater_id,
                                            double now);

  // Settles an in-flight assignment. Invalid ratings restore one unit of
  // demand (the rater keeps the demo in its seen set); valid ratings are
  // forwarded to `host` and its follow-up demand is enqueued and returned.
  DemandMap on_rating(const Rating& rating, GeneratorHost* host);

  // Abandoned assignment: restores one unit of demand.
  void expire(const std::string& assignment_id);

  // ceil(total demanded / capacity) minus raters already active or in the
  // pipeline, floored at zero; at least one while demand exists that no
  // active rater may take and no rater outside the queue is on the way.
  int recruitment_target(int per_rater_capacity, int raters_in_pipeline) const;

  bool is_complete() const;
  bool has_eligible_demo(const std::string& rater_id) const;

  int total_demanded() const;
  int total_in_flight() const;
  const std::map<std::string, QueueEntry>& entries() const { return entries_; }
  const Demo& demo(const std::string& key) const;
  const std::map<std::string, Assignment>& in_flight() const {
    return in_flight_;
  }
  std::optional<Assignment> find_in_flight(const std::string& id) const;
  int assignments_issued_to(const std::string& rater_id) const;
  const std::set<std::string>& seen_by(const std::string& rater_id) const;
  int remaining_capacity(const std::string& rater_id) const;
  const SchedulerConfig& config() const { return config_; }

  nlohmann::json snapshot() const;

 private:
  struct RaterSlot {
    bool active = true;
    int count = 0;
    std::set<std::string> seen;
    std::map<std::string, int> per_source;
  };

  const RaterSlot& slot(const std::string& rater_id) const;
  bool eligible(const RaterSlot& rater, const std::string& key) const;

  SchedulerConfig config_;
  std::string id_prefix_;
  std::mt19937_64 rng_;
  uint64_t next_id_ = 1;
  std::map<std::string, QueueEntry> entries_;
  std::map<std::string, Demo> demos_;
  std::set<std::string> open_;  // keys with demanded > 0
  std::map<std::string, RaterSlot> raters_;
  std::map<std::string, Assignment> in_flight_;
  std::set<std::string> settled_;
};

}  // namespace vidplat

#endif  // VIDPLAT_SCHEDULER_H_
