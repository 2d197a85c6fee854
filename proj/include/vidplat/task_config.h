#ifndef VIDPLAT_TASK_CONFIG_H_
#define VIDPLAT_TASK_CONFIG_H_

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "vidplat/domain.h"
#include "vidplat/generators.h"
#include "vidplat/raters.h"
#include "vidplat/scheduler.h"

namespace vidplat {

// Everything a researcher specifies for one crowdsourcing task.
struct TaskConfig {
  SourceContent source;
  GeneratorSpec generator;
  int budget_ratings = 0;   // max valid ratings; 0 = no count limit
  double max_spend = 0.0;   // currency units; 0 = no spend limit
  double pay_rate = 12.0;   // currency per rater-hour
  Eligibility eligibility;
  int fatigue_cap = 12;
  int per_source_cap = 6;
  int release_threshold = 3;
  double idle_timeout_s = 600.0;
  double watch_slack = 0.02;
  bool count_invalid_in_cost = false;
  uint64_t seed = 1;

  double epsilon() const { return generator.params.epsilon; }
  SchedulerConfig scheduler() const { return {fatigue_cap, per_source_cap}; }
  LifecycleConfig lifecycle() const {
    return {release_threshold, idle_timeout_s, watch_slack};
  }

  // Throws kInvalidArgument; the message starts with the field path.
  void validate() const;

  // Field names mirror this struct; the generator block is
  // `{"name": ..., "params": {...}}` and a top-level `epsilon` feeds the
  // generator's stop rule.
  static TaskConfig from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

}  // namespace vidplat

#endif  // VIDPLAT_TASK_CONFIG_H_
