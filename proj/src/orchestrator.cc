#include "vidplat/orchestrator.h"

#include <algorithm>
#include <chrono>

#include "vidplat/stats.h"

namespace vidplat {

using nlohmann::json;

namespace {

// Generator updates are expected to be quick rule evaluations.
constexpr double kSlowUpdateSeconds = 1.0;

json answers_json(const std::vector<bool>& answers) {
  json out = json::array();
  for (bool a : answers) out.push_back(a);
  return out;
}

}  // namespace

Orchestrator::Orchestrator(TaskConfig config, EventSink* sink, UpdateMode mode,
                           std::string id_prefix)
    : config_(std::move(config)),
      sink_(sink),
      mode_(mode),
      queue_(config_.scheduler(), config_.seed, std::move(id_prefix)),
      raters_(config_.lifecycle()) {}

void Orchestrator::emit(double now, const std::string& kind, json payload) {
  if (sink_ != nullptr) sink_->emit(now, kind, std::move(payload));
}

DemandMap Orchestrator::activate(double now) {
  if (activated_) {
    throw Error(ErrorCode::kFailedPrecondition, "task already activated");
  }
  if (mode_ == UpdateMode::kNone) {
    throw Error(ErrorCode::kFailedPrecondition,
                "quota-mode tasks take demand through enqueue()");
  }
  GeneratorStep step = initialize(config_.generator, config_.source);
  generator_state_ = std::move(step.state);
  activated_ = true;
  if (mode_ == UpdateMode::kBatched) step.demand = top_up(std::move(step.demand));
  queue_.enqueue(step.demand);
  emit(now, "demand_enqueued", {{"demand", step.demand.to_json()}});
  return step.demand;
}

void Orchestrator::enqueue(const DemandMap& demand, double now) {
  for (const auto& [key, demo] : demand.demos()) {
    if (!validate_demo(demo, config_.source).empty()) {
      throw Error(ErrorCode::kInvalidArgument, "invalid demo '" + key + "'");
    }
  }
  queue_.enqueue(demand);
  emit(now, "demand_enqueued", {{"demand", demand.to_json()}});
}

DemandMap Orchestrator::run_update(double now) {
  if (!activated_) return DemandMap{};
  const auto start = std::chrono::steady_clock::now();
  GeneratorStep step =
      update(config_.generator, config_.source, history_, generator_state_);
  const std::chrono::duration<double> took =
      std::chrono::steady_clock::now() - start;
  if (took.count() > kSlowUpdateSeconds) ++slow_updates_;
  generator_state_ = std::move(step.state);
  (void)now;
  return std::move(step.demand);
}

DemandMap Orchestrator::flush_updates(double now) {
  if (mode_ != UpdateMode::kBatched) {
    throw Error(ErrorCode::kFailedPrecondition,
                "flush_updates is only used in batched mode");
  }
  DemandMap demand = top_up(run_update(now));
  queue_.enqueue(demand);
  if (!demand.empty()) {
    emit(now, "demand_emitted", {{"demand", demand.to_json()}});
  }
  return demand;
}

// A multi-task round cannot come back for one more rating, so each demo the
// generator asks for gets min_ratings in one go.
DemandMap Orchestrator::top_up(DemandMap demand) {
  const int min_ratings = config_.generator.params.min_ratings;
  DemandMap out;
  for (const auto& [key, count] : demand.counts()) {
    auto it = history_.find(key);
    const int have = it == history_.end() ? 0 : static_cast<int>(it->second.size());
    auto q = queue_.entries().find(key);
    const int pending =
        q == queue_.entries().end() ? 0 : q->second.demanded + q->second.in_flight;
    const int want = std::max(count, min_ratings - have - pending);
    generator_state_.requested[key] += want - count;
    out.add(demand.demo(key), want);
  }
  return out;
}

DemandMap Orchestrator::on_valid_rating(const std::string& demo_key,
                                        int score) {
  history_[demo_key].add(score);
  if (mode_ != UpdateMode::kImmediate) return DemandMap{};
  return run_update(now_);
}

const RaterProfile& Orchestrator::join(const std::string& rater_id,
                                       const Attributes& attributes,
                                       double now) {
  const RaterProfile& p =
      raters_.admit(rater_id, attributes, config_.eligibility, now);
  emit(now, "rater_joined",
       {{"rater", rater_id},
        {"state", std::string(to_string(p.state))},
        {"reasons", p.reasons}});
  if (p.state == RaterState::kRecruited) {
    return raters_.start_training(rater_id, now);
  }
  return p;
}

void Orchestrator::complete_training(const std::string& rater_id, double now) {
  const RaterProfile& p = raters_.complete_training(rater_id, now);
  queue_.add_rater(rater_id);
  paid_seconds_ += p.training_duration;
  emit(now, "training_done",
       {{"rater", rater_id}, {"duration", p.training_duration}});
}

std::optional<IssuedAssignment> Orchestrator::next(const std::string& rater_id,
                                                   double now) {
  const RaterProfile& p = raters_.get(rater_id);
  if (p.state != RaterState::kActive) {
    throw Error(ErrorCode::kFailedPrecondition,
                "rater '" + rater_id + "' is " + std::string(to_string(p.state)) +
                    ", not active");
  }
  if (budget_exhausted()) return std::nullopt;
  std::optional<Assignment> a = queue_.next_assignment(rater_id, now);
  if (!a) return std::nullopt;
  raters_.touch(rater_id, now);
  emit(now, "assignment_issued",
       {{"assignment", a->id}, {"rater", rater_id}, {"demo", a->demo_key}});
  return IssuedAssignment{*a, manifest(a->demo_key)};
}

std::shared_ptr<const PlaybackManifest> Orchestrator::manifest(
    const std::string& key) {
  return cache_.get_or_build(queue_.demo(key), config_.source);
}

SubmitResult Orchestrator::submit(const std::string& assignment_id, int score,
                                  double watch_seconds,
                                  const std::vector<bool>& control_answers,
                                  double now) {
  if (auto it = settled_.find(assignment_id); it != settled_.end()) {
    SubmitResult again = it->second;
    again.duplicate = true;
    again.emitted = DemandMap{};
    return again;
  }
  if (expired_ids_.count(assignment_id) > 0) {
    throw Error(ErrorCode::kConflict,
                "assignment '" + assignment_id + "' expired");
  }
  std::optional<Assignment> a = queue_.find_in_flight(assignment_id);
  if (!a) {
    throw Error(ErrorCode::kNotFound,
                "unknown assignment '" + assignment_id + "'");
  }
  now_ = now;
  const Demo& demo = queue_.demo(a->demo_key);
  const double wall = manifest(a->demo_key)->total_wall_duration;

  Rating rating;
  rating.assignment_id = assignment_id;
  rating.score = score;
  rating.watch_seconds = watch_seconds;
  rating.control_answers = control_answers;
  const RatingCheck check =
      validate_rating(rating, demo, wall, config_.watch_slack);
  rating.set_verdict(check.verdict);
  if (!valid_score(score)) rating.score = 0;

  emit(now, "rating_submitted",
       {{"assignment", assignment_id},
        {"rater", a->rater_id},
        {"demo", a->demo_key},
        {"score", score},
        {"watch_seconds", watch_seconds},
        {"control_answers", answers_json(control_answers)}});
  emit(now, "verdict",
       {{"assignment", assignment_id},
        {"rater", a->rater_id},
        {"demo", a->demo_key},
        {"verdict", std::string(to_string(check.verdict))},
        {"reason", check.reason},
        {"score", score}});

  const bool valid = check.verdict == Verdict::kValid;
  if (valid || config_.count_invalid_in_cost) {
    paid_seconds_ += now - a->issued_at;
  }
  if (valid) {
    ++valid_;
  } else {
    ++invalid_;
  }

  SubmitResult result;
  result.assignment_id = assignment_id;
  result.verdict = check.verdict;
  result.reason = check.reason;
  result.rater_released = raters_.record_verdict(a->rater_id, check.verdict, now);
  result.emitted = queue_.on_rating(rating, this);
  if (!valid) {
    emit(now, "demand_restored",
         {{"demo", a->demo_key}, {"assignment", assignment_id},
          {"cause", "invalid"}});
  }
  if (!result.emitted.empty()) {
    emit(now, "demand_emitted", {{"demand", result.emitted.to_json()}});
  }
  if (result.rater_released) {
    release(a->rater_id, "invalid_threshold", now);
  }
  SubmitResult stored = result;
  stored.emitted = DemandMap{};
  settled_.emplace(assignment_id, std::move(stored));
  return result;
}

void Orchestrator::release(const std::string& rater_id,
                           const std::string& reason, double now) {
  raters_.release(rater_id, reason);
  if (queue_.is_active(rater_id)) queue_.remove_rater(rater_id);
  std::vector<std::string> orphaned;
  for (const auto& [id, a] : queue_.in_flight()) {
    if (a.rater_id == rater_id) orphaned.push_back(id);
  }
  for (const std::string& id : orphaned) expire_assignment(id, now);
  emit(now, "rater_released", {{"rater", rater_id}, {"reason", reason}});
}

void Orchestrator::expire_assignment(const std::string& assignment_id,
                                     double now) {
  std::optional<Assignment> a = queue_.find_in_flight(assignment_id);
  if (!a) {
    throw Error(ErrorCode::kNotFound,
                "assignment '" + assignment_id + "' is not in flight");
  }
  queue_.expire(assignment_id);
  expired_ids_.emplace(assignment_id, a->rater_id);
  ++expired_;
  emit(now, "assignment_expired",
       {{"assignment", assignment_id}, {"rater", a->rater_id},
        {"demo", a->demo_key}});
  emit(now, "demand_restored",
       {{"demo", a->demo_key}, {"assignment", assignment_id},
        {"cause", "expired"}});
}

std::vector<std::string> Orchestrator::expire_idle(double now) {
  std::vector<Assignment> stale;
  for (const auto& [id, a] : queue_.in_flight()) {
    if (now - a.issued_at >= config_.idle_timeout_s) stale.push_back(a);
  }
  std::vector<std::string> expired;
  for (const Assignment& a : stale) {
    if (!queue_.find_in_flight(a.id)) continue;  // released with its rater
    expire_assignment(a.id, now);
    expired.push_back(a.id);
    if (raters_.get(a.rater_id).state == RaterState::kActive) {
      release(a.rater_id, "idle_timeout", now);
    }
  }
  return expired;
}

bool Orchestrator::budget_exhausted() const {
  if (config_.budget_ratings > 0 &&
      valid_ + queue_.total_in_flight() >= config_.budget_ratings) {
    return true;
  }
  return config_.max_spend > 0.0 && spend() >= config_.max_spend;
}

bool Orchestrator::is_complete() const {
  if (queue_.is_complete()) return true;
  return budget_exhausted() && queue_.total_in_flight() == 0;
}

int Orchestrator::raters_in_pipeline() const {
  int n = 0;
  for (const auto& [id, p] : raters_.profiles()) {
    if (p.state == RaterState::kRecruited || p.state == RaterState::kTraining) {
      ++n;
    } else if (p.state == RaterState::kActive &&
               queue_.remaining_capacity(id) > 0) {
      ++n;
    }
  }
  return n;
}

int Orchestrator::recruitment_target() const {
  if (budget_exhausted()) return 0;
  const int capacity = std::min(config_.fatigue_cap, config_.per_source_cap);
  return queue_.recruitment_target(capacity, raters_in_pipeline());
}

std::vector<DemoResult> Orchestrator::results() const {
  std::vector<DemoResult> out;
  for (const auto& [key, entry] : queue_.entries()) {
    DemoResult r;
    r.demo_key = key;
    auto it = history_.find(key);
    if (it != history_.end() && !it->second.empty()) {
      const RatingSample& s = it->second;
      r.n_valid = static_cast<int>(s.size());
      r.mos = mos(s);
      if (s.size() >= 2) {
        r.se = standard_error(s);
        r.ci90 = confidence_interval(s, 0.90);
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

json Orchestrator::snapshot() const {
  json history = json::object();
  for (const auto& [key, sample] : history_) {
    history[key] = std::vector<int>(sample.scores().begin(),
                                    sample.scores().end());
  }
  json settled = json::object();
  for (const auto& [id, r] : settled_) {
    settled[id] = {std::string(to_string(r.verdict)), r.reason};
  }
  return {{"activated", activated_},
          {"queue", queue_.snapshot()},
          {"raters", raters_.snapshot()},
          {"history", std::move(history)},
          {"generator", generator_state_.to_json()},
          {"valid", valid_},
          {"invalid", invalid_},
          {"expired", expired_},
          {"paid_seconds", paid_seconds_},
          {"settled", std::move(settled)},
          {"expired_ids", expired_ids_}};
}

}  // namespace vidplat
