#include "vidplat/scheduler.h"

#include <sstream>
#include <vector>

namespace vidplat {

using nlohmann::json;

DemandQueue::DemandQueue(SchedulerConfig config, uint64_t seed,
                         std::string id_prefix)
    : config_(config), id_prefix_(std::move(id_prefix)), rng_(seed) {
  if (config_.fatigue_cap < 1) {
    throw Error(ErrorCode::kInvalidArgument, "fatigue_cap must be >= 1");
  }
  if (config_.per_source_cap < 1) {
    throw Error(ErrorCode::kInvalidArgument, "per_source_cap must be >= 1");
  }
}

void DemandQueue::enqueue(const DemandMap& demand) {
  for (const auto& [key, count] : demand.counts()) {
    demos_.emplace(key, demand.demo(key));
    QueueEntry& e = entries_[key];
    e.demanded += count;
    e.enqueued += count;
    open_.insert(key);
  }
}

void DemandQueue::add_rater(const std::string& rater_id) {
  auto [it, inserted] = raters_.emplace(rater_id, RaterSlot{});
  if (!inserted) {
    throw Error(ErrorCode::kConflict,
                "rater '" + rater_id + "' already registered");
  }
}

void DemandQueue::remove_rater(const std::string& rater_id) {
  auto it = raters_.find(rater_id);
  if (it == raters_.end()) {
    throw Error(ErrorCode::kNotFound, "unknown rater '" + rater_id + "'");
  }
  it->second.active = false;
}

bool DemandQueue::is_active(const std::string& rater_id) const {
  auto it = raters_.find(rater_id);
  return it != raters_.end() && it->second.active;
}

const DemandQueue::RaterSlot& DemandQueue::slot(
    const std::string& rater_id) const {
  auto it = raters_.find(rater_id);
  if (it == raters_.end()) {
    throw Error(ErrorCode::kNotFound, "unknown rater '" + rater_id + "'");
  }
  return it->second;
}

bool DemandQueue::eligible(const RaterSlot& rater,
                           const std::string& key) const {
  if (rater.seen.count(key) > 0) return false;
  const std::string& source = demos_.at(key).source_id();
  auto it = rater.per_source.find(source);
  return it == rater.per_source.end() || it->second < config_.per_source_cap;
}

std::optional<Assignment> DemandQueue::next_assignment(
    const std::string& rater_id, double now) {
  const RaterSlot& rater = slot(rater_id);
  if (!rater.active) {
    throw Error(ErrorCode::kFailedPrecondition,
                "rater '" + rater_id + "' is not active");
  }
  if (rater.count >= config_.fatigue_cap) return std::nullopt;

  std::vector<const std::string*> candidates;
  for (const std::string& key : open_) {
    if (eligible(rater, key)) candidates.push_back(&key);
  }
  if (candidates.empty()) return std::nullopt;
  std::uniform_int_distribution<size_t> pick(0, candidates.size() - 1);
  const std::string key = *candidates[pick(rng_)];

  QueueEntry& e = entries_[key];
  e.demanded -= 1;
  e.in_flight += 1;
  e.issued += 1;
  if (e.demanded == 0) open_.erase(key);

  RaterSlot& mutable_rater = raters_[rater_id];
  mutable_rater.count += 1;
  mutable_rater.seen.insert(key);
  mutable_rater.per_source[demos_.at(key).source_id()] += 1;

  Assignment a;
  a.id = id_prefix_ + "a" + std::to_string(next_id_++);
  a.demo_key = key;
  a.rater_id = rater_id;
  a.issued_at = now;
  a.control_questions = derive_control_questions(demos_.at(key));
  in_flight_.emplace(a.id, a);
  return a;
}

DemandMap DemandQueue::on_rating(const Rating& rating, GeneratorHost* host) {
  if (rating.verdict == Verdict::kPending) {
    throw Error(ErrorCode::kFailedPrecondition,
                "rating for '" + rating.assignment_id + "' has no verdict");
  }
  auto it = in_flight_.find(rating.assignment_id);
  if (it == in_flight_.end()) {
    if (settled_.count(rating.assignment_id) > 0) {
      throw Error(ErrorCode::kConflict, "duplicate rating for assignment '" +
                                            rating.assignment_id + "'");
    }
    throw Error(ErrorCode::kNotFound,
                "unknown assignment '" + rating.assignment_id + "'");
  }
  const std::string key = it->second.demo_key;
  in_flight_.erase(it);
  settled_.insert(rating.assignment_id);
  QueueEntry& e = entries_[key];
  e.in_flight -= 1;
  if (rating.verdict == Verdict::kInvalid) {
    e.demanded += 1;
    e.restored += 1;
    open_.insert(key);
    return DemandMap{};
  }
  if (host == nullptr) return DemandMap{};
  DemandMap follow_up = host->on_valid_rating(key, rating.score);
  enqueue(follow_up);
  return follow_up;
}

void DemandQueue::expire(const std::string& assignment_id) {
  auto it = in_flight_.find(assignment_id);
  if (it == in_flight_.end()) {
    throw Error(ErrorCode::kNotFound,
                "assignment '" + assignment_id + "' is not in flight");
  }
  QueueEntry& e = entries_[it->second.demo_key];
  e.in_flight -= 1;
  e.demanded += 1;
  e.restored += 1;
  open_.insert(it->second.demo_key);
  settled_.insert(assignment_id);
  in_flight_.erase(it);
}

int DemandQueue::recruitment_target(int per_rater_capacity,
                                    int raters_in_pipeline) const {
  if (per_rater_capacity < 1) {
    throw Error(ErrorCode::kInvalidArgument, "per_rater_capacity must be >= 1");
  }
  const int demanded = total_demanded();
  if (demanded == 0) return 0;
  const int needed = (demanded + per_rater_capacity - 1) / per_rater_capacity;
  int target = std::max(0, needed - raters_in_pipeline);
  if (target == 0) {
    // Starvation: nobody queued can take the demand and nobody else is on
    // the way.
    int active = 0;
    bool anyone = false;
    for (const auto& [id, rater] : raters_) {
      if (!rater.active) continue;
      ++active;
      if (has_eligible_demo(id)) anyone = true;
    }
    if (!anyone && raters_in_pipeline <= active) target = 1;
  }
  return target;
}

bool DemandQueue::is_complete() const {
  return open_.empty() && in_flight_.empty();
}

bool DemandQueue::has_eligible_demo(const std::string& rater_id) const {
  const RaterSlot& rater = slot(rater_id);
  if (!rater.active || rater.count >= config_.fatigue_cap) return false;
  for (const std::string& key : open_) {
    if (eligible(rater, key)) return true;
  }
  return false;
}

int DemandQueue::total_demanded() const {
  int sum = 0;
  for (const std::string& key : open_) sum += entries_.at(key).demanded;
  return sum;
}

int DemandQueue::total_in_flight() const {
  return static_cast<int>(in_flight_.size());
}

const Demo& DemandQueue::demo(const std::string& key) const {
  auto it = demos_.find(key);
  if (it == demos_.end()) {
    throw Error(ErrorCode::kNotFound, "unknown demo '" + key + "'");
  }
  return it->second;
}

std::optional<Assignment> DemandQueue::find_in_flight(
    const std::string& id) const {
  auto it = in_flight_.find(id);
  if (it == in_flight_.end()) return std::nullopt;
  return it->second;
}

int DemandQueue::assignments_issued_to(const std::string& rater_id) const {
  return slot(rater_id).count;
}

const std::set<std::string>& DemandQueue::seen_by(
    const std::string& rater_id) const {
  return slot(rater_id).seen;
}

int DemandQueue::remaining_capacity(const std::string& rater_id) const {
  const RaterSlot& rater = slot(rater_id);
  if (!rater.active) return 0;
  // A task has one source, so the busiest source bounds what is left.
  int busiest = 0;
  for (const auto& [source, n] : rater.per_source) busiest = std::max(busiest, n);
  return std::max(0, std::min(config_.fatigue_cap - rater.count,
                              config_.per_source_cap - busiest));
}

json DemandQueue::snapshot() const {
  json doc;
  doc["next_id"] = next_id_;
  std::ostringstream rng_state;
  rng_state << rng_;
  doc["rng"] = rng_state.str();
  doc["entries"] = json::object();
  for (const auto& [key, e] : entries_) {
    doc["entries"][key] = {e.demanded, e.in_flight, e.enqueued, e.issued,
                           e.restored};
  }
  doc["raters"] = json::object();
  for (const auto& [id, r] : raters_) {
    doc["raters"][id] = {{"active", r.active},
                         {"count", r.count},
                         {"seen", r.seen},
                         {"per_source", r.per_source}};
  }
  doc["in_flight"] = json::object();
  for (const auto& [id, a] : in_flight_) {
    doc["in_flight"][id] = {{"demo", a.demo_key},
                            {"rater", a.rater_id},
                            {"issued_at", a.issued_at}};
  }
  doc["settled"] = settled_;
  return doc;
}

}  // namespace vidplat
