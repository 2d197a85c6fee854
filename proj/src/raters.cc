#include "vidplat/raters.h"

#include <algorithm>
#include <cstdlib>

namespace vidplat {

using nlohmann::json;

std::string_view to_string(RaterState state) {
  switch (state) {
    case RaterState::kRecruited: return "recruited";
    case RaterState::kTraining: return "training";
    case RaterState::kActive: return "active";
    case RaterState::kReleased: return "released";
    case RaterState::kRejected: return "rejected";
  }
  return "unknown";
}

namespace {

std::optional<double> to_number(const std::string& text) {
  if (text.empty()) return std::nullopt;
  char* end = nullptr;
  double v = std::strtod(text.c_str(), &end);
  if (end != text.c_str() + text.size()) return std::nullopt;
  return v;
}

}  // namespace

std::vector<std::string> check_eligibility(const Attributes& candidate,
                                           const Eligibility& eligibility) {
  std::vector<std::string> reasons;
  for (const auto& [key, wanted] : eligibility) {
    const bool is_min = key.rfind("min_", 0) == 0;
    const bool is_max = key.rfind("max_", 0) == 0;
    const std::string attribute = (is_min || is_max) ? key.substr(4) : key;
    auto it = candidate.find(attribute);
    if (it == candidate.end()) {
      reasons.push_back("missing attribute '" + attribute + "'");
      continue;
    }
    if (is_min || is_max) {
      std::optional<double> have = to_number(it->second);
      std::optional<double> bound = to_number(wanted);
      if (!have || !bound) {
        reasons.push_back("'" + attribute + "' is not numeric");
      } else if (is_min && *have < *bound) {
        reasons.push_back(attribute + " " + it->second + " < " + wanted);
      } else if (is_max && *have > *bound) {
        reasons.push_back(attribute + " " + it->second + " > " + wanted);
      }
    } else if (it->second != wanted) {
      reasons.push_back(attribute + " '" + it->second + "' != '" + wanted +
                        "'");
    }
  }
  return reasons;
}

RatingCheck validate_rating(const Rating& rating, const Demo& demo,
                            double wall_duration, double watch_slack) {
  if (rating.verdict != Verdict::kPending) {
    throw Error(ErrorCode::kFailedPrecondition,
                "rating for '" + rating.assignment_id + "' already judged");
  }
  const std::vector<ControlQuestion> questions = derive_control_questions(demo);
  if (!valid_score(rating.score) ||
      rating.control_answers.size() != questions.size() ||
      rating.watch_seconds < 0.0) {
    return {Verdict::kInvalid, "malformed"};
  }
  if (rating.watch_seconds < wall_duration * (1.0 - watch_slack)) {
    return {Verdict::kInvalid, "partial_watch"};
  }
  for (size_t i = 0; i < questions.size(); ++i) {
    if (rating.control_answers[i] != questions[i].expected) {
      return {Verdict::kInvalid, "control_failed"};
    }
  }
  return {Verdict::kValid, ""};
}

RaterRegistry::RaterRegistry(LifecycleConfig config) : config_(config) {
  if (config_.release_threshold < 1) {
    throw Error(ErrorCode::kInvalidArgument, "release_threshold must be >= 1");
  }
}

const RaterProfile& RaterRegistry::admit(const std::string& id,
                                         const Attributes& attributes,
                                         const Eligibility& eligibility,
                                         double now) {
  if (profiles_.count(id) > 0) {
    throw Error(ErrorCode::kConflict, "duplicate rater id '" + id + "'");
  }
  RaterProfile p;
  p.id = id;
  p.attributes = attributes;
  p.joined_at = now;
  p.last_activity = now;
  p.reasons = check_eligibility(attributes, eligibility);
  p.state = p.reasons.empty() ? RaterState::kRecruited : RaterState::kRejected;
  return profiles_.emplace(id, std::move(p)).first->second;
}

RaterProfile& RaterRegistry::mutable_get(const std::string& id) {
  auto it = profiles_.find(id);
  if (it == profiles_.end()) {
    throw Error(ErrorCode::kNotFound, "unknown rater '" + id + "'");
  }
  return it->second;
}

const RaterProfile& RaterRegistry::get(const std::string& id) const {
  auto it = profiles_.find(id);
  if (it == profiles_.end()) {
    throw Error(ErrorCode::kNotFound, "unknown rater '" + id + "'");
  }
  return it->second;
}

bool RaterRegistry::contains(const std::string& id) const {
  return profiles_.count(id) > 0;
}

const RaterProfile& RaterRegistry::start_training(const std::string& id,
                                                  double now) {
  RaterProfile& p = mutable_get(id);
  if (p.state != RaterState::kRecruited) {
    throw Error(ErrorCode::kFailedPrecondition,
                "rater '" + id + "' cannot start training from state " +
                    std::string(to_string(p.state)));
  }
  p.state = RaterState::kTraining;
  p.training_started_at = now;
  p.last_activity = now;
  return p;
}

const RaterProfile& RaterRegistry::complete_training(const std::string& id,
                                                     double now) {
  RaterProfile& p = mutable_get(id);
  if (p.state != RaterState::kTraining) {
    throw Error(ErrorCode::kFailedPrecondition,
                "rater '" + id + "' cannot complete training from state " +
                    std::string(to_string(p.state)));
  }
  p.state = RaterState::kActive;
  p.training_duration = now - p.training_started_at;
  p.last_activity = now;
  return p;
}

bool RaterRegistry::record_verdict(const std::string& id, Verdict verdict,
                                   double now) {
  RaterProfile& p = mutable_get(id);
  if (p.state != RaterState::kActive) {
    throw Error(ErrorCode::kFailedPrecondition,
                "rater '" + id + "' is not active");
  }
  p.last_activity = now;
  if (verdict == Verdict::kValid) {
    ++p.valid_count;
    return false;
  }
  if (verdict != Verdict::kInvalid) {
    throw Error(ErrorCode::kInvalidArgument, "verdict must be final");
  }
  ++p.invalid_count;
  if (p.invalid_count >= config_.release_threshold) {
    p.state = RaterState::kReleased;
    p.reasons.push_back("invalid_threshold");
    return true;
  }
  return false;
}

void RaterRegistry::touch(const std::string& id, double now) {
  mutable_get(id).last_activity = now;
}

void RaterRegistry::release(const std::string& id, const std::string& reason) {
  RaterProfile& p = mutable_get(id);
  if (p.state == RaterState::kReleased || p.state == RaterState::kRejected) {
    return;
  }
  p.state = RaterState::kReleased;
  p.reasons.push_back(reason);
}

std::vector<std::string> RaterRegistry::idle_raters(double now) const {
  std::vector<std::string> out;
  for (const auto& [id, p] : profiles_) {
    if (p.state == RaterState::kActive &&
        now - p.last_activity >= config_.idle_timeout_s) {
      out.push_back(id);
    }
  }
  return out;
}

int RaterRegistry::count(RaterState state) const {
  return static_cast<int>(
      std::count_if(profiles_.begin(), profiles_.end(),
                    [state](const auto& kv) { return kv.second.state == state; }));
}

json RaterRegistry::snapshot() const {
  json doc = json::object();
  for (const auto& [id, p] : profiles_) {
    doc[id] = {{"state", std::string(to_string(p.state))},
               {"valid", p.valid_count},
               {"invalid", p.invalid_count},
               {"joined_at", p.joined_at},
               {"training_started_at", p.training_started_at},
               {"training_duration", p.training_duration},
               {"last_activity", p.last_activity},
               {"attributes", p.attributes},
               {"reasons", p.reasons}};
  }
  return doc;
}

MockPlatform::MockPlatform(double mean_join_delay_s, uint64_t seed,
                           Attributes attributes)
    : mean_delay_(mean_join_delay_s), rng_(seed),
      attributes_(std::move(attributes)) {
  if (!(mean_delay_ > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "mean join delay must be > 0");
  }
}

void MockPlatform::publish(int round, int count, double /*pay_rate*/,
                           const Eligibility& /*eligibility*/, double now) {
  if (!rounds_.insert(round).second) return;
  std::exponential_distribution<double> delay(1.0 / mean_delay_);
  for (int i = 0; i < count; ++i) {
    Candidate c;
    c.external_id = "mock-" + std::to_string(next_id_++);
    c.attributes = attributes_;
    c.join_time = now + delay(rng_);
    pending_.emplace(c.join_time, std::move(c));
  }
  requested_ += std::max(0, count);
}

std::vector<Candidate> MockPlatform::poll_joins(double now) {
  std::vector<Candidate> out;
  while (!pending_.empty() && pending_.begin()->first <= now) {
    out.push_back(std::move(pending_.begin()->second));
    pending_.erase(pending_.begin());
  }
  return out;
}

std::optional<double> MockPlatform::next_join_time() const {
  if (pending_.empty()) return std::nullopt;
  return pending_.begin()->first;
}

TracePlatform::TracePlatform(RecruitmentTrace trace, bool extend,
                             uint64_t seed, Attributes attributes)
    : trace_(std::move(trace)), extend_(extend), rng_(seed),
      attributes_(std::move(attributes)) {
  for (size_t i = 1; i < trace_.entries.size(); ++i) {
    gaps_.push_back(trace_.entries[i].join_offset_s -
                    trace_.entries[i - 1].join_offset_s);
  }
}

bool TracePlatform::load(Stream& s) {
  if (s.remaining <= 0) return false;
  if (s.index < trace_.entries.size()) {
    s.offset = trace_.entries[s.index].join_offset_s;
    s.training = trace_.entries[s.index].training_s;
    return true;
  }
  if (!extend_ || trace_.entries.empty()) return false;
  double gap = trace_.entries.back().join_offset_s;
  if (!gaps_.empty()) {
    std::uniform_int_distribution<size_t> pick(0, gaps_.size() - 1);
    gap = gaps_[pick(rng_)];
  }
  std::uniform_int_distribution<size_t> pick_entry(0, trace_.size() - 1);
  s.offset += gap;
  s.training = trace_.entries[pick_entry(rng_)].training_s;
  return true;
}

void TracePlatform::publish(int round, int count, double /*pay_rate*/,
                            const Eligibility& /*eligibility*/, double now) {
  if (!rounds_.insert(round).second) return;
  Stream s;
  s.round = round;
  s.published_at = now;
  s.remaining = count;
  if (load(s)) streams_.push_back(s);
}

std::optional<double> TracePlatform::next_join_time() const {
  std::optional<double> best;
  for (const Stream& s : streams_) {
    double t = s.published_at + s.offset;
    if (!best || t < *best) best = t;
  }
  return best;
}

std::vector<Candidate> TracePlatform::poll_joins(double now) {
  std::vector<Candidate> out;
  while (true) {
    Stream* next = nullptr;
    for (Stream& s : streams_) {
      if (next == nullptr || s.published_at + s.offset <
                                 next->published_at + next->offset) {
        next = &s;
      }
    }
    if (next == nullptr || next->published_at + next->offset > now) break;
    Candidate c;
    c.external_id = "trace-r" + std::to_string(next->round) + "-" +
                    std::to_string(next->index);
    c.attributes = attributes_;
    c.join_time = next->published_at + next->offset;
    c.training_s = next->training;
    c.round = next->round;
    out.push_back(std::move(c));
    next->index += 1;
    next->remaining -= 1;
    if (!load(*next)) {
      streams_.erase(streams_.begin() + (next - streams_.data()));
    }
  }
  return out;
}

}  // namespace vidplat
