#ifndef VIDPLAT_RATERS_H_
#define VIDPLAT_RATERS_H_

#include <deque>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "vidplat/domain.h"
#include "vidplat/trace.h"

namespace vidplat {

enum class RaterState { kRecruited, kTraining, kActive, kReleased, kRejected };

std::string_view to_string(RaterState state);

struct RaterProfile {
  std::string id;
  RaterState state = RaterState::kRecruited;
  int valid_count = 0;
  int invalid_count = 0;
  double joined_at = 0.0;
  double training_started_at = 0.0;
  double training_duration = 0.0;
  double last_activity = 0.0;
  Attributes attributes;
  std::vector<std::string> reasons;  // rejection or release reasons
};

struct LifecycleConfig {
  int release_threshold = 3;    // invalid ratings before release
  double idle_timeout_s = 600;  // silence before release
  double watch_slack = 0.02;    // tolerated fraction of unwatched wall time
};

// Reasons the candidate fails the predicates; empty means eligible.
std::vector<std::string> check_eligibility(const Attributes& candidate,
                                           const Eligibility& eligibility);

struct RatingCheck {
  Verdict verdict = Verdict::kPending;
  std::string reason;  // partial_watch, control_failed, malformed
};

// Quality controller: a rating is valid iff the rater watched at least
// (1 - slack) of the wall duration and every control answer matches.
RatingCheck validate_rating(const Rating& rating, const Demo& demo,
                            double wall_duration, double watch_slack = 0.02);

// Rater state machine: Recruited -> Training -> Active -> Released, or
// Rejected at admission.
class RaterRegistry {
 public:
  explicit RaterRegistry(LifecycleConfig config = {});

  // Throws kConflict for a duplicate id. Ineligible candidates are recorded
  // as Rejected, with reasons.
  const RaterProfile& admit(const std::string& id, const Attributes& attributes,
                            const Eligibility& eligibility, double now);
  const RaterProfile& start_training(const std::string& id, double now);
  const RaterProfile& complete_training(const std::string& id, double now);

  // Returns true when this verdict released the rater.
  bool record_verdict(const std::string& id, Verdict verdict, double now);
  void touch(const std::string& id, double now);
  void release(const std::string& id, const std::string& reason);

  // Active raters silent for at least idle_timeout_s.
  std::vector<std::string> idle_raters(double now) const;

  const RaterProfile& get(const std::string& id) const;
  bool contains(const std::string& id) const;
  const std::map<std::string, RaterProfile>& profiles() const {
    return profiles_;
  }
  int count(RaterState state) const;
  const LifecycleConfig& config() const { return config_; }

  nlohmann::json snapshot() const;

 private:
  RaterProfile& mutable_get(const std::string& id);

  LifecycleConfig config_;
  std::map<std::string, RaterProfile> profiles_;
};

// A candidate rater who accepted a published task.
struct Candidate {
  std::string external_id;
  Attributes attributes;
  double join_time = 0.0;
  std::optional<double> training_s;
  int round = 0;  // publication that produced the candidate
};

// Integration point for crowdsourcing marketplaces.
class PlatformClient {
 public:
  virtual ~PlatformClient() = default;
  // Idempotent per round: republishing a round is a no-op.
  virtual void publish(int round, int count, double pay_rate,
                       const Eligibility& eligibility, double now) = 0;
  // Candidates whose join time is <= now, in join order.
  virtual std::vector<Candidate> poll_joins(double now) = 0;
  virtual std::optional<double> next_join_time() const = 0;
};

// Joins arrive after exponentially distributed delays.
class MockPlatform : public PlatformClient {
 public:
  MockPlatform(double mean_join_delay_s, uint64_t seed,
               Attributes attributes = {});

  void publish(int round, int count, double pay_rate,
               const Eligibility& eligibility, double now) override;
  std::vector<Candidate> poll_joins(double now) override;
  std::optional<double> next_join_time() const override;

  int publications() const { return static_cast<int>(rounds_.size()); }
  int requested() const { return requested_; }

 private:
  double mean_delay_;
  std::mt19937_64 rng_;
  Attributes attributes_;
  std::set<int> rounds_;
  std::multimap<double, Candidate> pending_;
  int requested_ = 0;
  int next_id_ = 0;
};

// Replays a recruitment trace. Every publication restarts the trace at the
// publication time. With `extend`, joins past the end of the trace follow
// inter-arrival gaps resampled from the trace.
class TracePlatform : public PlatformClient {
 public:
  TracePlatform(RecruitmentTrace trace, bool extend = false, uint64_t seed = 0,
                Attributes attributes = {});

  void publish(int round, int count, double pay_rate,
               const Eligibility& eligibility, double now) override;
  std::vector<Candidate> poll_joins(double now) override;
  std::optional<double> next_join_time() const override;

  // True once no publication can produce further joins.
  bool exhausted() const { return !next_join_time().has_value(); }

 private:
  struct Stream {
    int round = 0;
    double published_at = 0.0;
    int remaining = 0;
    size_t index = 0;
    double offset = 0.0;  // offset of the entry at `index`
    std::optional<double> training;
  };

  bool load(Stream& s);

  RecruitmentTrace trace_;
  bool extend_;
  std::mt19937_64 rng_;
  Attributes attributes_;
  std::vector<double> gaps_;
  std::set<int> rounds_;
  std::vector<Stream> streams_;
};

}  // namespace vidplat

#endif  // VIDPLAT_RATERS_H_
