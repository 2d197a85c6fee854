#ifndef VIDPLAT_STATS_H_
#define VIDPLAT_STATS_H_

#include <span>
#include <utility>
#include <vector>

namespace vidplat {

// Valid 1-5 scores collected for one demo.
class RatingSample {
 public:
  RatingSample() = default;
  // Throws kInvalidArgument if any score is outside [1, 5].
  explicit RatingSample(std::vector<int> scores);

  void add(int score);
  size_t size() const { return scores_.size(); }
  bool empty() const { return scores_.empty(); }
  std::span<const int> scores() const { return scores_; }

  friend bool operator==(const RatingSample&, const RatingSample&) = default;

 private:
  std::vector<int> scores_;
};

// Arithmetic mean. Throws kInvalidArgument on an empty sample.
double mos(const RatingSample& sample);

// Sample standard deviation (n - 1 denominator) over sqrt(n). Throws
// kInvalidArgument when fewer than two scores are present.
double standard_error(const RatingSample& sample);

// True iff the sample is smaller than min_ratings or its SE exceeds epsilon.
bool needs_more(const RatingSample& sample, double epsilon, int min_ratings);

// Normal-approximation interval mos +/- z(level) * SE, clamped to [1, 5].
std::pair<double, double> confidence_interval(const RatingSample& sample,
                                              double level);

// Per-demo stopping rule used by every generator. A demo is stable when it
// has at least min_ratings scores and SE <= epsilon, or once it reaches
// max_ratings (0 means uncapped).
struct StopRule {
  double epsilon = 0.15;
  int min_ratings = 3;
  int max_ratings = 0;

  bool capped(const RatingSample& sample) const {
    return max_ratings > 0 &&
           sample.size() >= static_cast<size_t>(max_ratings);
  }
  bool needs_more(const RatingSample& sample) const {
    return !capped(sample) &&
           vidplat::needs_more(sample, epsilon, min_ratings);
  }
  bool stable(const RatingSample& sample) const { return !needs_more(sample); }
};

}  // namespace vidplat

#endif  // VIDPLAT_STATS_H_
