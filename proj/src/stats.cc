#include "vidplat/stats.h"

#include <algorithm>
#include <cmath>
#include <string>

#include <boost/math/distributions/normal.hpp>

#include "vidplat/domain.h"

namespace vidplat {

RatingSample::RatingSample(std::vector<int> scores) {
  scores_.reserve(scores.size());
  for (int s : scores) add(s);
}

void RatingSample::add(int score) {
  if (!valid_score(score)) {
    throw Error(ErrorCode::kInvalidArgument,
                "score " + std::to_string(score) + " outside [1,5]");
  }
  scores_.push_back(score);
}

double mos(const RatingSample& sample) {
  if (sample.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "mos of empty sample");
  }
  // Integer scores: the sum is exact, so a single pass loses nothing.
  long long sum = 0;
  for (int s : sample.scores()) sum += s;
  return static_cast<double>(sum) / static_cast<double>(sample.size());
}

double standard_error(const RatingSample& sample) {
  const size_t n = sample.size();
  if (n < 2) {
    throw Error(ErrorCode::kInvalidArgument,
                "standard error needs at least 2 ratings");
  }
  // n * sum(x^2) - sum(x)^2 is exact in integers for 1-5 scores.
  long long sum = 0, sum_sq = 0;
  for (int s : sample.scores()) {
    sum += s;
    sum_sq += static_cast<long long>(s) * s;
  }
  const long long nn = static_cast<long long>(n);
  const long long scaled = nn * sum_sq - sum * sum;  // n(n-1) * variance
  const double variance =
      static_cast<double>(scaled) / static_cast<double>(nn * (nn - 1));
  return std::sqrt(variance / static_cast<double>(n));
}

bool needs_more(const RatingSample& sample, double epsilon, int min_ratings) {
  if (sample.size() < static_cast<size_t>(std::max(min_ratings, 2))) {
    return true;
  }
  return standard_error(sample) > epsilon;
}

std::pair<double, double> confidence_interval(const RatingSample& sample,
                                              double level) {
  if (!(level > 0.0 && level < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "level must be in (0,1)");
  }
  const double se = standard_error(sample);
  const double m = mos(sample);
  // Two-sided: `level` of the mass lies within +/- z.
  boost::math::normal_distribution<double> normal;
  const double z = boost::math::quantile(normal, 0.5 + level / 2.0);
  return {std::clamp(m - z * se, 1.0, 5.0), std::clamp(m + z * se, 1.0, 5.0)};
}

}  // namespace vidplat
