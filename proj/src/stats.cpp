#include "qdlab/stats.hpp"

#include <algorithm>
#include <limits>

namespace qdlab {

Interval wilson_interval(std::uint64_t successes, std::uint64_t n, double z) {
    if (n == 0) return {0.0, 1.0};
    const double nn = static_cast<double>(n);
    const double p = static_cast<double>(successes) / nn;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / nn;
    const double center = (p + z2 / (2.0 * nn)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn)) / denom;
    const double lo = successes == 0 ? 0.0 : std::max(0.0, center - half);
    const double hi = successes == n ? 1.0 : std::min(1.0, center + half);
    return {lo, hi};
}

Estimate mean_estimate(double mean, double variance, std::uint64_t n, double censored_fraction) {
    Estimate e;
    e.value = mean;
    e.n = n;
    e.std_error = n > 0 ? std::sqrt(std::max(variance, 0.0) / static_cast<double>(n)) : 0.0;
    e.ci95 = {mean - kZ95 * e.std_error, mean + kZ95 * e.std_error};
    e.censored_fraction = censored_fraction;
    return e;
}

Estimate proportion_estimate(std::uint64_t successes, std::uint64_t n, double censored_fraction) {
    Estimate e;
    e.n = n;
    e.value = n > 0 ? static_cast<double>(successes) / static_cast<double>(n) : 0.0;
    e.std_error = n > 0 ? std::sqrt(e.value * (1.0 - e.value) / static_cast<double>(n)) : 0.0;
    e.ci95 = wilson_interval(successes, n);
    e.censored_fraction = censored_fraction;
    return e;
}

double separation_in_stderr(const Estimate& a, const Estimate& b) {
    const double diff = std::abs(a.value - b.value);
    const double se = a.std_error + b.std_error;
    if (diff == 0.0) return 0.0;
    if (se == 0.0) return std::numeric_limits<double>::infinity();
    return diff / se;
}

Estimate ProportionAccumulator::estimate(std::size_t channel) const {
    const std::uint64_t valid = trials_ - censored_;
    const double censored_fraction = trials_ ? static_cast<double>(censored_) / static_cast<double>(trials_) : 0.0;
    return proportion_estimate(hits_[channel], valid, censored_fraction);
}

}  // namespace qdlab
