#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace qdlab {

struct Interval {
    double lower = 0.0;
    double upper = 0.0;

    double half_width() const { return 0.5 * (upper - lower); }
    bool contains(double v) const { return v >= lower && v <= upper; }
};

/// Monte Carlo value with its uncertainty.
struct Estimate {
    double value = 0.0;
    double std_error = 0.0;  ///< serialized as "stderr"
    Interval ci95;
    std::uint64_t n = 0;
    double censored_fraction = 0.0;
    std::vector<std::string> warnings;
};

inline constexpr double kZ95 = 1.959963984540054;

/// Wilson score interval for k successes out of n trials.
Interval wilson_interval(std::uint64_t successes, std::uint64_t n, double z = kZ95);

/// Mean-type estimate; ci95 = value +- 1.96 stderr.
Estimate mean_estimate(double mean, double variance, std::uint64_t n, double censored_fraction = 0.0);

/// Proportion estimate with Wilson ci95 and stderr sqrt(p(1-p)/n).
Estimate proportion_estimate(std::uint64_t successes, std::uint64_t n, double censored_fraction = 0.0);

/// |a - b| measured in units of the combined stderr (stderr_a + stderr_b).
/// Returns 0 for identical values and +inf for distinct values with zero stderr.
double separation_in_stderr(const Estimate& a, const Estimate& b);

// ---------------------------------------------------------------------------
// Mergeable accumulators for run_ensemble. `merge` is associative; the engine
// always merges chunks in index order so results are bit-reproducible.

/// Streaming mean/variance (Welford; Chan et al. for merges).
class MeanAccumulator {
public:
    void add(double v) {
        ++n_;
        const double delta = v - mean_;
        mean_ += delta / static_cast<double>(n_);
        m2_ += delta * (v - mean_);
    }
    void merge(const MeanAccumulator& o) {
        if (o.n_ == 0) return;
        if (n_ == 0) {
            *this = o;
            return;
        }
        const double n = static_cast<double>(n_ + o.n_);
        const double delta = o.mean_ - mean_;
        mean_ += delta * static_cast<double>(o.n_) / n;
        m2_ += o.m2_ + delta * delta * static_cast<double>(n_) * static_cast<double>(o.n_) / n;
        n_ += o.n_;
    }
    std::uint64_t count() const { return n_; }
    double mean() const { return mean_; }
    /// Unbiased sample variance (0 for n < 2).
    double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
    Estimate estimate(double censored_fraction = 0.0) const {
        return mean_estimate(mean_, variance(), n_, censored_fraction);
    }

private:
    std::uint64_t n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

class CountAccumulator {
public:
    void add() { ++n_; }
    void merge(const CountAccumulator& o) { n_ += o.n_; }
    std::uint64_t count() const { return n_; }

private:
    std::uint64_t n_ = 0;
};

/// Several Bernoulli counters sharing one ensemble, plus censoring tally.
class ProportionAccumulator {
public:
    explicit ProportionAccumulator(std::size_t channels = 1) : hits_(channels, 0) {}
    void add_trial() { ++trials_; }
    void add_hit(std::size_t channel) { ++hits_[channel]; }
    void add_censored() { ++censored_; }
    void merge(const ProportionAccumulator& o) {
        trials_ += o.trials_;
        censored_ += o.censored_;
        for (std::size_t i = 0; i < hits_.size(); ++i) hits_[i] += o.hits_[i];
    }
    std::uint64_t trials() const { return trials_; }
    std::uint64_t censored() const { return censored_; }
    std::uint64_t hits(std::size_t channel) const { return hits_[channel]; }
    std::size_t channels() const { return hits_.size(); }
    /// Proportion over uncensored trials; censored_fraction relative to all paths.
    Estimate estimate(std::size_t channel) const;

private:
    std::uint64_t trials_ = 0;
    std::uint64_t censored_ = 0;
    std::vector<std::uint64_t> hits_;
};

/// Fixed-bin histogram on [lo, hi); out-of-range samples are tallied separately.
class HistogramAccumulator {
public:
    HistogramAccumulator(double lo = 0.0, double hi = 1.0, std::size_t bins = 10)
        : lo_(lo), hi_(hi), counts_(bins, 0) {}
    void add(double v) {
        if (!(v >= lo_) || !(v < hi_)) {
            ++outside_;
            return;
        }
        auto bin = static_cast<std::size_t>((v - lo_) / (hi_ - lo_) * static_cast<double>(counts_.size()));
        if (bin >= counts_.size()) bin = counts_.size() - 1;
        ++counts_[bin];
    }
    void merge(const HistogramAccumulator& o) {
        outside_ += o.outside_;
        for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
    }
    const std::vector<std::uint64_t>& counts() const { return counts_; }
    std::uint64_t outside() const { return outside_; }
    double bin_lower(std::size_t i) const { return lo_ + (hi_ - lo_) * static_cast<double>(i) / counts_.size(); }

private:
    double lo_, hi_;
    std::vector<std::uint64_t> counts_;
    std::uint64_t outside_ = 0;
};

}  // namespace qdlab
