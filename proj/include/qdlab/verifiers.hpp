#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "qdlab/coefficients.hpp"
#include "qdlab/errors.hpp"
#include "qdlab/linalg.hpp"
#include "qdlab/stats.hpp"

namespace qdlab {

// ---------------------------------------------------------------------------
// Slanted paraboloid barrier

/// v(t, x) = phi^2 g^{-n} on {phi > 0} and 0 elsewhere, with
/// g(t) = mu (1 - t/T) + gamma^2, phi = g - |z|^2, z = x - y + xi t / T,
/// xi = y - x0, mu = epsilon^2 - gamma^2.
/// The support {phi > 0} is a slanted paraboloid from B_epsilon(y) at t = 0
/// to B_gamma(x0) at t = T.
struct ObliqueBarrier {
    double T = 1.0;
    Vec x0;
    Vec y;
    double gamma = 0.25;
    double epsilon = 0.5;
    double kappa = 0.5;
    double n = 2.0;
    double N1 = 0.0;
    /// Permits n < 2, used only for negative controls.
    bool allow_small_exponent = false;

    double mu() const { return epsilon * epsilon - gamma * gamma; }
    Vec xi() const { return y - x0; }
    int dimension() const { return static_cast<int>(y.size()); }

    /// Throws InputDomainError on out-of-range parameters.
    void validate() const;

    Vec z(double t, const Vec& x) const;
    double g(double t) const;
    double phi(double t, const Vec& x) const;
    double value(double t, const Vec& x) const;
    /// D_t v, D v and D^2 v in closed form.
    void derivatives(double t, const Vec& x, double& dt, Vec& grad, Mat& hess) const;
    /// (D_t + L) v for the given frozen coefficients.
    double generator(double t, const Vec& x, const Mat& a, const Vec& b) const;
    /// g^n (D_t + L) v = A phi^2 - B phi + 8 z^T a z with A = n mu / (T g); same sign as (D_t + L) v.
    double scaled_generator(double t, const Vec& x, const Mat& a, const Vec& b) const;
};

struct BarrierExponent {
    double N1 = 0.0;
    double n = 2.0;
};

/// Bound N1 >= |B| over the barrier support and n = 2 + (4/3) eps^-2 N1 (kappa + kappa N1 / (8 nu)).
BarrierExponent barrier_n(int d, double nu, double k_bound, double epsilon, double kappa);

/// The exponent formula alone.
double barrier_exponent(double N1, double epsilon, double kappa, double nu);

/// Barrier with n and N1 from barrier_n for the field's certificate.
ObliqueBarrier make_barrier(const EllipticityCertificate& cert, double T, Vec x0, Vec y, double epsilon,
                            double kappa, double gamma);

struct BarrierCertificate {
    double min_value = 0.0;
    SpaceTimePoint argmin;
    int grid = 0;             ///< points per axis of the final sweep
    std::size_t points = 0;   ///< support points evaluated in the final sweep
    int refinements = 0;
    bool refinement_stable = false;
    bool passed = false;
};

inline constexpr double kBarrierTolerance = 1e-10;

/// Sweeps t_i = T i/M and z on the (M + 1)^d lattice of [-eps, eps]^d, skipping
/// points with phi <= 0, and takes the minimum of the scaled generator,
/// polished by a compass search from the lattice minimizer.
/// With `refine`, M doubles until the minimum moves by less than 1e-6
/// (capped at 256 per axis and 4e7 points).
BarrierCertificate barrier_check(const CoefficientField& field, const ObliqueBarrier& barrier,
                                 int grid_resolution = 64, bool refine = true);

struct DriftBoundCheck {
    double min_value = 0.0;
    SpaceTimePoint argmin;
    double bound = 0.0;   ///< -1 - K d - 2 d / nu
    double conservative_bound = 0.0;  ///< -1 - 2 sqrt(d) K - 2 d / nu
    std::size_t points = 0;
    bool holds() const { return min_value >= bound - 1e-12; }
    bool conservative_holds() const { return min_value >= conservative_bound - 1e-12; }
};

/// (D_t + L) phi = -1 - 2 b.x - 2 tr a for phi = 1 - t - |x|^2 over the closed
/// unit cylinder [0, 1] x closed B_1, on a lattice with `grid` intervals per axis.
DriftBoundCheck drift_bound_check(const CoefficientField& field, int grid = 64);

// ---------------------------------------------------------------------------
// Statistical reducers

struct HolderSample {
    SpaceTimePoint point;
    Estimate u;
};

struct HolderFit {
    double alpha_hat = 0.0;
    double n_hat = 0.0;
    double r_squared = 0.0;
    std::size_t pair_count = 0;       ///< pairs above the noise floor
    std::size_t candidate_pairs = 0;
};

inline constexpr std::size_t kHolderMinPairs = 20;

/// Least squares of log |u_p - u_q| on log rho(p, q) over pairs whose
/// difference exceeds 3 (stderr_p + stderr_q). Needs at least 20 candidate pairs.
HolderFit holder_fit(const std::vector<HolderSample>& samples);

struct HarnackRatio {
    double ratio = 1.0;
    double std_error = 0.0;
    double sup_value = 0.0;
    double inf_value = 0.0;
    double inf_significance = 0.0;  ///< inf value in units of its stderr
    bool unbounded = false;
    std::string pattern;
};

/// max(numerator) / min(comparison). Error propagated to first order; the
/// ratio is flagged unbounded when the comparison minimum is within 3 stderr of 0.
HarnackRatio harnack_ratio(const std::vector<Estimate>& numerator, const std::vector<Estimate>& comparison,
                           std::string pattern);

/// Elliptic form: sup over the pattern divided by inf over the same pattern.
HarnackRatio harnack_ratio(const std::vector<Estimate>& pattern_values, std::string pattern);

struct OscillationLevel {
    double radius = 0.0;
    double oscillation = 0.0;
    double noise_floor = 0.0;
};

struct OscillationCascade {
    std::vector<OscillationLevel> levels;
    std::vector<double> ratios;    ///< osc(R_k) / osc(R_{k+1})
    double decay_exponent = 0.0;   ///< slope of log osc against log R (0 with fewer than 2 levels)
    bool truncated = false;
};

/// Evaluates u at the center and at center +- R e_i for each R in a strictly
/// decreasing schedule; osc is max - min. The cascade stops at the first level
/// whose oscillation is within 3 combined stderr of the extremes.
OscillationCascade oscillation_cascade(const std::function<Estimate(const Vec&)>& u, const Vec& center,
                                       const std::vector<double>& radii);

}  // namespace qdlab
