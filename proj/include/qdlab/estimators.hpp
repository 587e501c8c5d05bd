#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "qdlab/coefficients.hpp"
#include "qdlab/errors.hpp"
#include "qdlab/geometry.hpp"
#include "qdlab/sde_engine.hpp"
#include "qdlab/stats.hpp"

namespace qdlab {

/// Bounded Borel function of the spatial state. Every evaluation is checked
/// against `bound`; a violation raises PayoffContractError.
struct Payoff {
    std::string name;
    double bound = 1.0;
    std::function<double(const Vec&)> fn;

    double operator()(const Vec& x) const;
};

/// Bounded function of a space-time point.
struct SpaceTimePayoff {
    std::string name;
    double bound = 1.0;
    std::function<double(double, const Vec&)> fn;

    double operator()(double t, const Vec& x) const;
};

namespace payoffs {
Payoff constant(double c);
/// cos(xi . x)
Payoff cosine(const Vec& xi);
/// 1{x . normal > offset}
Payoff half_space(const Vec& normal, double offset);
/// 1{lo <= x <= hi} componentwise
Payoff box(const Vec& lo, const Vec& hi);
/// 1{|x - center| < radius}
Payoff ball(const Vec& center, double radius);
}  // namespace payoffs

/// Borel subset of a domain boundary, tested on the exit record's space-time point.
struct BoundaryRegion {
    std::string name;
    std::function<bool(double t, const Vec& x, ExitFace face)> test;

    bool operator()(double t, const Vec& x, ExitFace face) const { return test(t, x, face); }
    /// Image of the region under `map` (usually the forward hat-transform).
    BoundaryRegion transformed(const ScalingMap& map) const;
};

namespace regions {
BoundaryRegion whole_boundary();
/// Exit points with x . normal > offset.
BoundaryRegion half_space(const Vec& normal, double offset);
/// Exit points whose angle about `center` in the (x1, x2) plane lies in (lo, hi), radians in (-pi, pi].
BoundaryRegion angular_arc(const Vec& center, double lo, double hi);
BoundaryRegion top_face();
BoundaryRegion lateral_face();
BoundaryRegion complement(BoundaryRegion region);
BoundaryRegion intersection(BoundaryRegion a, BoundaryRegion b);
}  // namespace regions

/// T_t f(x) = E_x f(x_t). Requires a time-homogeneous field.
Estimate semigroup(const CoefficientField& field, const Vec& x, double t, const Payoff& f, const SimConfig& cfg);

/// H(s, x) = E_{s,x} f(x_{T-s}); coefficients read along (s + eta, x_eta). Requires s < T.
Estimate parabolic_kernel(const CoefficientField& field, double s, const Vec& x, double horizon, const Payoff& f,
                          const SimConfig& cfg);

/// u(s, x) = E_{s,x} f(s + T, x_T).
Estimate feller_scenario(const CoefficientField& field, const SpaceTimePayoff& f, double s, const Vec& x, double T,
                         const SimConfig& cfg);

/// Mean first exit time from an elliptic or parabolic domain; censored paths
/// are excluded from the mean and reported in censored_fraction.
Estimate mean_exit_time(const CoefficientField& field, double s, const Vec& x, const Domain& domain,
                        const SimConfig& cfg);

/// pi_G(x, A) for each region on one shared ensemble.
std::vector<Estimate> harmonic_measure_multi(const CoefficientField& field, const Vec& x, const Ball& ball,
                                             const std::vector<BoundaryRegion>& targets, const SimConfig& cfg);

/// pi_G(x, A) = P_x(x_{tau_G} in A). Wilson interval; censored paths excluded,
/// and a warning is attached when more than 1% are censored.
Estimate harmonic_measure(const CoefficientField& field, const Vec& x, const Ball& ball, const BoundaryRegion& target,
                          const SimConfig& cfg);

std::vector<Estimate> parabolic_exit_distribution_multi(const CoefficientField& field, double s, const Vec& x,
                                                        const ParabolicCylinder& cylinder,
                                                        const std::vector<BoundaryRegion>& targets,
                                                        const SimConfig& cfg);

/// pi_Q(s, x, A) over the parabolic boundary of the cylinder.
Estimate parabolic_exit_distribution(const CoefficientField& field, double s, const Vec& x,
                                     const ParabolicCylinder& cylinder, const BoundaryRegion& target,
                                     const SimConfig& cfg);

// ---------------------------------------------------------------------------
// Hitting sets

/// Closed space-time box [t_lo, t_hi] x prod [lo_i, hi_i].
struct GammaBox {
    double t_lo = 0.0, t_hi = 0.0;
    Vec lo, hi;
};

/// Closed cylinder sector [t_lo, t_hi] x {rho_lo <= |x - center| <= rho_hi}.
struct GammaSector {
    double t_lo = 0.0, t_hi = 0.0;
    Vec center;
    double rho_lo = 0.0, rho_hi = 0.0;
};

/// Finite union of boxes and cylinder sectors.
struct GammaSet {
    std::vector<GammaBox> boxes;
    std::vector<GammaSector> sectors;

    bool contains(double t, const Vec& x) const;
    /// |Gamma intersected with Q|: exact for a single component inside Q,
    /// otherwise a Halton quasi-Monte Carlo estimate with `samples` points.
    double volume_within(const ParabolicCylinder& q, std::size_t samples = 1u << 16) const;
};

struct HittingOptions {
    double gamma_fraction = 3.0 / 8.0;       ///< q in |Gamma| > q |Q_r|
    double probe_time_fraction = 3.0 / 8.0;  ///< q in the start cylinder Q_{q kappa r^2, kappa r}
    double probe_shrink = 3.0 / 4.0;         ///< kappa
    std::size_t volume_samples = 1u << 16;
    bool check_volume = true;  ///< enforce |Gamma| > q |Q_r|
};

/// P(gamma_s < tau_s) for each Gamma on one shared ensemble: the probability of
/// reaching Gamma (at a grid time) before leaving the cylinder. Nested sets give
/// pathwise-monotone estimates.
std::vector<Estimate> hitting_probability_multi(const CoefficientField& field, double s, const Vec& x,
                                                const ParabolicCylinder& cylinder,
                                                const std::vector<GammaSet>& gammas, const SimConfig& cfg,
                                                const HittingOptions& options = {});

/// Single-set form; throws PreconditionError when (s, x) is outside the probe
/// cylinder or |Gamma| <= q |Q_r| (message carries the measured volume).
Estimate hitting_probability(const CoefficientField& field, double s, const Vec& x, const ParabolicCylinder& cylinder,
                             const GammaSet& gamma, const SimConfig& cfg, const HittingOptions& options = {});

// ---------------------------------------------------------------------------
// Boundary regularity

enum class Regularity { regular, irregular, inconclusive };

std::string to_string(Regularity r);

struct RegularityVerdict {
    std::vector<std::pair<double, Estimate>> probe_values;  ///< (h, P(tau' <= h)), h decreasing
    Regularity verdict = Regularity::inconclusive;
    double threshold = 0.1;
    double limit_estimate = 0.0;  ///< p-hat at the smallest h
};

/// Estimates P_x(tau'_G <= h) along a strictly decreasing schedule of h in (0, 1]
/// on one shared ensemble (x must lie on the boundary of G). tau' is the first
/// grid time t > 0 outside G (or bridge crossing, when enabled).
RegularityVerdict regularity_probe(const CoefficientField& field, const Domain& domain, const Vec& x,
                                   const std::vector<double>& h_schedule, const SimConfig& cfg,
                                   double threshold = 0.1);

/// h_max, h_max/2, ..., `levels` entries.
std::vector<double> dyadic_schedule(double h_max, int levels);

// ---------------------------------------------------------------------------
// Martingale residual

/// phi(x) = prod_i psi((x_i - c_i) / w), psi(u) = ((1 + cos(pi u)) / 2)^2 on |u| < 1.
/// C^2 with compact support; derivatives are closed form.
struct CosineBump {
    Vec center;
    double width = 1.0;

    double value(const Vec& x) const;
    void derivatives(const Vec& x, double& value, Vec& gradient, Mat& hessian) const;
    /// Bound on every partial derivative of order `order` (0..4).
    double derivative_bound(int order) const;
};

struct MartingaleResidual {
    Estimate residual;           ///< E[phi(x_t) - phi(x) - int_0^t L phi(s + eta, x_eta) d eta]
    double bias_allowance = 0.0; ///< C dt, leading-order Euler weak error bound
    double tolerance() const { return 3.0 * residual.std_error + bias_allowance; }
    bool passed() const { return std::abs(residual.value) <= tolerance(); }
};

/// Left-point quadrature of the generator along the Euler grid.
MartingaleResidual martingale_residual(const CoefficientField& field, double s, const Vec& x, double t,
                                       const CosineBump& phi, const SimConfig& cfg);

/// C in the bias allowance C dt: t [ d^2 K^2 M2 / 2 + d^{5/2} K M3 / nu + d^3 M4 / (2 nu^2) ].
double martingale_bias_constant(const CoefficientField& field, double t, const CosineBump& phi);

}  // namespace qdlab
