#include "qdlab/verifiers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "qdlab/errors.hpp"
#include "qdlab/geometry.hpp"
#include "qdlab/sde_engine.hpp"

namespace qdlab {

void ObliqueBarrier::validate() const {
    const int d = dimension();
    if (d < 1 || d > kMaxDim || x0.size() != d) throw InputDomainError("ObliqueBarrier: dimension mismatch");
    if (!(kappa > 0.0 && kappa < 1.0)) throw InputDomainError("ObliqueBarrier: kappa must lie in (0, 1)");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw InputDomainError("ObliqueBarrier: epsilon must lie in (0, 1)");
    if (!(gamma > 0.0 && gamma <= epsilon / 2.0)) throw InputDomainError("ObliqueBarrier: need 0 < gamma <= epsilon/2");
    if (!(T >= kappa * (1.0 - 1e-12) && T <= (1.0 + 1e-12) / kappa))
        throw InputDomainError("ObliqueBarrier: T must lie in [kappa, 1/kappa]");
    if (x0.norm() > (1.0 + 1e-12) / kappa) throw InputDomainError("ObliqueBarrier: |x0| must not exceed 1/kappa");
    if (y.norm() > 1.0 - epsilon + 1e-12) throw InputDomainError("ObliqueBarrier: |y| must not exceed 1 - epsilon");
    if (!std::isfinite(n) || (!allow_small_exponent && n < 2.0))
        throw InputDomainError("ObliqueBarrier: exponent n must be >= 2");
}

Vec ObliqueBarrier::z(double t, const Vec& x) const { return x - y + xi() * (t / T); }

double ObliqueBarrier::g(double t) const { return mu() * (1.0 - t / T) + gamma * gamma; }

double ObliqueBarrier::phi(double t, const Vec& x) const { return g(t) - z(t, x).squaredNorm(); }

double ObliqueBarrier::value(double t, const Vec& x) const {
    const double p = phi(t, x);
    return p > 0.0 ? p * p * std::pow(g(t), -n) : 0.0;
}

void ObliqueBarrier::derivatives(double t, const Vec& x, double& dt, Vec& grad, Mat& hess) const {
    const int d = dimension();
    const Vec zz = z(t, x);
    const Vec xi_v = xi();
    const double gt = g(t);
    const double p = gt - zz.squaredNorm();
    const double scale = std::pow(gt, -n);
    const double phi_t = -mu() / T - 2.0 * zz.dot(xi_v) / T;
    dt = scale * (2.0 * p * phi_t + n * mu() * p * p / (T * gt));
    grad = scale * 2.0 * p * (-2.0 * zz);
    hess.resize(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            hess(i, j) = scale * (8.0 * zz[i] * zz[j] + (i == j ? -4.0 * p : 0.0));
}

double ObliqueBarrier::generator(double t, const Vec& x, const Mat& a, const Vec& b) const {
    return scaled_generator(t, x, a, b) * std::pow(g(t), -n);
}

double ObliqueBarrier::scaled_generator(double t, const Vec& x, const Mat& a, const Vec& b) const {
    const Vec zz = z(t, x);
    const double gt = g(t);
    const double p = gt - zz.squaredNorm();
    const double A = n * mu() / (T * gt);
    const double B = 2.0 * mu() / T + 4.0 * xi().dot(zz) / T + 4.0 * a.trace() + 4.0 * b.dot(zz);
    return A * p * p - B * p + 8.0 * zz.dot(a * zz);
}

double barrier_exponent(double N1, double epsilon, double kappa, double nu) {
    return 2.0 + (4.0 / 3.0) / (epsilon * epsilon) * N1 * (kappa + kappa * N1 / (8.0 * nu));
}

BarrierExponent barrier_n(int d, double nu, double k_bound, double epsilon, double kappa) {
    if (d < 1 || d > kMaxDim) throw InputDomainError("barrier_n: dimension out of range");
    if (!(nu > 0.0 && nu <= 1.0)) throw InputDomainError("barrier_n: nu must lie in (0, 1]");
    if (!(k_bound >= 0.0) || !std::isfinite(k_bound)) throw InputDomainError("barrier_n: K must be >= 0");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw InputDomainError("barrier_n: epsilon must lie in (0, 1)");
    if (!(kappa > 0.0 && kappa < 1.0)) throw InputDomainError("barrier_n: kappa must lie in (0, 1)");
    const double xi_max = 1.0 - epsilon + 1.0 / kappa;
    BarrierExponent out;
    out.N1 = 2.0 * epsilon * epsilon / kappa + 4.0 / kappa * xi_max * epsilon + 4.0 * d / nu +
             4.0 * std::sqrt(static_cast<double>(d)) * k_bound * epsilon;
    out.n = barrier_exponent(out.N1, epsilon, kappa, nu);
    return out;
}

ObliqueBarrier make_barrier(const EllipticityCertificate& cert, double T, Vec x0, Vec y, double epsilon,
                            double kappa, double gamma) {
    const BarrierExponent e = barrier_n(cert.dimension, cert.nu, cert.k_bound, epsilon, kappa);
    ObliqueBarrier b;
    b.T = T;
    b.x0 = std::move(x0);
    b.y = std::move(y);
    b.epsilon = epsilon;
    b.kappa = kappa;
    b.gamma = gamma;
    b.n = e.n;
    b.N1 = e.N1;
    b.validate();
    return b;
}

namespace {

struct MinAccumulator {
    double value = std::numeric_limits<double>::infinity();
    std::uint64_t index = 0;
    std::size_t count = 0;

    void add(double v, std::uint64_t i) {
        ++count;
        if (v < value) {
            value = v;
            index = i;
        }
    }
    void merge(const MinAccumulator& o) {
        count += o.count;
        if (o.value < value) {
            value = o.value;
            index = o.index;
        }
    }
};

std::uint64_t lattice_size(int axes, int m) {
    std::uint64_t n = 1;
    for (int i = 0; i < axes; ++i) n *= static_cast<std::uint64_t>(m + 1);
    return n;
}

/// Decodes a flat lattice index into t and the cube coordinates u in [-1, 1]^d.
void decode(std::uint64_t index, int d, int m, double& t_frac, Vec& u) {
    u.resize(d);
    for (int i = d - 1; i >= 0; --i) {
        u[i] = -1.0 + 2.0 * static_cast<double>(index % (m + 1)) / m;
        index /= (m + 1);
    }
    t_frac = static_cast<double>(index) / m;
}

struct SweepResult {
    MinAccumulator min;
    SpaceTimePoint argmin;
};

/// Compass search in (t, x) from the lattice minimizer, one lattice spacing
/// down to 1e-12 relative. Trial points stay in Q (0 <= t <= T, phi > 0) and
/// read the coefficients where they land.
void polish(const CoefficientField& field, const ObliqueBarrier& barrier, int m, SweepResult& sweep) {
    const int d = barrier.dimension();
    Mat a;
    Vec b;
    auto value_at = [&](double t, const Vec& x) {
        if (t < 0.0 || t > barrier.T || !(barrier.phi(t, x) > 0.0)) return std::numeric_limits<double>::infinity();
        field.evaluate(t, x, a, b);
        return barrier.scaled_generator(t, x, a, b);
    };
    double t = sweep.argmin.t;
    Vec x = sweep.argmin.x;
    double best = sweep.min.value;
    double scale = 1.0;
    Vec trial(d);
    for (int iter = 0; scale > 1e-12 && iter < 100000; ++iter) {
        bool moved = false;
        for (int axis = 0; axis <= d; ++axis) {
            for (double sign : {-1.0, 1.0}) {
                double tt = t;
                trial = x;
                if (axis == 0) tt = std::clamp(t + sign * scale * barrier.T / m, 0.0, barrier.T);
                else trial[axis - 1] += sign * scale * 2.0 * barrier.epsilon / m;
                const double v = value_at(tt, trial);
                if (v < best) {
                    best = v;
                    t = tt;
                    x = trial;
                    moved = true;
                }
            }
        }
        if (!moved) scale *= 0.5;
    }
    if (best < sweep.min.value) {
        sweep.min.value = best;
        sweep.argmin = {t, x};
    }
}

SweepResult barrier_sweep(const CoefficientField& field, const ObliqueBarrier& barrier, int m) {
    const int d = barrier.dimension();
    const std::uint64_t total = lattice_size(d + 1, m);
    auto run = run_ensemble(total, MinAccumulator{}, [&](std::uint64_t i, MinAccumulator& acc) {
        double tf = 0.0;
        Vec u;
        decode(i, d, m, tf, u);
        const double t = barrier.T * tf;
        const Vec x = barrier.y - barrier.xi() * tf + barrier.epsilon * u;
        if (!(barrier.phi(t, x) > 0.0)) return;
        Mat a;
        Vec b;
        field.evaluate(t, x, a, b);
        acc.add(barrier.scaled_generator(t, x, a, b), i);
    });
    SweepResult out{run.value, {}};
    if (out.min.count > 0) {
        double tf = 0.0;
        Vec u;
        decode(out.min.index, d, m, tf, u);
        out.argmin.t = barrier.T * tf;
        out.argmin.x = barrier.y - barrier.xi() * tf + barrier.epsilon * u;
        polish(field, barrier, m, out);
    }
    return out;
}

}  // namespace

BarrierCertificate barrier_check(const CoefficientField& field, const ObliqueBarrier& barrier, int grid_resolution,
                                 bool refine) {
    barrier.validate();
    if (barrier.dimension() != field.dimension()) throw InputDomainError("barrier_check: dimension mismatch");
    if (grid_resolution < 2) throw InputDomainError("barrier_check: grid resolution must be >= 2");
    constexpr int kMaxAxis = 256;
    constexpr double kMaxPoints = 4e7;
    const int d = barrier.dimension();

    int m = grid_resolution;
    SweepResult sweep = barrier_sweep(field, barrier, m);
    if (sweep.min.count == 0) throw InputDomainError("barrier_check: grid contains no point of the support");
    BarrierCertificate cert;
    cert.refinement_stable = !refine;
    while (refine) {
        const int next = 2 * m;
        if (next > kMaxAxis || static_cast<double>(lattice_size(d + 1, next)) > kMaxPoints) break;
        SweepResult finer = barrier_sweep(field, barrier, next);
        ++cert.refinements;
        const double change = std::abs(finer.min.value - sweep.min.value);
        m = next;
        sweep = std::move(finer);
        if (change <= 1e-6) {
            cert.refinement_stable = true;
            break;
        }
    }
    cert.min_value = sweep.min.value;
    cert.argmin = sweep.argmin;
    cert.grid = m;
    cert.points = sweep.min.count;
    cert.passed = cert.min_value >= -kBarrierTolerance;
    return cert;
}

DriftBoundCheck drift_bound_check(const CoefficientField& field, int grid) {
    if (grid < 2) throw InputDomainError("drift_bound_check: grid must be >= 2");
    const auto& cert = field.certificate();
    const int d = cert.dimension;
    const double dd = d;
    DriftBoundCheck out;
    out.bound = -1.0 - cert.k_bound * dd - 2.0 * dd / cert.nu;
    out.conservative_bound = -1.0 - 2.0 * std::sqrt(dd) * cert.k_bound - 2.0 * dd / cert.nu;

    const std::uint64_t total = lattice_size(d + 1, grid);
    auto run = run_ensemble(total, MinAccumulator{}, [&](std::uint64_t i, MinAccumulator& acc) {
        double t = 0.0;
        Vec x;
        decode(i, d, grid, t, x);
        if (x.squaredNorm() > 1.0 + 1e-12) return;
        Mat a;
        Vec b;
        field.evaluate(t, x, a, b);
        acc.add(-1.0 - 2.0 * b.dot(x) - 2.0 * a.trace(), i);
    });
    out.min_value = run.value.value;
    out.points = run.value.count;
    double t = 0.0;
    Vec x;
    decode(run.value.index, d, grid, t, x);
    out.argmin = {t, x};
    return out;
}

// ---------------------------------------------------------------------------

HolderFit holder_fit(const std::vector<HolderSample>& samples) {
    const std::size_t m = samples.size();
    HolderFit fit;
    fit.candidate_pairs = m * (m - (m > 0 ? 1 : 0)) / 2;
    if (fit.candidate_pairs < kHolderMinPairs)
        throw PreconditionError("holder_fit: need at least 20 point pairs");
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i + 1; j < m; ++j) {
            const double diff = std::abs(samples[i].u.value - samples[j].u.value);
            const double floor = 3.0 * (samples[i].u.std_error + samples[j].u.std_error);
            const double rho = parabolic_distance(samples[i].point, samples[j].point);
            if (!(diff > floor) || !(rho > 0.0)) continue;
            xs.push_back(std::log(rho));
            ys.push_back(std::log(diff));
        }
    }
    fit.pair_count = xs.size();
    if (xs.size() < 2) throw FitDegenerateError("holder_fit: fewer than two pairs above the noise floor");
    const double k = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= k;
    my /= k;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (!(sxx > 0.0)) throw FitDegenerateError("holder_fit: all retained pairs share one distance");
    fit.alpha_hat = sxy / sxx;
    fit.n_hat = std::exp(my - fit.alpha_hat * mx);
    const double ss_res = std::max(0.0, syy - fit.alpha_hat * sxy);
    fit.r_squared = syy > 0.0 ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : 1.0;
    return fit;
}

HarnackRatio harnack_ratio(const std::vector<Estimate>& numerator, const std::vector<Estimate>& comparison,
                           std::string pattern) {
    if (numerator.empty() || comparison.empty()) throw InputDomainError("harnack_ratio: empty pattern");
    for (const auto* set : {&numerator, &comparison})
        for (const auto& e : *set)
            if (!(e.value >= 0.0)) throw PreconditionError("harnack_ratio: u must be nonnegative");
    const auto sup = std::max_element(numerator.begin(), numerator.end(),
                                      [](const Estimate& a, const Estimate& b) { return a.value < b.value; });
    const auto inf = std::min_element(comparison.begin(), comparison.end(),
                                      [](const Estimate& a, const Estimate& b) { return a.value < b.value; });
    HarnackRatio out;
    out.pattern = std::move(pattern);
    out.sup_value = sup->value;
    out.inf_value = inf->value;
    out.inf_significance = inf->std_error > 0.0 ? inf->value / inf->std_error
                                                : (inf->value > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    out.unbounded = !(out.inf_significance > 3.0);
    if (out.unbounded) {
        out.ratio = std::numeric_limits<double>::infinity();
        out.std_error = std::numeric_limits<double>::infinity();
        return out;
    }
    out.ratio = sup->value / inf->value;
    const double rel_sup = sup->value > 0.0 ? sup->std_error / sup->value : 0.0;
    const double rel_inf = inf->std_error / inf->value;
    out.std_error = out.ratio * std::sqrt(rel_sup * rel_sup + rel_inf * rel_inf);
    return out;
}

HarnackRatio harnack_ratio(const std::vector<Estimate>& pattern_values, std::string pattern) {
    return harnack_ratio(pattern_values, pattern_values, std::move(pattern));
}

OscillationCascade oscillation_cascade(const std::function<Estimate(const Vec&)>& u, const Vec& center,
                                       const std::vector<double>& radii) {
    if (radii.empty()) throw InputDomainError("oscillation_cascade: empty schedule");
    for (std::size_t k = 0; k < radii.size(); ++k)
        if (!(radii[k] > 0.0) || (k > 0 && !(radii[k] < radii[k - 1])))
            throw InputDomainError("oscillation_cascade: radii must be positive and strictly decreasing");
    const int d = static_cast<int>(center.size());
    OscillationCascade out;
    const Estimate at_center = u(center);
    for (double radius : radii) {
        std::vector<Estimate> values{at_center};
        for (int i = 0; i < d; ++i)
            for (double sign : {1.0, -1.0}) values.push_back(u(center + sign * radius * unit_vector(d, i)));
        const auto [lo, hi] = std::minmax_element(values.begin(), values.end(),
                                                  [](const Estimate& a, const Estimate& b) { return a.value < b.value; });
        OscillationLevel level{radius, hi->value - lo->value, 3.0 * (hi->std_error + lo->std_error)};
        if (!(level.oscillation > level.noise_floor)) {
            out.truncated = true;
            break;
        }
        out.levels.push_back(level);
    }
    for (std::size_t k = 1; k < out.levels.size(); ++k)
        out.ratios.push_back(out.levels[k - 1].oscillation / out.levels[k].oscillation);
    if (out.levels.size() >= 2) {
        double mx = 0.0, my = 0.0;
        for (const auto& l : out.levels) {
            mx += std::log(l.radius);
            my += std::log(l.oscillation);
        }
        mx /= out.levels.size();
        my /= out.levels.size();
        double sxx = 0.0, sxy = 0.0;
        for (const auto& l : out.levels) {
            sxx += (std::log(l.radius) - mx) * (std::log(l.radius) - mx);
            sxy += (std::log(l.radius) - mx) * (std::log(l.oscillation) - my);
        }
        out.decay_exponent = sxy / sxx;
    }
    return out;
}

}  // namespace qdlab
