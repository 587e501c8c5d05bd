#include "qdlab/estimators.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace qdlab {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kCensorWarning = 0.01;

void require_dimension(const CoefficientField& field, const Vec& x, const char* who) {
    if (x.size() != field.dimension())
        throw InputDomainError(std::string(who) + ": point dimension does not match the field");
    if (!x.allFinite()) throw InputDomainError(std::string(who) + ": non-finite start point");
}

void attach_censoring_warning(Estimate& e) {
    if (e.censored_fraction > kCensorWarning) {
        std::ostringstream msg;
        msg << "censored fraction " << e.censored_fraction << " exceeds 1%";
        e.warnings.push_back(msg.str());
    }
}

/// run_ensemble, surfacing the per-path error itself (payoff contract, simulation) to callers.
template <class Acc, class PerPath>
EnsembleResult<Acc> run_checked(std::uint64_t n_paths, const Acc& identity, PerPath&& per_path) {
    try {
        return run_ensemble(n_paths, identity, std::forward<PerPath>(per_path));
    } catch (const EnsembleError& e) {
        e.rethrow_cause();
    }
}

struct ExitTimeAccumulator {
    MeanAccumulator times;
    std::uint64_t total = 0;
    std::uint64_t censored = 0;

    void merge(const ExitTimeAccumulator& o) {
        times.merge(o.times);
        total += o.total;
        censored += o.censored;
    }
};

}  // namespace

double Payoff::operator()(const Vec& x) const {
    const double v = fn(x);
    if (!std::isfinite(v) || std::abs(v) > bound * (1.0 + 1e-12))
        throw PayoffContractError("payoff '" + name + "' returned a value outside its declared bound");
    return v;
}

double SpaceTimePayoff::operator()(double t, const Vec& x) const {
    const double v = fn(t, x);
    if (!std::isfinite(v) || std::abs(v) > bound * (1.0 + 1e-12))
        throw PayoffContractError("payoff '" + name + "' returned a value outside its declared bound");
    return v;
}

namespace payoffs {

Payoff constant(double c) {
    return {"constant", std::abs(c), [c](const Vec&) { return c; }};
}

Payoff cosine(const Vec& xi) {
    return {"cosine", 1.0, [xi](const Vec& x) { return std::cos(xi.dot(x)); }};
}

Payoff half_space(const Vec& normal, double offset) {
    return {"half_space", 1.0, [normal, offset](const Vec& x) { return x.dot(normal) > offset ? 1.0 : 0.0; }};
}

Payoff box(const Vec& lo, const Vec& hi) {
    return {"box", 1.0, [lo, hi](const Vec& x) {
                return ((x.array() >= lo.array()) && (x.array() <= hi.array())).all() ? 1.0 : 0.0;
            }};
}

Payoff ball(const Vec& center, double radius) {
    return {"ball", 1.0, [center, radius](const Vec& x) { return (x - center).norm() < radius ? 1.0 : 0.0; }};
}

}  // namespace payoffs

BoundaryRegion BoundaryRegion::transformed(const ScalingMap& map) const {
    const ScalingMap back = map.inverted();
    auto inner = test;
    return {name + "^", [inner, back](double t, const Vec& x, ExitFace face) {
                const SpaceTimePoint p = apply_scaling(back, SpaceTimePoint{t, x});
                return inner(p.t, p.x, face);
            }};
}

namespace regions {

BoundaryRegion whole_boundary() {
    return {"boundary", [](double, const Vec&, ExitFace) { return true; }};
}

BoundaryRegion half_space(const Vec& normal, double offset) {
    return {"half_space", [normal, offset](double, const Vec& x, ExitFace) { return x.dot(normal) > offset; }};
}

BoundaryRegion angular_arc(const Vec& center, double lo, double hi) {
    if (center.size() < 2) throw InputDomainError("angular_arc: needs dimension >= 2");
    return {"arc", [center, lo, hi](double, const Vec& x, ExitFace) {
                const double angle = std::atan2(x[1] - center[1], x[0] - center[0]);
                return angle > lo && angle < hi;
            }};
}

BoundaryRegion top_face() {
    return {"top", [](double, const Vec&, ExitFace face) { return face == ExitFace::top; }};
}

BoundaryRegion lateral_face() {
    return {"lateral", [](double, const Vec&, ExitFace face) { return face == ExitFace::lateral; }};
}

BoundaryRegion complement(BoundaryRegion region) {
    auto inner = std::move(region.test);
    return {"not " + region.name, [inner](double t, const Vec& x, ExitFace f) { return !inner(t, x, f); }};
}

BoundaryRegion intersection(BoundaryRegion a, BoundaryRegion b) {
    auto ta = std::move(a.test);
    auto tb = std::move(b.test);
    return {a.name + " and " + b.name,
            [ta, tb](double t, const Vec& x, ExitFace f) { return ta(t, x, f) && tb(t, x, f); }};
}

}  // namespace regions

// ---------------------------------------------------------------------------

Estimate semigroup(const CoefficientField& field, const Vec& x, double t, const Payoff& f, const SimConfig& cfg) {
    if (!field.time_homogeneous()) throw PreconditionError("semigroup: field is not time-homogeneous");
    if (!(t >= 0.0) || !std::isfinite(t)) throw InputDomainError("semigroup: t must be >= 0");
    require_dimension(field, x, "semigroup");
    cfg.validate();
    auto run = run_checked(cfg.n_paths, MeanAccumulator{}, [&](std::uint64_t i, MeanAccumulator& acc) {
        acc.add(f(terminal_state(field, 0.0, x, t, cfg, i)));
    });
    return run.value.estimate();
}

Estimate parabolic_kernel(const CoefficientField& field, double s, const Vec& x, double horizon, const Payoff& f,
                          const SimConfig& cfg) {
    if (!std::isfinite(s) || !std::isfinite(horizon) || !(s < horizon))
        throw InputDomainError("parabolic_kernel: requires s < T");
    require_dimension(field, x, "parabolic_kernel");
    cfg.validate();
    auto run = run_checked(cfg.n_paths, MeanAccumulator{}, [&](std::uint64_t i, MeanAccumulator& acc) {
        acc.add(f(terminal_state(field, s, x, horizon - s, cfg, i)));
    });
    return run.value.estimate();
}

Estimate feller_scenario(const CoefficientField& field, const SpaceTimePayoff& f, double s, const Vec& x, double T,
                         const SimConfig& cfg) {
    if (!std::isfinite(s)) throw InputDomainError("feller_scenario: s must be finite");
    if (!(T >= 0.0) || !std::isfinite(T)) throw InputDomainError("feller_scenario: T must be >= 0");
    require_dimension(field, x, "feller_scenario");
    cfg.validate();
    auto run = run_checked(cfg.n_paths, MeanAccumulator{}, [&](std::uint64_t i, MeanAccumulator& acc) {
        acc.add(f(s + T, terminal_state(field, s, x, T, cfg, i)));
    });
    return run.value.estimate();
}

Estimate mean_exit_time(const CoefficientField& field, double s, const Vec& x, const Domain& domain,
                        const SimConfig& cfg) {
    require_dimension(field, x, "mean_exit_time");
    if (domain.dimension() != field.dimension()) throw InputDomainError("mean_exit_time: domain dimension mismatch");
    if (!domain.contains(s, x)) throw PreconditionError("mean_exit_time: start point outside the domain");
    cfg.validate();
    auto run = run_checked(cfg.n_paths, ExitTimeAccumulator{}, [&](std::uint64_t i, ExitTimeAccumulator& acc) {
        const ExitRecord rec = exit_sample(field, s, x, domain, cfg, i);
        ++acc.total;
        if (rec.censored)
            ++acc.censored;
        else
            acc.times.add(rec.exit_time);
    });
    const auto& acc = run.value;
    const double censored = static_cast<double>(acc.censored) / static_cast<double>(acc.total);
    Estimate e = acc.times.estimate(censored);
    attach_censoring_warning(e);
    return e;
}

namespace {

std::vector<Estimate> exit_distribution(const CoefficientField& field, double s, const Vec& x, const Domain& domain,
                                        const std::vector<BoundaryRegion>& targets, const SimConfig& cfg) {
    cfg.validate();
    if (targets.empty()) throw InputDomainError("exit distribution: no target regions");
    auto run = run_checked(cfg.n_paths, ProportionAccumulator(targets.size()),
                            [&](std::uint64_t i, ProportionAccumulator& acc) {
                                const ExitRecord rec = exit_sample(field, s, x, domain, cfg, i);
                                acc.add_trial();
                                if (rec.censored) {
                                    acc.add_censored();
                                    return;
                                }
                                const double t = s + rec.exit_time;
                                for (std::size_t k = 0; k < targets.size(); ++k)
                                    if (targets[k](t, rec.exit_point, rec.face)) acc.add_hit(k);
                            });
    std::vector<Estimate> out;
    for (std::size_t k = 0; k < targets.size(); ++k) {
        Estimate e = run.value.estimate(k);
        attach_censoring_warning(e);
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace

std::vector<Estimate> harmonic_measure_multi(const CoefficientField& field, const Vec& x, const Ball& ball,
                                             const std::vector<BoundaryRegion>& targets, const SimConfig& cfg) {
    if (!field.time_homogeneous()) throw PreconditionError("harmonic_measure: field is not time-homogeneous");
    require_dimension(field, x, "harmonic_measure");
    if (ball.dimension() != field.dimension()) throw InputDomainError("harmonic_measure: ball dimension mismatch");
    if (!ball.contains(x)) throw PreconditionError("harmonic_measure: start point outside G");
    const BallDomain domain(ball);
    return exit_distribution(field, 0.0, x, domain, targets, cfg);
}

Estimate harmonic_measure(const CoefficientField& field, const Vec& x, const Ball& ball, const BoundaryRegion& target,
                          const SimConfig& cfg) {
    return harmonic_measure_multi(field, x, ball, {target}, cfg).front();
}

std::vector<Estimate> parabolic_exit_distribution_multi(const CoefficientField& field, double s, const Vec& x,
                                                        const ParabolicCylinder& cylinder,
                                                        const std::vector<BoundaryRegion>& targets,
                                                        const SimConfig& cfg) {
    require_dimension(field, x, "parabolic_exit_distribution");
    if (cylinder.dimension() != field.dimension())
        throw InputDomainError("parabolic_exit_distribution: cylinder dimension mismatch");
    if (!cylinder.contains(s, x)) throw PreconditionError("parabolic_exit_distribution: start point outside Q");
    const CylinderDomain domain(cylinder);
    return exit_distribution(field, s, x, domain, targets, cfg);
}

Estimate parabolic_exit_distribution(const CoefficientField& field, double s, const Vec& x,
                                     const ParabolicCylinder& cylinder, const BoundaryRegion& target,
                                     const SimConfig& cfg) {
    return parabolic_exit_distribution_multi(field, s, x, cylinder, {target}, cfg).front();
}

// ---------------------------------------------------------------------------
// Hitting sets

namespace {

bool box_contains(const GammaBox& b, double t, const Vec& x) {
    return t >= b.t_lo && t <= b.t_hi && (x.array() >= b.lo.array()).all() && (x.array() <= b.hi.array()).all();
}

bool sector_contains(const GammaSector& s, double t, const Vec& x) {
    if (t < s.t_lo || t > s.t_hi) return false;
    const double rho = (x - s.center).norm();
    return rho >= s.rho_lo && rho <= s.rho_hi;
}

double radical_inverse(std::uint64_t index, std::uint64_t base) {
    double result = 0.0;
    double f = 1.0 / static_cast<double>(base);
    while (index > 0) {
        result += f * static_cast<double>(index % base);
        index /= base;
        f /= static_cast<double>(base);
    }
    return result;
}

constexpr std::array<std::uint64_t, kMaxDim + 1> kHaltonBases = {2, 3, 5, 7, 11, 13, 17};

}  // namespace

bool GammaSet::contains(double t, const Vec& x) const {
    for (const auto& b : boxes)
        if (box_contains(b, t, x)) return true;
    for (const auto& s : sectors)
        if (sector_contains(s, t, x)) return true;
    return false;
}

double GammaSet::volume_within(const ParabolicCylinder& q, std::size_t samples) const {
    const int d = q.dimension();
    const double t_end = q.t_end();
    if (boxes.size() + sectors.size() == 0) return 0.0;
    if (boxes.size() == 1 && sectors.empty()) {
        const auto& b = boxes.front();
        double corner = 0.0;
        for (int i = 0; i < d; ++i) {
            const double far = std::max(std::abs(b.lo[i] - q.x0[i]), std::abs(b.hi[i] - q.x0[i]));
            corner += far * far;
        }
        if (b.t_lo >= q.t0 && b.t_hi <= t_end && std::sqrt(corner) <= q.radius) {
            double v = std::max(0.0, b.t_hi - b.t_lo);
            for (int i = 0; i < d; ++i) v *= std::max(0.0, b.hi[i] - b.lo[i]);
            return v;
        }
    }
    if (sectors.size() == 1 && boxes.empty()) {
        const auto& s = sectors.front();
        if (s.t_lo >= q.t0 && s.t_hi <= t_end && (s.center - q.x0).norm() + s.rho_hi <= q.radius) {
            const double shell = ball_volume(d, s.rho_hi) - ball_volume(d, std::max(0.0, s.rho_lo));
            return std::max(0.0, s.t_hi - s.t_lo) * std::max(0.0, shell);
        }
    }
    if (samples == 0) throw InputDomainError("volume_within: samples must be positive");
    std::size_t inside = 0;
    Vec x(d);
    for (std::size_t k = 1; k <= samples; ++k) {
        const double t = q.t0 + q.duration * radical_inverse(k, kHaltonBases[0]);
        for (int i = 0; i < d; ++i)
            x[i] = q.x0[i] + q.radius * (2.0 * radical_inverse(k, kHaltonBases[i + 1]) - 1.0);
        if ((x - q.x0).norm() <= q.radius && contains(t, x)) ++inside;
    }
    const double box_volume = q.duration * std::pow(2.0 * q.radius, d);
    return box_volume * static_cast<double>(inside) / static_cast<double>(samples);
}

std::vector<Estimate> hitting_probability_multi(const CoefficientField& field, double s, const Vec& x,
                                                const ParabolicCylinder& cylinder,
                                                const std::vector<GammaSet>& gammas, const SimConfig& cfg,
                                                const HittingOptions& options) {
    require_dimension(field, x, "hitting_probability");
    if (cylinder.dimension() != field.dimension())
        throw InputDomainError("hitting_probability: cylinder dimension mismatch");
    if (gammas.empty() || gammas.size() > 64) throw InputDomainError("hitting_probability: need 1..64 sets");
    for (double v : {options.gamma_fraction, options.probe_time_fraction, options.probe_shrink})
        if (!(v > 0.0 && v <= 1.0)) throw InputDomainError("hitting_probability: fractions must lie in (0, 1]");
    cfg.validate();

    const double r = cylinder.radius;
    const double kappa = options.probe_shrink;
    const double probe_duration = options.probe_time_fraction * kappa * r * r;
    const double tol = 1e-12 * std::max(1.0, r);
    const double tau = s - cylinder.t0;
    if (tau < -tol || tau > probe_duration + tol || (x - cylinder.x0).norm() > kappa * r + tol) {
        std::ostringstream msg;
        msg << "hitting_probability: start (" << s << ", |x - x0| = " << (x - cylinder.x0).norm()
            << ") is outside the closed probe cylinder of duration " << probe_duration << " and radius "
            << kappa * r;
        throw PreconditionError(msg.str());
    }
    if (!cylinder.contains(s, x)) throw PreconditionError("hitting_probability: start point outside Q_r");

    if (options.check_volume) {
        const double needed = options.gamma_fraction * cylinder.volume();
        for (const auto& g : gammas) {
            const double vol = g.volume_within(cylinder, options.volume_samples);
            if (!(vol > needed)) {
                std::ostringstream msg;
                msg << "hitting_probability: |Gamma| = " << vol << " does not exceed q |Q_r| = " << needed;
                throw PreconditionError(msg.str());
            }
        }
    }

    const CylinderDomain domain(cylinder);
    const std::size_t m = gammas.size();
    const std::uint64_t all = m == 64 ? ~std::uint64_t{0} : ((std::uint64_t{1} << m) - 1);
    auto run = run_checked(cfg.n_paths, ProportionAccumulator(m), [&](std::uint64_t i, ProportionAccumulator& acc) {
        std::uint64_t hit = 0;
        const ExitRecord rec = exit_sample_observed(field, s, x, domain, cfg, i, [&](double t, const Vec& y) {
            for (std::size_t k = 0; k < m; ++k)
                if (!(hit >> k & 1u) && gammas[k].contains(t, y)) hit |= std::uint64_t{1} << k;
            return hit == all;
        });
        acc.add_trial();
        if (rec.censored && hit == 0) acc.add_censored();
        for (std::size_t k = 0; k < m; ++k)
            if (hit >> k & 1u) acc.add_hit(k);
    });
    std::vector<Estimate> out;
    for (std::size_t k = 0; k < m; ++k) {
        Estimate e = run.value.estimate(k);
        attach_censoring_warning(e);
        out.push_back(std::move(e));
    }
    return out;
}

Estimate hitting_probability(const CoefficientField& field, double s, const Vec& x, const ParabolicCylinder& cylinder,
                             const GammaSet& gamma, const SimConfig& cfg, const HittingOptions& options) {
    return hitting_probability_multi(field, s, x, cylinder, {gamma}, cfg, options).front();
}

// ---------------------------------------------------------------------------
// Boundary regularity

std::string to_string(Regularity r) {
    switch (r) {
        case Regularity::regular: return "regular";
        case Regularity::irregular: return "irregular";
        case Regularity::inconclusive: return "inconclusive";
    }
    return "inconclusive";
}

std::vector<double> dyadic_schedule(double h_max, int levels) {
    if (!(h_max > 0.0 && h_max <= 1.0) || levels < 1) throw InputDomainError("dyadic_schedule: bad arguments");
    std::vector<double> h;
    for (int k = 0; k < levels; ++k) h.push_back(std::ldexp(h_max, -k));
    return h;
}

namespace {

bool on_boundary(const Domain& domain, const Vec& x) {
    if (domain.contains(0.0, x)) return false;
    const double delta = 1e-7 * domain.scale();
    for (int i = 0; i < x.size(); ++i) {
        for (double sign : {1.0, -1.0}) {
            Vec y = x;
            y[i] += sign * delta;
            if (domain.contains(0.0, y)) return true;
        }
    }
    return false;
}

}  // namespace

RegularityVerdict regularity_probe(const CoefficientField& field, const Domain& domain, const Vec& x,
                                   const std::vector<double>& h_schedule, const SimConfig& cfg, double threshold) {
    require_dimension(field, x, "regularity_probe");
    if (h_schedule.empty()) throw InputDomainError("regularity_probe: empty h schedule");
    for (std::size_t k = 0; k < h_schedule.size(); ++k) {
        const double h = h_schedule[k];
        if (!(h > 0.0 && h <= 1.0)) throw InputDomainError("regularity_probe: h must lie in (0, 1]");
        if (k > 0 && !(h < h_schedule[k - 1]))
            throw InputDomainError("regularity_probe: h schedule must be strictly decreasing");
    }
    if (!(threshold > 0.0 && threshold < 0.5)) throw InputDomainError("regularity_probe: threshold must be in (0, 1/2)");
    if (!on_boundary(domain, x)) throw PreconditionError("regularity_probe: start point is not on the boundary");
    cfg.validate();

    const double h_max = h_schedule.front();
    const std::size_t m = h_schedule.size();
    auto run = run_checked(cfg.n_paths, ProportionAccumulator(m), [&](std::uint64_t i, ProportionAccumulator& acc) {
        EulerStepper stepper(field, 0.0, x, cfg.seed, i);
        Domain::PieceArray before{}, after{};
        double first_exit = std::numeric_limits<double>::infinity();
        std::uint64_t k = 0;
        while (true) {
            double t_next = static_cast<double>(k + 1) * cfg.dt;
            const bool last = t_next >= h_max - detail::kTimeSnap;
            if (last) t_next = h_max;
            const double t_now = stepper.elapsed();
            const int pieces = cfg.bridge_correction ? domain.boundary_pieces(stepper.state(), before) : 0;
            stepper.step(t_next - t_now);
            stepper.set_elapsed(t_next);
            ++k;
            const Vec& xn = stepper.state();
            if (!domain.contains(t_now, xn)) {
                first_exit = t_next;
                break;
            }
            bool crossed = false;
            if (pieces > 0) {
                domain.boundary_pieces(xn, after);
                for (int p = 0; p < pieces && !crossed; ++p) {
                    const Vec& nrm = before[p].normal;
                    const double var = 2.0 * nrm.dot(stepper.frozen_a() * nrm);
                    const double prob =
                        bridge_crossing_probability(before[p].distance, after[p].distance, var, t_next - t_now);
                    crossed = prob > 0.0 && stepper.bridge_uniform(p) < prob;
                }
            }
            if (crossed) {
                first_exit = t_next;
                break;
            }
            if (last) break;
        }
        acc.add_trial();
        for (std::size_t j = 0; j < m; ++j)
            if (first_exit <= h_schedule[j] * (1.0 + 1e-12)) acc.add_hit(j);
    });

    RegularityVerdict out;
    out.threshold = threshold;
    bool monotone = true;
    for (std::size_t j = 0; j < m; ++j) {
        out.probe_values.emplace_back(h_schedule[j], run.value.estimate(j));
        if (j > 0) {
            const Estimate& prev = out.probe_values[j - 1].second;
            const Estimate& cur = out.probe_values[j].second;
            if (cur.value - prev.value > 3.0 * (cur.std_error + prev.std_error)) monotone = false;
        }
    }
    out.limit_estimate = out.probe_values.back().second.value;
    if (!monotone) {
        out.verdict = Regularity::inconclusive;
    } else {
        bool all_high = true;
        for (const auto& [h, e] : out.probe_values) all_high = all_high && e.value >= 1.0 - threshold;
        if (all_high)
            out.verdict = Regularity::regular;
        else if (out.limit_estimate <= threshold)
            out.verdict = Regularity::irregular;
        else
            out.verdict = Regularity::inconclusive;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Martingale residual

namespace {

struct BumpFactor {
    double v, d1, d2;
};

BumpFactor bump_factor(double u, double inv_w) {
    if (std::abs(u) >= 1.0) return {0.0, 0.0, 0.0};
    const double c1 = std::cos(kPi * u);
    const double s1 = std::sin(kPi * u);
    const double c2 = 2.0 * c1 * c1 - 1.0;
    const double s2 = 2.0 * s1 * c1;
    const double v = 0.375 + 0.5 * c1 + 0.125 * c2;
    const double d1 = -(0.5 * kPi * s1 + 0.25 * kPi * s2) * inv_w;
    const double d2 = -(0.5 * kPi * kPi) * (c1 + c2) * inv_w * inv_w;
    return {v, d1, d2};
}

/// sup |psi^(k)|: pi^k / 2 + (2 pi)^k / 8, and 1 for k = 0.
double factor_bound(int k) {
    if (k == 0) return 1.0;
    return std::pow(kPi, k) / 2.0 + std::pow(2.0 * kPi, k) / 8.0;
}

double best_composition(int remaining, int slots) {
    if (slots == 1) return factor_bound(remaining);
    double best = 0.0;
    for (int k = 0; k <= remaining; ++k) best = std::max(best, factor_bound(k) * best_composition(remaining - k, slots - 1));
    return best;
}

}  // namespace

double CosineBump::value(const Vec& x) const {
    double v = 1.0;
    for (int i = 0; i < x.size(); ++i) v *= bump_factor((x[i] - center[i]) / width, 1.0 / width).v;
    return v;
}

void CosineBump::derivatives(const Vec& x, double& value, Vec& gradient, Mat& hessian) const {
    const int d = static_cast<int>(x.size());
    std::array<BumpFactor, kMaxDim> f{};
    for (int i = 0; i < d; ++i) f[i] = bump_factor((x[i] - center[i]) / width, 1.0 / width);
    gradient.setZero(d);
    hessian.setZero(d, d);
    value = 1.0;
    for (int i = 0; i < d; ++i) value *= f[i].v;
    for (int i = 0; i < d; ++i) {
        double gi = f[i].d1;
        double hii = f[i].d2;
        for (int k = 0; k < d; ++k) {
            if (k == i) continue;
            gi *= f[k].v;
            hii *= f[k].v;
        }
        gradient[i] = gi;
        hessian(i, i) = hii;
        for (int j = i + 1; j < d; ++j) {
            double hij = f[i].d1 * f[j].d1;
            for (int k = 0; k < d; ++k)
                if (k != i && k != j) hij *= f[k].v;
            hessian(i, j) = hij;
            hessian(j, i) = hij;
        }
    }
}

double CosineBump::derivative_bound(int order) const {
    if (order < 0 || order > 4) throw InputDomainError("CosineBump: derivative order must be in 0..4");
    return best_composition(order, static_cast<int>(center.size())) / std::pow(width, order);
}

double martingale_bias_constant(const CoefficientField& field, double t, const CosineBump& phi) {
    const auto& cert = field.certificate();
    const double d = cert.dimension;
    const double k = cert.k_bound;
    const double inv_nu = 1.0 / cert.nu;
    return t * (0.5 * d * d * k * k * phi.derivative_bound(2) +
                std::pow(d, 2.5) * k * inv_nu * phi.derivative_bound(3) +
                0.5 * d * d * d * inv_nu * inv_nu * phi.derivative_bound(4));
}

MartingaleResidual martingale_residual(const CoefficientField& field, double s, const Vec& x, double t,
                                       const CosineBump& phi, const SimConfig& cfg) {
    require_dimension(field, x, "martingale_residual");
    if (phi.center.size() != x.size() || !(phi.width > 0.0))
        throw InputDomainError("martingale_residual: test function does not match the field");
    if (!(t > 0.0) || !std::isfinite(t) || !std::isfinite(s)) throw InputDomainError("martingale_residual: need t > 0");
    cfg.validate();
    const double phi0 = phi.value(x);
    auto run = run_checked(cfg.n_paths, MeanAccumulator{}, [&](std::uint64_t i, MeanAccumulator& acc) {
        EulerStepper stepper(field, s, x, cfg.seed, i);
        double integral = 0.0;
        double value = 0.0;
        Vec grad;
        Mat hess;
        std::uint64_t k = 0;
        while (true) {
            double t_next = static_cast<double>(k + 1) * cfg.dt;
            const bool last = t_next >= t - detail::kTimeSnap * std::max(1.0, t);
            if (last) t_next = t;
            const double h = t_next - stepper.elapsed();
            stepper.step(h);
            stepper.set_elapsed(t_next);
            ++k;
            phi.derivatives(stepper.previous_state(), value, grad, hess);
            const double generator = (stepper.frozen_a().cwiseProduct(hess)).sum() + stepper.frozen_b().dot(grad);
            integral += generator * h;
            if (last) break;
        }
        acc.add(phi.value(stepper.state()) - phi0 - integral);
    });
    MartingaleResidual out;
    out.residual = run.value.estimate();
    out.bias_allowance = martingale_bias_constant(field, t, phi) * cfg.dt;
    return out;
}

}  // namespace qdlab
