#include <doctest.h>

#include <cmath>
#include <numbers>

#include "qdlab/estimators.hpp"

using namespace qdlab;

namespace {

constexpr double kPi = std::numbers::pi;

Vec vec(std::initializer_list<double> v) {
    Vec out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

std::shared_ptr<ConstantField> identity(int d, double scale = 1.0) {
    return std::make_shared<ConstantField>(EllipticityCertificate{std::min(scale, 1.0 / scale), 0.0, d},
                                           scale * Mat::Identity(d, d), Vec::Zero(d));
}

SimConfig config(double dt, std::uint64_t paths, std::uint64_t seed = 1) {
    SimConfig cfg;
    cfg.dt = dt;
    cfg.n_paths = paths;
    cfg.seed = seed;
    return cfg;
}

bool within(const Estimate& e, double oracle, double k = 3.0) { return std::abs(e.value - oracle) <= k * e.std_error; }

/// (1 / 2 pi) int_lo^hi (1 - |x|^2) / |e^{i theta} - x|^2 d theta by composite Simpson.
double poisson_arc(const Vec& x, double lo, double hi) {
    const int n = 20000;
    const double h = (hi - lo) / n;
    auto kernel = [&](double th) {
        const double dx = std::cos(th) - x[0], dy = std::sin(th) - x[1];
        return (1.0 - x.squaredNorm()) / (dx * dx + dy * dy);
    };
    double s = kernel(lo) + kernel(hi);
    for (int i = 1; i < n; ++i) s += kernel(lo + i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0 / (2.0 * kPi);
}

}  // namespace

TEST_CASE("semigroup of a constant is exact") {
    const auto f = identity(2);
    const Estimate e = semigroup(*f, vec({0.1, 0.2}), 0.3, payoffs::constant(0.7), config(0.01, 300));
    CHECK(e.value == 0.7);
    CHECK(e.std_error == 0.0);
    CHECK(e.n == 300);
}

TEST_CASE("semigroup matches the characteristic function") {
    const auto f = identity(2);
    const Vec x = vec({0.3, -0.2});
    const double t = 0.1;
    for (const Vec& xi : {vec({1.0, 2.0}), vec({0.5, 0.0}), vec({-3.0, 1.0})}) {
        const Estimate e = semigroup(*f, x, t, payoffs::cosine(xi), config(0.01, 20000, 4));
        CHECK(within(e, std::cos(xi.dot(x)) * std::exp(-xi.squaredNorm() * t)));
    }
}

TEST_CASE("half-line indicator from the origin is one half") {
    const auto f = identity(1);
    const Estimate e = semigroup(*f, vec({0.0}), 0.5, payoffs::half_space(vec({1.0}), 0.0), config(0.05, 20000));
    CHECK(within(e, 0.5));
    CHECK(e.ci95.contains(e.value));
}

TEST_CASE("semigroup preconditions") {
    const TimeOscillatingField osc({0.5, 1.0, 1}, 0.5);
    CHECK_THROWS_AS(semigroup(osc, vec({0.0}), 0.1, payoffs::constant(1.0), config(0.01, 10)), PreconditionError);
    const auto f = identity(1);
    const Payoff liar{"liar", 1.0, [](const Vec&) { return 2.0; }};
    CHECK_THROWS_AS(semigroup(*f, vec({0.0}), 0.1, liar, config(0.01, 10)), PayoffContractError);
    CHECK_THROWS_AS(semigroup(*f, vec({0.0, 0.0}), 0.1, payoffs::constant(1.0), config(0.01, 10)), InputDomainError);
}

TEST_CASE("parabolic kernel") {
    const CheckerboardField cb({0.5, 0.0, 2}, 0.5);
    const Vec x = vec({0.1, 0.3});
    const Payoff f = payoffs::half_space(vec({1.0, 0.0}), 0.2);
    const SimConfig cfg = config(0.005, 4000, 9);
    const Estimate k = parabolic_kernel(cb, 0.25, x, 0.75, f, cfg);
    const Estimate s = semigroup(cb, x, 0.5, f, cfg);
    CHECK(k.value == s.value);
    CHECK(separation_in_stderr(k, s) <= 2.0);
    CHECK(parabolic_kernel(cb, 0.0, x, 1.0, payoffs::constant(1.0), cfg).value == 1.0);
    CHECK_THROWS_AS(parabolic_kernel(cb, 1.0, x, 1.0, f, cfg), InputDomainError);

    const double period = 0.5;
    const TimeOscillatingField osc({0.5, 1.0, 2}, period);
    const Estimate a = parabolic_kernel(osc, 0.1, x, 0.6, f, cfg);
    const Estimate b = parabolic_kernel(osc, 0.1 + period, x, 0.6 + period, f, cfg);
    CHECK(separation_in_stderr(a, b) <= 2.0);
}

TEST_CASE("time-indicator payoff is degenerate in time") {
    const CheckerboardField cb({0.5, 0.0, 2}, 0.5);
    const SpaceTimePayoff step{"step", 1.0, [](double t, const Vec&) { return t >= 1.0 ? 1.0 : 0.0; }};
    const SimConfig cfg = config(0.01, 500);
    const Estimate before = feller_scenario(cb, step, -0.5, vec({0.0, 0.0}), 1.0, cfg);
    const Estimate after = feller_scenario(cb, step, 0.5, vec({0.0, 0.0}), 1.0, cfg);
    CHECK(before.value == 0.0);
    CHECK(before.std_error == 0.0);
    CHECK(after.value == 1.0);
    CHECK(after.std_error == 0.0);
}

TEST_CASE("continuous space-time payoff: nearby starts converge") {
    const CheckerboardField cb({0.5, 0.0, 2}, 0.5);
    const SpaceTimePayoff smooth{"smooth", 1.0, [](double t, const Vec& y) { return std::cos(y[0]) * std::exp(-t * t); }};
    const SimConfig cfg = config(0.01, 2000, 3);
    const Estimate base = feller_scenario(cb, smooth, 0.0, vec({0.2, 0.2}), 0.5, cfg);
    double previous = std::numeric_limits<double>::infinity();
    for (double rho : {0.2, 0.02, 0.002}) {
        const Estimate near = feller_scenario(cb, smooth, rho * rho, vec({0.2, 0.2 + 0.5 * rho}), 0.5, cfg);
        const double diff = std::abs(near.value - base.value);
        CHECK(diff <= previous);
        previous = diff;
    }
    CHECK(previous < 0.01);
}

TEST_CASE("harmonic measure") {
    const auto f = identity(2);
    const Ball disk(vec({0.0, 0.0}), 1.0);
    const SimConfig cfg = config(1e-3, 8000, 11);
    const auto whole = harmonic_measure(*f, vec({0.2, 0.1}), disk, regions::whole_boundary(), config(1e-3, 300));
    CHECK(whole.value == 1.0);

    const auto upper = harmonic_measure(*f, vec({0.0, 0.0}), disk, regions::half_space(vec({0.0, 1.0}), 0.0), cfg);
    CHECK(within(upper, 0.5));

    const Vec x = vec({0.5, 0.0});
    const auto arc = regions::angular_arc(vec({0.0, 0.0}), -kPi / 2, kPi / 2);
    const auto both = harmonic_measure_multi(*f, x, disk, {arc, regions::complement(arc)}, cfg);
    CHECK(within(both[0], poisson_arc(x, -kPi / 2, kPi / 2)));
    CHECK(both[0].value + both[1].value == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(both[0].ci95.lower >= 0.0);
    CHECK(both[0].ci95.upper <= 1.0);

    CHECK_THROWS_AS(harmonic_measure(*f, vec({2.0, 0.0}), disk, arc, cfg), PreconditionError);
    SimConfig short_horizon = config(1e-3, 200);
    short_horizon.max_time = 0.01;
    const auto censored = harmonic_measure(*f, vec({0.0, 0.0}), disk, arc, short_horizon);
    CHECK(censored.censored_fraction > 0.01);
    CHECK_FALSE(censored.warnings.empty());
}

TEST_CASE("parabolic exit distribution") {
    const auto q = ParabolicCylinder::standard(1.0, 0.0, vec({0.0}));
    const auto f = identity(1);
    const auto all = parabolic_exit_distribution(*f, 0.0, vec({0.0}), q, regions::whole_boundary(), config(1e-3, 500));
    CHECK(all.value == 1.0);

    const auto slow = identity(1, 1e-3);
    const auto top_slow = parabolic_exit_distribution(*slow, 0.0, vec({0.0}), q, regions::top_face(), config(1e-3, 500));
    CHECK(top_slow.value == 1.0);

    // Survival of sqrt(2) W in (-1, 1) to time 1: sum over odd k of
    // 4 / (k pi) (-1)^{(k-1)/2} exp(-(k pi / 2)^2).
    double survival = 0.0;
    for (int k = 1; k < 60; k += 2)
        survival += 4.0 / (k * kPi) * (((k - 1) / 2) % 2 ? -1.0 : 1.0) * std::exp(-std::pow(k * kPi / 2.0, 2));
    const auto top = parabolic_exit_distribution(*f, 0.0, vec({0.0}), q, regions::top_face(), config(1e-4, 10000, 5));
    CHECK(within(top, survival));

    CHECK_THROWS_AS(parabolic_exit_distribution(*f, 1.0, vec({0.0}), q, regions::top_face(), config(1e-3, 10)),
                    PreconditionError);
}

TEST_CASE("gamma set volumes") {
    const auto q = ParabolicCylinder::standard(1.0, 0.0, vec({0.0, 0.0}));
    GammaSet box;
    box.boxes.push_back({0.2, 0.7, vec({-0.5, -0.5}), vec({0.5, 0.5})});
    CHECK(box.volume_within(q) == doctest::Approx(0.5));
    GammaSet sector;
    sector.sectors.push_back({0.0, 1.0, vec({0.0, 0.0}), 0.5, 1.0});
    CHECK(sector.volume_within(q) == doctest::Approx(0.75 * kPi));
    GammaSet two = box;
    two.boxes.push_back({0.8, 0.9, vec({-0.2, -0.2}), vec({0.2, 0.2})});
    CHECK(two.volume_within(q) == doctest::Approx(0.5 + 0.1 * 0.16).epsilon(0.01));
    GammaSet overhanging;
    overhanging.boxes.push_back({0.0, 1.0, vec({0.0, -1.0}), vec({1.0, 1.0})});
    CHECK(overhanging.volume_within(q) == doctest::Approx(kPi / 2).epsilon(0.01));
    CHECK(box.contains(0.2, vec({0.5, -0.5})));
    CHECK_FALSE(box.contains(0.19, vec({0.0, 0.0})));
}

TEST_CASE("hitting probability") {
    const auto f = identity(1);
    const auto q = ParabolicCylinder::standard(1.0, 0.0, vec({0.0}));
    const SimConfig cfg = config(1e-3, 2000, 21);

    GammaSet closure;
    closure.boxes.push_back({0.0, 1.0, vec({-1.0}), vec({1.0})});
    CHECK(hitting_probability(*f, 0.0, vec({0.0}), q, closure, cfg).value == 1.0);

    GammaSet start_box;
    start_box.boxes.push_back({0.0, 0.5, vec({-0.5}), vec({0.5})});
    HittingOptions loose;
    loose.gamma_fraction = 0.2;
    CHECK(hitting_probability(*f, 0.0, vec({0.0}), q, start_box, cfg, loose).value == 1.0);
    CHECK_THROWS_WITH_AS(hitting_probability(*f, 0.0, vec({0.0}), q, start_box, cfg),
                         doctest::Contains("|Gamma| = 0.5"), PreconditionError);

    HittingOptions no_volume;
    no_volume.check_volume = false;
    std::vector<GammaSet> slabs;
    for (double w : {0.2, 0.02, 0.002, 0.0002}) {
        GammaSet g;
        g.boxes.push_back({0.0, 1.0, vec({0.5}), vec({0.5 + w})});
        slabs.push_back(g);
    }
    const auto p = hitting_probability_multi(*f, 0.0, vec({0.0}), q, slabs, cfg, no_volume);
    for (std::size_t k = 1; k < p.size(); ++k) CHECK(p[k].value <= p[k - 1].value);
    CHECK(p.front().value > 0.2);
    CHECK(p.back().value < 0.05);

    CHECK_THROWS_AS(hitting_probability(*f, 0.0, vec({0.9}), q, closure, cfg), PreconditionError);
    CHECK_THROWS_AS(hitting_probability(*f, 0.5, vec({0.0}), q, closure, cfg), PreconditionError);
}

TEST_CASE("regularity probe") {
    const auto f2 = identity(2);
    const auto h = dyadic_schedule(0.125, 6);
    CHECK(h.back() == doctest::Approx(0.125 / 32));
    SimConfig cfg = config(h.back() / 256, 1000, 2);
    cfg.bridge_correction = false;

    const BallDomain disk(Ball(vec({0.0, 0.0}), 1.0));
    const auto sphere = regularity_probe(*f2, disk, vec({1.0, 0.0}), h, cfg);
    CHECK(sphere.verdict == Regularity::regular);

    const PuncturedBallDomain punctured(Ball(vec({0.0, 0.0}), 1.0));
    const auto center = regularity_probe(*f2, punctured, vec({0.0, 0.0}), h, cfg);
    CHECK(center.verdict == Regularity::irregular);

    const HalfBallDomain half(Ball(vec({0.0, 0.0}), 1.0), vec({1.0, 0.0}));
    CHECK(regularity_probe(*f2, half, vec({0.0, 0.0}), h, cfg).verdict == Regularity::regular);

    for (const auto* v : {&sphere, &center})
        for (std::size_t k = 1; k < v->probe_values.size(); ++k)
            CHECK(v->probe_values[k].second.value <= v->probe_values[k - 1].second.value);

    CHECK_THROWS_AS(regularity_probe(*f2, disk, vec({0.5, 0.0}), h, cfg), PreconditionError);
    CHECK_THROWS_AS(regularity_probe(*f2, disk, vec({1.0, 0.0}), {0.1, 0.2}, cfg), InputDomainError);
    CHECK_THROWS_AS(regularity_probe(*f2, disk, vec({1.0, 0.0}), {2.0}, cfg), InputDomainError);
}

TEST_CASE("cosine bump derivatives match finite differences") {
    const CosineBump phi{vec({0.1, -0.2, 0.3}), 1.3};
    const Vec x = vec({0.4, 0.1, -0.2});
    double v = 0.0;
    Vec g;
    Mat hmat;
    phi.derivatives(x, v, g, hmat);
    CHECK(v == doctest::Approx(phi.value(x)));
    const double eps = 1e-5;
    for (int i = 0; i < 3; ++i) {
        const Vec e = eps * unit_vector(3, i);
        CHECK(g[i] == doctest::Approx((phi.value(x + e) - phi.value(x - e)) / (2 * eps)).epsilon(1e-6));
        for (int j = 0; j < 3; ++j) {
            const Vec ej = eps * unit_vector(3, j);
            const double fd = (phi.value(x + e + ej) - phi.value(x + e - ej) - phi.value(x - e + ej) +
                               phi.value(x - e - ej)) / (4 * eps * eps);
            CHECK(hmat(i, j) == doctest::Approx(fd).epsilon(1e-4));
        }
    }
    CHECK(phi.value(vec({2.0, 0.0, 0.0})) == 0.0);
    const CosineBump one{vec({0.0}), 2.0};
    CHECK(one.derivative_bound(0) == 1.0);
    CHECK(one.derivative_bound(2) == doctest::Approx(kPi * kPi / 4.0));
}

TEST_CASE("martingale residual vanishes within tolerance") {
    const SimConfig cfg = config(2.5e-4, 20000, 8);
    const Vec x = vec({0.1, -0.1});
    const CosineBump phi{vec({0.3, 0.0}), 2.0};
    for (const auto& field : builtin_fields(2, 0.5, 1.0)) {
        const auto r = martingale_residual(*field, 0.0, x, 0.1, phi, cfg);
        INFO(field->descriptor().family, " residual=", r.residual.value, " tol=", r.tolerance());
        CHECK(r.passed());
        CHECK(r.bias_allowance > 0.0);
    }
}

TEST_CASE("boundary region transforms") {
    const ScalingMap m{0.5, vec({1.0, 1.0}), 0.5};
    const auto right = regions::half_space(vec({1.0, 0.0}), 1.2);
    const auto hat = right.transformed(m);
    // x_hat = (x - x0) / r, so x1 > 1.2 becomes x_hat1 > 0.4.
    CHECK(hat(0.0, vec({0.5, 0.0}), ExitFace::lateral));
    CHECK_FALSE(hat(0.0, vec({0.3, 0.0}), ExitFace::lateral));
    const auto both = regions::intersection(regions::top_face(), right);
    CHECK(both(0.0, vec({2.0, 0.0}), ExitFace::top));
    CHECK_FALSE(both(0.0, vec({2.0, 0.0}), ExitFace::lateral));
}
