#include <doctest.h>

#include <cmath>

#include "qdlab/rng.hpp"
#include "qdlab/verifiers.hpp"

using namespace qdlab;

namespace {

Vec vec(std::initializer_list<double> v) {
    Vec out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

Estimate exact(double v, double se = 0.0) {
    Estimate e;
    e.value = v;
    e.std_error = se;
    return e;
}

}  // namespace

TEST_CASE("barrier exponent formula") {
    CHECK(barrier_exponent(10.0, 0.5, 0.25, 1.0) == doctest::Approx(32.0));
    const auto no_drift = barrier_n(2, 0.5, 0.0, 0.5, 0.5);
    const auto drift = barrier_n(2, 0.5, 1.0, 0.5, 0.5);
    CHECK(no_drift.n <= drift.n);
    CHECK(no_drift.N1 == doctest::Approx(2 * 0.25 / 0.5 + 4 / 0.5 * 2.5 * 0.5 + 4 * 2 / 0.5));
    double previous = std::numeric_limits<double>::infinity();
    for (double eps : {0.3, 0.5, 0.7, 0.9, 0.99}) {
        const double n = barrier_exponent(5.0, eps, 0.5, 1.0);
        CHECK(n < previous);
        CHECK(n >= 2.0);
        previous = n;
    }
    CHECK(barrier_exponent(0.0, 0.5, 0.5, 1.0) == 2.0);
    CHECK_THROWS_AS(barrier_n(2, 0.0, 1.0, 0.5, 0.5), InputDomainError);
    CHECK_THROWS_AS(barrier_n(2, 0.5, 1.0, 1.0, 0.5), InputDomainError);
    CHECK_THROWS_AS(barrier_n(2, 0.5, 1.0, 0.5, 0.0), InputDomainError);
}

TEST_CASE("barrier derivatives match finite differences") {
    const EllipticityCertificate cert{0.5, 1.0, 2};
    auto b = make_barrier(cert, 1.2, vec({0.8, -0.4}), vec({0.1, 0.2}), 0.5, 0.5, 0.2);
    b.n = 3.5;
    const double t = 0.4;
    const Vec x = b.y - b.xi() * (t / b.T) + vec({0.1, -0.15});
    REQUIRE(b.phi(t, x) > 0.0);
    double dt = 0.0;
    Vec grad;
    Mat hess;
    b.derivatives(t, x, dt, grad, hess);
    const double h = 1e-5;
    CHECK(dt == doctest::Approx((b.value(t + h, x) - b.value(t - h, x)) / (2 * h)).epsilon(1e-6));
    for (int i = 0; i < 2; ++i) {
        const Vec ei = h * unit_vector(2, i);
        CHECK(grad[i] == doctest::Approx((b.value(t, x + ei) - b.value(t, x - ei)) / (2 * h)).epsilon(1e-6));
        for (int j = 0; j < 2; ++j) {
            const Vec ej = h * unit_vector(2, j);
            const double fd = (b.value(t, x + ei + ej) - b.value(t, x + ei - ej) - b.value(t, x - ei + ej) +
                               b.value(t, x - ei - ej)) / (4 * h * h);
            CHECK(hess(i, j) == doctest::Approx(fd).epsilon(1e-4));
        }
    }
    Mat a(2, 2);
    a << 1.2, 0.3, 0.3, 0.8;
    const Vec drift = vec({0.5, -0.7});
    const double direct = dt + (a.cwiseProduct(hess)).sum() + drift.dot(grad);
    CHECK(b.generator(t, x, a, drift) == doctest::Approx(direct).epsilon(1e-12));
    CHECK(b.scaled_generator(t, x, a, drift) == doctest::Approx(direct * std::pow(b.g(t), b.n)).epsilon(1e-12));
}

TEST_CASE("barrier vanishes on the lateral set and is nonnegative") {
    const EllipticityCertificate cert{1.0, 0.0, 2};
    const auto b = make_barrier(cert, 1.0, vec({1.0, 0.0}), vec({0.0, 0.0}), 0.5, 0.5, 0.25);
    RandomStream rng(4, 0);
    for (int k = 0; k < 200; ++k) {
        const double t = rng.uniform() * b.T;
        const double radius = std::sqrt(b.g(t));
        const double angle = 2 * std::numbers::pi * rng.uniform();
        const Vec on = b.y - b.xi() * (t / b.T) + radius * vec({std::cos(angle), std::sin(angle)});
        CHECK(std::abs(b.phi(t, on)) < 1e-14);
        CHECK(b.value(t, on) * std::pow(b.g(t), b.n) < 1e-25);
        CHECK(b.value(t, 1.001 * (on - b.y + b.xi() * (t / b.T)) + b.y - b.xi() * (t / b.T)) == 0.0);
        const Vec inside = b.y - b.xi() * (t / b.T) + 0.5 * radius * vec({std::cos(angle), std::sin(angle)});
        CHECK(b.value(t, inside) > 0.0);
    }
}

TEST_CASE("barrier certificate: a = I passes, n = 1 fails") {
    const ConstantField f({1.0, 0.0, 1}, Mat::Identity(1, 1), Vec::Zero(1));
    auto b = make_barrier(f.certificate(), 1.0, vec({1.0}), vec({0.0}), 0.5, 0.5, 0.25);
    const auto ok = barrier_check(f, b, 64);
    CHECK(ok.passed);
    CHECK(ok.min_value >= -kBarrierTolerance);
    CHECK(ok.refinement_stable);
    b.n = 1.0;
    CHECK_THROWS_AS(b.validate(), InputDomainError);
    b.allow_small_exponent = true;
    const auto bad = barrier_check(f, b, 64);
    CHECK_FALSE(bad.passed);
    CHECK(bad.min_value < 0.0);
}

TEST_CASE("barrier certificate for random admissible fields") {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const RandomCellsField f({0.5, 1.0, 2}, 0.2, seed);
        const auto b = make_barrier(f.certificate(), 0.8, vec({0.9, 0.5}), vec({-0.2, 0.1}), 0.6, 0.6, 0.3);
        const auto cert = barrier_check(f, b, 32, false);
        CHECK(cert.passed);
        CHECK(cert.points > 0);
    }
}

TEST_CASE("barrier parameter validation") {
    const EllipticityCertificate cert{1.0, 0.0, 1};
    CHECK_THROWS_AS(make_barrier(cert, 1.0, vec({1.0}), vec({0.0}), 0.5, 0.5, 0.3), InputDomainError);
    CHECK_THROWS_AS(make_barrier(cert, 3.0, vec({1.0}), vec({0.0}), 0.5, 0.5, 0.2), InputDomainError);
    CHECK_THROWS_AS(make_barrier(cert, 1.0, vec({3.0}), vec({0.0}), 0.5, 0.5, 0.2), InputDomainError);
    CHECK_THROWS_AS(make_barrier(cert, 1.0, vec({1.0}), vec({0.6}), 0.5, 0.5, 0.2), InputDomainError);
}

TEST_CASE("unit cylinder drift bound") {
    for (int d = 1; d <= 3; ++d) {
        const ConstantField f({1.0, 0.0, d}, Mat::Identity(d, d), Vec::Zero(d));
        const auto r = drift_bound_check(f, 16);
        CHECK(r.min_value == doctest::Approx(-1.0 - 2.0 * d));
        CHECK(r.bound == doctest::Approx(-1.0 - 2.0 * d));
        CHECK(r.holds());
    }
    // Extremal drift aligned with x: the constant K d needs d >= 4.
    for (int d : {1, 2, 4}) {
        const double nu = 0.5, k = 1.0, drift = k * (1 - 1e-9);
        const ConstantField f({nu, k, d}, Mat::Identity(d, d) / nu, Vec::Constant(d, drift));
        const auto r = drift_bound_check(f, d == 4 ? 4 : 64);
        CHECK(r.conservative_holds());
        if (d < 4) CHECK_FALSE(r.holds());
        if (d == 4) CHECK(r.holds());
    }
}

TEST_CASE("holder fit on synthetic functions") {
    std::vector<HolderSample> root, affine;
    std::vector<double> xs{0.0};
    for (int k = 0; k < 7; ++k) xs.push_back(std::pow(8.0, -k));
    for (double x : xs) {
        root.push_back({{0.0, vec({x})}, exact(std::sqrt(x))});
        affine.push_back({{0.0, vec({x})}, exact(2.0 * x + 1.0)});
    }
    const auto fr = holder_fit(root);
    CHECK(fr.alpha_hat == doctest::Approx(0.5).epsilon(0.04));
    CHECK(std::abs(fr.alpha_hat - 0.5) <= 0.02);
    CHECK(fr.pair_count == 28);
    const auto fa = holder_fit(affine);
    CHECK(std::abs(fa.alpha_hat - 1.0) <= 0.02);
    CHECK(fa.n_hat == doctest::Approx(2.0));
    CHECK(fa.r_squared == doctest::Approx(1.0));

    // Parabolic rescaling of the sample points leaves the exponent unchanged.
    const double r = 0.25;
    std::vector<HolderSample> scaled;
    for (const auto& s : root) scaled.push_back({{s.point.t / (r * r), s.point.x / r}, s.u});
    const auto fs = holder_fit(scaled);
    CHECK(fs.alpha_hat == doctest::Approx(fr.alpha_hat).epsilon(1e-12));
    CHECK(fs.n_hat == doctest::Approx(fr.n_hat * std::pow(r, fr.alpha_hat)).epsilon(1e-10));

    std::vector<HolderSample> noise;
    for (int k = 0; k < 8; ++k) noise.push_back({{0.0, vec({0.1 * k})}, exact(0.5 + 0.001 * (k % 2), 0.1)});
    CHECK_THROWS_AS(holder_fit(noise), FitDegenerateError);
    root.resize(6);
    CHECK_THROWS_AS(holder_fit(root), PreconditionError);
}

TEST_CASE("harnack ratio") {
    std::vector<Estimate> flat(5, exact(0.3, 0.01));
    const auto one = harnack_ratio(flat, "flat");
    CHECK(one.ratio == 1.0);
    CHECK_FALSE(one.unbounded);

    std::vector<Estimate> u{exact(0.2, 0.01), exact(0.5, 0.01), exact(0.8, 0.02)};
    const auto base = harnack_ratio(u, "u");
    CHECK(base.ratio == doctest::Approx(4.0));
    CHECK(base.std_error == doctest::Approx(4.0 * std::sqrt(0.025 * 0.025 + 0.05 * 0.05)));
    for (auto& e : u) {
        e.value *= 7.0;
        e.std_error *= 7.0;
    }
    const auto scaled = harnack_ratio(u, "7u");
    CHECK(scaled.ratio == doctest::Approx(base.ratio));
    CHECK(scaled.std_error == doctest::Approx(base.std_error));

    const auto zero = harnack_ratio({exact(0.5, 0.01), exact(0.01, 0.01)}, "near zero");
    CHECK(zero.unbounded);
    CHECK(std::isinf(zero.ratio));

    const auto parabolic = harnack_ratio({exact(0.6, 0.01)}, {exact(0.3, 0.01), exact(0.4, 0.01)}, "center vs ball");
    CHECK(parabolic.ratio == doctest::Approx(2.0));
    CHECK_THROWS_AS(harnack_ratio({exact(-0.1)}, "negative"), PreconditionError);
}

TEST_CASE("oscillation cascade") {
    const Vec c = vec({0.0, 0.0});
    const auto constant = oscillation_cascade([](const Vec&) { return exact(1.0, 0.01); }, c, {1.0, 0.5, 0.25});
    CHECK(constant.truncated);
    CHECK(constant.levels.empty());
    CHECK(constant.ratios.empty());

    const double alpha = 0.6;
    const auto power = oscillation_cascade([&](const Vec& x) { return exact(std::pow(x.norm(), alpha)); }, c,
                                           {1.0, 0.5, 0.25, 0.125});
    REQUIRE(power.levels.size() == 4);
    for (const auto& level : power.levels) CHECK(level.oscillation == doctest::Approx(std::pow(level.radius, alpha)));
    for (double ratio : power.ratios) CHECK(ratio == doctest::Approx(std::pow(2.0, alpha)));
    CHECK(power.decay_exponent == doctest::Approx(alpha));
    CHECK_THROWS_AS(oscillation_cascade([](const Vec&) { return exact(0.0); }, c, {0.5, 1.0}), InputDomainError);
}
