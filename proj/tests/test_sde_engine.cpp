#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "qdlab/sde_engine.hpp"
#include "qdlab/stats.hpp"

using namespace qdlab;

namespace {

Vec zeros(int d) { return Vec::Zero(d); }

ConstantField brownian(int d, double scale = 1.0, Vec drift = {}) {
    if (drift.size() == 0) drift = Vec::Zero(d);
    const double nu = std::min(scale, 1.0 / scale);
    const double k = drift.size() ? drift.cwiseAbs().maxCoeff() * 2.0 : 0.0;
    return ConstantField({nu, k, d}, scale * Mat::Identity(d, d), drift);
}

class NanDrift final : public CoefficientField {
public:
    NanDrift() : CoefficientField({1.0, 1.0, 1}, true, {"nan", {}}) {}
    void evaluate(double, const Vec& x, Mat& a, Vec& b) const override {
        a = Mat::Identity(1, 1);
        b = Vec::Constant(1, x[0] > 0.05 ? std::numeric_limits<double>::quiet_NaN() : 0.0);
    }
};

}  // namespace

TEST_CASE("sim config") {
    SimConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.dt = 0.0;
    CHECK_THROWS_AS(cfg.validate(), InputDomainError);
    cfg.dt = 2.0;
    cfg.max_time = 1.0;
    CHECK_THROWS_AS(cfg.validate(), InputDomainError);
    const auto scaled = SimConfig::for_scale(0.5, 10, 3);
    CHECK(scaled.dt == doctest::Approx(2.5e-5));
    CHECK(scaled.max_time == doctest::Approx(16.0));
    CHECK(SimConfig::for_scale(2.0, 10, 3).dt == doctest::Approx(1e-4));
}

TEST_CASE("single Euler step is x0 + sqrt(2 dt) Z") {
    const auto f = brownian(2);
    SimConfig cfg;
    cfg.dt = 0.01;
    cfg.max_time = 0.01;
    cfg.seed = 77;
    const Vec x0 = Vec::Constant(2, 0.5);
    const Path p = simulate_path(f, 0.0, x0, cfg, 5);
    REQUIRE(p.states.size() == 2);
    RandomStream z(77, 5);
    for (int i = 0; i < 2; ++i) CHECK(p.states[1][i] == doctest::Approx(0.5 + std::sqrt(0.02) * z.normal()));
}

TEST_CASE("paths are deterministic with a partial last step") {
    const auto f = brownian(1);
    SimConfig cfg;
    cfg.dt = 0.03;
    cfg.max_time = 0.1;
    const Path a = simulate_path(f, 0.0, zeros(1), cfg, 9);
    const Path b = simulate_path(f, 0.0, zeros(1), cfg, 9);
    REQUIRE(a.times.size() == 5);
    CHECK(a.times.front() == 0.0);
    CHECK(a.times.back() == doctest::Approx(0.1));
    CHECK(a.times[3] == doctest::Approx(0.09));
    for (std::size_t k = 0; k < a.states.size(); ++k) CHECK(a.states[k] == b.states[k]);
    CHECK(terminal_state(f, 0.0, zeros(1), 0.1, cfg, 9) == a.states.back());
}

TEST_CASE("constant drift: mean displacement is K t") {
    Vec drift(2);
    drift << 0.8, 0.0;
    const auto f = brownian(2, 1.0, drift);
    SimConfig cfg;
    cfg.dt = 0.01;
    cfg.n_paths = 10000;
    const double t = 0.5;
    struct Acc {
        MeanAccumulator m1, m2;
        void merge(const Acc& o) {
            m1.merge(o.m1);
            m2.merge(o.m2);
        }
    };
    auto run = run_ensemble(cfg.n_paths, Acc{}, [&](std::uint64_t i, Acc& acc) {
        const Vec y = terminal_state(f, 0.0, zeros(2), t, cfg, i);
        acc.m1.add(y[0]);
        acc.m2.add(y[1]);
    });
    const Estimate e1 = run.value.m1.estimate(), e2 = run.value.m2.estimate();
    CHECK(std::abs(e1.value - 0.4) <= 3.0 * e1.std_error);
    CHECK(std::abs(e2.value) <= 3.0 * e2.std_error);
    CHECK(e1.std_error == doctest::Approx(1.0 / 100.0).epsilon(0.05));
}

TEST_CASE("mean exit time from the unit disk") {
    const auto f = brownian(2);
    const BallDomain disk(Ball(zeros(2), 1.0));
    SimConfig cfg;
    cfg.dt = 1e-4;
    cfg.n_paths = 4000;
    MeanAccumulator acc;
    for (std::uint64_t i = 0; i < cfg.n_paths; ++i) {
        const ExitRecord rec = exit_sample(f, 0.0, zeros(2), disk, cfg, i);
        REQUIRE_FALSE(rec.censored);
        CHECK(std::abs(rec.exit_point.norm() - 1.0) <= 1e-6);
        acc.add(rec.exit_time);
    }
    const Estimate e = acc.estimate();
    CHECK(std::abs(e.value - 0.25) <= 3.0 * e.std_error);
}

TEST_CASE("start outside the domain exits immediately") {
    const auto f = brownian(2);
    const BallDomain disk(Ball(zeros(2), 1.0));
    Vec out(2);
    out << 2.0, 0.0;
    const auto rec = exit_sample(f, 0.0, out, disk, SimConfig{}, 0);
    CHECK(rec.exit_time == 0.0);
    CHECK(rec.exit_point == out);
    CHECK(rec.face == ExitFace::lateral);
    const CylinderDomain cyl(ParabolicCylinder::standard(1.0, 0.0, zeros(2)));
    CHECK(exit_sample(f, 1.0, zeros(2), cyl, SimConfig{}, 0).face == ExitFace::top);
}

TEST_CASE("cylinder exits: faces agree with geometry, small diffusion exits on top") {
    const auto q = ParabolicCylinder::standard(1.0, 0.0, zeros(2));
    const CylinderDomain cyl(q);
    SimConfig cfg;
    cfg.dt = 1e-3;
    for (double scale : {1.0, 1e-3}) {
        const auto f = brownian(2, scale);
        int top = 0;
        const int n = 500;
        for (int i = 0; i < n; ++i) {
            const auto rec = exit_sample(f, 0.0, zeros(2), cyl, cfg, i);
            CHECK(rec.exit_time <= 1.0 + 1e-12);
            const auto cls = classify_boundary_point(q, {rec.exit_time, rec.exit_point}, 1e-6);
            if (rec.face == ExitFace::top) {
                ++top;
                CHECK(rec.exit_time == 1.0);
                CHECK(cls == BoundaryClass::top);
            } else {
                CHECK((cls == BoundaryClass::lateral || cls == BoundaryClass::top));
                CHECK(std::abs(rec.exit_point.norm() - 1.0) <= 1e-6);
            }
        }
        if (scale < 1.0) CHECK(top == n);
        if (scale == 1.0) CHECK(top < n / 2);
    }
}

TEST_CASE("bridge correction only adds exits on the same Gaussian paths") {
    const auto f = brownian(1);
    Vec normal(1);
    normal << 1.0;
    const HalfSpaceDomain hs(normal, 0.2);
    SimConfig grid, bridge;
    grid.dt = bridge.dt = 0.01;
    grid.max_time = bridge.max_time = 0.5;
    grid.bridge_correction = false;
    bridge.bridge_correction = true;
    int exits_grid = 0, exits_bridge = 0;
    for (std::uint64_t i = 0; i < 100000; ++i) {
        const auto g = exit_sample(f, 0.0, zeros(1), hs, grid, i);
        const auto b = exit_sample(f, 0.0, zeros(1), hs, bridge, i);
        exits_grid += !g.censored;
        exits_bridge += !b.censored;
        if (!g.censored) {
            REQUIRE_FALSE(b.censored);
            REQUIRE(b.exit_time <= g.exit_time);
        }
        if (b.corrected) CHECK(b.exit_point[0] == doctest::Approx(0.2));
    }
    CHECK(exits_bridge > exits_grid);
    // Reflection principle: P(max of sqrt(2) W on [0, 0.5] exceeds 0.2) = 2 P(W_1 > 0.2).
    const double exact = std::erfc(0.2 / std::sqrt(2.0 * 0.5) / std::sqrt(2.0));
    const double se = std::sqrt(exact * (1 - exact) / 100000.0);
    CHECK(std::abs(exits_bridge / 100000.0 - exact) < 4.0 * se + 0.01);
}

TEST_CASE("bridge crossing probability") {
    CHECK(bridge_crossing_probability(0.0, 0.3, 2.0, 0.1) == 1.0);
    CHECK(bridge_crossing_probability(0.1, -0.3, 2.0, 0.1) == 1.0);
    CHECK(bridge_crossing_probability(0.1, 0.2, 2.0, 0.1) == doctest::Approx(std::exp(-0.2)));
    CHECK(bridge_crossing_probability(10.0, 10.0, 2.0, 1e-4) == 0.0);
}

TEST_CASE("ensembles are independent of worker count") {
    const auto f = brownian(2);
    SimConfig cfg;
    cfg.dt = 0.01;
    auto run_with = [&](int workers) {
        return run_ensemble(
                   1500, MeanAccumulator{},
                   [&](std::uint64_t i, MeanAccumulator& acc) {
                       acc.add(terminal_state(f, 0.0, zeros(2), 0.2, cfg, i).squaredNorm());
                   },
                   workers)
            .value;
    };
    const auto one = run_with(1), three = run_with(3), eight = run_with(8);
    CHECK(one.count() == 1500);
    CHECK(std::memcmp(&one, &three, sizeof(one)) == 0);
    CHECK(std::memcmp(&one, &eight, sizeof(one)) == 0);

    auto counted = run_ensemble(1000, CountAccumulator{}, [](std::uint64_t, CountAccumulator& c) { c.add(); });
    CHECK(counted.value.count() == 1000);
    CHECK(counted.stats.paths == 1000);

    auto ones = run_ensemble(700, MeanAccumulator{}, [](std::uint64_t, MeanAccumulator& m) { m.add(1.0); });
    CHECK(ones.value.estimate().value == 1.0);
    CHECK(ones.value.estimate().std_error == 0.0);
}

TEST_CASE("functional failures abort with partial progress") {
    try {
        run_ensemble(
            1000, CountAccumulator{},
            [](std::uint64_t i, CountAccumulator& c) {
                if (i == 300) throw PayoffContractError("boom");
                c.add();
            },
            1);
        FAIL("expected EnsembleError");
    } catch (const EnsembleError& e) {
        CHECK(e.completed_paths() == 300);
        CHECK_THROWS_AS(e.rethrow_cause(), PayoffContractError);
    }
    CHECK_THROWS_AS(run_ensemble(0, CountAccumulator{}, [](std::uint64_t, CountAccumulator&) {}), InputDomainError);
}

TEST_CASE("non-finite states raise a simulation error with the step index") {
    NanDrift f;
    SimConfig cfg;
    cfg.dt = 1e-3;
    const BallDomain ball(Ball(zeros(1), 10.0));
    bool thrown = false;
    for (std::uint64_t i = 0; i < 20 && !thrown; ++i) {
        try {
            exit_sample(f, 0.0, zeros(1), ball, cfg, i);
        } catch (const SimulationError& e) {
            thrown = true;
            CHECK(e.step() > 0);
        }
    }
    CHECK(thrown);
}

TEST_CASE("trajectory dump layout") {
    const auto f = brownian(2);
    SimConfig cfg;
    cfg.dt = 0.25;
    cfg.max_time = 1.0;
    const std::vector<Path> paths{simulate_path(f, 0.0, zeros(2), cfg, 0), simulate_path(f, 0.0, zeros(2), cfg, 1)};
    std::ostringstream out;
    write_trajectory_dump(out, paths, cfg.dt);
    const std::string bytes = out.str();
    const std::size_t per_path = 4 + 8 + 8 + 5 * 2 * 8;
    REQUIRE(bytes.size() == 2 * per_path);
    auto read_u32 = [&](std::size_t off) {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + i])) << (8 * i);
        return v;
    };
    auto read_u64 = [&](std::size_t off) {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[off + i])) << (8 * i);
        return v;
    };
    CHECK(read_u32(0) == 2);
    CHECK(read_u64(4) == 4);
    CHECK(std::bit_cast<double>(read_u64(12)) == 0.25);
    CHECK(std::bit_cast<double>(read_u64(20 + 8 * 8)) == paths[0].states[4][0]);
    CHECK(read_u32(per_path) == 2);
}
