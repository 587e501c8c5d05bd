#include <doctest.h>

#include <cmath>

#include "qdlab/coefficients.hpp"
#include "qdlab/errors.hpp"
#include "qdlab/rng.hpp"

using namespace qdlab;

namespace {

class ScaledIdentity final : public CoefficientField {
public:
    ScaledIdentity(EllipticityCertificate c, double scale, double drift, bool skew = false)
        : CoefficientField(c, true, {"scaled", {}}), scale_(scale), drift_(drift), skew_(skew) {}
    void evaluate(double, const Vec& x, Mat& a, Vec& b) const override {
        a = scale_ * Mat::Identity(x.size(), x.size());
        if (skew_ && x.size() > 1) a(0, 1) += 0.1;
        b = Vec::Constant(x.size(), drift_);
    }

private:
    double scale_, drift_;
    bool skew_;
};

}  // namespace

TEST_CASE("certificate ranges") {
    CHECK_NOTHROW(EllipticityCertificate{1.0, 0.0, 1}.validate());
    CHECK_THROWS_AS(EllipticityCertificate({0.0, 1.0, 2}).validate(), InputDomainError);
    CHECK_THROWS_AS(EllipticityCertificate({1.5, 1.0, 2}).validate(), InputDomainError);
    CHECK_THROWS_AS(EllipticityCertificate({0.5, -1.0, 2}).validate(), InputDomainError);
    CHECK_THROWS_AS(EllipticityCertificate({0.5, 1.0, 0}).validate(), InputDomainError);
    CHECK_THROWS_AS(EllipticityCertificate({0.5, 1.0, kMaxDim + 1}).validate(), InputDomainError);
}

TEST_CASE("built-in fields satisfy their certificates") {
    for (int d = 1; d <= 3; ++d) {
        for (const auto& field : builtin_fields(d, 0.5, 1.0)) {
            const auto report = validate_ellipticity(*field, 10000, SampleBox::cube(d, 2.0, 0.0, 2.0), 7);
            INFO(field->descriptor().family, " d=", d);
            CHECK(report.passed);
            CHECK(report.min_quotient >= 0.5 * (1 - 1e-12));
            CHECK(report.max_quotient <= 2.0 * (1 + 1e-12));
            CHECK(report.max_abs_drift < 1.0);
            CHECK(report.symmetry_residual == 0.0);
        }
    }
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        RandomCellsField f({0.3, 2.0, 3}, 0.25, seed);
        CHECK(validate_ellipticity(f, 10000, SampleBox::cube(3, 1.5), seed).passed);
    }
}

TEST_CASE("validation reports violations instead of throwing") {
    const EllipticityCertificate c{0.5, 1.0, 2};
    ScaledIdentity too_large(c, 4.0, 0.0);
    auto r = validate_ellipticity(too_large, 1000, SampleBox::cube(2, 1.0), 1);
    CHECK_FALSE(r.passed);
    CHECK(r.max_quotient == doctest::Approx(4.0));
    CHECK_FALSE(r.failures.empty());

    ScaledIdentity drift_at_bound(c, 1.0, 1.0);
    CHECK_FALSE(validate_ellipticity(drift_at_bound, 100, SampleBox::cube(2, 1.0), 1).passed);

    ScaledIdentity skew(c, 1.0, 0.0, true);
    r = validate_ellipticity(skew, 100, SampleBox::cube(2, 1.0), 1);
    CHECK_FALSE(r.passed);
    CHECK(r.symmetry_residual == doctest::Approx(0.1));
}

TEST_CASE("checkerboard cells are half-open") {
    CheckerboardField f({0.5, 0.0, 2}, 0.5);
    Mat a;
    Vec b;
    auto diag = [&](double x1, double x2) {
        Vec x(2);
        x << x1, x2;
        f.evaluate(0.0, x, a, b);
        return a(0, 0);
    };
    CHECK(diag(0.25, 0.25) == 0.5);
    CHECK(diag(0.75, 0.25) == 2.0);
    CHECK(diag(0.5, 0.0) == 2.0);
    CHECK(diag(0.4999999, 0.0) == 0.5);
    CHECK(diag(-0.25, 0.25) == 2.0);
    CHECK(diag(-0.25, -0.25) == 0.5);
    CHECK(b.isZero());
}

TEST_CASE("radial jump and time oscillation") {
    RadialJumpField r({0.5, 1.0, 2}, 0.5, 0.5);
    Mat a;
    Vec b;
    Vec x(2);
    x << 0.3, 0.4;
    r.evaluate(0.0, x, a, b);
    CHECK(a(0, 0) == 2.0);
    CHECK(b.norm() == doctest::Approx(0.5));
    CHECK(b.dot(x) > 0.0);
    x << 0.1, 0.0;
    r.evaluate(0.0, x, a, b);
    CHECK(a(0, 0) == 0.5);

    TimeOscillatingField osc({0.5, 1.0, 2}, 0.5, 0.5);
    CHECK_FALSE(osc.time_homogeneous());
    osc.evaluate(0.0, x, a, b);
    CHECK(a(0, 0) == doctest::Approx(0.5));
    CHECK(b.norm() == doctest::Approx(0.0).epsilon(1e-12));
    osc.evaluate(0.25, x, a, b);
    CHECK(a(0, 0) == doctest::Approx(2.0));
    Mat a2;
    Vec b2;
    osc.evaluate(0.25 + 0.5, x, a2, b2);
    CHECK(a2(0, 0) == doctest::Approx(a(0, 0)));
}

TEST_CASE("diffusion square root reproduces 2a") {
    RandomStream rng(3, 0);
    for (int trial = 0; trial < 50; ++trial) {
        const int d = 1 + trial % 4;
        Mat m(d, d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) m(i, j) = rng.normal();
        const Mat a = m * m.transpose() + 0.1 * Mat::Identity(d, d);
        const Mat s = diffusion_sqrt(a);
        CHECK((s * s.transpose() - 2.0 * a).norm() < 1e-10 * a.norm());
        CHECK((s - s.transpose()).norm() < 1e-12 * s.norm());
        Mat fast;
        diffusion_sqrt_into(a, fast);
        CHECK((fast * fast.transpose() - 2.0 * a).norm() < 1e-10 * a.norm());
    }
    Mat diag = Mat::Zero(2, 2);
    diag(0, 0) = 0.5;
    diag(1, 1) = 2.0;
    Mat s;
    diffusion_sqrt_into(diag, s);
    CHECK(s(0, 0) == doctest::Approx(1.0));
    CHECK(s(1, 1) == doctest::Approx(2.0));

    Mat indefinite(2, 2);
    indefinite << 1.0, 0.0, 0.0, -1.0;
    CHECK_THROWS_AS(diffusion_sqrt(indefinite), NumericDomainError);
    Mat asym(2, 2);
    asym << 1.0, 0.5, 0.0, 1.0;
    CHECK_THROWS_AS(diffusion_sqrt(asym), NumericDomainError);
}

TEST_CASE("checked evaluation") {
    ConstantField f({1.0, 0.0, 2}, Mat::Identity(2, 2), Vec::Zero(2));
    Vec bad(2);
    bad << 0.0, std::nan("");
    CHECK_THROWS_AS(eval_coeffs(f, 0.0, bad), InputDomainError);
    CHECK_THROWS_AS(eval_coeffs(f, 0.0, Vec::Zero(3)), InputDomainError);
    CHECK_THROWS_AS(eval_coeffs(f, std::nan(""), Vec::Zero(2)), InputDomainError);
    const auto c = eval_coeffs(f, 1.0, Vec::Zero(2));
    CHECK(c.a.isIdentity());
}

TEST_CASE("registry") {
    auto& reg = FieldRegistry::global();
    for (const char* name : {"constant", "checkerboard", "radial_jump", "time_oscillating", "random_cells"})
        CHECK(reg.contains(name));
    CHECK_THROWS_AS(make_field({0.5, 1.0, 2}, {"no_such_family", {}}), RegistryError);

    const auto cb = make_field({0.5, 0.0, 2}, {"checkerboard", {{"cell_size", 0.25}}});
    CHECK(cb->descriptor().family == "checkerboard");
    CHECK(cb->descriptor().param("cell_size", 0.0) == 0.25);

    reg.register_family("test_scaled", [](const EllipticityCertificate& c, const FieldDescriptor&) {
        return std::make_shared<ScaledIdentity>(c, 1.0, 0.0);
    });
    CHECK(reg.contains("test_scaled"));
    CHECK(make_field({1.0, 0.0, 1}, {"test_scaled", {}})->dimension() == 1);
}
