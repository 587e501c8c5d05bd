#include "qdlab/geometry.hpp"

#include <cmath>
#include <numbers>

#include "qdlab/errors.hpp"

namespace qdlab {

double ball_volume(int dimension, double radius) {
    const double d = dimension;
    return std::pow(std::numbers::pi, d / 2.0) / std::tgamma(d / 2.0 + 1.0) * std::pow(radius, d);
}

Ball::Ball(Vec c, double r) : center(std::move(c)), radius(r) {
    if (!(radius > 0.0) || !std::isfinite(radius)) throw InputDomainError("Ball: radius must be > 0");
    if (center.size() < 1 || !center.allFinite()) throw InputDomainError("Ball: invalid center");
}

ParabolicCylinder::ParabolicCylinder(double t0_, Vec x0_, double duration_, double radius_)
    : t0(t0_), x0(std::move(x0_)), duration(duration_), radius(radius_) {
    if (!(duration > 0.0) || !(radius > 0.0)) throw InputDomainError("ParabolicCylinder: duration and radius must be > 0");
    if (!std::isfinite(t0) || !x0.allFinite() || x0.size() < 1)
        throw InputDomainError("ParabolicCylinder: invalid base point");
}

ParabolicCylinder ParabolicCylinder::standard(double r, double t0, Vec x0) {
    return ParabolicCylinder(t0, std::move(x0), r * r, r);
}

std::string to_string(BoundaryClass c) {
    switch (c) {
        case BoundaryClass::interior: return "interior";
        case BoundaryClass::lateral: return "lateral";
        case BoundaryClass::top: return "top";
        case BoundaryClass::outside: return "outside";
    }
    return "unknown";
}

std::string to_string(ExitFace face) { return face == ExitFace::top ? "top" : "lateral"; }

double parabolic_distance(const SpaceTimePoint& p1, const SpaceTimePoint& p2) {
    if (!std::isfinite(p1.t) || !std::isfinite(p2.t) || !p1.x.allFinite() || !p2.x.allFinite())
        throw InputDomainError("parabolic_distance: non-finite input");
    if (p1.x.size() != p2.x.size()) throw InputDomainError("parabolic_distance: dimension mismatch");
    return std::sqrt(std::abs(p1.t - p2.t)) + (p1.x - p2.x).norm();
}

BoundaryClass classify_boundary_point(const ParabolicCylinder& q, const SpaceTimePoint& p, double tol) {
    const double tau = p.t - q.t0;
    const double rho = (p.x - q.x0).norm();
    if (tau < -tol || tau > q.duration + tol || rho > q.radius + tol) return BoundaryClass::outside;
    if (std::abs(tau - q.duration) <= tol) return BoundaryClass::top;
    if (std::abs(rho - q.radius) <= tol) return BoundaryClass::lateral;
    return BoundaryClass::interior;
}

ScalingMap ScalingMap::inverted() const {
    ScalingMap m = *this;
    m.direction = direction == ScalingDirection::forward ? ScalingDirection::inverse : ScalingDirection::forward;
    return m;
}

SpaceTimePoint apply_scaling(const ScalingMap& map, const SpaceTimePoint& p) {
    if (!(map.r > 0.0)) throw InputDomainError("apply_scaling: r must be > 0");
    if (map.direction == ScalingDirection::forward)
        return {(p.t - map.s0) / (map.r * map.r), (p.x - map.x0) / map.r};
    return {map.s0 + map.r * map.r * p.t, map.x0 + map.r * p.x};
}

ParabolicCylinder apply_scaling(const ScalingMap& map, const ParabolicCylinder& q) {
    const SpaceTimePoint base = apply_scaling(map, SpaceTimePoint{q.t0, q.x0});
    const double f = map.direction == ScalingDirection::forward ? 1.0 / map.r : map.r;
    return ParabolicCylinder(base.t, base.x, q.duration * f * f, q.radius * f);
}

namespace {

class ConjugatedField final : public CoefficientField {
public:
    ConjugatedField(FieldPtr inner, double s0, Vec x0, double r, FieldDescriptor desc)
        : CoefficientField({inner->certificate().nu, r * inner->certificate().k_bound, inner->dimension()},
                           inner->time_homogeneous(), std::move(desc)),
          inner_(std::move(inner)),
          s0_(s0),
          x0_(std::move(x0)),
          r_(r) {}

    void evaluate(double t, const Vec& x, Mat& a, Vec& b) const override {
        inner_->evaluate(s0_ + r_ * r_ * t, x0_ + r_ * x, a, b);
        b *= r_;
    }

private:
    FieldPtr inner_;
    double s0_;
    Vec x0_;
    double r_;
};

}  // namespace

FieldPtr conjugate_field(FieldPtr field, double s0, const Vec& x0, double r) {
    if (!field) throw InputDomainError("conjugate_field: null field");
    if (!(r > 0.0) || !std::isfinite(r)) throw InputDomainError("conjugate_field: r must be > 0");
    if (x0.size() != field->dimension()) throw InputDomainError("conjugate_field: x0 dimension mismatch");
    FieldDescriptor desc = field->descriptor();
    desc.family = "conjugated:" + desc.family;
    desc.params["conj_s0"] = s0;
    desc.params["conj_r"] = r;
    for (Eigen::Index i = 0; i < x0.size(); ++i) desc.params["conj_x0_" + std::to_string(i + 1)] = x0[i];
    return std::make_shared<ConjugatedField>(std::move(field), s0, x0, r, std::move(desc));
}

// ---------------------------------------------------------------------------

namespace {

FaceDistance sphere_piece(const Ball& ball, const Vec& x) {
    Vec offset = x - ball.center;
    const double norm = offset.norm();
    FaceDistance f;
    f.distance = ball.radius - norm;
    f.normal = norm > 0.0 ? Vec(offset / norm) : unit_vector(ball.dimension(), 0);
    return f;
}

Vec project_sphere(const Ball& ball, const Vec& x) {
    Vec offset = x - ball.center;
    const double norm = offset.norm();
    if (norm == 0.0) return ball.center + ball.radius * unit_vector(ball.dimension(), 0);
    return ball.center + offset * (ball.radius / norm);
}

}  // namespace

BallDomain::BallDomain(Ball ball) : ball_(std::move(ball)) {}

int BallDomain::boundary_pieces(const Vec& x, PieceArray& out) const {
    out[0] = sphere_piece(ball_, x);
    return 1;
}

Vec BallDomain::project(const Vec& x, int) const { return project_sphere(ball_, x); }

PuncturedBallDomain::PuncturedBallDomain(Ball ball) : ball_(std::move(ball)) {}

bool PuncturedBallDomain::contains(double, const Vec& x) const {
    const double norm = (x - ball_.center).norm();
    return norm > 0.0 && norm < ball_.radius;
}

int PuncturedBallDomain::boundary_pieces(const Vec& x, PieceArray& out) const {
    out[0] = sphere_piece(ball_, x);
    return 1;
}

Vec PuncturedBallDomain::project(const Vec& x, int) const {
    if ((x - ball_.center).norm() == 0.0) return ball_.center;
    return project_sphere(ball_, x);
}

HalfBallDomain::HalfBallDomain(Ball ball, Vec direction) : ball_(std::move(ball)), direction_(std::move(direction)) {
    if (direction_.size() != ball_.dimension() || !(direction_.norm() > 0.0))
        throw InputDomainError("HalfBallDomain: invalid direction");
    direction_.normalize();
}

bool HalfBallDomain::contains(double, const Vec& x) const {
    const Vec offset = x - ball_.center;
    return offset.norm() < ball_.radius && offset.dot(direction_) > 0.0;
}

int HalfBallDomain::boundary_pieces(const Vec& x, PieceArray& out) const {
    out[0] = sphere_piece(ball_, x);
    out[1].distance = (x - ball_.center).dot(direction_);
    out[1].normal = -direction_;
    return 2;
}

Vec HalfBallDomain::project(const Vec& x, int piece) const {
    if (piece == 0) return project_sphere(ball_, x);
    return x - direction_ * (x - ball_.center).dot(direction_);
}

HalfSpaceDomain::HalfSpaceDomain(Vec normal, double offset) : normal_(std::move(normal)), offset_(offset) {
    if (!(normal_.norm() > 0.0)) throw InputDomainError("HalfSpaceDomain: zero normal");
    const double n = normal_.norm();
    normal_ /= n;
    offset_ /= n;
}

int HalfSpaceDomain::boundary_pieces(const Vec& x, PieceArray& out) const {
    out[0].distance = offset_ - x.dot(normal_);
    out[0].normal = normal_;
    return 1;
}

Vec HalfSpaceDomain::project(const Vec& x, int) const { return x - normal_ * (x.dot(normal_) - offset_); }

CylinderDomain::CylinderDomain(ParabolicCylinder cylinder)
    : cylinder_(std::move(cylinder)), lateral_(cylinder_.x0, cylinder_.radius) {}

int CylinderDomain::boundary_pieces(const Vec& x, PieceArray& out) const {
    out[0] = sphere_piece(lateral_, x);
    return 1;
}

Vec CylinderDomain::project(const Vec& x, int) const {
    return project_sphere(lateral_, x);
}

DomainPtr make_elliptic_domain(const std::string& family, const Vec& center, double radius) {
    Ball ball(center, radius);
    if (family == "ball") return std::make_shared<BallDomain>(ball);
    if (family == "punctured_ball") return std::make_shared<PuncturedBallDomain>(ball);
    if (family == "half_ball") return std::make_shared<HalfBallDomain>(ball, unit_vector(ball.dimension(), 0));
    throw RegistryError("unknown domain family '" + family + "'");
}

}  // namespace qdlab
