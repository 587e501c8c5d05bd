#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>

#include "qdlab/coefficients.hpp"
#include "qdlab/linalg.hpp"

namespace qdlab {

/// Points within this distance of a face are assigned to it.
inline constexpr double kFaceTolerance = 1e-9;

/// Volume of the d-dimensional ball of radius r.
double ball_volume(int dimension, double radius);

/// Open ball B_r(center).
struct Ball {
    Vec center;
    double radius = 1.0;

    Ball(Vec center, double radius);
    int dimension() const { return static_cast<int>(center.size()); }
    bool contains(const Vec& x) const { return (x - center).norm() < radius; }
};

/// Q_{T,r}(t0, x0) = [t0, t0 + T) x B_r(x0).
struct ParabolicCylinder {
    double t0 = 0.0;
    Vec x0;
    double duration = 1.0;
    double radius = 1.0;

    ParabolicCylinder(double t0, Vec x0, double duration, double radius);
    /// Q_r(t0, x0): duration r^2.
    static ParabolicCylinder standard(double radius, double t0, Vec x0);

    int dimension() const { return static_cast<int>(x0.size()); }
    double t_end() const { return t0 + duration; }
    bool contains(double t, const Vec& x) const {
        return t >= t0 && t < t0 + duration && (x - x0).norm() < radius;
    }
    double volume() const { return duration * ball_volume(dimension(), radius); }
};

enum class BoundaryClass { interior, lateral, top, outside };

std::string to_string(BoundaryClass c);

/// rho((t1, x1), (t2, x2)) = |t1 - t2|^{1/2} + |x1 - x2|.
double parabolic_distance(const SpaceTimePoint& p1, const SpaceTimePoint& p2);

/// Classifies p against the parabolic boundary of q: lateral surface over
/// (t0, t0 + T), the closed top cap, otherwise interior or outside. The bottom
/// face {t0} x B_r is not parabolic boundary and reads as interior.
BoundaryClass classify_boundary_point(const ParabolicCylinder& q, const SpaceTimePoint& p,
                                      double tolerance = kFaceTolerance);

enum class ScalingDirection { forward, inverse };

/// forward: (t, x) -> ((t - s0) / r^2, (x - x0) / r); inverse undoes it.
struct ScalingMap {
    double s0 = 0.0;
    Vec x0;
    double r = 1.0;
    ScalingDirection direction = ScalingDirection::forward;

    ScalingMap inverted() const;
};

SpaceTimePoint apply_scaling(const ScalingMap& map, const SpaceTimePoint& p);
ParabolicCylinder apply_scaling(const ScalingMap& map, const ParabolicCylinder& q);

/// Field with hat-a(t, x) = a(s0 + r^2 t, x0 + r x) and hat-b = r b(...). The
/// certificate keeps nu and scales the drift bound to rK.
FieldPtr conjugate_field(FieldPtr field, double s0, const Vec& x0, double r);

// ---------------------------------------------------------------------------
// Simulation domains

enum class ExitFace { lateral, top };

std::string to_string(ExitFace face);

/// Signed distance to one smooth boundary piece (positive inside) and the outward normal.
struct FaceDistance {
    double distance = 0.0;
    Vec normal;
};

/// Region a path is stopped on. Elliptic domains ignore t; parabolic ones add
/// a terminal time, which the engine hits exactly.
class Domain {
public:
    static constexpr int kMaxPieces = 2;
    using PieceArray = std::array<FaceDistance, kMaxPieces>;

    virtual ~Domain() = default;
    virtual int dimension() const = 0;
    virtual bool contains(double t, const Vec& x) const = 0;
    /// Characteristic length: drives default dt and censoring horizon.
    virtual double scale() const = 0;
    virtual std::optional<double> terminal_time() const { return std::nullopt; }
    /// Smooth spatial boundary pieces usable for the bridge correction; returns count.
    virtual int boundary_pieces(const Vec& x, PieceArray& out) const = 0;
    /// Nearest point on piece `piece`.
    virtual Vec project(const Vec& x, int piece) const = 0;
    virtual std::string family() const = 0;
};

using DomainPtr = std::shared_ptr<const Domain>;

class BallDomain final : public Domain {
public:
    explicit BallDomain(Ball ball);
    int dimension() const override { return ball_.dimension(); }
    bool contains(double, const Vec& x) const override { return ball_.contains(x); }
    double scale() const override { return ball_.radius; }
    int boundary_pieces(const Vec& x, PieceArray& out) const override;
    Vec project(const Vec& x, int piece) const override;
    std::string family() const override { return "ball"; }
    const Ball& ball() const { return ball_; }

private:
    Ball ball_;
};

/// B_r(c) \ {c}. The puncture is polar for non-degenerate diffusions in d >= 2,
/// so it carries no bridge piece; a path only leaves through it by landing on c.
class PuncturedBallDomain final : public Domain {
public:
    explicit PuncturedBallDomain(Ball ball);
    int dimension() const override { return ball_.dimension(); }
    bool contains(double, const Vec& x) const override;
    double scale() const override { return ball_.radius; }
    int boundary_pieces(const Vec& x, PieceArray& out) const override;
    Vec project(const Vec& x, int piece) const override;
    std::string family() const override { return "punctured_ball"; }

private:
    Ball ball_;
};

/// B_r(c) intersected with the open half-space {(x - c) . u > 0}.
class HalfBallDomain final : public Domain {
public:
    HalfBallDomain(Ball ball, Vec direction);
    int dimension() const override { return ball_.dimension(); }
    bool contains(double, const Vec& x) const override;
    double scale() const override { return ball_.radius; }
    int boundary_pieces(const Vec& x, PieceArray& out) const override;
    Vec project(const Vec& x, int piece) const override;
    std::string family() const override { return "half_ball"; }

private:
    Ball ball_;
    Vec direction_;
};

/// The half-space {x . u < offset}; unbounded, used for bridge diagnostics.
class HalfSpaceDomain final : public Domain {
public:
    HalfSpaceDomain(Vec normal, double offset);
    int dimension() const override { return static_cast<int>(normal_.size()); }
    bool contains(double, const Vec& x) const override { return x.dot(normal_) < offset_; }
    double scale() const override { return 1.0; }
    int boundary_pieces(const Vec& x, PieceArray& out) const override;
    Vec project(const Vec& x, int piece) const override;
    std::string family() const override { return "half_space"; }

private:
    Vec normal_;
    double offset_;
};

class CylinderDomain final : public Domain {
public:
    explicit CylinderDomain(ParabolicCylinder cylinder);
    int dimension() const override { return cylinder_.dimension(); }
    bool contains(double t, const Vec& x) const override { return cylinder_.contains(t, x); }
    double scale() const override { return cylinder_.radius; }
    std::optional<double> terminal_time() const override { return cylinder_.t_end(); }
    int boundary_pieces(const Vec& x, PieceArray& out) const override;
    Vec project(const Vec& x, int piece) const override;
    std::string family() const override { return "cylinder"; }
    const ParabolicCylinder& cylinder() const { return cylinder_; }

private:
    ParabolicCylinder cylinder_;
    Ball lateral_;
};

/// Elliptic domain registry used by the regularity probe and scenarios:
/// "ball", "punctured_ball", "half_ball" (cap over +e1 of the given ball).
DomainPtr make_elliptic_domain(const std::string& family, const Vec& center, double radius);

}  // namespace qdlab
