#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "qdlab/linalg.hpp"

namespace qdlab {

/// Constants of the operator class: ellipticity nu, drift bound K, dimension d.
struct EllipticityCertificate {
    double nu = 1.0;
    double k_bound = 0.0;
    int dimension = 1;

    /// Throws InputDomainError unless 0 < nu <= 1, K >= 0, 1 <= d <= kMaxDim.
    void validate() const;
};

/// Serializable description of a field: family tag plus named numeric parameters.
struct FieldDescriptor {
    std::string family;
    std::map<std::string, double> params;

    double param(const std::string& key, double fallback) const;
    bool operator==(const FieldDescriptor&) const = default;
};

/// Coefficients (a, b) of L = a^{ij} D_ij + b^i D_i.
///
/// Implementations must be pure: evaluation never mutates the object, so one
/// instance is shared by every worker thread of an ensemble.
class CoefficientField {
public:
    CoefficientField(EllipticityCertificate certificate, bool time_homogeneous,
                     FieldDescriptor descriptor);
    virtual ~CoefficientField() = default;

    const EllipticityCertificate& certificate() const noexcept { return certificate_; }
    int dimension() const noexcept { return certificate_.dimension; }
    bool time_homogeneous() const noexcept { return time_homogeneous_; }
    const FieldDescriptor& descriptor() const noexcept { return descriptor_; }

    /// Hot-path evaluation without input checks. `a` and `b` are resized here.
    virtual void evaluate(double t, const Vec& x, Mat& a, Vec& b) const = 0;

private:
    EllipticityCertificate certificate_;
    bool time_homogeneous_;
    FieldDescriptor descriptor_;
};

using FieldPtr = std::shared_ptr<const CoefficientField>;

struct Coefficients {
    Mat a;
    Vec b;
};

/// Checked evaluation; throws InputDomainError on non-finite (t, x) or wrong dimension.
Coefficients eval_coeffs(const CoefficientField& field, double t, const Vec& x);

/// Axis-aligned sampling region in space-time for validation sweeps.
struct SampleBox {
    double t_min = 0.0;
    double t_max = 1.0;
    Vec x_min;
    Vec x_max;

    static SampleBox cube(int dimension, double half_width, double t_min = 0.0, double t_max = 1.0);
};

struct ValidationReport {
    std::size_t samples = 0;
    double min_quotient = 0.0;      ///< smallest eigenvalue of a seen
    double max_quotient = 0.0;      ///< largest eigenvalue of a seen
    double max_abs_drift = 0.0;     ///< max_i |b^i|
    double symmetry_residual = 0.0; ///< max |a^{ij} - a^{ji}|
    SpaceTimePoint worst_point;
    bool passed = false;
    std::vector<std::string> failures;
};

/// Samples (t, x) uniformly in `box` and checks the two-sided ellipticity bound,
/// the drift bound and symmetry against the field's certificate. The Rayleigh
/// quotient extremes are taken over all directions (eigenvalues) at each point.
/// Violations are reported, not thrown.
ValidationReport validate_ellipticity(const CoefficientField& field, std::size_t n_samples,
                                      const SampleBox& box, std::uint64_t seed);

/// Symmetric positive square root of 2a. Throws NumericDomainError when `a`
/// is not symmetric or not positive definite.
Mat diffusion_sqrt(const Mat& a);

/// Allocation-free variant used by the stepping loop; diagonal input takes a
/// closed form, signalled by the return value.
bool diffusion_sqrt_into(const Mat& a, Mat& sigma);

// ---------------------------------------------------------------------------
// Built-in families

/// a and b independent of (t, x).
class ConstantField final : public CoefficientField {
public:
    ConstantField(EllipticityCertificate certificate, Mat a, Vec b);
    void evaluate(double t, const Vec& x, Mat& a, Vec& b) const override;

private:
    Mat a_;
    Vec b_;
};

/// a = nu I on cells with even sum of floor(x_i / cell), nu^{-1} I on odd cells; b = 0.
class CheckerboardField final : public CoefficientField {
public:
    CheckerboardField(EllipticityCertificate certificate, double cell_size);
    void evaluate(double t, const Vec& x, Mat& a, Vec& b) const override;
    double cell_size() const noexcept { return cell_; }

private:
    double cell_;
};

/// a = nu I for |x| < radius, nu^{-1} I outside; outward radial drift of
/// Euclidean size drift_fraction * K (zero at the origin).
class RadialJumpField final : public CoefficientField {
public:
    RadialJumpField(EllipticityCertificate certificate, double radius, double drift_fraction = 0.5);
    void evaluate(double t, const Vec& x, Mat& a, Vec& b) const override;

private:
    double radius_;
    double drift_fraction_;
};

/// a(t) = nu^{cos(2 pi t / period)} I, b(t) = drift_fraction K sin(2 pi t / period) e_1.
class TimeOscillatingField final : public CoefficientField {
public:
    TimeOscillatingField(EllipticityCertificate certificate, double period, double drift_fraction = 0.5);
    void evaluate(double t, const Vec& x, Mat& a, Vec& b) const override;

private:
    double period_;
    double drift_fraction_;
};

/// Piecewise-constant field on a cubic lattice; every cell draws a random
/// rotation, eigenvalues in [nu, nu^{-1}] and a drift with |b^i| <= K/2.
class RandomCellsField final : public CoefficientField {
public:
    RandomCellsField(EllipticityCertificate certificate, double cell_size, std::uint64_t seed);
    void evaluate(double t, const Vec& x, Mat& a, Vec& b) const override;

private:
    double cell_;
    std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Registry

using FieldFactory = std::function<FieldPtr(const EllipticityCertificate&, const FieldDescriptor&)>;

/// Name -> factory map. Built-in families are registered on first use;
/// custom families may be added at runtime.
class FieldRegistry {
public:
    static FieldRegistry& global();

    void register_family(const std::string& name, FieldFactory factory);
    bool contains(const std::string& name) const;
    std::vector<std::string> families() const;

    /// Throws RegistryError for unknown families.
    FieldPtr make(const EllipticityCertificate& certificate, const FieldDescriptor& descriptor) const;

private:
    FieldRegistry();
    mutable std::mutex mutex_;
    std::map<std::string, FieldFactory> factories_;
};

inline FieldPtr make_field(const EllipticityCertificate& certificate, const FieldDescriptor& descriptor) {
    return FieldRegistry::global().make(certificate, descriptor);
}

/// The four built-in families at their default parameters (constant identity,
/// checkerboard, radial_jump, time_oscillating) for the given constants.
std::vector<FieldPtr> builtin_fields(int dimension, double nu, double k_bound);

}  // namespace qdlab
