#include "qdlab/coefficients.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "qdlab/errors.hpp"
#include "qdlab/rng.hpp"

namespace qdlab {

void EllipticityCertificate::validate() const {
    if (!(nu > 0.0) || !(nu <= 1.0) || !std::isfinite(nu))
        throw InputDomainError("ellipticity constant nu must lie in (0, 1], got " + std::to_string(nu));
    if (!(k_bound >= 0.0) || !std::isfinite(k_bound))
        throw InputDomainError("drift bound K must be finite and >= 0, got " + std::to_string(k_bound));
    if (dimension < 1 || dimension > kMaxDim)
        throw InputDomainError("dimension must lie in [1, " + std::to_string(kMaxDim) + "], got " +
                               std::to_string(dimension));
}

double FieldDescriptor::param(const std::string& key, double fallback) const {
    auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
}

CoefficientField::CoefficientField(EllipticityCertificate certificate, bool time_homogeneous,
                                   FieldDescriptor descriptor)
    : certificate_(certificate), time_homogeneous_(time_homogeneous), descriptor_(std::move(descriptor)) {
    certificate_.validate();
}

Coefficients eval_coeffs(const CoefficientField& field, double t, const Vec& x) {
    if (!std::isfinite(t) || !x.allFinite())
        throw InputDomainError("eval_coeffs: non-finite (t, x)");
    if (x.size() != field.dimension())
        throw InputDomainError("eval_coeffs: point dimension " + std::to_string(x.size()) +
                               " does not match field dimension " + std::to_string(field.dimension()));
    Coefficients c;
    field.evaluate(t, x, c.a, c.b);
    return c;
}

SampleBox SampleBox::cube(int dimension, double half_width, double t_min, double t_max) {
    SampleBox box;
    box.t_min = t_min;
    box.t_max = t_max;
    box.x_min = Vec::Constant(dimension, -half_width);
    box.x_max = Vec::Constant(dimension, half_width);
    return box;
}

ValidationReport validate_ellipticity(const CoefficientField& field, std::size_t n_samples,
                                      const SampleBox& box, std::uint64_t seed) {
    if (n_samples < 1) throw InputDomainError("validate_ellipticity: n_samples must be >= 1");
    const int d = field.dimension();
    if (box.x_min.size() != d || box.x_max.size() != d)
        throw InputDomainError("validate_ellipticity: box dimension mismatch");

    const auto& cert = field.certificate();
    // Eigenvalues of exactly-constructed matrices may be off by an ulp or two.
    const double rel = 1e-12;
    const double drift_cap = cert.k_bound * (1.0 - 1e-9);

    ValidationReport report;
    report.samples = n_samples;
    report.min_quotient = std::numeric_limits<double>::infinity();
    report.max_quotient = -std::numeric_limits<double>::infinity();
    double worst_margin = std::numeric_limits<double>::infinity();

    RandomStream stream(seed, 0, Lane::sampling);
    Mat a;
    Vec b;
    Vec x(d);
    Eigen::SelfAdjointEigenSolver<Mat> solver;
    for (std::size_t i = 0; i < n_samples; ++i) {
        const double t = box.t_min + (box.t_max - box.t_min) * stream.uniform();
        for (int k = 0; k < d; ++k) x[k] = box.x_min[k] + (box.x_max[k] - box.x_min[k]) * stream.uniform();
        field.evaluate(t, x, a, b);
        if (!a.allFinite() || !b.allFinite()) throw NumericDomainError("validate_ellipticity: non-finite coefficients");

        const double sym = (a - a.transpose()).cwiseAbs().maxCoeff();
        report.symmetry_residual = std::max(report.symmetry_residual, sym);
        solver.compute(0.5 * (a + a.transpose()), Eigen::EigenvaluesOnly);
        const double lo = solver.eigenvalues().minCoeff();
        const double hi = solver.eigenvalues().maxCoeff();
        report.min_quotient = std::min(report.min_quotient, lo);
        report.max_quotient = std::max(report.max_quotient, hi);
        const double drift = b.size() ? b.cwiseAbs().maxCoeff() : 0.0;
        report.max_abs_drift = std::max(report.max_abs_drift, drift);

        const double margin = std::min({lo - cert.nu, 1.0 / cert.nu - hi, drift_cap - drift});
        if (margin < worst_margin) {
            worst_margin = margin;
            report.worst_point = {t, x};
        }
    }

    if (report.min_quotient < cert.nu * (1.0 - rel))
        report.failures.push_back("min Rayleigh quotient " + std::to_string(report.min_quotient) + " < nu");
    if (report.max_quotient > (1.0 / cert.nu) * (1.0 + rel))
        report.failures.push_back("max Rayleigh quotient " + std::to_string(report.max_quotient) + " > 1/nu");
    if (report.max_abs_drift > drift_cap && report.max_abs_drift > 0.0)
        report.failures.push_back("drift component " + std::to_string(report.max_abs_drift) + " not < K");
    if (report.symmetry_residual != 0.0)
        report.failures.push_back("a is not exactly symmetric");
    report.passed = report.failures.empty();
    return report;
}

bool diffusion_sqrt_into(const Mat& a, Mat& sigma) {
    const Eigen::Index d = a.rows();
    bool diagonal = true;
    for (Eigen::Index i = 0; i < d && diagonal; ++i)
        for (Eigen::Index j = 0; j < d; ++j)
            if (i != j && a(i, j) != 0.0) {
                diagonal = false;
                break;
            }
    if (diagonal) {
        sigma.setZero(d, d);
        for (Eigen::Index i = 0; i < d; ++i) {
            if (!(a(i, i) > 0.0)) throw NumericDomainError("diffusion_sqrt: matrix is not positive definite");
            sigma(i, i) = std::sqrt(2.0 * a(i, i));
        }
        return true;
    }
    sigma = diffusion_sqrt(a);
    return false;
}

Mat diffusion_sqrt(const Mat& a) {
    if (a.rows() != a.cols() || a.rows() == 0) throw NumericDomainError("diffusion_sqrt: matrix must be square");
    if (!a.allFinite()) throw NumericDomainError("diffusion_sqrt: non-finite entries");
    const double scale = std::max(a.cwiseAbs().maxCoeff(), 1.0);
    if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw NumericDomainError("diffusion_sqrt: matrix is not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> solver(2.0 * a);
    const auto& lambda = solver.eigenvalues();
    if (!(lambda.minCoeff() > 0.0)) throw NumericDomainError("diffusion_sqrt: matrix is not positive definite");
    const Mat& v = solver.eigenvectors();
    Mat sigma = v * lambda.cwiseSqrt().asDiagonal() * v.transpose();
    return 0.5 * (sigma + sigma.transpose());
}

// ---------------------------------------------------------------------------

namespace {

FieldDescriptor constant_descriptor(const Mat& a, const Vec& b) {
    FieldDescriptor desc{"constant", {}};
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            desc.params["a" + std::to_string(i + 1) + std::to_string(j + 1)] = a(i, j);
    for (Eigen::Index i = 0; i < b.size(); ++i) desc.params["b" + std::to_string(i + 1)] = b[i];
    return desc;
}

}  // namespace

ConstantField::ConstantField(EllipticityCertificate certificate, Mat a, Vec b)
    : CoefficientField(certificate, true, constant_descriptor(a, b)), a_(std::move(a)), b_(std::move(b)) {
    if (a_.rows() != dimension() || a_.cols() != dimension() || b_.size() != dimension())
        throw InputDomainError("ConstantField: coefficient shapes do not match the dimension");
}

void ConstantField::evaluate(double, const Vec&, Mat& a, Vec& b) const {
    a = a_;
    b = b_;
}

CheckerboardField::CheckerboardField(EllipticityCertificate certificate, double cell_size)
    : CoefficientField(certificate, true, {"checkerboard", {{"cell_size", cell_size}}}), cell_(cell_size) {
    if (!(cell_size > 0.0) || !std::isfinite(cell_size))
        throw InputDomainError("checkerboard: cell_size must be > 0");
}

void CheckerboardField::evaluate(double, const Vec& x, Mat& a, Vec& b) const {
    const int d = dimension();
    long long parity = 0;
    for (int i = 0; i < d; ++i) parity += static_cast<long long>(std::floor(x[i] / cell_));
    const double nu = certificate().nu;
    a = Mat::Identity(d, d) * ((parity % 2 == 0) ? nu : 1.0 / nu);
    b = Vec::Zero(d);
}

RadialJumpField::RadialJumpField(EllipticityCertificate certificate, double radius, double drift_fraction)
    : CoefficientField(certificate, true,
                       {"radial_jump", {{"radius", radius}, {"drift_fraction", drift_fraction}}}),
      radius_(radius),
      drift_fraction_(drift_fraction) {
    if (!(radius > 0.0)) throw InputDomainError("radial_jump: radius must be > 0");
    if (!(drift_fraction >= 0.0 && drift_fraction < 1.0))
        throw InputDomainError("radial_jump: drift_fraction must lie in [0, 1)");
}

void RadialJumpField::evaluate(double, const Vec& x, Mat& a, Vec& b) const {
    const int d = dimension();
    const double nu = certificate().nu;
    const double norm = x.norm();
    a = Mat::Identity(d, d) * (norm < radius_ ? nu : 1.0 / nu);
    if (norm > 0.0)
        b = x * (drift_fraction_ * certificate().k_bound / norm);
    else
        b = Vec::Zero(d);
}

TimeOscillatingField::TimeOscillatingField(EllipticityCertificate certificate, double period,
                                           double drift_fraction)
    : CoefficientField(certificate, false,
                       {"time_oscillating", {{"period", period}, {"drift_fraction", drift_fraction}}}),
      period_(period),
      drift_fraction_(drift_fraction) {
    if (!(period > 0.0)) throw InputDomainError("time_oscillating: period must be > 0");
    if (!(drift_fraction >= 0.0 && drift_fraction < 1.0))
        throw InputDomainError("time_oscillating: drift_fraction must lie in [0, 1)");
}

void TimeOscillatingField::evaluate(double t, const Vec&, Mat& a, Vec& b) const {
    const int d = dimension();
    const double phase = 2.0 * std::numbers::pi * t / period_;
    const double nu = certificate().nu;
    // nu^{cos} sweeps [nu, 1/nu]; clamp guards pow rounding at the extremes
    const double lambda = std::clamp(std::pow(nu, std::cos(phase)), nu, 1.0 / nu);
    a = Mat::Identity(d, d) * lambda;
    b = Vec::Zero(d);
    b[0] = drift_fraction_ * certificate().k_bound * std::sin(phase);
}

RandomCellsField::RandomCellsField(EllipticityCertificate certificate, double cell_size, std::uint64_t seed)
    : CoefficientField(certificate, true,
                       {"random_cells", {{"cell_size", cell_size}, {"seed", static_cast<double>(seed)}}}),
      cell_(cell_size),
      seed_(seed) {
    if (!(cell_size > 0.0)) throw InputDomainError("random_cells: cell_size must be > 0");
}

void RandomCellsField::evaluate(double, const Vec& x, Mat& a, Vec& b) const {
    const int d = dimension();
    std::uint64_t cell_hash = seed_;
    for (int i = 0; i < d; ++i) {
        const auto index = static_cast<std::int64_t>(std::floor(x[i] / cell_));
        cell_hash = mix_seed(cell_hash, static_cast<std::uint64_t>(index) + 0x1234567ull * (i + 1));
    }
    RandomStream stream(seed_, cell_hash, Lane::auxiliary);
    Mat g(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) g(i, j) = stream.normal();
    const Mat q = Eigen::HouseholderQR<Mat>(g).householderQ();
    const double nu = certificate().nu;
    Vec lambda(d);
    for (int i = 0; i < d; ++i) lambda[i] = std::clamp(std::pow(nu, 2.0 * stream.uniform() - 1.0), nu, 1.0 / nu);
    Mat m = q * lambda.asDiagonal() * q.transpose();
    a = 0.5 * (m + m.transpose());
    b.resize(d);
    for (int i = 0; i < d; ++i) b[i] = 0.5 * certificate().k_bound * (2.0 * stream.uniform() - 1.0);
}

// ---------------------------------------------------------------------------

FieldRegistry::FieldRegistry() {
    factories_["constant"] = [](const EllipticityCertificate& c, const FieldDescriptor& desc) -> FieldPtr {
        const int d = c.dimension;
        Mat a = Mat::Identity(d, d) * desc.param("scale", 1.0);
        Vec b = Vec::Zero(d);
        for (int i = 0; i < d; ++i) {
            for (int j = 0; j < d; ++j)
                a(i, j) = desc.param("a" + std::to_string(i + 1) + std::to_string(j + 1), a(i, j));
            b[i] = desc.param("b" + std::to_string(i + 1), 0.0);
        }
        return std::make_shared<ConstantField>(c, a, b);
    };
    factories_["checkerboard"] = [](const EllipticityCertificate& c, const FieldDescriptor& desc) -> FieldPtr {
        return std::make_shared<CheckerboardField>(c, desc.param("cell_size", 0.5));
    };
    factories_["radial_jump"] = [](const EllipticityCertificate& c, const FieldDescriptor& desc) -> FieldPtr {
        return std::make_shared<RadialJumpField>(c, desc.param("radius", 0.5), desc.param("drift_fraction", 0.5));
    };
    factories_["time_oscillating"] = [](const EllipticityCertificate& c, const FieldDescriptor& desc) -> FieldPtr {
        return std::make_shared<TimeOscillatingField>(c, desc.param("period", 0.5),
                                                      desc.param("drift_fraction", 0.5));
    };
    factories_["random_cells"] = [](const EllipticityCertificate& c, const FieldDescriptor& desc) -> FieldPtr {
        return std::make_shared<RandomCellsField>(c, desc.param("cell_size", 0.25),
                                                  static_cast<std::uint64_t>(desc.param("seed", 1.0)));
    };
}

FieldRegistry& FieldRegistry::global() {
    static FieldRegistry registry;
    return registry;
}

void FieldRegistry::register_family(const std::string& name, FieldFactory factory) {
    std::lock_guard lock(mutex_);
    factories_[name] = std::move(factory);
}

bool FieldRegistry::contains(const std::string& name) const {
    std::lock_guard lock(mutex_);
    return factories_.count(name) > 0;
}

std::vector<std::string> FieldRegistry::families() const {
    std::lock_guard lock(mutex_);
    std::vector<std::string> names;
    for (const auto& [name, _] : factories_) names.push_back(name);
    return names;
}

FieldPtr FieldRegistry::make(const EllipticityCertificate& certificate, const FieldDescriptor& descriptor) const {
    certificate.validate();
    FieldFactory factory;
    {
        std::lock_guard lock(mutex_);
        auto it = factories_.find(descriptor.family);
        if (it == factories_.end()) throw RegistryError("unknown field family '" + descriptor.family + "'");
        factory = it->second;
    }
    return factory(certificate, descriptor);
}

std::vector<FieldPtr> builtin_fields(int dimension, double nu, double k_bound) {
    const EllipticityCertificate cert{nu, k_bound, dimension};
    return {
        std::make_shared<ConstantField>(cert, Mat::Identity(dimension, dimension), Vec::Zero(dimension)),
        std::make_shared<CheckerboardField>(cert, 0.5),
        std::make_shared<RadialJumpField>(cert, 0.5, 0.5),
        std::make_shared<TimeOscillatingField>(cert, 0.5, 0.5),
    };
}

}  // namespace qdlab
