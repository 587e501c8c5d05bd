#pragma once

#include <Eigen/Dense>

namespace qdlab {

/// Largest spatial dimension supported by the fixed-capacity vector types.
inline constexpr int kMaxDim = 6;

// Dynamic size with inline storage: no heap traffic inside the stepping loop.
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;

/// A point (t, x) of space-time.
struct SpaceTimePoint {
    double t = 0.0;
    Vec x;
};

inline Vec unit_vector(int dimension, int axis) {
    Vec e = Vec::Zero(dimension);
    e[axis] = 1.0;
    return e;
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }

}  // namespace qdlab
