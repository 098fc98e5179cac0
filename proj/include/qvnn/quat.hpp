#pragma once

#include <cmath>

namespace qvnn {

// Quaternion scalar q = r + i*qi + j*qj + k*qk with i^2 = j^2 = k^2 = ijk = -1.
struct Quaternion {
    double r = 0.0, i = 0.0, j = 0.0, k = 0.0;

    constexpr Quaternion() = default;
    constexpr Quaternion(double r_, double i_, double j_, double k_) : r(r_), i(i_), j(j_), k(k_) {}

    constexpr Quaternion operator+(const Quaternion& o) const { return {r + o.r, i + o.i, j + o.j, k + o.k}; }
    constexpr Quaternion operator-(const Quaternion& o) const { return {r - o.r, i - o.i, j - o.j, k - o.k}; }
    constexpr Quaternion operator-() const { return {-r, -i, -j, -k}; }
    constexpr Quaternion operator*(double s) const { return {r * s, i * s, j * s, k * s}; }
    constexpr bool operator==(const Quaternion&) const = default;
};

// Hamilton product. Signs follow the axiom table (ij = k, jk = i, ki = j);
// non-commutative: hamilton_mul(x, y) != hamilton_mul(y, x) in general.
constexpr Quaternion hamilton_mul(const Quaternion& x, const Quaternion& y) {
    return {
        x.r * y.r - x.i * y.i - x.j * y.j - x.k * y.k,
        x.r * y.i + x.i * y.r + x.j * y.k - x.k * y.j,
        x.r * y.j - x.i * y.k + x.j * y.r + x.k * y.i,
        x.r * y.k + x.i * y.j - x.j * y.i + x.k * y.r,
    };
}

constexpr Quaternion conjugate(const Quaternion& x) { return {x.r, -x.i, -x.j, -x.k}; }

constexpr double qnorm_sq(const Quaternion& x) { return x.r * x.r + x.i * x.i + x.j * x.j + x.k * x.k; }

inline double qnorm(const Quaternion& x) { return std::sqrt(qnorm_sq(x)); }

}  // namespace qvnn
