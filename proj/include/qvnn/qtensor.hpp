#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "qvnn/quat.hpp"
#include "qvnn/real_matrix.hpp"

namespace qvnn {

std::size_t shape_numel(const std::vector<std::size_t>& shape);
std::string shape_str(const std::vector<std::size_t>& shape);

// Quaternion tensor stored as four parallel real planes (structure of arrays).
// All four planes share a common row-major shape.
struct QTensor {
    std::vector<std::size_t> shape;
    std::vector<double> r, i, j, k;

    QTensor() = default;
    explicit QTensor(std::vector<std::size_t> s);

    static QTensor zeros(std::vector<std::size_t> s) { return QTensor(std::move(s)); }

    std::size_t numel() const { return r.size(); }
    std::size_t rank() const { return shape.size(); }

    Quaternion at(std::size_t n) const { return {r[n], i[n], j[n], k[n]}; }

    void set(std::size_t n, const Quaternion& q) {
        r[n] = q.r;
        i[n] = q.i;
        j[n] = q.j;
        k[n] = q.k;
    }

    void add(std::size_t n, const Quaternion& q) {
        r[n] += q.r;
        i[n] += q.i;
        j[n] += q.j;
        k[n] += q.k;
    }

    double* plane(int c);
    const double* plane(int c) const;

    void zero();
    bool same_shape(const QTensor& o) const { return shape == o.shape; }
};

// Matrix-vector product under the Hamilton product: out[p] = sum_q W[p,q] (x) h[q].
// W must be 2-D [m x n], h 1-D [n].
QTensor qmatvec(const QTensor& W, const QTensor& h);

// Real block expansion of a 2-D quaternion matrix: each entry (a,b,c,d) becomes the
// 4x4 block [[a,-b,-c,-d],[b,a,-d,c],[c,d,a,-b],[d,-c,b,a]], so that multiplying the
// interleaved real image of a vector reproduces qmatvec exactly.
RealMatrix real_expand(const QTensor& W);

// Component-major real image of a quaternion vector: (q0.r, q0.i, q0.j, q0.k, q1.r, ...).
std::vector<double> interleave(const QTensor& v);

// Inverse of interleave for a given shape.
QTensor deinterleave(const std::vector<double>& flat, std::vector<std::size_t> shape);

}  // namespace qvnn
