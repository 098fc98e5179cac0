#include "qvnn/qtensor.hpp"

#include <sstream>

#include "qvnn/error.hpp"

namespace qvnn {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return shape.empty() ? 0 : n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t m = 0; m < shape.size(); ++m) {
        if (m) os << " x ";
        os << shape[m];
    }
    os << "]";
    return os.str();
}

QTensor::QTensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    const std::size_t n = shape_numel(shape);
    r.assign(n, 0.0);
    i.assign(n, 0.0);
    j.assign(n, 0.0);
    k.assign(n, 0.0);
}

double* QTensor::plane(int c) {
    switch (c) {
        case 0: return r.data();
        case 1: return i.data();
        case 2: return j.data();
        default: return k.data();
    }
}

const double* QTensor::plane(int c) const {
    switch (c) {
        case 0: return r.data();
        case 1: return i.data();
        case 2: return j.data();
        default: return k.data();
    }
}

void QTensor::zero() {
    std::fill(r.begin(), r.end(), 0.0);
    std::fill(i.begin(), i.end(), 0.0);
    std::fill(j.begin(), j.end(), 0.0);
    std::fill(k.begin(), k.end(), 0.0);
}

QTensor qmatvec(const QTensor& W, const QTensor& h) {
    if (W.rank() != 2)
        throw ShapeError("qmatvec: W must be 2-D, got " + shape_str(W.shape));
    if (h.rank() != 1 || W.shape[1] != h.shape[0])
        throw ShapeError("qmatvec: shape mismatch W " + shape_str(W.shape) + " vs h " + shape_str(h.shape));
    const std::size_t m = W.shape[0], n = W.shape[1];
    QTensor out({m});
    for (std::size_t p = 0; p < m; ++p) {
        Quaternion acc;
        for (std::size_t q = 0; q < n; ++q) acc = acc + hamilton_mul(W.at(p * n + q), h.at(q));
        out.set(p, acc);
    }
    return out;
}

RealMatrix real_expand(const QTensor& W) {
    if (W.rank() != 2)
        throw ShapeError("real_expand: input must be 2-D, got " + shape_str(W.shape));
    const std::size_t m = W.shape[0], n = W.shape[1];
    RealMatrix E(4 * m, 4 * n);
    for (std::size_t p = 0; p < m; ++p) {
        for (std::size_t q = 0; q < n; ++q) {
            const std::size_t idx = p * n + q;
            const double a = W.r[idx], b = W.i[idx], c = W.j[idx], d = W.k[idx];
            double* e0 = E.row(4 * p + 0) + 4 * q;
            double* e1 = E.row(4 * p + 1) + 4 * q;
            double* e2 = E.row(4 * p + 2) + 4 * q;
            double* e3 = E.row(4 * p + 3) + 4 * q;
            e0[0] = a;  e0[1] = -b; e0[2] = -c; e0[3] = -d;
            e1[0] = b;  e1[1] = a;  e1[2] = -d; e1[3] = c;
            e2[0] = c;  e2[1] = d;  e2[2] = a;  e2[3] = -b;
            e3[0] = d;  e3[1] = -c; e3[2] = b;  e3[3] = a;
        }
    }
    return E;
}

std::vector<double> interleave(const QTensor& v) {
    std::vector<double> out(4 * v.numel());
    for (std::size_t n = 0; n < v.numel(); ++n) {
        out[4 * n + 0] = v.r[n];
        out[4 * n + 1] = v.i[n];
        out[4 * n + 2] = v.j[n];
        out[4 * n + 3] = v.k[n];
    }
    return out;
}

QTensor deinterleave(const std::vector<double>& flat, std::vector<std::size_t> shape) {
    QTensor out(std::move(shape));
    if (flat.size() != 4 * out.numel())
        throw ShapeError("deinterleave: flat size " + std::to_string(flat.size()) + " does not match shape " +
                         shape_str(out.shape));
    for (std::size_t n = 0; n < out.numel(); ++n) {
        out.r[n] = flat[4 * n + 0];
        out.i[n] = flat[4 * n + 1];
        out.j[n] = flat[4 * n + 2];
        out.k[n] = flat[4 * n + 3];
    }
    return out;
}

}  // namespace qvnn
