#include "qvnn/layers.hpp"

#include <algorithm>
#include <cmath>

#include "qvnn/error.hpp"
#include "qvnn/gemm.hpp"

namespace qvnn {

namespace {

// Gradient of a scalar loss with respect to one quaternion weight, read off the
// gradient of its 4x4 real expansion block. Each weight component appears at four
// fixed positions in the block with fixed signs; summing those entries of dA with
// the matching signs gives the component gradient.
Quaternion block_weight_grad(const RealMatrix& dA, std::size_t p, std::size_t q) {
    const double* d0 = dA.row(4 * p + 0) + 4 * q;
    const double* d1 = dA.row(4 * p + 1) + 4 * q;
    const double* d2 = dA.row(4 * p + 2) + 4 * q;
    const double* d3 = dA.row(4 * p + 3) + 4 * q;
    return {
        d0[0] + d1[1] + d2[2] + d3[3],
        -d0[1] + d1[0] - d2[3] + d3[2],
        -d0[2] + d1[3] + d2[0] - d3[1],
        -d0[3] - d1[2] + d2[1] + d3[0],
    };
}

// real_expand of a flat quaternion buffer viewed as an m x n matrix, without
// materializing the reshaped tensor.
RealMatrix expand_flat(const QTensor& W, std::size_t m, std::size_t n) {
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

void init_uniform_quats(QTensor& t, std::size_t fan_in, RngStream& rng) {
    const double bound = std::sqrt(3.0 / (4.0 * static_cast<double>(fan_in)));
    for (std::size_t n = 0; n < t.numel(); ++n)
        t.set(n, {rng.uniform(-bound, bound), rng.uniform(-bound, bound), rng.uniform(-bound, bound),
                  rng.uniform(-bound, bound)});
}

}  // namespace

std::size_t ParamSet::component_count() const {
    std::size_t n = 0;
    for (const auto& v : quat) n += 4 * v.value->numel();
    for (const auto& v : real) n += v.value->size();
    return n;
}

std::size_t ParamSet::penalized_quat_count() const {
    std::size_t n = 0;
    for (const auto& v : quat)
        if (v.penalized) n += v.value->numel();
    return n;
}

void Layer::consume_tape() {
    if (!tape_live_) throw StateError(name_ + ": backward called without a recorded forward pass");
    tape_live_ = false;
}

// ---- dense -------------------------------------------------------------------------

QDenseLayer::QDenseLayer(std::size_t out_features, std::size_t in_features)
    : out_(out_features), in_(in_features) {
    if (out_ == 0 || in_ == 0) throw ConfigError("dense: feature counts must be positive");
    W = QTensor({out_, in_});
    b = QTensor({out_});
    gW = QTensor({out_, in_});
    gb = QTensor({out_});
}

void QDenseLayer::init_params(RngStream& rng) {
    init_uniform_quats(W, in_, rng);
    b.zero();
}

void QDenseLayer::collect_params(ParamSet& out) {
    out.quat.push_back({name_ + ".W", &W, &gW, true});
    out.quat.push_back({name_ + ".b", &b, &gb, false});
}

void QDenseLayer::zero_grad() {
    gW.zero();
    gb.zero();
}

QTensor QDenseLayer::forward(const QTensor& x, Pass pass, RngStream&) {
    std::size_t batch = 0;
    if (x.rank() == 2 && x.shape[1] == in_) {
        batch = x.shape[0];
    } else if (x.rank() == 4 && x.shape[1] * x.shape[2] * x.shape[3] == in_) {
        batch = x.shape[0];
    } else {
        throw ShapeError(name_ + ": input " + shape_str(x.shape) + " does not provide " + std::to_string(in_) +
                         " features");
    }

    // Columns are batch elements; rows are the interleaved real image of the features.
    std::vector<double> X(4 * in_ * batch);
    for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t q = 0; q < in_; ++q) {
            const std::size_t idx = bi * in_ + q;
            X[(4 * q + 0) * batch + bi] = x.r[idx];
            X[(4 * q + 1) * batch + bi] = x.i[idx];
            X[(4 * q + 2) * batch + bi] = x.j[idx];
            X[(4 * q + 3) * batch + bi] = x.k[idx];
        }

    const RealMatrix A = expand_flat(W, out_, in_);
    std::vector<double> Y(4 * out_ * batch, 0.0);
    gemm(false, false, 4 * out_, batch, 4 * in_, 1.0, A.data.data(), 4 * in_, X.data(), batch, 0.0, Y.data(), batch);

    QTensor out({batch, out_});
    for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t p = 0; p < out_; ++p) {
            const std::size_t idx = bi * out_ + p;
            out.r[idx] = Y[(4 * p + 0) * batch + bi] + b.r[p];
            out.i[idx] = Y[(4 * p + 1) * batch + bi] + b.i[p];
            out.j[idx] = Y[(4 * p + 2) * batch + bi] + b.j[p];
            out.k[idx] = Y[(4 * p + 3) * batch + bi] + b.k[p];
        }

    if (pass == Pass::Train) {
        cached_input_ = std::move(X);
        cached_in_shape_ = x.shape;
        cached_batch_ = batch;
        mark_tape();
    }
    return out;
}

QTensor QDenseLayer::backward(const QTensor& grad_out) {
    consume_tape();
    const std::size_t batch = cached_batch_;
    if (grad_out.rank() != 2 || grad_out.shape[0] != batch || grad_out.shape[1] != out_)
        throw ShapeError(name_ + ": upstream gradient " + shape_str(grad_out.shape) + " does not match output [" +
                         std::to_string(batch) + " x " + std::to_string(out_) + "]");

    std::vector<double> dY(4 * out_ * batch);
    for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t p = 0; p < out_; ++p) {
            const std::size_t idx = bi * out_ + p;
            dY[(4 * p + 0) * batch + bi] = grad_out.r[idx];
            dY[(4 * p + 1) * batch + bi] = grad_out.i[idx];
            dY[(4 * p + 2) * batch + bi] = grad_out.j[idx];
            dY[(4 * p + 3) * batch + bi] = grad_out.k[idx];
            gb.add(p, grad_out.at(idx));
        }

    // dA = dY X^T accumulates the weight gradient in expanded form.
    RealMatrix dA(4 * out_, 4 * in_);
    gemm(false, true, 4 * out_, 4 * in_, batch, 1.0, dY.data(), batch, cached_input_.data(), batch, 0.0,
         dA.data.data(), 4 * in_);
    for (std::size_t p = 0; p < out_; ++p)
        for (std::size_t q = 0; q < in_; ++q) gW.add(p * in_ + q, block_weight_grad(dA, p, q));

    // dX = A^T dY propagates to the input.
    const RealMatrix A = expand_flat(W, out_, in_);
    std::vector<double> dX(4 * in_ * batch, 0.0);
    gemm(true, false, 4 * in_, batch, 4 * out_, 1.0, A.data.data(), 4 * in_, dY.data(), batch, 0.0, dX.data(), batch);

    QTensor grad_in(cached_in_shape_);
    for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t q = 0; q < in_; ++q) {
            const std::size_t idx = bi * in_ + q;
            grad_in.r[idx] = dX[(4 * q + 0) * batch + bi];
            grad_in.i[idx] = dX[(4 * q + 1) * batch + bi];
            grad_in.j[idx] = dX[(4 * q + 2) * batch + bi];
            grad_in.k[idx] = dX[(4 * q + 3) * batch + bi];
        }
    cached_input_.clear();
    return grad_in;
}

// ---- conv --------------------------------------------------------------------------

QConv2dLayer::QConv2dLayer(std::size_t out_channels, std::size_t in_channels, std::size_t kh, std::size_t kw,
                           std::size_t stride, std::size_t padding)
    : out_c_(out_channels), in_c_(in_channels), kh_(kh), kw_(kw), stride_(stride), pad_(padding) {
    if (out_c_ == 0 || in_c_ == 0 || kh_ == 0 || kw_ == 0) throw ConfigError("conv: extents must be positive");
    if (stride_ == 0) throw ConfigError("conv: stride must be positive");
    kernels = QTensor({out_c_, in_c_, kh_, kw_});
    b = QTensor({out_c_});
    gK = QTensor({out_c_, in_c_, kh_, kw_});
    gb = QTensor({out_c_});
}

void QConv2dLayer::init_params(RngStream& rng) {
    init_uniform_quats(kernels, in_c_ * kh_ * kw_, rng);
    b.zero();
}

void QConv2dLayer::collect_params(ParamSet& out) {
    out.quat.push_back({name_ + ".K", &kernels, &gK, true});
    out.quat.push_back({name_ + ".b", &b, &gb, false});
}

void QConv2dLayer::zero_grad() {
    gK.zero();
    gb.zero();
}

QTensor QConv2dLayer::forward(const QTensor& x, Pass pass, RngStream&) {
    if (x.rank() != 4 || x.shape[1] != in_c_)
        throw ShapeError(name_ + ": expected input [B x " + std::to_string(in_c_) + " x H x W], got " +
                         shape_str(x.shape));
    const std::size_t batch = x.shape[0], H = x.shape[2], W_ = x.shape[3];
    if (H + 2 * pad_ < kh_ || W_ + 2 * pad_ < kw_)
        throw ShapeError(name_ + ": kernel " + std::to_string(kh_) + "x" + std::to_string(kw_) +
                         " exceeds padded input " + shape_str(x.shape));
    const std::size_t oh = (H + 2 * pad_ - kh_) / stride_ + 1;
    const std::size_t ow = (W_ + 2 * pad_ - kw_) / stride_ + 1;
    const std::size_t patch = in_c_ * kh_ * kw_;
    const std::size_t ncols = batch * oh * ow;

    // im2col with zero quaternions for padded positions.
    RealMatrix cols(4 * patch, ncols);
    for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const std::size_t col = (bi * oh + oy) * ow + ox;
                for (std::size_t c = 0; c < in_c_; ++c)
                    for (std::size_t dy = 0; dy < kh_; ++dy) {
                        const std::ptrdiff_t y =
                            static_cast<std::ptrdiff_t>(oy * stride_ + dy) - static_cast<std::ptrdiff_t>(pad_);
                        for (std::size_t dx = 0; dx < kw_; ++dx) {
                            const std::ptrdiff_t xx =
                                static_cast<std::ptrdiff_t>(ox * stride_ + dx) - static_cast<std::ptrdiff_t>(pad_);
                            const std::size_t rbase = 4 * ((c * kh_ + dy) * kw_ + dx);
                            if (y < 0 || y >= static_cast<std::ptrdiff_t>(H) || xx < 0 ||
                                xx >= static_cast<std::ptrdiff_t>(W_))
                                continue;
                            const std::size_t idx = ((bi * in_c_ + c) * H + static_cast<std::size_t>(y)) * W_ +
                                                    static_cast<std::size_t>(xx);
                            cols(rbase + 0, col) = x.r[idx];
                            cols(rbase + 1, col) = x.i[idx];
                            cols(rbase + 2, col) = x.j[idx];
                            cols(rbase + 3, col) = x.k[idx];
                        }
                    }
            }

    const RealMatrix A = expand_flat(kernels, out_c_, patch);
    RealMatrix Y(4 * out_c_, ncols);
    gemm(false, false, 4 * out_c_, ncols, 4 * patch, 1.0, A.data.data(), 4 * patch, cols.data.data(), ncols, 0.0,
         Y.data.data(), ncols);

    QTensor out({batch, out_c_, oh, ow});
    for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t o = 0; o < out_c_; ++o)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    const std::size_t col = (bi * oh + oy) * ow + ox;
                    const std::size_t idx = ((bi * out_c_ + o) * oh + oy) * ow + ox;
                    out.r[idx] = Y(4 * o + 0, col) + b.r[o];
                    out.i[idx] = Y(4 * o + 1, col) + b.i[o];
                    out.j[idx] = Y(4 * o + 2, col) + b.j[o];
                    out.k[idx] = Y(4 * o + 3, col) + b.k[o];
                }

    if (pass == Pass::Train) {
        cached_cols_ = std::move(cols);
        cached_in_shape_ = x.shape;
        cached_oh_ = oh;
        cached_ow_ = ow;
        cached_batch_ = batch;
        mark_tape();
    }
    return out;
}

QTensor QConv2dLayer::backward(const QTensor& grad_out) {
    consume_tape();
    const std::size_t batch = cached_batch_, oh = cached_oh_, ow = cached_ow_;
    if (grad_out.rank() != 4 || grad_out.shape[0] != batch || grad_out.shape[1] != out_c_ ||
        grad_out.shape[2] != oh || grad_out.shape[3] != ow)
        throw ShapeError(name_ + ": upstream gradient " + shape_str(grad_out.shape) + " does not match output");
    const std::size_t patch = in_c_ * kh_ * kw_;
    const std::size_t ncols = batch * oh * ow;
    const std::size_t H = cached_in_shape_[2], W_ = cached_in_shape_[3];

    RealMatrix dY(4 * out_c_, ncols);
    for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t o = 0; o < out_c_; ++o)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    const std::size_t col = (bi * oh + oy) * ow + ox;
                    const std::size_t idx = ((bi * out_c_ + o) * oh + oy) * ow + ox;
                    dY(4 * o + 0, col) = grad_out.r[idx];
                    dY(4 * o + 1, col) = grad_out.i[idx];
                    dY(4 * o + 2, col) = grad_out.j[idx];
                    dY(4 * o + 3, col) = grad_out.k[idx];
                    gb.add(o, grad_out.at(idx));
                }

    RealMatrix dA(4 * out_c_, 4 * patch);
    gemm(false, true, 4 * out_c_, 4 * patch, ncols, 1.0, dY.data.data(), ncols, cached_cols_.data.data(), ncols, 0.0,
         dA.data.data(), 4 * patch);
    for (std::size_t o = 0; o < out_c_; ++o)
        for (std::size_t q = 0; q < patch; ++q) gK.add(o * patch + q, block_weight_grad(dA, o, q));

    const RealMatrix A = expand_flat(kernels, out_c_, patch);
    RealMatrix dcol(4 * patch, ncols);
    gemm(true, false, 4 * patch, ncols, 4 * out_c_, 1.0, A.data.data(), 4 * patch, dY.data.data(), ncols, 0.0,
         dcol.data.data(), ncols);

    // col2im: padded positions contributed zeros and receive nothing back.
    QTensor grad_in(cached_in_shape_);
    for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const std::size_t col = (bi * oh + oy) * ow + ox;
                for (std::size_t c = 0; c < in_c_; ++c)
                    for (std::size_t dy = 0; dy < kh_; ++dy) {
                        const std::ptrdiff_t y =
                            static_cast<std::ptrdiff_t>(oy * stride_ + dy) - static_cast<std::ptrdiff_t>(pad_);
                        if (y < 0 || y >= static_cast<std::ptrdiff_t>(H)) continue;
                        for (std::size_t dx = 0; dx < kw_; ++dx) {
                            const std::ptrdiff_t xx =
                                static_cast<std::ptrdiff_t>(ox * stride_ + dx) - static_cast<std::ptrdiff_t>(pad_);
                            if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(W_)) continue;
                            const std::size_t rbase = 4 * ((c * kh_ + dy) * kw_ + dx);
                            const std::size_t idx = ((bi * in_c_ + c) * H + static_cast<std::size_t>(y)) * W_ +
                                                    static_cast<std::size_t>(xx);
                            grad_in.r[idx] += dcol(rbase + 0, col);
                            grad_in.i[idx] += dcol(rbase + 1, col);
                            grad_in.j[idx] += dcol(rbase + 2, col);
                            grad_in.k[idx] += dcol(rbase + 3, col);
                        }
                    }
            }
    cached_cols_ = RealMatrix();
    return grad_in;
}

// ---- activation ----------------------------------------------------------------------

QTensor SplitActivationLayer::forward(const QTensor& x, Pass pass, RngStream&) {
    QTensor out(x.shape);
    for (int c = 0; c < 4; ++c) {
        const double* in = x.plane(c);
        double* o = out.plane(c);
        for (std::size_t n = 0; n < x.numel(); ++n) o[n] = in[n] > 0.0 ? in[n] : 0.0;
    }
    if (pass == Pass::Train) {
        cached_input_ = x;
        mark_tape();
    }
    return out;
}

QTensor SplitActivationLayer::backward(const QTensor& grad_out) {
    consume_tape();
    if (!grad_out.same_shape(cached_input_))
        throw ShapeError(name_ + ": upstream gradient " + shape_str(grad_out.shape) + " does not match input " +
                         shape_str(cached_input_.shape));
    QTensor grad_in(grad_out.shape);
    for (int c = 0; c < 4; ++c) {
        const double* in = cached_input_.plane(c);
        const double* g = grad_out.plane(c);
        double* o = grad_in.plane(c);
        // Subgradient 0 at the kink.
        for (std::size_t n = 0; n < grad_out.numel(); ++n) o[n] = in[n] > 0.0 ? g[n] : 0.0;
    }
    cached_input_ = QTensor();
    return grad_in;
}

// ---- pooling -------------------------------------------------------------------------

QTensor QMaxPoolLayer::forward(const QTensor& x, Pass pass, RngStream&) {
    if (x.rank() != 4) throw ShapeError(name_ + ": expected 4-D input, got " + shape_str(x.shape));
    const std::size_t batch = x.shape[0], C = x.shape[1], H = x.shape[2], W_ = x.shape[3];
    if (H < window_ || W_ < window_)
        throw ShapeError(name_ + ": input " + shape_str(x.shape) + " smaller than pooling window");
    const std::size_t oh = (H - window_) / stride_ + 1;
    const std::size_t ow = (W_ - window_) / stride_ + 1;

    QTensor out({batch, C, oh, ow});
    std::vector<std::size_t> argmax(out.numel());
    for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    std::size_t best_idx = 0;
                    double best = -1.0;
                    for (std::size_t dy = 0; dy < window_; ++dy)
                        for (std::size_t dx = 0; dx < window_; ++dx) {
                            const std::size_t idx =
                                ((bi * C + c) * H + oy * stride_ + dy) * W_ + ox * stride_ + dx;
                            const double nsq = qnorm_sq(x.at(idx));
                            if (nsq > best) {
                                best = nsq;
                                best_idx = idx;
                            }
                        }
                    const std::size_t oidx = ((bi * C + c) * oh + oy) * ow + ox;
                    out.set(oidx, x.at(best_idx));
                    argmax[oidx] = best_idx;
                }

    if (pass == Pass::Train) {
        cached_argmax_ = std::move(argmax);
        cached_in_shape_ = x.shape;
        mark_tape();
    }
    return out;
}

QTensor QMaxPoolLayer::backward(const QTensor& grad_out) {
    consume_tape();
    if (grad_out.numel() != cached_argmax_.size())
        throw ShapeError(name_ + ": upstream gradient " + shape_str(grad_out.shape) + " does not match pooled output");
    QTensor grad_in(cached_in_shape_);
    for (std::size_t n = 0; n < grad_out.numel(); ++n) grad_in.add(cached_argmax_[n], grad_out.at(n));
    cached_argmax_.clear();
    return grad_in;
}

// ---- batch norm ----------------------------------------------------------------------

QBatchNormLayer::QBatchNormLayer(std::size_t channels, double epsilon, double momentum)
    : channels_(channels), eps_(epsilon), momentum_(momentum) {
    if (channels_ == 0) throw ConfigError("batchnorm: channel count must be positive");
    if (eps_ <= 0.0) throw ConfigError("batchnorm: epsilon must be positive");
    if (momentum_ < 0.0 || momentum_ >= 1.0) throw ConfigError("batchnorm: momentum must lie in [0, 1)");
    gamma.assign(channels_, 1.0);
    beta = QTensor({channels_});
    running_mu = QTensor({channels_});
    running_var.assign(channels_, 1.0);
    ggamma.assign(channels_, 0.0);
    gbeta = QTensor({channels_});
}

void QBatchNormLayer::collect_params(ParamSet& out) {
    out.real.push_back({name_ + ".gamma", &gamma, &ggamma, true});
    out.quat.push_back({name_ + ".beta", &beta, &gbeta, false});
}

void QBatchNormLayer::zero_grad() {
    std::fill(ggamma.begin(), ggamma.end(), 0.0);
    gbeta.zero();
}

QTensor QBatchNormLayer::forward(const QTensor& x, Pass pass, RngStream&) {
    if (!((x.rank() == 2 || x.rank() == 4) && x.shape[1] == channels_))
        throw ShapeError(name_ + ": expected [B x " + std::to_string(channels_) + "] or [B x " +
                         std::to_string(channels_) + " x H x W], got " + shape_str(x.shape));
    const std::size_t spatial = x.rank() == 4 ? x.shape[2] * x.shape[3] : 1;
    const std::size_t M = x.shape[0] * spatial;
    const std::size_t per_batch = channels_ * spatial;

    QTensor out(x.shape);

    if (pass == Pass::Infer) {
        for (std::size_t n = 0; n < x.numel(); ++n) {
            const std::size_t c = (n % per_batch) / spatial;
            const double s = gamma[c] / std::sqrt(running_var[c] + eps_);
            out.set(n, (x.at(n) - running_mu.at(c)) * s + beta.at(c));
        }
        return out;
    }

    if (M < 2) throw ConfigError(name_ + ": training pass needs at least 2 pooled elements per channel");

    QTensor mu({channels_});
    std::vector<double> var(channels_, 0.0);
    for (std::size_t n = 0; n < x.numel(); ++n) mu.add((n % per_batch) / spatial, x.at(n));
    for (std::size_t c = 0; c < channels_; ++c) mu.set(c, mu.at(c) * (1.0 / static_cast<double>(M)));
    for (std::size_t n = 0; n < x.numel(); ++n) {
        const std::size_t c = (n % per_batch) / spatial;
        var[c] += qnorm_sq(x.at(n) - mu.at(c));
    }
    for (std::size_t c = 0; c < channels_; ++c) var[c] /= static_cast<double>(M);

    std::vector<double> inv_std(channels_);
    for (std::size_t c = 0; c < channels_; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps_);

    QTensor xhat(x.shape);
    for (std::size_t n = 0; n < x.numel(); ++n) {
        const std::size_t c = (n % per_batch) / spatial;
        const Quaternion xh = (x.at(n) - mu.at(c)) * inv_std[c];
        xhat.set(n, xh);
        out.set(n, xh * gamma[c] + beta.at(c));
    }

    for (std::size_t c = 0; c < channels_; ++c) {
        running_mu.set(c, running_mu.at(c) * momentum_ + mu.at(c) * (1.0 - momentum_));
        running_var[c] = momentum_ * running_var[c] + (1.0 - momentum_) * var[c];
    }

    cached_xhat_ = std::move(xhat);
    cached_inv_std_ = std::move(inv_std);
    cached_m_ = M;
    mark_tape();
    return out;
}

QTensor QBatchNormLayer::backward(const QTensor& grad_out) {
    consume_tape();
    if (!grad_out.same_shape(cached_xhat_))
        throw ShapeError(name_ + ": upstream gradient " + shape_str(grad_out.shape) + " does not match input " +
                         shape_str(cached_xhat_.shape));
    const std::size_t spatial = grad_out.rank() == 4 ? grad_out.shape[2] * grad_out.shape[3] : 1;
    const std::size_t per_batch = channels_ * spatial;
    const double M = static_cast<double>(cached_m_);

    // Channel sums: G = sum g, dot = sum <g, xhat>.
    QTensor gsum({channels_});
    std::vector<double> dot(channels_, 0.0);
    for (std::size_t n = 0; n < grad_out.numel(); ++n) {
        const std::size_t c = (n % per_batch) / spatial;
        const Quaternion g = grad_out.at(n);
        const Quaternion xh = cached_xhat_.at(n);
        gsum.add(c, g);
        dot[c] += g.r * xh.r + g.i * xh.i + g.j * xh.j + g.k * xh.k;
    }

    for (std::size_t c = 0; c < channels_; ++c) {
        ggamma[c] += dot[c];
        gbeta.add(c, gsum.at(c));
    }

    // Differentiating through the batch statistics:
    //   dL/dx_n = gamma * s * (g_n - G/M - xhat_n * dot/M)
    QTensor grad_in(grad_out.shape);
    for (std::size_t n = 0; n < grad_out.numel(); ++n) {
        const std::size_t c = (n % per_batch) / spatial;
        const double scale = gamma[c] * cached_inv_std_[c];
        const Quaternion g = grad_out.at(n);
        const Quaternion xh = cached_xhat_.at(n);
        grad_in.set(n, (g - gsum.at(c) * (1.0 / M) - xh * (dot[c] / M)) * scale);
    }
    cached_xhat_ = QTensor();
    return grad_in;
}

// ---- dropout -------------------------------------------------------------------------

QDropoutLayer::QDropoutLayer(double p) { set_p(p); }

void QDropoutLayer::set_p(double p) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: rate must lie in [0, 1)");
    p_ = p;
}

QTensor QDropoutLayer::forward(const QTensor& x, Pass pass, RngStream& rng) {
    if (pass == Pass::Infer) return x;
    std::vector<std::uint8_t> mask(x.numel(), 1);
    if (p_ > 0.0)
        for (auto& m : mask) m = rng.uniform() >= p_ ? 1 : 0;
    const double scale = 1.0 / (1.0 - p_);
    QTensor out(x.shape);
    for (std::size_t n = 0; n < x.numel(); ++n)
        if (mask[n]) out.set(n, x.at(n) * scale);
    cached_mask_ = std::move(mask);
    mark_tape();
    return out;
}

QTensor QDropoutLayer::backward(const QTensor& grad_out) {
    consume_tape();
    if (grad_out.numel() != cached_mask_.size())
        throw ShapeError(name_ + ": upstream gradient " + shape_str(grad_out.shape) + " does not match input");
    const double scale = 1.0 / (1.0 - p_);
    QTensor grad_in(grad_out.shape);
    for (std::size_t n = 0; n < grad_out.numel(); ++n)
        if (cached_mask_[n]) grad_in.set(n, grad_out.at(n) * scale);
    cached_mask_.clear();
    return grad_in;
}

// ---- head ----------------------------------------------------------------------------

RealMatrix abs_head(const QTensor& h) {
    if (h.rank() != 2) throw ShapeError("abs_head: expected [B x classes], got " + shape_str(h.shape));
    RealMatrix scores(h.shape[0], h.shape[1]);
    for (std::size_t n = 0; n < h.numel(); ++n) scores.data[n] = qnorm(h.at(n));
    return scores;
}

RealMatrix softmax(const RealMatrix& scores) {
    RealMatrix probs(scores.rows, scores.cols);
    for (std::size_t r = 0; r < scores.rows; ++r) {
        const double* s = scores.row(r);
        double* p = probs.row(r);
        const double mx = *std::max_element(s, s + scores.cols);
        double sum = 0.0;
        for (std::size_t c = 0; c < scores.cols; ++c) {
            p[c] = std::exp(s[c] - mx);
            sum += p[c];
        }
        for (std::size_t c = 0; c < scores.cols; ++c) p[c] /= sum;
    }
    return probs;
}

double softmax_xent(const std::vector<double>& scores, std::size_t label) {
    if (label >= scores.size()) throw DataError("softmax_xent: label " + std::to_string(label) + " out of range");
    const double mx = *std::max_element(scores.begin(), scores.end());
    double sum = 0.0;
    for (double s : scores) sum += std::exp(s - mx);
    return std::log(sum) - (scores[label] - mx);
}

RealMatrix AbsSoftmaxHead::forward(const QTensor& h, Pass pass) {
    scores_ = abs_head(h);
    probs_ = softmax(scores_);
    if (pass == Pass::Train) {
        cached_input_ = h;
        tape_live_ = true;
    }
    return probs_;
}

double AbsSoftmaxHead::loss(const std::vector<int>& labels) const {
    if (scores_.rows == 0) throw StateError("head: loss requested before any forward pass");
    if (labels.size() != scores_.rows)
        throw DataError("head: got " + std::to_string(labels.size()) + " labels for " + std::to_string(scores_.rows) +
                        " rows");
    double total = 0.0;
    for (std::size_t r = 0; r < scores_.rows; ++r) {
        if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= scores_.cols)
            throw DataError("head: label " + std::to_string(labels[r]) + " out of range for " +
                            std::to_string(scores_.cols) + " classes");
        const double* s = scores_.row(r);
        const double mx = *std::max_element(s, s + scores_.cols);
        double sum = 0.0;
        for (std::size_t c = 0; c < scores_.cols; ++c) sum += std::exp(s[c] - mx);
        total += std::log(sum) - (s[labels[r]] - mx);
    }
    return total / static_cast<double>(scores_.rows);
}

QTensor AbsSoftmaxHead::backward_scores(const RealMatrix& dscores) {
    if (!tape_live_) throw StateError("head: backward called without a recorded forward pass");
    tape_live_ = false;
    QTensor dh(cached_input_.shape);
    for (std::size_t n = 0; n < cached_input_.numel(); ++n) {
        const double s = scores_.data[n];
        if (s == 0.0) continue;  // norm subgradient at the origin
        const double g = dscores.data[n] / s;
        dh.set(n, cached_input_.at(n) * g);
    }
    cached_input_ = QTensor();
    return dh;
}

QTensor AbsSoftmaxHead::backward(const RealMatrix& dprobs) {
    if (!tape_live_) throw StateError("head: backward called without a recorded forward pass");
    if (dprobs.rows != probs_.rows || dprobs.cols != probs_.cols)
        throw ShapeError("head: gradient extents do not match probabilities");
    RealMatrix ds(probs_.rows, probs_.cols);
    for (std::size_t r = 0; r < probs_.rows; ++r) {
        const double* p = probs_.row(r);
        const double* g = dprobs.row(r);
        double pg = 0.0;
        for (std::size_t c = 0; c < probs_.cols; ++c) pg += p[c] * g[c];
        double* d = ds.row(r);
        for (std::size_t c = 0; c < probs_.cols; ++c) d[c] = p[c] * (g[c] - pg);
    }
    return backward_scores(ds);
}

QTensor AbsSoftmaxHead::backward_xent(const std::vector<int>& labels) {
    if (!tape_live_) throw StateError("head: backward called without a recorded forward pass");
    if (labels.size() != probs_.rows)
        throw DataError("head: got " + std::to_string(labels.size()) + " labels for " + std::to_string(probs_.rows) +
                        " rows");
    RealMatrix ds(probs_.rows, probs_.cols);
    const double inv_b = 1.0 / static_cast<double>(probs_.rows);
    for (std::size_t r = 0; r < probs_.rows; ++r) {
        if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= probs_.cols)
            throw DataError("head: label " + std::to_string(labels[r]) + " out of range for " +
                            std::to_string(probs_.cols) + " classes");
        const double* p = probs_.row(r);
        double* d = ds.row(r);
        for (std::size_t c = 0; c < probs_.cols; ++c) d[c] = p[c] * inv_b;
        d[labels[r]] -= inv_b;
    }
    return backward_scores(ds);
}

}  // namespace qvnn
