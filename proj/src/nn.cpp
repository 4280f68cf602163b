#include "nearmiss/nn.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace nearmiss::nn {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

namespace {
int g_threads = 1;
}

void set_compute_threads(int n) {
    g_threads = std::max(1, n);
#ifdef _OPENMP
    omp_set_num_threads(g_threads);
#endif
    Eigen::setNbThreads(g_threads);
}

int compute_threads() { return g_threads; }

// ---------------------------------------------------------------------------
// ParamStore
// ---------------------------------------------------------------------------

Param* ParamStore::add(const std::string& name, std::vector<int> shape) {
    if (find(name)) throw std::invalid_argument("param registered twice: " + name);
    auto p = std::make_unique<Param>();
    p->name = name;
    p->value = Tensor(shape);
    p->grad = Tensor(shape);
    params_.push_back(std::move(p));
    return params_.back().get();
}

Param* ParamStore::add_buffer(const std::string& name, std::vector<int> shape) {
    auto p = std::make_unique<Param>();
    p->name = name;
    p->value = Tensor(shape);
    buffers_.push_back(std::move(p));
    return buffers_.back().get();
}

Param* ParamStore::find(const std::string& name) const {
    for (const auto& p : params_)
        if (p->name == name) return p.get();
    for (const auto& p : buffers_)
        if (p->name == name) return p.get();
    return nullptr;
}

std::int64_t ParamStore::param_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p->value.numel();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& p : params_) p->grad.fill(0.0);
}

// ---------------------------------------------------------------------------
// Conv3d
// ---------------------------------------------------------------------------

namespace {

inline int conv_out(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

void check_5d(const Tensor& x, const char* where) {
    if (x.rank() != 5) throw std::invalid_argument(std::string(where) + ": expected rank-5 input");
}

}  // namespace

Conv3d::Conv3d(ParamStore& store, const std::string& name, int in_c_, int out_c_, Dims3 kernel,
               Dims3 stride, Dims3 pad, bool bias)
    : in_c(in_c_), out_c(out_c_), k(kernel), s(stride), p(pad) {
    w = store.add(name + "/w", {out_c, in_c, k.t, k.h, k.w});
    if (bias) b = store.add(name + "/b", {out_c});
}

Dims3 Conv3d::out_dims(Dims3 in) const {
    Dims3 o;
    o.t = conv_out(in.t, k.t, s.t, p.t);
    o.h = conv_out(in.h, k.h, s.h, p.h);
    o.w = conv_out(in.w, k.w, s.w, p.w);
    if (o.t <= 0 || o.h <= 0 || o.w <= 0)
        throw std::invalid_argument("conv: kernel larger than padded input");
    return o;
}

std::int64_t Conv3d::macs(Dims3 in) const {
    Dims3 o = out_dims(in);
    return std::int64_t(out_c) * o.t * o.h * o.w * in_c * k.t * k.h * k.w;
}

std::int64_t Conv3d::param_count() const {
    return w->value.numel() + (b ? b->value.numel() : 0);
}

void Conv3d::init_fan_out(Rng& rng) {
    // fan-out scaled normal, stable for from-scratch training
    double fan_out = double(out_c) * k.t * k.h * k.w;
    double stddev = std::sqrt(2.0 / fan_out);
    for (auto& v : w->value.data) v = rng.normal(0.0, stddev);
    if (b) b->value.fill(0.0);
}

void Conv3d::init_zero() {
    w->value.fill(0.0);
    if (b) b->value.fill(0.0);
}

namespace {

// col is (K, P) row-major with K = Cin*kt*kh*kw, P = To*Ho*Wo.
void im2col(const double* x, int C, int T, int H, int W, Dims3 k, Dims3 s, Dims3 p, Dims3 o,
            double* col) {
    const std::int64_t P = std::int64_t(o.t) * o.h * o.w;
    std::int64_t row = 0;
    for (int ci = 0; ci < C; ++ci) {
        const double* xc = x + std::int64_t(ci) * T * H * W;
        for (int dt = 0; dt < k.t; ++dt)
            for (int dh = 0; dh < k.h; ++dh)
                for (int dw = 0; dw < k.w; ++dw, ++row) {
                    double* dst = col + row * P;
                    for (int ot = 0; ot < o.t; ++ot) {
                        int ti = ot * s.t - p.t + dt;
                        if (ti < 0 || ti >= T) {
                            std::fill(dst, dst + std::int64_t(o.h) * o.w, 0.0);
                            dst += std::int64_t(o.h) * o.w;
                            continue;
                        }
                        const double* xt = xc + std::int64_t(ti) * H * W;
                        for (int oh = 0; oh < o.h; ++oh) {
                            int hi = oh * s.h - p.h + dh;
                            if (hi < 0 || hi >= H) {
                                std::fill(dst, dst + o.w, 0.0);
                                dst += o.w;
                                continue;
                            }
                            const double* xr = xt + std::int64_t(hi) * W;
                            int wi0 = -p.w + dw;
                            for (int ow = 0; ow < o.w; ++ow) {
                                int wi = wi0 + ow * s.w;
                                *dst++ = (wi >= 0 && wi < W) ? xr[wi] : 0.0;
                            }
                        }
                    }
                }
    }
}

void col2im_add(const double* col, int C, int T, int H, int W, Dims3 k, Dims3 s, Dims3 p, Dims3 o,
                double* x) {
    const std::int64_t P = std::int64_t(o.t) * o.h * o.w;
    std::int64_t row = 0;
    for (int ci = 0; ci < C; ++ci) {
        double* xc = x + std::int64_t(ci) * T * H * W;
        for (int dt = 0; dt < k.t; ++dt)
            for (int dh = 0; dh < k.h; ++dh)
                for (int dw = 0; dw < k.w; ++dw, ++row) {
                    const double* src = col + row * P;
                    for (int ot = 0; ot < o.t; ++ot) {
                        int ti = ot * s.t - p.t + dt;
                        if (ti < 0 || ti >= T) {
                            src += std::int64_t(o.h) * o.w;
                            continue;
                        }
                        double* xt = xc + std::int64_t(ti) * H * W;
                        for (int oh = 0; oh < o.h; ++oh) {
                            int hi = oh * s.h - p.h + dh;
                            if (hi < 0 || hi >= H) {
                                src += o.w;
                                continue;
                            }
                            double* xr = xt + std::int64_t(hi) * W;
                            int wi0 = -p.w + dw;
                            for (int ow = 0; ow < o.w; ++ow) {
                                int wi = wi0 + ow * s.w;
                                if (wi >= 0 && wi < W) xr[wi] += src[ow];
                            }
                            src += o.w;
                        }
                    }
                }
    }
}

}  // namespace

Tensor Conv3d::forward(const Tensor& x) {
    check_5d(x, "conv");
    if (x.size(1) != in_c)
        throw std::invalid_argument("conv " + w->name + ": channel mismatch, got " +
                                    std::to_string(x.size(1)) + " expected " + std::to_string(in_c));
    in_cache_ = x;
    const int N = x.size(0), T = x.size(2), H = x.size(3), W = x.size(4);
    Dims3 o = out_dims({T, H, W});
    const std::int64_t K = std::int64_t(in_c) * k.t * k.h * k.w;
    const std::int64_t P = std::int64_t(o.t) * o.h * o.w;
    Tensor out({N, out_c, o.t, o.h, o.w});
    CMapMat wm(w->value.ptr(), out_c, K);
    const bool par = N > 1 && K * P >= 8192;

#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (par)
#endif
    for (int n = 0; n < N; ++n) {
        std::vector<double> col(std::size_t(K * P));
        im2col(x.ptr() + std::int64_t(n) * in_c * T * H * W, in_c, T, H, W, k, s, p, o, col.data());
        CMapMat cm(col.data(), K, P);
        MapMat ym(out.ptr() + std::int64_t(n) * out_c * P, out_c, P);
        ym.noalias() = wm * cm;
        if (b) {
            for (int co = 0; co < out_c; ++co) ym.row(co).array() += b->value[co];
        }
    }
    return out;
}

Tensor Conv3d::backward(const Tensor& gy) {
    const Tensor& x = in_cache_;
    const int N = x.size(0), T = x.size(2), H = x.size(3), W = x.size(4);
    Dims3 o = out_dims({T, H, W});
    const std::int64_t K = std::int64_t(in_c) * k.t * k.h * k.w;
    const std::int64_t P = std::int64_t(o.t) * o.h * o.w;
    Tensor gx(x.shape);
    CMapMat wm(w->value.ptr(), out_c, K);

    // per-sample weight-grad slabs summed in index order afterwards, so the
    // result does not depend on the thread count
    std::vector<double> dw_slabs(std::size_t(N) * out_c * K, 0.0);
    std::vector<double> db_slabs(b ? std::size_t(N) * out_c : 0, 0.0);
    const bool par = N > 1 && K * P >= 8192;

#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (par)
#endif
    for (int n = 0; n < N; ++n) {
        std::vector<double> col(std::size_t(K * P));
        im2col(x.ptr() + std::int64_t(n) * in_c * T * H * W, in_c, T, H, W, k, s, p, o, col.data());
        CMapMat cm(col.data(), K, P);
        CMapMat gym(gy.ptr() + std::int64_t(n) * out_c * P, out_c, P);
        MapMat dwm(dw_slabs.data() + std::int64_t(n) * out_c * K, out_c, K);
        dwm.noalias() = gym * cm.transpose();
        if (b) {
            for (int co = 0; co < out_c; ++co)
                db_slabs[std::size_t(n) * out_c + co] = gym.row(co).sum();
        }
        std::vector<double> dcol(std::size_t(K * P));
        MapMat dcm(dcol.data(), K, P);
        dcm.noalias() = wm.transpose() * gym;
        col2im_add(dcol.data(), in_c, T, H, W, k, s, p, o,
                   gx.ptr() + std::int64_t(n) * in_c * T * H * W);
    }

    MapMat dw_acc(w->grad.ptr(), out_c, K);
    for (int n = 0; n < N; ++n)
        dw_acc += CMapMat(dw_slabs.data() + std::int64_t(n) * out_c * K, out_c, K);
    if (b) {
        for (int n = 0; n < N; ++n)
            for (int co = 0; co < out_c; ++co) b->grad[co] += db_slabs[std::size_t(n) * out_c + co];
    }
    return gx;
}

// ---------------------------------------------------------------------------
// BatchNorm3d
// ---------------------------------------------------------------------------

BatchNorm3d::BatchNorm3d(ParamStore& store, const std::string& name, int channels_, bool zero_gamma)
    : channels(channels_) {
    gamma = store.add(name + "/gamma", {channels});
    beta = store.add(name + "/beta", {channels});
    running_mean = store.add_buffer(name + "/running_mean", {channels});
    running_var = store.add_buffer(name + "/running_var", {channels});
    gamma->value.fill(zero_gamma ? 0.0 : 1.0);
    running_var->value.fill(1.0);
}

Tensor BatchNorm3d::forward(const Tensor& x, bool train) {
    check_5d(x, "batchnorm");
    if (x.size(1) != channels) throw std::invalid_argument("batchnorm: channel mismatch");
    const int N = x.size(0), C = channels;
    const std::int64_t S = std::int64_t(x.size(2)) * x.size(3) * x.size(4);
    const std::int64_t M = std::int64_t(N) * S;
    Tensor out(x.shape);
    train_cache_ = train;
    if (train) {
        xhat_cache_ = Tensor(x.shape);
        invstd_cache_.assign(std::size_t(C), 0.0);
    }
    const bool par = M * C >= 65536;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (par)
#endif
    for (int c = 0; c < C; ++c) {
        double mean, var;
        if (train) {
            double sum = 0.0, sq = 0.0;
            for (int n = 0; n < N; ++n) {
                const double* xc = x.ptr() + (std::int64_t(n) * C + c) * S;
                for (std::int64_t i = 0; i < S; ++i) {
                    sum += xc[i];
                    sq += xc[i] * xc[i];
                }
            }
            mean = sum / double(M);
            var = std::max(0.0, sq / double(M) - mean * mean);
            double unbiased = (M > 1) ? var * double(M) / double(M - 1) : var;
            running_mean->value[c] = (1 - momentum) * running_mean->value[c] + momentum * mean;
            running_var->value[c] = (1 - momentum) * running_var->value[c] + momentum * unbiased;
        } else {
            mean = running_mean->value[c];
            var = running_var->value[c];
        }
        double invstd = 1.0 / std::sqrt(var + eps);
        double g = gamma->value[c], bt = beta->value[c];
        if (train) invstd_cache_[std::size_t(c)] = invstd;
        for (int n = 0; n < N; ++n) {
            const double* xc = x.ptr() + (std::int64_t(n) * C + c) * S;
            double* oc = out.ptr() + (std::int64_t(n) * C + c) * S;
            double* hc = train ? xhat_cache_.ptr() + (std::int64_t(n) * C + c) * S : nullptr;
            for (std::int64_t i = 0; i < S; ++i) {
                double xhat = (xc[i] - mean) * invstd;
                if (hc) hc[i] = xhat;
                oc[i] = g * xhat + bt;
            }
        }
    }
    return out;
}

Tensor BatchNorm3d::backward(const Tensor& gy) {
    const int N = gy.size(0), C = channels;
    const std::int64_t S = std::int64_t(gy.size(2)) * gy.size(3) * gy.size(4);
    const std::int64_t M = std::int64_t(N) * S;
    Tensor gx(gy.shape);
    const bool par = M * C >= 65536;
    if (!train_cache_) {
        // eval-mode backward (used by grad-cam): xhat is affine in x
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (par)
#endif
        for (int c = 0; c < C; ++c) {
            double invstd = 1.0 / std::sqrt(running_var->value[c] + eps);
            double scale = gamma->value[c] * invstd;
            for (int n = 0; n < N; ++n) {
                const double* gc = gy.ptr() + (std::int64_t(n) * C + c) * S;
                double* xc = gx.ptr() + (std::int64_t(n) * C + c) * S;
                for (std::int64_t i = 0; i < S; ++i) xc[i] = gc[i] * scale;
            }
        }
        return gx;
    }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (par)
#endif
    for (int c = 0; c < C; ++c) {
        double dgamma = 0.0, dbeta = 0.0;
        for (int n = 0; n < N; ++n) {
            const double* gc = gy.ptr() + (std::int64_t(n) * C + c) * S;
            const double* hc = xhat_cache_.ptr() + (std::int64_t(n) * C + c) * S;
            for (std::int64_t i = 0; i < S; ++i) {
                dgamma += gc[i] * hc[i];
                dbeta += gc[i];
            }
        }
        gamma->grad[c] += dgamma;
        beta->grad[c] += dbeta;
        double scale = gamma->value[c] * invstd_cache_[std::size_t(c)] / double(M);
        for (int n = 0; n < N; ++n) {
            const double* gc = gy.ptr() + (std::int64_t(n) * C + c) * S;
            const double* hc = xhat_cache_.ptr() + (std::int64_t(n) * C + c) * S;
            double* xc = gx.ptr() + (std::int64_t(n) * C + c) * S;
            for (std::int64_t i = 0; i < S; ++i)
                xc[i] = scale * (double(M) * gc[i] - dbeta - hc[i] * dgamma);
        }
    }
    return gx;
}

// ---------------------------------------------------------------------------
// ReLU / MaxPool3d / GlobalAvgPool
// ---------------------------------------------------------------------------

Tensor ReLU::forward(const Tensor& x) {
    Tensor out(x.shape);
    mask_.assign(x.data.size(), 0);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        if (x.data[i] > 0) {
            out.data[i] = x.data[i];
            mask_[i] = 1;
        }
    }
    return out;
}

Tensor ReLU::backward(const Tensor& gy) const {
    Tensor gx(gy.shape);
    for (std::size_t i = 0; i < gy.data.size(); ++i) gx.data[i] = mask_[i] ? gy.data[i] : 0.0;
    return gx;
}

Dims3 MaxPool3d::out_dims(Dims3 in) const {
    return {conv_out(in.t, k.t, s.t, p.t), conv_out(in.h, k.h, s.h, p.h),
            conv_out(in.w, k.w, s.w, p.w)};
}

Tensor MaxPool3d::forward(const Tensor& x) {
    check_5d(x, "maxpool");
    const int N = x.size(0), C = x.size(1), T = x.size(2), H = x.size(3), W = x.size(4);
    Dims3 o = out_dims({T, H, W});
    in_shape_ = x.shape;
    Tensor out({N, C, o.t, o.h, o.w});
    argmax_.assign(out.data.size(), 0);
    const std::int64_t NC = std::int64_t(N) * C;
    const bool par = out.numel() >= 16384;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (par)
#endif
    for (std::int64_t nc = 0; nc < NC; ++nc) {
        const double* xc = x.ptr() + nc * T * H * W;
        double* oc = out.ptr() + nc * std::int64_t(o.t) * o.h * o.w;
        std::int64_t* ac = argmax_.data() + nc * std::int64_t(o.t) * o.h * o.w;
        std::int64_t idx = 0;
        for (int ot = 0; ot < o.t; ++ot)
            for (int oh = 0; oh < o.h; ++oh)
                for (int ow = 0; ow < o.w; ++ow, ++idx) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::int64_t besti = -1;
                    for (int dt = 0; dt < k.t; ++dt) {
                        int ti = ot * s.t - p.t + dt;
                        if (ti < 0 || ti >= T) continue;
                        for (int dh = 0; dh < k.h; ++dh) {
                            int hi = oh * s.h - p.h + dh;
                            if (hi < 0 || hi >= H) continue;
                            for (int dw = 0; dw < k.w; ++dw) {
                                int wi = ow * s.w - p.w + dw;
                                if (wi < 0 || wi >= W) continue;
                                std::int64_t xi = (std::int64_t(ti) * H + hi) * W + wi;
                                if (xc[xi] > best) {
                                    best = xc[xi];
                                    besti = xi;
                                }
                            }
                        }
                    }
                    oc[idx] = best;
                    ac[idx] = besti;
                }
    }
    return out;
}

Tensor MaxPool3d::backward(const Tensor& gy) const {
    Tensor gx(in_shape_);
    const std::int64_t per = std::int64_t(in_shape_[2]) * in_shape_[3] * in_shape_[4];
    const std::int64_t NC = std::int64_t(in_shape_[0]) * in_shape_[1];
    const std::int64_t po = gy.numel() / NC;
    for (std::int64_t nc = 0; nc < NC; ++nc) {
        const double* gc = gy.ptr() + nc * po;
        const std::int64_t* ac = argmax_.data() + nc * po;
        double* xc = gx.ptr() + nc * per;
        for (std::int64_t i = 0; i < po; ++i)
            if (ac[i] >= 0) xc[ac[i]] += gc[i];
    }
    return gx;
}

Tensor GlobalAvgPool::forward(const Tensor& x) {
    check_5d(x, "gap");
    in_shape_ = x.shape;
    const int N = x.size(0), C = x.size(1);
    const std::int64_t S = std::int64_t(x.size(2)) * x.size(3) * x.size(4);
    Tensor out({N, C});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* xc = x.ptr() + (std::int64_t(n) * C + c) * S;
            double sum = 0.0;
            for (std::int64_t i = 0; i < S; ++i) sum += xc[i];
            out[std::int64_t(n) * C + c] = sum / double(S);
        }
    return out;
}

Tensor GlobalAvgPool::backward(const Tensor& gy) const {
    Tensor gx(in_shape_);
    const int N = in_shape_[0], C = in_shape_[1];
    const std::int64_t S = std::int64_t(in_shape_[2]) * in_shape_[3] * in_shape_[4];
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            double g = gy[std::int64_t(n) * C + c] / double(S);
            double* xc = gx.ptr() + (std::int64_t(n) * C + c) * S;
            for (std::int64_t i = 0; i < S; ++i) xc[i] = g;
        }
    return gx;
}

// ---------------------------------------------------------------------------
// Linear / Dropout
// ---------------------------------------------------------------------------

Linear::Linear(ParamStore& store, const std::string& name, int in_f_, int out_f_)
    : in_f(in_f_), out_f(out_f_) {
    w = store.add(name + "/w", {out_f, in_f});
    b = store.add(name + "/b", {out_f});
}

void Linear::init_fan_out(Rng& rng) {
    double stddev = std::sqrt(2.0 / double(out_f));
    for (auto& v : w->value.data) v = rng.normal(0.0, stddev);
    b->value.fill(0.0);
}

Tensor Linear::forward(const Tensor& x) {
    if (x.rank() != 2 || x.size(1) != in_f) throw std::invalid_argument("linear: bad input shape");
    in_cache_ = x;
    const int N = x.size(0);
    Tensor out({N, out_f});
    CMapMat xm(x.ptr(), N, in_f);
    CMapMat wm(w->value.ptr(), out_f, in_f);
    MapMat ym(out.ptr(), N, out_f);
    ym.noalias() = xm * wm.transpose();
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < out_f; ++o) out[std::int64_t(n) * out_f + o] += b->value[o];
    return out;
}

Tensor Linear::backward(const Tensor& gy) {
    const int N = gy.size(0);
    CMapMat gym(gy.ptr(), N, out_f);
    CMapMat xm(in_cache_.ptr(), N, in_f);
    CMapMat wm(w->value.ptr(), out_f, in_f);
    MapMat dwm(w->grad.ptr(), out_f, in_f);
    dwm.noalias() += gym.transpose() * xm;
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < out_f; ++o) b->grad[o] += gy[std::int64_t(n) * out_f + o];
    Tensor gx({N, in_f});
    MapMat gxm(gx.ptr(), N, in_f);
    gxm.noalias() = gym * wm;
    return gx;
}

Tensor Dropout::forward(const Tensor& x, bool train, Rng* rng) {
    if (!train || rate <= 0.0) {
        identity_ = true;
        return x;
    }
    if (!rng) throw std::invalid_argument("dropout: train mode needs an rng");
    identity_ = false;
    mask_.assign(x.data.size(), 0.0);
    double keep = 1.0 - rate;
    Tensor out(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        if (rng->uniform() < keep) {
            mask_[i] = 1.0 / keep;
            out.data[i] = x.data[i] * mask_[i];
        }
    }
    return out;
}

Tensor Dropout::backward(const Tensor& gy) const {
    if (identity_) return gy;
    Tensor gx(gy.shape);
    for (std::size_t i = 0; i < gy.data.size(); ++i) gx.data[i] = gy.data[i] * mask_[i];
    return gx;
}

// ---------------------------------------------------------------------------
// NonLocalBlock
// ---------------------------------------------------------------------------

NonLocalBlock::NonLocalBlock(ParamStore& store, const std::string& name, int channels_)
    : channels(channels_), inner(std::max(1, channels_ / 2)) {
    w_theta = store.add(name + "/theta", {inner, channels});
    w_phi = store.add(name + "/phi", {inner, channels});
    w_g = store.add(name + "/g", {inner, channels});
    w_z = store.add(name + "/z", {channels, inner});
}

void NonLocalBlock::init(Rng& rng) {
    double stddev = std::sqrt(2.0 / double(inner));
    for (auto* p : {w_theta, w_phi, w_g})
        for (auto& v : p->value.data) v = rng.normal(0.0, stddev);
    w_z->value.fill(0.0);  // block starts as the identity
}

std::int64_t NonLocalBlock::macs(Dims3 in) const {
    std::int64_t P = std::int64_t(in.t) * in.h * in.w;
    return 3 * std::int64_t(inner) * channels * P  // theta/phi/g projections
           + 2 * P * P * inner                     // similarity + aggregation
           + std::int64_t(channels) * inner * P;   // output projection
}

Tensor NonLocalBlock::forward(const Tensor& x) {
    check_5d(x, "nonlocal");
    if (x.size(1) != channels) throw std::invalid_argument("nonlocal: channel mismatch");
    in_cache_ = x;
    const int N = x.size(0);
    const std::int64_t P = std::int64_t(x.size(2)) * x.size(3) * x.size(4);
    theta_ = Tensor({N, inner, int(P)});
    phi_ = Tensor({N, inner, int(P)});
    g_ = Tensor({N, inner, int(P)});
    attn_ = Tensor({N, int(P), int(P)});
    y_ = Tensor({N, inner, int(P)});
    Tensor out(x.shape);
    CMapMat wt(w_theta->value.ptr(), inner, channels);
    CMapMat wp(w_phi->value.ptr(), inner, channels);
    CMapMat wg(w_g->value.ptr(), inner, channels);
    CMapMat wz(w_z->value.ptr(), channels, inner);
    const bool par = N > 1 && P * P * inner >= 8192;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (par)
#endif
    for (int n = 0; n < N; ++n) {
        CMapMat X(x.ptr() + std::int64_t(n) * channels * P, channels, P);
        MapMat Th(theta_.ptr() + std::int64_t(n) * inner * P, inner, P);
        MapMat Ph(phi_.ptr() + std::int64_t(n) * inner * P, inner, P);
        MapMat G(g_.ptr() + std::int64_t(n) * inner * P, inner, P);
        MapMat A(attn_.ptr() + std::int64_t(n) * P * P, P, P);
        MapMat Y(y_.ptr() + std::int64_t(n) * inner * P, inner, P);
        Th.noalias() = wt * X;
        Ph.noalias() = wp * X;
        G.noalias() = wg * X;
        A.noalias() = Th.transpose() * Ph;
        for (std::int64_t i = 0; i < P; ++i) {
            double mx = A.row(i).maxCoeff();
            double sum = 0.0;
            for (std::int64_t j = 0; j < P; ++j) {
                double e = std::exp(A(i, j) - mx);
                A(i, j) = e;
                sum += e;
            }
            A.row(i) /= sum;
        }
        Y.noalias() = G * A.transpose();
        MapMat O(out.ptr() + std::int64_t(n) * channels * P, channels, P);
        O.noalias() = X + wz * Y;
    }
    return out;
}

Tensor NonLocalBlock::backward(const Tensor& gy) {
    const Tensor& x = in_cache_;
    const int N = x.size(0);
    const std::int64_t P = std::int64_t(x.size(2)) * x.size(3) * x.size(4);
    Tensor gx(x.shape);
    CMapMat wt(w_theta->value.ptr(), inner, channels);
    CMapMat wp(w_phi->value.ptr(), inner, channels);
    CMapMat wg(w_g->value.ptr(), inner, channels);
    CMapMat wz(w_z->value.ptr(), channels, inner);

    std::vector<double> dwt(std::size_t(N) * inner * channels, 0.0);
    std::vector<double> dwp(std::size_t(N) * inner * channels, 0.0);
    std::vector<double> dwg(std::size_t(N) * inner * channels, 0.0);
    std::vector<double> dwz(std::size_t(N) * channels * inner, 0.0);
    const bool par = N > 1 && P * P * inner >= 8192;

#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (par)
#endif
    for (int n = 0; n < N; ++n) {
        CMapMat X(x.ptr() + std::int64_t(n) * channels * P, channels, P);
        CMapMat Th(theta_.ptr() + std::int64_t(n) * inner * P, inner, P);
        CMapMat Ph(phi_.ptr() + std::int64_t(n) * inner * P, inner, P);
        CMapMat G(g_.ptr() + std::int64_t(n) * inner * P, inner, P);
        CMapMat A(attn_.ptr() + std::int64_t(n) * P * P, P, P);
        CMapMat Y(y_.ptr() + std::int64_t(n) * inner * P, inner, P);
        CMapMat GY(gy.ptr() + std::int64_t(n) * channels * P, channels, P);

        MapMat dWt(dwt.data() + std::int64_t(n) * inner * channels, inner, channels);
        MapMat dWp(dwp.data() + std::int64_t(n) * inner * channels, inner, channels);
        MapMat dWg(dwg.data() + std::int64_t(n) * inner * channels, inner, channels);
        MapMat dWz(dwz.data() + std::int64_t(n) * channels * inner, channels, inner);

        RowMat gZ = GY;  // grad of wz * Y term
        dWz.noalias() = gZ * Y.transpose();
        RowMat gY = wz.transpose() * gZ;          // (inner, P)
        RowMat gG = gY * A;                       // y_i = sum_j A(i,j) g_j
        RowMat gA = gY.transpose() * G;           // (P, P)
        // softmax backward per row
        RowMat gS(P, P);
        for (std::int64_t i = 0; i < P; ++i) {
            double dot = 0.0;
            for (std::int64_t j = 0; j < P; ++j) dot += gA(i, j) * A(i, j);
            for (std::int64_t j = 0; j < P; ++j) gS(i, j) = A(i, j) * (gA(i, j) - dot);
        }
        RowMat gTh = Ph * gS.transpose();  // S = Th^T Ph
        RowMat gPh = Th * gS;
        dWt.noalias() = gTh * X.transpose();
        dWp.noalias() = gPh * X.transpose();
        dWg.noalias() = gG * X.transpose();
        MapMat gXm(gx.ptr() + std::int64_t(n) * channels * P, channels, P);
        gXm.noalias() = GY;  // residual branch
        gXm.noalias() += wt.transpose() * gTh;
        gXm.noalias() += wp.transpose() * gPh;
        gXm.noalias() += wg.transpose() * gG;
    }

    auto reduce = [&](Param* p, const std::vector<double>& slabs) {
        std::int64_t sz = p->value.numel();
        for (int n = 0; n < N; ++n)
            for (std::int64_t i = 0; i < sz; ++i) p->grad[i] += slabs[std::size_t(n) * sz + i];
    };
    reduce(w_theta, dwt);
    reduce(w_phi, dwp);
    reduce(w_g, dwg);
    reduce(w_z, dwz);
    return gx;
}

// ---------------------------------------------------------------------------
// Loss / channel ops
// ---------------------------------------------------------------------------

CrossEntropyOut softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) throw std::invalid_argument("cross_entropy: expected (N, K) logits");
    const int N = logits.size(0), K = logits.size(1);
    if (int(labels.size()) != N) throw std::invalid_argument("cross_entropy: label count mismatch");
    CrossEntropyOut out;
    out.grad = Tensor({N, K});
    out.probs = Tensor({N, K});
    double total = 0.0;
    for (int n = 0; n < N; ++n) {
        const double* z = logits.ptr() + std::int64_t(n) * K;
        int y = labels[std::size_t(n)];
        if (y < 0 || y >= K) throw std::invalid_argument("cross_entropy: label out of range");
        double mx = *std::max_element(z, z + K);
        double sum = 0.0;
        for (int k = 0; k < K; ++k) sum += std::exp(z[k] - mx);
        double lse = mx + std::log(sum);
        total += lse - z[y];
        for (int k = 0; k < K; ++k) {
            double pk = std::exp(z[k] - lse);
            out.probs[std::int64_t(n) * K + k] = pk;
            out.grad[std::int64_t(n) * K + k] = (pk - (k == y ? 1.0 : 0.0)) / double(N);
        }
    }
    out.loss = total / double(N);
    return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    check_5d(a, "concat");
    check_5d(b, "concat");
    for (int i : {0, 2, 3, 4})
        if (a.size(i) != b.size(i))
            throw std::invalid_argument("concat: non-channel dims differ, " + a.shape_str() +
                                        " vs " + b.shape_str());
    const int N = a.size(0), Ca = a.size(1), Cb = b.size(1);
    const std::int64_t S = std::int64_t(a.size(2)) * a.size(3) * a.size(4);
    Tensor out({N, Ca + Cb, a.size(2), a.size(3), a.size(4)});
    for (int n = 0; n < N; ++n) {
        std::copy_n(a.ptr() + std::int64_t(n) * Ca * S, Ca * S,
                    out.ptr() + std::int64_t(n) * (Ca + Cb) * S);
        std::copy_n(b.ptr() + std::int64_t(n) * Cb * S, Cb * S,
                    out.ptr() + std::int64_t(n) * (Ca + Cb) * S + Ca * S);
    }
    return out;
}

void split_channels(const Tensor& g, int c_a, Tensor& ga, Tensor& gb) {
    const int N = g.size(0), C = g.size(1);
    const int c_b = C - c_a;
    const std::int64_t S = std::int64_t(g.size(2)) * g.size(3) * g.size(4);
    ga = Tensor({N, c_a, g.size(2), g.size(3), g.size(4)});
    gb = Tensor({N, c_b, g.size(2), g.size(3), g.size(4)});
    for (int n = 0; n < N; ++n) {
        std::copy_n(g.ptr() + std::int64_t(n) * C * S, c_a * S, ga.ptr() + std::int64_t(n) * c_a * S);
        std::copy_n(g.ptr() + std::int64_t(n) * C * S + c_a * S, c_b * S,
                    gb.ptr() + std::int64_t(n) * c_b * S);
    }
}

}  // namespace nearmiss::nn
