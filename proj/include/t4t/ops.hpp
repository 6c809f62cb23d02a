#pragma once

// Neural-net ops on CHW maps and [N,C] token matrices, all differentiable
// through the tape in tensor.hpp.

#include "t4t/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <limits>

namespace t4t {

struct ConvGeometry {
    int cin = 0, h = 0, w = 0;
    int cout = 0, kh = 0, kw = 0;
    int stride = 1, pad = 0;
    int oh = 0, ow = 0;
};

inline ConvGeometry conv_geometry(const std::vector<int>& xshape, const std::vector<int>& wshape,
                                  int stride, int pad) {
    if (xshape.size() != 3 || wshape.size() != 4)
        throw ShapeError("conv2d: expected x[C,H,W], w[Cout,Cin,kh,kw], got " +
                         shape_str(xshape) + " and " + shape_str(wshape));
    ConvGeometry g;
    g.cin = xshape[0];
    g.h = xshape[1];
    g.w = xshape[2];
    g.cout = wshape[0];
    g.kh = wshape[2];
    g.kw = wshape[3];
    g.stride = stride;
    g.pad = pad;
    if (wshape[1] != g.cin)
        throw ShapeError("conv2d: input channels " + shape_str(xshape) +
                         " do not match kernel " + shape_str(wshape));
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    if (g.h + 2 * pad < g.kh || g.w + 2 * pad < g.kw)
        throw ShapeError("conv2d: kernel " + shape_str(wshape) + " larger than padded input " +
                         shape_str(xshape) + " with pad " + std::to_string(pad));
    g.oh = (g.h + 2 * pad - g.kh) / stride + 1;
    g.ow = (g.w + 2 * pad - g.kw) / stride + 1;
    return g;
}

namespace detail {

// cols is [cin*kh*kw, oh*ow]; zero padding semantics
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
    const std::int64_t npos = static_cast<std::int64_t>(g.oh) * g.ow;
    std::int64_t row = 0;
    for (int c = 0; c < g.cin; ++c) {
        const T* xc = x + static_cast<std::size_t>(c) * g.h * g.w;
        for (int ky = 0; ky < g.kh; ++ky) {
            for (int kx = 0; kx < g.kw; ++kx, ++row) {
                T* dst = cols + row * npos;
                std::int64_t p = 0;
                for (int oy = 0; oy < g.oh; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    for (int ox = 0; ox < g.ow; ++ox, ++p) {
                        const int ix = ox * g.stride - g.pad + kx;
                        dst[p] = (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w)
                                     ? xc[static_cast<std::size_t>(iy) * g.w + ix]
                                     : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_accum(const T* cols, const ConvGeometry& g, T* dx) {
    const std::int64_t npos = static_cast<std::int64_t>(g.oh) * g.ow;
    std::int64_t row = 0;
    for (int c = 0; c < g.cin; ++c) {
        T* xc = dx + static_cast<std::size_t>(c) * g.h * g.w;
        for (int ky = 0; ky < g.kh; ++ky) {
            for (int kx = 0; kx < g.kw; ++kx, ++row) {
                const T* src = cols + row * npos;
                std::int64_t p = 0;
                for (int oy = 0; oy < g.oh; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    for (int ox = 0; ox < g.ow; ++ox, ++p) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w)
                            xc[static_cast<std::size_t>(iy) * g.w + ix] += src[p];
                    }
                }
            }
        }
    }
}

} // namespace detail

// x [Cin,H,W] * w [Cout,Cin,kh,kw] + bias [Cout] -> [Cout,H',W']
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride,
                 int pad) {
    const ConvGeometry g = conv_geometry(x.shape(), w.shape(), stride, pad);
    if (bias.rank() != 1 || bias.dim(0) != g.cout)
        throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match Cout " +
                         std::to_string(g.cout));
    const std::int64_t npos = static_cast<std::int64_t>(g.oh) * g.ow;
    const std::int64_t krows = static_cast<std::int64_t>(g.cin) * g.kh * g.kw;
    std::vector<T> cols(static_cast<std::size_t>(krows * npos));
    detail::im2col(x.raw(), g, cols.data());

    Tensor<T> out({g.cout, g.oh, g.ow});
    // out = w_flat [cout, krows] * cols [krows, npos]
    detail::matmul_accum(w.raw(), cols.data(), out.raw(), g.cout, static_cast<int>(krows),
                         static_cast<int>(npos));
    for (int c = 0; c < g.cout; ++c) {
        T* oc = out.raw() + static_cast<std::size_t>(c) * npos;
        const T b = bias.at(c);
        for (std::int64_t p = 0; p < npos; ++p) oc[p] += b;
    }

    auto sx = x.storage(), sw = w.storage(), sb = bias.storage(), so = out.storage();
    auto cols_keep = std::make_shared<std::vector<T>>(std::move(cols));
    detail::record<T>("conv2d", {&x, &w, &bias}, out, [sx, sw, sb, so, g, cols_keep]() {
        const std::int64_t npos = static_cast<std::int64_t>(g.oh) * g.ow;
        const std::int64_t krows = static_cast<std::int64_t>(g.cin) * g.kh * g.kw;
        if (sb->requires_grad) {
            sb->ensure_grad();
            for (int c = 0; c < g.cout; ++c) {
                T acc = T(0);
                const T* gc = so->grad.data() + static_cast<std::size_t>(c) * npos;
                for (std::int64_t p = 0; p < npos; ++p) acc += gc[p];
                sb->grad[static_cast<std::size_t>(c)] += acc;
            }
        }
        if (sw->requires_grad) {
            sw->ensure_grad();
            // dW = dOut [cout,npos] * cols^T [npos,krows]
            detail::matmul_accum_bt(so->grad.data(), cols_keep->data(), sw->grad.data(), g.cout,
                                    static_cast<int>(npos), static_cast<int>(krows));
        }
        if (sx->requires_grad) {
            sx->ensure_grad();
            // dcols = w^T [krows,cout] * dOut [cout,npos]
            std::vector<T> dcols(static_cast<std::size_t>(krows * npos), T(0));
            detail::matmul_accum_at(sw->data.data(), so->grad.data(), dcols.data(),
                                    static_cast<int>(krows), g.cout, static_cast<int>(npos));
            detail::col2im_accum(dcols.data(), g, sx->grad.data());
        }
    });
    return out;
}

// x [C,H,W] * w [C,1,kh,kw], one kernel per channel
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                           int stride, int pad) {
    if (x.rank() != 3 || w.rank() != 4 || w.dim(1) != 1)
        throw ShapeError("depthwise_conv2d: expected x[C,H,W], w[C,1,kh,kw], got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
    if (w.dim(0) != x.dim(0))
        throw ShapeError("depthwise_conv2d: channel mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(w.shape()));
    const int c = x.dim(0), h = x.dim(1), wd = x.dim(2), kh = w.dim(2), kw = w.dim(3);
    if (h + 2 * pad < kh || wd + 2 * pad < kw)
        throw ShapeError("depthwise_conv2d: kernel larger than padded input");
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (wd + 2 * pad - kw) / stride + 1;
    Tensor<T> out({c, oh, ow});
    for (int ch = 0; ch < c; ++ch) {
        const T* xc = x.raw() + static_cast<std::size_t>(ch) * h * wd;
        const T* wc = w.raw() + static_cast<std::size_t>(ch) * kh * kw;
        T* oc = out.raw() + static_cast<std::size_t>(ch) * oh * ow;
        const T b = bias.at(ch);
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                T acc = b;
                for (int ky = 0; ky < kh; ++ky) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= wd) continue;
                        acc += wc[ky * kw + kx] * xc[static_cast<std::size_t>(iy) * wd + ix];
                    }
                }
                oc[static_cast<std::size_t>(oy) * ow + ox] = acc;
            }
        }
    }
    auto sx = x.storage(), sw = w.storage(), sb = bias.storage(), so = out.storage();
    detail::record<T>("depthwise_conv2d", {&x, &w, &bias}, out,
                      [sx, sw, sb, so, c, h, wd, kh, kw, stride, pad, oh, ow]() {
        for (int ch = 0; ch < c; ++ch) {
            const T* gc = so->grad.data() + static_cast<std::size_t>(ch) * oh * ow;
            if (sb->requires_grad) {
                sb->ensure_grad();
                T acc = T(0);
                for (int p = 0; p < oh * ow; ++p) acc += gc[p];
                sb->grad[static_cast<std::size_t>(ch)] += acc;
            }
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    const T gv = gc[static_cast<std::size_t>(oy) * ow + ox];
                    if (gv == T(0)) continue;
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= wd) continue;
                            const std::size_t xi =
                                (static_cast<std::size_t>(ch) * h + iy) * wd + ix;
                            const std::size_t wi =
                                (static_cast<std::size_t>(ch) * kh + ky) * kw + kx;
                            if (sw->requires_grad) {
                                sw->ensure_grad();
                                sw->grad[wi] += gv * sx->data[xi];
                            }
                            if (sx->requires_grad) {
                                sx->ensure_grad();
                                sx->grad[xi] += gv * sw->data[wi];
                            }
                        }
                    }
                }
            }
        }
    });
    return out;
}

// Adaptive average pooling of [C,H,W] to [C,oh,ow]; cell (i,j) averages the
// block rows [i*H/oh, (i+1)*H/oh) x cols [j*W/ow, (j+1)*W/ow).
template <typename T>
Tensor<T> avg_pool_to(const Tensor<T>& x, int oh, int ow) {
    if (x.rank() != 3) throw ShapeError("avg_pool_to: rank != 3 " + shape_str(x.shape()));
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (oh < 1 || ow < 1 || oh > h || ow > w)
        throw ShapeError("avg_pool_to: bad target " + std::to_string(oh) + "x" +
                         std::to_string(ow) + " for " + shape_str(x.shape()));
    Tensor<T> out({c, oh, ow});
    auto lo = [](int i, int n, int o) { return (i * n) / o; };
    auto hi = [](int i, int n, int o) { return ((i + 1) * n) / o; };
    for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                const int y0 = lo(oy, h, oh), y1 = hi(oy, h, oh);
                const int x0 = lo(ox, w, ow), x1 = hi(ox, w, ow);
                T acc = T(0);
                for (int y = y0; y < y1; ++y)
                    for (int xx = x0; xx < x1; ++xx) acc += x.at(ch, y, xx);
                out.ref(ch, oy, ox) = acc / static_cast<T>((y1 - y0) * (x1 - x0));
            }
    auto sx = x.storage(), so = out.storage();
    detail::record<T>("avg_pool_to", {&x}, out, [sx, so, c, h, w, oh, ow]() {
        if (!sx->requires_grad) return;
        sx->ensure_grad();
        auto lo = [](int i, int n, int o) { return (i * n) / o; };
        auto hi = [](int i, int n, int o) { return ((i + 1) * n) / o; };
        for (int ch = 0; ch < c; ++ch)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    const int y0 = lo(oy, h, oh), y1 = hi(oy, h, oh);
                    const int x0 = lo(ox, w, ow), x1 = hi(ox, w, ow);
                    const T g = so->grad[(static_cast<std::size_t>(ch) * oh + oy) * ow + ox] /
                                static_cast<T>((y1 - y0) * (x1 - x0));
                    for (int y = y0; y < y1; ++y)
                        for (int xx = x0; xx < x1; ++xx)
                            sx->grad[(static_cast<std::size_t>(ch) * h + y) * w + xx] += g;
                }
    });
    return out;
}

// Bilinear resize of [C,H,W] to [C,H2,W2], align-corners=false.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int h2, int w2) {
    if (x.rank() != 3) throw ShapeError("bilinear_resize: rank != 3 " + shape_str(x.shape()));
    if (h2 < 1 || w2 < 1)
        throw ShapeError("bilinear_resize: target must be positive, got " + std::to_string(h2) +
                         "x" + std::to_string(w2));
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor<T> out({c, h2, w2});

    struct Tap {
        int i0, i1;
        T w0, w1;
    };
    auto taps = [](int n_in, int n_out) {
        std::vector<Tap> t(static_cast<std::size_t>(n_out));
        const double s = static_cast<double>(n_in) / n_out;
        for (int i = 0; i < n_out; ++i) {
            double src = (i + 0.5) * s - 0.5;
            if (src < 0) src = 0;
            if (src > n_in - 1) src = n_in - 1;
            const int i0 = static_cast<int>(src);
            const int i1 = std::min(i0 + 1, n_in - 1);
            const T f = static_cast<T>(src - i0);
            t[static_cast<std::size_t>(i)] = {i0, i1, T(1) - f, f};
        }
        return t;
    };
    const auto ty = taps(h, h2);
    const auto tx = taps(w, w2);
    for (int ch = 0; ch < c; ++ch) {
        const T* xc = x.raw() + static_cast<std::size_t>(ch) * h * w;
        T* oc = out.raw() + static_cast<std::size_t>(ch) * h2 * w2;
        for (int oy = 0; oy < h2; ++oy) {
            const auto& a = ty[static_cast<std::size_t>(oy)];
            for (int ox = 0; ox < w2; ++ox) {
                const auto& b = tx[static_cast<std::size_t>(ox)];
                oc[static_cast<std::size_t>(oy) * w2 + ox] =
                    a.w0 * (b.w0 * xc[static_cast<std::size_t>(a.i0) * w + b.i0] +
                            b.w1 * xc[static_cast<std::size_t>(a.i0) * w + b.i1]) +
                    a.w1 * (b.w0 * xc[static_cast<std::size_t>(a.i1) * w + b.i0] +
                            b.w1 * xc[static_cast<std::size_t>(a.i1) * w + b.i1]);
            }
        }
    }
    auto sx = x.storage(), so = out.storage();
    detail::record<T>("bilinear_resize", {&x}, out, [sx, so, c, h, w, h2, w2, ty, tx]() {
        if (!sx->requires_grad) return;
        sx->ensure_grad();
        for (int ch = 0; ch < c; ++ch) {
            T* gx = sx->grad.data() + static_cast<std::size_t>(ch) * h * w;
            const T* go = so->grad.data() + static_cast<std::size_t>(ch) * h2 * w2;
            for (int oy = 0; oy < h2; ++oy) {
                const auto& a = ty[static_cast<std::size_t>(oy)];
                for (int ox = 0; ox < w2; ++ox) {
                    const auto& b = tx[static_cast<std::size_t>(ox)];
                    const T g = go[static_cast<std::size_t>(oy) * w2 + ox];
                    gx[static_cast<std::size_t>(a.i0) * w + b.i0] += g * a.w0 * b.w0;
                    gx[static_cast<std::size_t>(a.i0) * w + b.i1] += g * a.w0 * b.w1;
                    gx[static_cast<std::size_t>(a.i1) * w + b.i0] += g * a.w1 * b.w0;
                    gx[static_cast<std::size_t>(a.i1) * w + b.i1] += g * a.w1 * b.w1;
                }
            }
        }
    });
    return out;
}

// Max-subtracted softmax along one axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    if (axis < 0 || axis >= x.rank())
        throw ValueError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
    const auto& shp = x.shape();
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= shp[static_cast<std::size_t>(i)];
    for (int i = axis + 1; i < x.rank(); ++i) inner *= shp[static_cast<std::size_t>(i)];
    const std::int64_t n = shp[static_cast<std::size_t>(axis)];

    Tensor<T> out(x.shape());
    const T* px = x.raw();
    T* po = out.raw();
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = o * n * inner + in;
            T mx = px[base];
            for (std::int64_t i = 1; i < n; ++i) mx = std::max(mx, px[base + i * inner]);
            T sum = T(0);
            for (std::int64_t i = 0; i < n; ++i) {
                const T e = std::exp(px[base + i * inner] - mx);
                po[base + i * inner] = e;
                sum += e;
            }
            const T inv = T(1) / sum;
            for (std::int64_t i = 0; i < n; ++i) po[base + i * inner] *= inv;
        }
    }
    auto sx = x.storage(), so = out.storage();
    detail::record<T>("softmax", {&x}, out, [sx, so, outer, inner, n]() {
        if (!sx->requires_grad) return;
        sx->ensure_grad();
        for (std::int64_t o = 0; o < outer; ++o) {
            for (std::int64_t in = 0; in < inner; ++in) {
                const std::int64_t base = o * n * inner + in;
                T dot = T(0);
                for (std::int64_t i = 0; i < n; ++i) {
                    const std::int64_t k = base + i * inner;
                    dot += so->grad[static_cast<std::size_t>(k)] *
                           so->data[static_cast<std::size_t>(k)];
                }
                for (std::int64_t i = 0; i < n; ++i) {
                    const std::int64_t k = base + i * inner;
                    sx->grad[static_cast<std::size_t>(k)] +=
                        so->data[static_cast<std::size_t>(k)] *
                        (so->grad[static_cast<std::size_t>(k)] - dot);
                }
            }
        }
    });
    return out;
}

// Normalization over the last axis with per-channel affine.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-6)) {
    const int c = x.dim(x.rank() - 1);
    if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != c || beta.dim(0) != c)
        throw ShapeError("layer_norm: affine params " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " do not match channels " +
                         std::to_string(c) + " of " + shape_str(x.shape()));
    const std::int64_t rows = x.numel() / c;
    Tensor<T> out(x.shape());
    std::vector<T> inv_std(static_cast<std::size_t>(rows));
    std::vector<T> xhat(static_cast<std::size_t>(x.numel()));
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* px = x.raw() + r * c;
        T* po = out.raw() + r * c;
        T mean = T(0);
        for (int j = 0; j < c; ++j) mean += px[j];
        mean /= static_cast<T>(c);
        T var = T(0);
        for (int j = 0; j < c; ++j) {
            const T d = px[j] - mean;
            var += d * d;
        }
        var /= static_cast<T>(c);
        const T istd = T(1) / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(r)] = istd;
        for (int j = 0; j < c; ++j) {
            const T h = (px[j] - mean) * istd;
            xhat[static_cast<std::size_t>(r * c + j)] = h;
            po[j] = h * gamma.at(j) + beta.at(j);
        }
    }
    auto sx = x.storage(), sg = gamma.storage(), sb = beta.storage(), so = out.storage();
    auto keep_istd = std::make_shared<std::vector<T>>(std::move(inv_std));
    auto keep_xhat = std::make_shared<std::vector<T>>(std::move(xhat));
    detail::record<T>("layer_norm", {&x, &gamma, &beta}, out,
                      [sx, sg, sb, so, rows, c, keep_istd, keep_xhat]() {
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* go = so->grad.data() + r * c;
            const T* h = keep_xhat->data() + r * c;
            if (sg->requires_grad) {
                sg->ensure_grad();
                for (int j = 0; j < c; ++j) sg->grad[static_cast<std::size_t>(j)] += go[j] * h[j];
            }
            if (sb->requires_grad) {
                sb->ensure_grad();
                for (int j = 0; j < c; ++j) sb->grad[static_cast<std::size_t>(j)] += go[j];
            }
            if (sx->requires_grad) {
                sx->ensure_grad();
                const T istd = (*keep_istd)[static_cast<std::size_t>(r)];
                T sum_g = T(0), sum_gh = T(0);
                for (int j = 0; j < c; ++j) {
                    const T gj = go[j] * sg->data[static_cast<std::size_t>(j)];
                    sum_g += gj;
                    sum_gh += gj * h[j];
                }
                const T invc = T(1) / static_cast<T>(c);
                for (int j = 0; j < c; ++j) {
                    const T gj = go[j] * sg->data[static_cast<std::size_t>(j)];
                    sx->grad[static_cast<std::size_t>(r * c + j)] +=
                        istd * (gj - invc * sum_g - h[j] * invc * sum_gh);
                }
            }
        }
    });
    return out;
}

namespace detail {

template <typename T>
inline T gelu_scalar(T x) {
    const T k = T(0.7978845608028654); // sqrt(2/pi)
    const T inner = k * (x + T(0.044715) * x * x * x);
    return T(0.5) * x * (T(1) + std::tanh(inner));
}

template <typename T>
inline T gelu_grad_scalar(T x) {
    const T k = T(0.7978845608028654);
    const T x3 = x * x * x;
    const T inner = k * (x + T(0.044715) * x3);
    const T t = std::tanh(inner);
    const T dinner = k * (T(1) + T(3) * T(0.044715) * x * x);
    return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * dinner;
}

} // namespace detail

// Elementwise x * Phi(x), tanh approximation.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) out.raw()[i] = detail::gelu_scalar(x.raw()[i]);
    auto sx = x.storage(), so = out.storage();
    detail::record<T>("gelu", {&x}, out, [sx, so]() {
        if (!sx->requires_grad) return;
        sx->ensure_grad();
        for (std::size_t i = 0; i < so->grad.size(); ++i)
            sx->grad[i] += so->grad[i] * detail::gelu_grad_scalar(sx->data[i]);
    });
    return out;
}

// Mean negative log-softmax probability of the target class over pixels whose
// label is not ignore_index. logits [K,H,W], target [H*W] row-major.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& target,
                        int ignore_index = -1) {
    if (logits.rank() != 3)
        throw ShapeError("cross_entropy: logits must be [K,H,W], got " +
                         shape_str(logits.shape()));
    const int k = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
    const std::int64_t npix = static_cast<std::int64_t>(h) * w;
    if (static_cast<std::int64_t>(target.size()) != npix)
        throw ShapeError("cross_entropy: target size " + std::to_string(target.size()) +
                         " != " + std::to_string(npix) + " pixels");
    for (int t : target)
        if (t != ignore_index && (t < 0 || t >= k))
            throw ValueError("cross_entropy: class index " + std::to_string(t) +
                             " outside [0," + std::to_string(k) + ")");

    std::int64_t counted = 0;
    T loss_acc = T(0);
    // softmax probabilities kept for backward
    auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(k) * npix);
    for (std::int64_t p = 0; p < npix; ++p) {
        T mx = logits.raw()[p];
        for (int c = 1; c < k; ++c) mx = std::max(mx, logits.raw()[c * npix + p]);
        T sum = T(0);
        for (int c = 0; c < k; ++c) {
            const T e = std::exp(logits.raw()[c * npix + p] - mx);
            (*probs)[static_cast<std::size_t>(c * npix + p)] = e;
            sum += e;
        }
        const T inv = T(1) / sum;
        for (int c = 0; c < k; ++c) (*probs)[static_cast<std::size_t>(c * npix + p)] *= inv;
        const int t = target[static_cast<std::size_t>(p)];
        if (t == ignore_index) continue;
        ++counted;
        loss_acc -= std::log((*probs)[static_cast<std::size_t>(t) * npix + p]);
    }
    Tensor<T> out({1});
    out.ref(0) = counted > 0 ? loss_acc / static_cast<T>(counted) : T(0);

    auto sl = logits.storage(), so = out.storage();
    auto tgt = std::make_shared<std::vector<int>>(target);
    detail::record<T>("cross_entropy", {&logits}, out,
                      [sl, so, probs, tgt, k, npix, counted, ignore_index]() {
        if (!sl->requires_grad || counted == 0) return;
        sl->ensure_grad();
        const T g = so->grad[0] / static_cast<T>(counted);
        for (std::int64_t p = 0; p < npix; ++p) {
            const int t = (*tgt)[static_cast<std::size_t>(p)];
            if (t == ignore_index) continue;
            for (int c = 0; c < k; ++c) {
                const T onehot = (c == t) ? T(1) : T(0);
                sl->grad[static_cast<std::size_t>(c) * npix + p] +=
                    g * ((*probs)[static_cast<std::size_t>(c) * npix + p] - onehot);
            }
        }
    });
    return out;
}

} // namespace t4t
