#pragma once

// Test-only oracles and helpers. Everything in here is written as the
// straightest possible loop over the mathematical definition, independent
// of the library's execution paths (im2col, tape, etc.).

#include "t4t/tensor.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace oracle {

// plain ijl triple loop
template <typename T>
std::vector<T> matmul(const std::vector<T>& a, const std::vector<T>& b, int m, int k, int n) {
    std::vector<T> c(static_cast<std::size_t>(m) * n, T(0));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            T acc = T(0);
            for (int l = 0; l < k; ++l)
                acc += a[static_cast<std::size_t>(i) * k + l] * b[static_cast<std::size_t>(l) * n + j];
            c[static_cast<std::size_t>(i) * n + j] = acc;
        }
    return c;
}

// direct definition of zero-padded strided convolution
template <typename T>
std::vector<T> conv2d(const std::vector<T>& x, int cin, int h, int w, const std::vector<T>& ker,
                      int cout, int kh, int kw, const std::vector<T>& bias, int stride, int pad,
                      int& oh, int& ow) {
    oh = (h + 2 * pad - kh) / stride + 1;
    ow = (w + 2 * pad - kw) / stride + 1;
    std::vector<T> out(static_cast<std::size_t>(cout) * oh * ow, T(0));
    for (int co = 0; co < cout; ++co)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                T acc = bias[static_cast<std::size_t>(co)];
                for (int ci = 0; ci < cin; ++ci)
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            const int iy = oy * stride - pad + ky;
                            const int ix = ox * stride - pad + kx;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            acc += ker[((static_cast<std::size_t>(co) * cin + ci) * kh + ky) * kw + kx] *
                                   x[(static_cast<std::size_t>(ci) * h + iy) * w + ix];
                        }
                out[(static_cast<std::size_t>(co) * oh + oy) * ow + ox] = acc;
            }
    return out;
}

// grouped conv with one kernel per channel
template <typename T>
std::vector<T> depthwise_conv2d(const std::vector<T>& x, int c, int h, int w,
                                const std::vector<T>& ker, int kh, int kw,
                                const std::vector<T>& bias, int stride, int pad, int& oh,
                                int& ow) {
    oh = (h + 2 * pad - kh) / stride + 1;
    ow = (w + 2 * pad - kw) / stride + 1;
    std::vector<T> out(static_cast<std::size_t>(c) * oh * ow, T(0));
    for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                T acc = bias[static_cast<std::size_t>(ch)];
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        const int iy = oy * stride - pad + ky;
                        const int ix = ox * stride - pad + kx;
                        if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                        acc += ker[(static_cast<std::size_t>(ch) * kh + ky) * kw + kx] *
                               x[(static_cast<std::size_t>(ch) * h + iy) * w + ix];
                    }
                out[(static_cast<std::size_t>(ch) * oh + oy) * ow + ox] = acc;
            }
    return out;
}

// erf-based exact GELU
inline double gelu_exact(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// direct align-corners=false interpolation formula on a CHW map
template <typename T>
std::vector<T> bilinear(const std::vector<T>& x, int c, int h, int w, int h2, int w2) {
    std::vector<T> out(static_cast<std::size_t>(c) * h2 * w2);
    for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < h2; ++oy)
            for (int ox = 0; ox < w2; ++ox) {
                double sy = (oy + 0.5) * (static_cast<double>(h) / h2) - 0.5;
                double sx = (ox + 0.5) * (static_cast<double>(w) / w2) - 0.5;
                sy = std::min(std::max(sy, 0.0), static_cast<double>(h - 1));
                sx = std::min(std::max(sx, 0.0), static_cast<double>(w - 1));
                const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
                const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
                const double fy = sy - y0, fx = sx - x0;
                auto px = [&](int yy, int xx) {
                    return static_cast<double>(
                        x[(static_cast<std::size_t>(ch) * h + yy) * w + xx]);
                };
                out[(static_cast<std::size_t>(ch) * h2 + oy) * w2 + ox] = static_cast<T>(
                    (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x1)) +
                    fy * ((1 - fx) * px(y1, x0) + fx * px(y1, x1)));
            }
    return out;
}

// per-row normalization with affine, straight from the definition
template <typename T>
std::vector<T> layer_norm(const std::vector<T>& x, int rows, int c, const std::vector<T>& gamma,
                          const std::vector<T>& beta, double eps = 1e-6) {
    std::vector<T> out(x.size());
    for (int r = 0; r < rows; ++r) {
        double mean = 0;
        for (int j = 0; j < c; ++j) mean += x[static_cast<std::size_t>(r) * c + j];
        mean /= c;
        double var = 0;
        for (int j = 0; j < c; ++j) {
            const double d = x[static_cast<std::size_t>(r) * c + j] - mean;
            var += d * d;
        }
        var /= c;
        for (int j = 0; j < c; ++j)
            out[static_cast<std::size_t>(r) * c + j] = static_cast<T>(
                (x[static_cast<std::size_t>(r) * c + j] - mean) / std::sqrt(var + eps) *
                    gamma[static_cast<std::size_t>(j)] +
                beta[static_cast<std::size_t>(j)]);
    }
    return out;
}

// naive O(N^2) multi-head attention over already-projected q,k,v ([N,C] each,
// heads h), returning the pre-output-projection concatenation.
template <typename T>
std::vector<T> attention(const std::vector<T>& q, const std::vector<T>& k,
                         const std::vector<T>& v, int n_q, int n_kv, int c, int heads) {
    const int d = c / heads;
    std::vector<T> out(static_cast<std::size_t>(n_q) * c, T(0));
    const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));
    for (int hd = 0; hd < heads; ++hd) {
        const int off = hd * d;
        for (int i = 0; i < n_q; ++i) {
            std::vector<T> scores(static_cast<std::size_t>(n_kv));
            T mx = -std::numeric_limits<T>::infinity();
            for (int j = 0; j < n_kv; ++j) {
                T s = T(0);
                for (int e = 0; e < d; ++e)
                    s += q[static_cast<std::size_t>(i) * c + off + e] *
                         k[static_cast<std::size_t>(j) * c + off + e];
                s *= inv_sqrt_d;
                scores[static_cast<std::size_t>(j)] = s;
                mx = std::max(mx, s);
            }
            T sum = T(0);
            for (int j = 0; j < n_kv; ++j) {
                scores[static_cast<std::size_t>(j)] = std::exp(scores[static_cast<std::size_t>(j)] - mx);
                sum += scores[static_cast<std::size_t>(j)];
            }
            for (int j = 0; j < n_kv; ++j) scores[static_cast<std::size_t>(j)] /= sum;
            for (int e = 0; e < d; ++e) {
                T acc = T(0);
                for (int j = 0; j < n_kv; ++j)
                    acc += scores[static_cast<std::size_t>(j)] *
                           v[static_cast<std::size_t>(j) * c + off + e];
                out[static_cast<std::size_t>(i) * c + off + e] = acc;
            }
        }
    }
    return out;
}

} // namespace oracle

namespace testutil {

inline std::vector<double> random_vec(std::mt19937& rng, std::size_t n, double lo = -1.0,
                                      double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return v;
}

template <typename T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

// Central finite differences against analytic gradients for every listed
// parameter element. loss_fn must rebuild the whole forward pass.
template <typename LossFn>
double gradcheck_max_rel_err(std::vector<t4t::Tensor<double>> params, LossFn loss_fn,
                             double step = 1e-4) {
    for (auto& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    t4t::Tape<double>::active().clear();
    auto loss = loss_fn();
    t4t::backward(loss);

    double worst = 0;
    for (auto& p : params) {
        const auto analytic = p.grad();
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            const double saved = p.at(static_cast<int>(i));
            double fplus, fminus;
            {
                t4t::NoGradGuard<double> ng;
                p.ref(static_cast<int>(i)) = saved + step;
                fplus = loss_fn().item();
                p.ref(static_cast<int>(i)) = saved - step;
                fminus = loss_fn().item();
                p.ref(static_cast<int>(i)) = saved;
            }
            const double numeric = (fplus - fminus) / (2 * step);
            const double a = analytic[static_cast<std::size_t>(i)];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    return worst;
}

} // namespace testutil
