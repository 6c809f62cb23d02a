#pragma once

// Parameterized layers shared by the encoder and decoder stacks.
// Every layer exposes visit() so checkpointing, optimizers and parameter
// counting can walk the same named-tensor list.

#include "t4t/ops.hpp"
#include "t4t/rng.hpp"
#include "t4t/tensor.hpp"

#include <functional>
#include <string>

namespace t4t {

template <typename T>
using ParamVisitor = std::function<void(const std::string&, Tensor<T>&)>;

template <typename T>
struct LinearLayer {
    Tensor<T> w; // [in,out]
    Tensor<T> b; // [out]

    LinearLayer() = default;
    LinearLayer(int in, int out, SplitMix64& rng) : w({in, out}), b({out}) {
        for (auto& v : w.data()) v = static_cast<T>(rng.gauss(0.0, 0.02));
    }

    Tensor<T> forward(const Tensor<T>& x) const { return add_row_bias(matmul(x, w), b); }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        fn(prefix + ".w", w);
        fn(prefix + ".b", b);
    }
};

template <typename T>
struct Conv2dLayer {
    Tensor<T> w; // [cout,cin,kh,kw]
    Tensor<T> b; // [cout]
    int stride = 1, pad = 0;

    Conv2dLayer() = default;
    Conv2dLayer(int cin, int cout, int k, int stride_, int pad_, SplitMix64& rng)
        : w({cout, cin, k, k}), b({cout}), stride(stride_), pad(pad_) {
        const double scale = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
        for (auto& v : w.data()) v = static_cast<T>(rng.gauss(0.0, scale));
    }

    Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, w, b, stride, pad); }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        fn(prefix + ".w", w);
        fn(prefix + ".b", b);
    }
};

template <typename T>
struct DepthwiseLayer {
    Tensor<T> w; // [c,1,k,k]
    Tensor<T> b; // [c]
    int stride = 1, pad = 1;

    DepthwiseLayer() = default;
    DepthwiseLayer(int c, int k, int stride_, int pad_, SplitMix64& rng)
        : w({c, 1, k, k}), b({c}), stride(stride_), pad(pad_) {
        const double scale = std::sqrt(2.0 / (static_cast<double>(k) * k));
        for (auto& v : w.data()) v = static_cast<T>(rng.gauss(0.0, scale));
    }

    Tensor<T> forward(const Tensor<T>& x) const { return depthwise_conv2d(x, w, b, stride, pad); }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        fn(prefix + ".w", w);
        fn(prefix + ".b", b);
    }
};

template <typename T>
struct LayerNormLayer {
    Tensor<T> gamma;
    Tensor<T> beta;
    T eps = T(1e-6);

    LayerNormLayer() = default;
    explicit LayerNormLayer(int c) : gamma({c}, T(1)), beta({c}) {}

    Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gamma, beta, eps); }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        fn(prefix + ".gamma", gamma);
        fn(prefix + ".beta", beta);
    }
};

// How attention shrinks its key/value token set.
enum class KvReduce {
    none,        // exact full attention
    strided_conv, // sr x sr conv with stride sr
    pooled       // adaptive average pool to <= pool x pool, then 1x1 conv
};

template <typename T>
struct AttentionLayer {
    int channels = 0;
    int heads = 1;
    KvReduce reduce = KvReduce::none;
    int sr = 1;   // strided_conv ratio
    int pool = 8; // pooled target grid

    LinearLayer<T> q;
    LinearLayer<T> kv;
    LinearLayer<T> proj;
    Conv2dLayer<T> reduce_conv;
    LayerNormLayer<T> reduce_norm;

    AttentionLayer() = default;
    AttentionLayer(int c, int heads_, KvReduce reduce_, int ratio, SplitMix64& rng)
        : channels(c), heads(heads_), reduce(reduce_), q(c, c, rng), kv(c, 2 * c, rng),
          proj(c, c, rng) {
        if (c % heads_ != 0)
            throw ConfigError("attention: channels " + std::to_string(c) +
                              " not divisible by heads " + std::to_string(heads_));
        if (reduce == KvReduce::strided_conv) {
            sr = ratio;
            if (sr <= 1) reduce = KvReduce::none;
            else reduce_conv = Conv2dLayer<T>(c, c, sr, sr, 0, rng);
        } else if (reduce == KvReduce::pooled) {
            pool = ratio;
            reduce_conv = Conv2dLayer<T>(c, c, 1, 1, 0, rng);
        }
        if (reduce != KvReduce::none) reduce_norm = LayerNormLayer<T>(c);
    }

    // tokens [N,C] over an h x w grid
    Tensor<T> forward(const Tensor<T>& tokens, int h, int w) const {
        const int n = tokens.dim(0);
        if (n != h * w)
            throw ValueError("attention: token count " + std::to_string(n) +
                             " does not cover grid " + std::to_string(h) + "x" +
                             std::to_string(w));
        Tensor<T> qt = q.forward(tokens);
        Tensor<T> kv_src = tokens;
        if (reduce == KvReduce::strided_conv) {
            auto map = tokens_to_chw(tokens, h, w);
            auto red = reduce_conv.forward(map);
            kv_src = reduce_norm.forward(chw_to_tokens(red));
        } else if (reduce == KvReduce::pooled) {
            auto map = tokens_to_chw(tokens, h, w);
            const int ph = std::min(pool, h), pw = std::min(pool, w);
            auto red = reduce_conv.forward(avg_pool_to(map, ph, pw));
            kv_src = reduce_norm.forward(chw_to_tokens(red));
        }
        Tensor<T> kvt = kv.forward(kv_src);
        Tensor<T> k = slice_cols(kvt, 0, channels);
        Tensor<T> v = slice_cols(kvt, channels, 2 * channels);

        const int d = channels / heads;
        const T inv_sqrt_d = T(1) / static_cast<T>(std::sqrt(static_cast<double>(d)));
        Tensor<T> mixed;
        if (heads == 1) {
            auto scores = scale(matmul(qt, transpose2d(k)), inv_sqrt_d);
            mixed = matmul(softmax(scores, 1), v);
        } else {
            std::vector<Tensor<T>> parts;
            parts.reserve(static_cast<std::size_t>(heads));
            for (int hd = 0; hd < heads; ++hd) {
                auto qh = slice_cols(qt, hd * d, (hd + 1) * d);
                auto kh = slice_cols(k, hd * d, (hd + 1) * d);
                auto vh = slice_cols(v, hd * d, (hd + 1) * d);
                auto scores = scale(matmul(qh, transpose2d(kh)), inv_sqrt_d);
                parts.push_back(matmul(softmax(scores, 1), vh));
            }
            mixed = concat_cols(parts);
        }
        return proj.forward(mixed);
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        q.visit(prefix + ".q", fn);
        kv.visit(prefix + ".kv", fn);
        proj.visit(prefix + ".proj", fn);
        if (reduce != KvReduce::none) {
            reduce_conv.visit(prefix + ".reduce_conv", fn);
            reduce_norm.visit(prefix + ".reduce_norm", fn);
        }
    }
};

// linear -> 3x3 depthwise over the grid -> gelu -> linear
template <typename T>
struct DwFfnLayer {
    LinearLayer<T> fc1;
    DepthwiseLayer<T> dw;
    LinearLayer<T> fc2;

    DwFfnLayer() = default;
    DwFfnLayer(int c, int expansion, SplitMix64& rng)
        : fc1(c, c * expansion, rng), dw(c * expansion, 3, 1, 1, rng),
          fc2(c * expansion, c, rng) {}

    Tensor<T> forward(const Tensor<T>& tokens, int h, int w) const {
        if (tokens.dim(0) != h * w)
            throw ValueError("dw_ffn: tokens " + shape_str(tokens.shape()) +
                             " do not carry a valid " + std::to_string(h) + "x" +
                             std::to_string(w) + " grid");
        auto t = fc1.forward(tokens);
        auto map = dw.forward(tokens_to_chw(t, h, w));
        return fc2.forward(gelu(chw_to_tokens(map)));
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        fc1.visit(prefix + ".fc1", fn);
        dw.visit(prefix + ".dw", fn);
        fc2.visit(prefix + ".fc2", fn);
    }
};

// pre-norm transformer block: x + attn(ln1(x)), then x + ffn(ln2(x))
template <typename T>
struct EncoderBlock {
    LayerNormLayer<T> ln1;
    AttentionLayer<T> attn;
    LayerNormLayer<T> ln2;
    DwFfnLayer<T> ffn;

    EncoderBlock() = default;
    EncoderBlock(int c, int heads, KvReduce reduce, int ratio, int expansion, SplitMix64& rng)
        : ln1(c), attn(c, heads, reduce, ratio, rng), ln2(c), ffn(c, expansion, rng) {}

    Tensor<T> forward(const Tensor<T>& tokens, int h, int w) const {
        auto x = add(tokens, attn.forward(ln1.forward(tokens), h, w));
        return add(x, ffn.forward(ln2.forward(x), h, w));
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        ln1.visit(prefix + ".ln1", fn);
        attn.visit(prefix + ".attn", fn);
        ln2.visit(prefix + ".ln2", fn);
        ffn.visit(prefix + ".ffn", fn);
    }
};

} // namespace t4t
