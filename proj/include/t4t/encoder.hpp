#pragma once

// Four-stage pyramid transformer encoder. Stage 1 embeds with a 7x7 stride-4
// overlapping conv, stages 2-4 downsample with 3x3 stride-2 convs; each stage
// stacks pre-norm attention/dw-ffn blocks and produces features at 1/4, 1/8,
// 1/16 and 1/32 of the input resolution.

#include "t4t/layers.hpp"

#include <array>
#include <functional>
#include <iostream>

namespace t4t {

inline std::function<void(const std::string&)>& warn_sink() {
    static std::function<void(const std::string&)> sink = [](const std::string& msg) {
        std::cerr << "warning: " << msg << "\n";
    };
    return sink;
}

struct EncoderConfig {
    std::array<int, 4> stage_channels{64, 128, 320, 512};
    std::array<int, 4> stage_depths{2, 2, 2, 2};
    std::array<int, 4> heads{1, 2, 5, 8};
    // 1 = literal full attention, otherwise strided-conv K/V reduction
    std::array<int, 4> sr_ratios{8, 4, 2, 1};
    std::array<int, 4> ffn_expansion{4, 4, 2, 2};
    int base_h = 512, base_w = 512; // position-embedding resolution

    static constexpr std::array<int, 4> kDownsample{4, 8, 16, 32};
    // stage 1: 7/4/3, stages 2-4: 3/2/1
    static constexpr int patch_kernel(int stage) { return stage == 0 ? 7 : 3; }
    static constexpr int patch_stride(int stage) { return stage == 0 ? 4 : 2; }
    static constexpr int patch_pad(int stage) { return stage == 0 ? 3 : 1; }

    void validate() const {
        for (int s = 0; s < 4; ++s) {
            if (stage_channels[s] <= 0 || stage_depths[s] <= 0 || heads[s] <= 0 ||
                sr_ratios[s] <= 0 || ffn_expansion[s] <= 0)
                throw ConfigError("encoder config: non-positive field in stage " +
                                  std::to_string(s + 1));
            if (stage_channels[s] % heads[s] != 0)
                throw ConfigError("encoder config: channels " +
                                  std::to_string(stage_channels[s]) +
                                  " not divisible by heads " + std::to_string(heads[s]) +
                                  " in stage " + std::to_string(s + 1));
        }
        if (base_h % 32 != 0 || base_w % 32 != 0)
            throw ConfigError("encoder config: base resolution must be divisible by 32");
    }
};

template <typename T>
struct FeaturePyramid {
    std::array<Tensor<T>, 4> maps; // f1..f4, CHW

    Tensor<T>& f(int i) { return maps[static_cast<std::size_t>(i)]; }
    const Tensor<T>& f(int i) const { return maps[static_cast<std::size_t>(i)]; }
};

template <typename T>
struct PatchEmbed {
    Conv2dLayer<T> conv;
    LayerNormLayer<T> norm;
    Tensor<T> pos; // [base_n, C], learned absolute
    int base_h = 0, base_w = 0;

    PatchEmbed() = default;
    PatchEmbed(int cin, int cout, int k, int stride, int pad, int bh, int bw, SplitMix64& rng)
        : conv(cin, cout, k, stride, pad, rng), norm(cout), pos({bh * bw, cout}), base_h(bh),
          base_w(bw) {
        for (auto& v : pos.data()) v = static_cast<T>(rng.gauss(0.0, 0.02));
    }

    // [Cin,H,W] -> tokens [N,Cs] over the strided grid
    Tensor<T> forward(const Tensor<T>& x, int& out_h, int& out_w) const {
        const int h = x.dim(1), w = x.dim(2);
        if (h % conv.stride != 0 || w % conv.stride != 0)
            throw ConfigError("patch embed: input " + std::to_string(h) + "x" +
                              std::to_string(w) + " not divisible by stride " +
                              std::to_string(conv.stride));
        auto map = conv.forward(x);
        out_h = map.dim(1);
        out_w = map.dim(2);
        auto tokens = norm.forward(chw_to_tokens(map));
        if (out_h == base_h && out_w == base_w) return add(tokens, pos);
        warn_sink()("position embedding interpolated from " + std::to_string(base_h) + "x" +
                    std::to_string(base_w) + " to " + std::to_string(out_h) + "x" +
                    std::to_string(out_w));
        auto grid = tokens_to_chw(pos, base_h, base_w);
        auto fit = chw_to_tokens(bilinear_resize(grid, out_h, out_w));
        return add(tokens, fit);
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        conv.visit(prefix + ".conv", fn);
        norm.visit(prefix + ".norm", fn);
        fn(prefix + ".pos", pos);
    }
};

template <typename T>
struct EncoderStage {
    PatchEmbed<T> patch;
    std::vector<EncoderBlock<T>> blocks;

    Tensor<T> forward(const Tensor<T>& x, int& h, int& w) const {
        auto tokens = patch.forward(x, h, w);
        for (const auto& blk : blocks) tokens = blk.forward(tokens, h, w);
        return tokens;
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        patch.visit(prefix + ".patch", fn);
        for (std::size_t i = 0; i < blocks.size(); ++i)
            blocks[i].visit(prefix + ".block" + std::to_string(i), fn);
    }
};

template <typename T>
struct PyramidEncoder {
    EncoderConfig cfg;
    std::array<EncoderStage<T>, 4> stages;

    PyramidEncoder() = default;

    PyramidEncoder(const EncoderConfig& config, SplitMix64& rng) : cfg(config) {
        cfg.validate();
        int cin = 3;
        for (int s = 0; s < 4; ++s) {
            const int c = cfg.stage_channels[static_cast<std::size_t>(s)];
            const int ds = EncoderConfig::kDownsample[static_cast<std::size_t>(s)];
            stages[static_cast<std::size_t>(s)].patch = PatchEmbed<T>(
                cin, c, EncoderConfig::patch_kernel(s), EncoderConfig::patch_stride(s),
                EncoderConfig::patch_pad(s), cfg.base_h / ds, cfg.base_w / ds, rng);
            const int sr = cfg.sr_ratios[static_cast<std::size_t>(s)];
            for (int b = 0; b < cfg.stage_depths[static_cast<std::size_t>(s)]; ++b)
                stages[static_cast<std::size_t>(s)].blocks.emplace_back(
                    c, cfg.heads[static_cast<std::size_t>(s)],
                    sr > 1 ? KvReduce::strided_conv : KvReduce::none, sr,
                    cfg.ffn_expansion[static_cast<std::size_t>(s)], rng);
            cin = c;
        }
    }

    FeaturePyramid<T> forward(const Tensor<T>& image) const {
        if (image.rank() != 3 || image.dim(0) != 3)
            throw ShapeError("encoder: expected [3,H,W] image, got " + shape_str(image.shape()));
        if (image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0)
            throw ConfigError("encoder: input " + std::to_string(image.dim(1)) + "x" +
                              std::to_string(image.dim(2)) + " must be divisible by 32");
        FeaturePyramid<T> pyr;
        Tensor<T> x = image;
        for (int s = 0; s < 4; ++s) {
            int h = 0, w = 0;
            auto tokens = stages[static_cast<std::size_t>(s)].forward(x, h, w);
            x = tokens_to_chw(tokens, h, w);
            pyr.f(s) = x;
        }
        return pyr;
    }

    void visit(const ParamVisitor<T>& fn) {
        for (int s = 0; s < 4; ++s)
            stages[static_cast<std::size_t>(s)].visit("encoder.stage" + std::to_string(s + 1),
                                                      fn);
    }
};

} // namespace t4t
