#pragma once

// Decoder side: per-stage parsing modules (linear projection to a preset
// embedding width, one attention block, upsample to H/4 x W/4), pyramid
// fusion and the classification head — in single- and dual-head stacks.

#include "t4t/encoder.hpp"
#include "t4t/netpbm.hpp"

#include <string>

namespace t4t {

enum class FusionMode { sum, concat };

struct TpmConfig {
    int embed_dim = 64;
    int heads = 1;
    FusionMode fusion = FusionMode::sum;
    // K/V handling inside the decoder attention: full attention when
    // kv_pool == 0, otherwise pooled reduction to <= kv_pool x kv_pool.
    int kv_pool = 8;

    void validate() const {
        if (embed_dim <= 0 || heads <= 0)
            throw ConfigError("tpm config: non-positive embed_dim/heads");
        if (embed_dim % heads != 0)
            throw ConfigError("tpm config: embed_dim " + std::to_string(embed_dim) +
                              " not divisible by heads " + std::to_string(heads));
        if (kv_pool < 0) throw ConfigError("tpm config: kv_pool must be >= 0");
    }
};

// One parsing module: project stage features to the embedding width, run one
// pre-norm attention block, resize to the shared H/4 x W/4 grid.
template <typename T>
struct Tpm {
    LinearLayer<T> proj;
    LayerNormLayer<T> ln;
    AttentionLayer<T> attn;

    Tpm() = default;
    Tpm(int cin, const TpmConfig& cfg, SplitMix64& rng)
        : proj(cin, cfg.embed_dim, rng), ln(cfg.embed_dim),
          attn(cfg.embed_dim, cfg.heads,
               cfg.kv_pool > 0 ? KvReduce::pooled : KvReduce::none, cfg.kv_pool, rng) {}

    Tensor<T> forward(const Tensor<T>& feature, int target_h, int target_w) const {
        const int h = feature.dim(1), w = feature.dim(2);
        if (h > target_h || w > target_w)
            throw ValueError("tpm: target " + std::to_string(target_h) + "x" +
                             std::to_string(target_w) + " smaller than source " +
                             std::to_string(h) + "x" + std::to_string(w));
        auto tokens = proj.forward(chw_to_tokens(feature));
        tokens = add(tokens, attn.forward(ln.forward(tokens), h, w));
        auto map = tokens_to_chw(tokens, h, w);
        if (h == target_h && w == target_w) return map;
        return bilinear_resize(map, target_h, target_w);
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        proj.visit(prefix + ".proj", fn);
        ln.visit(prefix + ".ln", fn);
        attn.visit(prefix + ".attn", fn);
    }
};

// elementwise sum (default) or channel concat in stage order 1..4
template <typename T>
Tensor<T> fuse_pyramid(const std::vector<Tensor<T>>& maps, FusionMode mode) {
    if (maps.size() != 4) throw ValueError("fuse_pyramid: expected 4 maps");
    for (const auto& m : maps)
        if (m.shape() != maps[0].shape())
            throw ShapeError("fuse_pyramid: shape mismatch " + shape_str(m.shape()) + " vs " +
                             shape_str(maps[0].shape()));
    if (mode == FusionMode::concat) return concat_channels(maps);
    auto acc = add(maps[0], maps[1]);
    acc = add(acc, maps[2]);
    return add(acc, maps[3]);
}

// 1x1 conv to class logits, then x4 bilinear resize to full resolution
template <typename T>
struct SegHead {
    Conv2dLayer<T> conv;
    int num_classes = 0;

    SegHead() = default;
    SegHead(int cin, int classes, SplitMix64& rng)
        : conv(cin, classes, 1, 1, 0, rng), num_classes(classes) {}

    Tensor<T> forward(const Tensor<T>& fused, int out_h, int out_w) const {
        if (out_h != 4 * fused.dim(1) || out_w != 4 * fused.dim(2))
            throw ValueError("seg head: output " + std::to_string(out_h) + "x" +
                             std::to_string(out_w) + " is not 4x the fused grid " +
                             std::to_string(fused.dim(1)) + "x" + std::to_string(fused.dim(2)));
        return bilinear_resize(conv.forward(fused), out_h, out_w);
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        conv.visit(prefix + ".conv", fn);
    }
};

// one full decoder: four TPMs + fusion + head
template <typename T>
struct TpmDecoder {
    TpmConfig cfg;
    std::array<Tpm<T>, 4> tpms;
    SegHead<T> head;

    TpmDecoder() = default;
    TpmDecoder(const EncoderConfig& enc, const TpmConfig& config, int num_classes,
               SplitMix64& rng)
        : cfg(config) {
        cfg.validate();
        for (int s = 0; s < 4; ++s)
            tpms[static_cast<std::size_t>(s)] =
                Tpm<T>(enc.stage_channels[static_cast<std::size_t>(s)], cfg, rng);
        const int fused_c = cfg.fusion == FusionMode::concat ? 4 * cfg.embed_dim : cfg.embed_dim;
        head = SegHead<T>(fused_c, num_classes, rng);
    }

    // stage maps resized to the stage-1 grid, in stage order
    std::vector<Tensor<T>> parse_stages(const FeaturePyramid<T>& pyr) const {
        const int h4 = pyr.f(0).dim(1), w4 = pyr.f(0).dim(2);
        std::vector<Tensor<T>> maps;
        maps.reserve(4);
        for (int s = 0; s < 4; ++s)
            maps.push_back(tpms[static_cast<std::size_t>(s)].forward(pyr.f(s), h4, w4));
        return maps;
    }

    Tensor<T> forward(const FeaturePyramid<T>& pyr, int out_h, int out_w) const {
        auto fused = fuse_pyramid(parse_stages(pyr), cfg.fusion);
        return head.forward(fused, out_h, out_w);
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        for (int s = 0; s < 4; ++s)
            tpms[static_cast<std::size_t>(s)].visit(prefix + ".tpm" + std::to_string(s + 1), fn);
        head.visit(prefix + ".head", fn);
    }
};

template <typename T>
struct DualSegmentation {
    Tensor<T> general_logits; // [K_general,H,W]
    Tensor<T> trans_logits;   // [K_trans,H,W]
};

// shared encoder, two independent decoder stacks
template <typename T>
struct DualSegModel {
    PyramidEncoder<T> encoder;
    TpmDecoder<T> general_head;
    TpmDecoder<T> trans_head;

    DualSegModel() = default;
    DualSegModel(const EncoderConfig& enc_cfg, const TpmConfig& tpm_cfg, int general_classes,
                 int trans_classes, std::uint64_t seed) {
        SplitMix64 rng(seed);
        encoder = PyramidEncoder<T>(enc_cfg, rng);
        general_head = TpmDecoder<T>(enc_cfg, tpm_cfg, general_classes, rng);
        trans_head = TpmDecoder<T>(enc_cfg, tpm_cfg, trans_classes, rng);
    }

    DualSegmentation<T> forward(const Tensor<T>& image) const {
        auto pyr = encoder.forward(image);
        DualSegmentation<T> out;
        out.general_logits = general_head.forward(pyr, image.dim(1), image.dim(2));
        out.trans_logits = trans_head.forward(pyr, image.dim(1), image.dim(2));
        return out;
    }

    void visit(const ParamVisitor<T>& fn) {
        encoder.visit(fn);
        general_head.visit("decoder_general", fn);
        trans_head.visit("decoder_trans", fn);
    }

    std::vector<Tensor<T>> parameters() {
        std::vector<Tensor<T>> out;
        visit([&](const std::string&, Tensor<T>& t) { out.push_back(t); });
        return out;
    }

    void set_requires_grad(bool v) {
        visit([v](const std::string&, Tensor<T>& t) { t.set_requires_grad(v); });
    }

    std::int64_t parameter_count() {
        std::int64_t n = 0;
        visit([&](const std::string&, Tensor<T>& t) { n += t.numel(); });
        return n;
    }
};

// per-pixel argmax over the class axis of [K,H,W] logits; ties go to the
// lowest class index
template <typename T>
std::vector<std::uint8_t> argmax_classes(const Tensor<T>& logits) {
    const int k = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
    const std::int64_t npix = static_cast<std::int64_t>(h) * w;
    std::vector<std::uint8_t> out(static_cast<std::size_t>(npix));
    for (std::int64_t p = 0; p < npix; ++p) {
        int best = 0;
        T bestv = logits.raw()[p];
        for (int c = 1; c < k; ++c) {
            const T v = logits.raw()[static_cast<std::size_t>(c) * npix + p];
            if (v > bestv) {
                bestv = v;
                best = c;
            }
        }
        out[static_cast<std::size_t>(p)] = static_cast<std::uint8_t>(best);
    }
    return out;
}

// channel-mean activation, min-max scaled to [0,255]; a constant map becomes
// mid-gray 128
template <typename T>
ImageU8 feature_map_to_gray(const Tensor<T>& map) {
    const int c = map.dim(0), h = map.dim(1), w = map.dim(2);
    std::vector<double> mean(static_cast<std::size_t>(h) * w, 0.0);
    for (int ch = 0; ch < c; ++ch)
        for (std::int64_t p = 0; p < static_cast<std::int64_t>(h) * w; ++p)
            mean[static_cast<std::size_t>(p)] +=
                static_cast<double>(map.raw()[static_cast<std::size_t>(ch) * h * w + p]);
    double lo = mean[0], hi = mean[0];
    for (double v : mean) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    ImageU8 img;
    img.w = w;
    img.h = h;
    img.channels = 1;
    img.data.resize(mean.size());
    for (std::size_t i = 0; i < mean.size(); ++i) {
        img.data[i] = (hi == lo) ? 128
                                 : static_cast<std::uint8_t>(
                                       std::lround((mean[i] - lo) / (hi - lo) * 255.0));
    }
    return img;
}

// Writes eight grayscale maps (four decoder stages x two heads) for one image.
template <typename T>
std::vector<std::string> export_feature_maps(const DualSegModel<T>& model,
                                             const Tensor<T>& image,
                                             const std::string& out_dir) {
    NoGradGuard<T> ng;
    auto pyr = model.encoder.forward(image);
    std::vector<std::string> written;
    const char* head_names[2] = {"general", "trans"};
    const TpmDecoder<T>* heads[2] = {&model.general_head, &model.trans_head};
    for (int hd = 0; hd < 2; ++hd) {
        auto maps = heads[hd]->parse_stages(pyr);
        for (int s = 0; s < 4; ++s) {
            const std::string path = out_dir + "/features_stage" + std::to_string(s + 1) + "_" +
                                     head_names[hd] + ".pgm";
            write_pgm8(path, feature_map_to_gray(maps[static_cast<std::size_t>(s)]));
            written.push_back(path);
        }
    }
    return written;
}

} // namespace t4t
