#pragma once

// Closed-form parameter and multiply-accumulate accounting plus wall-clock
// latency. The per-layer formulas here mirror the layer constructors in
// layers.hpp / model.hpp one-to-one, so the analytic parameter total must
// equal the enumerated tensor total exactly.
//
// Conventions, also printed in every report header:
//   gflops       = 2 * MACs / 1e9  (one multiply + one add per MAC)
//   gflops_mac   = MACs / 1e9      (the "1 MAC = 1 FLOP" convention common
//                                   in published model-cost tables)
// Softmax, norms, activations and resizes are excluded; matrix work dominates.

#include "t4t/model.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <sstream>

namespace t4t {

struct LayerCost {
    std::string name;
    std::int64_t params = 0;
    std::int64_t macs = 0;
};

struct LatencyStats {
    double mean_ms = 0;
    double stddev_ms = 0;
    int runs = 0;
    std::vector<double> samples_ms;
};

struct CostReport {
    std::int64_t params = 0;
    std::int64_t macs = 0;
    std::vector<LayerCost> layers;
    LatencyStats latency; // runs == 0 when not measured

    double gflops() const { return 2.0 * static_cast<double>(macs) / 1e9; }
    double gflops_mac_convention() const { return static_cast<double>(macs) / 1e9; }
    double mparams() const { return static_cast<double>(params) / 1e6; }

    void add(const std::string& name, std::int64_t p, std::int64_t m) {
        layers.push_back({name, p, m});
        params += p;
        macs += m;
    }

    std::string render_text() const {
        std::ostringstream os;
        os << "# cost report: GFLOPs = 2*MACs/1e9; GFLOPs(MAC) counts one MAC as one FLOP\n";
        os << "# softmax/norm/activation/resize costs excluded\n";
        std::size_t widest = 5;
        for (const auto& l : layers) widest = std::max(widest, l.name.size());
        os << std::left << std::setw(static_cast<int>(widest) + 2) << "layer" << std::right
           << std::setw(14) << "params" << std::setw(16) << "MACs" << "\n";
        for (const auto& l : layers)
            os << std::left << std::setw(static_cast<int>(widest) + 2) << l.name << std::right
               << std::setw(14) << l.params << std::setw(16) << l.macs << "\n";
        os << std::left << std::setw(static_cast<int>(widest) + 2) << "total" << std::right
           << std::setw(14) << params << std::setw(16) << macs << "\n";
        os << std::fixed << std::setprecision(3);
        os << "MParams      " << mparams() << "\n";
        os << "GFLOPs       " << gflops() << "\n";
        os << "GFLOPs(MAC)  " << gflops_mac_convention() << "\n";
        if (latency.runs > 0)
            os << "latency_ms   " << latency.mean_ms << " +- " << latency.stddev_ms << " over "
               << latency.runs << " runs\n";
        return os.str();
    }

    // one JSON object per line: layers first, then the totals
    std::string render_jsonl() const {
        std::ostringstream os;
        os << std::setprecision(12);
        for (const auto& l : layers)
            os << "{\"layer\":\"" << l.name << "\",\"params\":" << l.params
               << ",\"macs\":" << l.macs << "}\n";
        os << "{\"total_params\":" << params << ",\"total_macs\":" << macs
           << ",\"gflops\":" << gflops() << ",\"gflops_mac\":" << gflops_mac_convention();
        if (latency.runs > 0)
            os << ",\"latency_mean_ms\":" << latency.mean_ms
               << ",\"latency_stddev_ms\":" << latency.stddev_ms
               << ",\"latency_runs\":" << latency.runs;
        os << "}\n";
        return os.str();
    }
};

namespace cost {

inline std::int64_t linear_params(std::int64_t in, std::int64_t out) { return in * out + out; }
inline std::int64_t conv_params(std::int64_t cin, std::int64_t cout, std::int64_t k) {
    return cout * cin * k * k + cout;
}
inline std::int64_t depthwise_params(std::int64_t c, std::int64_t k) { return c * k * k + c; }
inline std::int64_t norm_params(std::int64_t c) { return 2 * c; }

inline std::int64_t linear_macs(std::int64_t positions, std::int64_t in, std::int64_t out) {
    return positions * in * out;
}
inline std::int64_t conv_macs(std::int64_t cin, std::int64_t cout, std::int64_t k,
                              std::int64_t oh, std::int64_t ow) {
    return cout * cin * k * k * oh * ow;
}
inline std::int64_t depthwise_macs(std::int64_t c, std::int64_t k, std::int64_t oh,
                                   std::int64_t ow) {
    return c * k * k * oh * ow;
}

// attention at width c over n query tokens and n_kv key/value tokens;
// reduce_k = kernel size of the K/V reduction conv (0 = no reduction conv),
// reduce_positions = positions that conv runs on
struct AttentionCost {
    std::int64_t params = 0;
    std::int64_t macs = 0;
};

inline AttentionCost attention_cost(std::int64_t c, std::int64_t n, std::int64_t n_kv,
                                    std::int64_t reduce_k, std::int64_t reduce_positions) {
    AttentionCost a;
    a.params = linear_params(c, c) + linear_params(c, 2 * c) + linear_params(c, c);
    a.macs = linear_macs(n, c, c) + linear_macs(n_kv, c, 2 * c) + linear_macs(n, c, c);
    if (reduce_k > 0) {
        a.params += conv_params(c, c, reduce_k) + norm_params(c);
        a.macs += conv_macs(c, c, reduce_k, 1, reduce_positions); // oh*ow folded in
    }
    // QK^T and AV, summed over heads: each is n * n_kv * c
    a.macs += 2 * n * n_kv * c;
    return a;
}

inline std::int64_t ffn_params(std::int64_t c, std::int64_t e) {
    return linear_params(c, c * e) + depthwise_params(c * e, 3) + linear_params(c * e, c);
}
inline std::int64_t ffn_macs(std::int64_t c, std::int64_t e, std::int64_t n) {
    return linear_macs(n, c, c * e) + depthwise_macs(c * e, 3, n, 1) + linear_macs(n, c * e, c);
}

} // namespace cost

// Per-layer analytic cost of the encoder plus one or two decoder heads at the
// given input size. head_classes holds the class count of each attached head.
inline CostReport analytic_cost(const EncoderConfig& enc, const TpmConfig& tpm,
                                const std::vector<int>& head_classes, int H, int W) {
    enc.validate();
    tpm.validate();
    if (H % 32 != 0 || W % 32 != 0)
        throw ConfigError("analytic_cost: input " + std::to_string(H) + "x" + std::to_string(W) +
                          " must be divisible by 32");
    CostReport rep;
    int cin = 3;
    for (int s = 0; s < 4; ++s) {
        const auto si = static_cast<std::size_t>(s);
        const int c = enc.stage_channels[si];
        const int ds = EncoderConfig::kDownsample[si];
        const std::int64_t h = H / ds, w = W / ds, n = h * w;
        const std::string stage = "encoder.stage" + std::to_string(s + 1);

        const int k = EncoderConfig::patch_kernel(s);
        std::int64_t pe_params = cost::conv_params(cin, c, k) + cost::norm_params(c) +
                                 static_cast<std::int64_t>(enc.base_h / ds) * (enc.base_w / ds) * c;
        std::int64_t pe_macs = cost::conv_macs(cin, c, k, h, w);
        rep.add(stage + ".patch", pe_params, pe_macs);

        const int sr = enc.sr_ratios[si];
        const std::int64_t n_kv = sr > 1 ? (h / sr) * (w / sr) : n;
        for (int b = 0; b < enc.stage_depths[si]; ++b) {
            const std::string blk = stage + ".block" + std::to_string(b);
            auto attn = cost::attention_cost(c, n, n_kv, sr > 1 ? sr : 0, n_kv);
            rep.add(blk + ".attn", attn.params + cost::norm_params(c), attn.macs);
            rep.add(blk + ".ffn",
                    cost::ffn_params(c, enc.ffn_expansion[si]) + cost::norm_params(c),
                    cost::ffn_macs(c, enc.ffn_expansion[si], n));
        }
        cin = c;
    }

    const std::int64_t h4 = H / 4, w4 = W / 4;
    for (std::size_t head = 0; head < head_classes.size(); ++head) {
        const std::string dname = head_classes.size() == 1
                                      ? std::string("decoder")
                                      : "decoder" + std::to_string(head + 1);
        for (int s = 0; s < 4; ++s) {
            const auto si = static_cast<std::size_t>(s);
            const int cs = enc.stage_channels[si];
            const int ds = EncoderConfig::kDownsample[si];
            const std::int64_t h = H / ds, w = W / ds, n = h * w;
            std::int64_t p = cost::linear_params(cs, tpm.embed_dim) +
                             cost::norm_params(tpm.embed_dim);
            std::int64_t m = cost::linear_macs(n, cs, tpm.embed_dim);
            std::int64_t n_kv = n, rk = 0, rpos = 0;
            if (tpm.kv_pool > 0) {
                const std::int64_t ph = std::min<std::int64_t>(tpm.kv_pool, h);
                const std::int64_t pw = std::min<std::int64_t>(tpm.kv_pool, w);
                n_kv = ph * pw;
                rk = 1;
                rpos = n_kv;
            }
            auto attn = cost::attention_cost(tpm.embed_dim, n, n_kv, rk, rpos);
            rep.add(dname + ".tpm" + std::to_string(s + 1), p + attn.params, m + attn.macs);
        }
        const std::int64_t fused_c =
            tpm.fusion == FusionMode::concat ? 4 * tpm.embed_dim : tpm.embed_dim;
        rep.add(dname + ".head",
                cost::conv_params(fused_c, head_classes[head], 1),
                cost::conv_macs(fused_c, head_classes[head], 1, h4, w4));
    }
    return rep;
}

// runs >= 10; warmup iterations are executed first and discarded
inline LatencyStats measure_latency(const std::function<void()>& fn, int runs, int warmup) {
    if (runs < 10) throw ValueError("measure_latency: need at least 10 runs");
    for (int i = 0; i < warmup; ++i) fn();
    LatencyStats stats;
    stats.runs = runs;
    stats.samples_ms.reserve(static_cast<std::size_t>(runs));
    for (int i = 0; i < runs; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        stats.samples_ms.push_back(
            std::chrono::duration_cast<std::chrono::duration<double, std::milli>>(t1 - t0)
                .count());
    }
    double sum = 0;
    for (double s : stats.samples_ms) sum += s;
    stats.mean_ms = sum / runs;
    double var = 0;
    for (double s : stats.samples_ms) var += (s - stats.mean_ms) * (s - stats.mean_ms);
    stats.stddev_ms = std::sqrt(var / runs);
    return stats;
}

template <typename T>
LatencyStats measure_model_latency(const DualSegModel<T>& model, int h, int w, int runs,
                                   int warmup) {
    Tensor<T> img({3, h, w}, T(0.5));
    return measure_latency(
        [&]() {
            NoGradGuard<T> ng;
            (void)model.forward(img);
        },
        runs, warmup);
}

} // namespace t4t
