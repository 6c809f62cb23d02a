#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"
#include "t4t/metrics.hpp"

#include <thread>

using t4t::EncoderConfig;
using t4t::TpmConfig;

namespace {

EncoderConfig toy_encoder_config() {
    EncoderConfig cfg;
    cfg.stage_channels = {8, 16, 24, 32};
    cfg.stage_depths = {2, 2, 2, 2};
    cfg.heads = {1, 2, 3, 4};
    cfg.sr_ratios = {1, 1, 1, 1};
    cfg.ffn_expansion = {2, 2, 2, 2};
    cfg.base_h = cfg.base_w = 32;
    return cfg;
}

TpmConfig toy_tpm_config() {
    TpmConfig cfg;
    cfg.embed_dim = 8;
    cfg.heads = 1;
    cfg.kv_pool = 0;
    return cfg;
}

} // namespace

TEST_CASE("single linear layer arithmetic: 10->20 with bias is 220 params") {
    CHECK(t4t::cost::linear_params(10, 20) == 220);
}

TEST_CASE("conv MAC formula: 3x3, 16->16 channels, 64x64 output") {
    CHECK(t4t::cost::conv_macs(16, 16, 3, 64, 64) == 9437184);
}

TEST_CASE("analytic parameter count equals enumerating stored tensors exactly") {
    // two independent code paths: formulas from config vs the parameter store
    auto enc = toy_encoder_config();
    auto tpm = toy_tpm_config();
    t4t::DualSegModel<float> dual(enc, tpm, 4, 4, 5);
    auto rep = t4t::analytic_cost(enc, tpm, {4, 4}, 32, 32);
    CHECK(rep.params == dual.parameter_count());

    // again with strided-conv reduction, more heads and pooled decoder K/V
    EncoderConfig enc2;
    enc2.stage_channels = {8, 16, 24, 32};
    enc2.stage_depths = {2, 1, 2, 1};
    enc2.heads = {1, 2, 3, 4};
    enc2.sr_ratios = {4, 2, 2, 1};
    enc2.ffn_expansion = {4, 4, 2, 2};
    enc2.base_h = enc2.base_w = 64;
    TpmConfig tpm2;
    tpm2.embed_dim = 16;
    tpm2.heads = 2;
    tpm2.kv_pool = 8;
    t4t::DualSegModel<float> dual2(enc2, tpm2, 13, 12, 6);
    auto rep2 = t4t::analytic_cost(enc2, tpm2, {13, 12}, 64, 64);
    CHECK(rep2.params == dual2.parameter_count());
}

TEST_CASE("per-layer entries sum to the report totals exactly") {
    auto rep = t4t::analytic_cost(toy_encoder_config(), toy_tpm_config(), {4, 4}, 32, 32);
    std::int64_t p = 0, m = 0;
    for (const auto& l : rep.layers) {
        p += l.params;
        m += l.macs;
    }
    CHECK(p == rep.params);
    CHECK(m == rep.macs);
    CHECK(rep.gflops() == doctest::Approx(2.0 * static_cast<double>(rep.macs) / 1e9));
}

TEST_CASE("doubling input height doubles conv MACs (self-consistency)") {
    auto enc = toy_encoder_config();
    enc.sr_ratios = {1, 1, 1, 1};
    auto a = t4t::analytic_cost(enc, toy_tpm_config(), {4}, 32, 32);
    auto b = t4t::analytic_cost(enc, toy_tpm_config(), {4}, 64, 32);
    auto find = [](const t4t::CostReport& r, const std::string& name) {
        for (const auto& l : r.layers)
            if (l.name == name) return l.macs;
        return std::int64_t(-1);
    };
    CHECK(find(b, "encoder.stage1.patch") == 2 * find(a, "encoder.stage1.patch"));
    CHECK(find(b, "encoder.stage4.patch") == 2 * find(a, "encoder.stage4.patch"));
}

TEST_CASE("dual minus single equals one decoder stack, cross-checked") {
    auto enc = toy_encoder_config();
    auto tpm = toy_tpm_config();
    auto dual = t4t::analytic_cost(enc, tpm, {13, 12}, 32, 32);
    auto single = t4t::analytic_cost(enc, tpm, {13}, 32, 32);

    // independent decoder-only count: sum the decoder2.* rows of the dual report
    std::int64_t decoder_params = 0;
    for (const auto& l : dual.layers)
        if (l.name.rfind("decoder2.", 0) == 0) decoder_params += l.params;
    CHECK(dual.params - single.params == decoder_params);

    // and against the stored tensors of a real second head
    t4t::DualSegModel<float> model(enc, tpm, 13, 12, 7);
    std::int64_t stored = 0;
    model.trans_head.visit("x", [&](const std::string&, t4t::Tensor<float>& t) {
        stored += t.numel();
    });
    CHECK(decoder_params == stored);
}

TEST_CASE("FLOP monotonicity: more channels, depth or resolution never costs less") {
    auto base = toy_encoder_config();
    auto tpm = toy_tpm_config();
    const auto ref = t4t::analytic_cost(base, tpm, {4}, 32, 32);

    auto wider = base;
    wider.stage_channels = {16, 32, 48, 64};
    CHECK(t4t::analytic_cost(wider, tpm, {4}, 32, 32).macs > ref.macs);

    auto deeper = base;
    deeper.stage_depths = {3, 3, 3, 3};
    CHECK(t4t::analytic_cost(deeper, tpm, {4}, 32, 32).macs > ref.macs);

    CHECK(t4t::analytic_cost(base, tpm, {4}, 64, 64).macs > ref.macs);

    auto wider_tpm = tpm;
    wider_tpm.embed_dim = 16;
    CHECK(t4t::analytic_cost(base, wider_tpm, {4}, 32, 32).macs > ref.macs);
}

TEST_CASE("latency protocol collects exactly `runs` samples after warmup") {
    int calls = 0;
    auto stats = t4t::measure_latency(
        [&]() {
            ++calls;
            std::this_thread::sleep_for(std::chrono::microseconds(200));
        },
        10, 3);
    CHECK(calls == 13);
    CHECK(stats.samples_ms.size() == 10);
    CHECK(stats.runs == 10);
    CHECK(stats.mean_ms > 0.0);
    CHECK_THROWS_AS(t4t::measure_latency([]() {}, 5, 0), t4t::ValueError);
}

TEST_CASE("latency mean is invariant under reordering of the samples") {
    auto stats = t4t::measure_latency(
        []() { std::this_thread::sleep_for(std::chrono::microseconds(100)); }, 12, 2);
    auto shuffled = stats.samples_ms;
    std::reverse(shuffled.begin(), shuffled.end());
    double mean = 0;
    for (double s : shuffled) mean += s;
    mean /= static_cast<double>(shuffled.size());
    CHECK(mean == doctest::Approx(stats.mean_ms).epsilon(1e-12));
}

TEST_CASE("toy-config latency is below a heavier config's latency") {
    t4t::DualSegModel<float> toy(toy_encoder_config(), toy_tpm_config(), 4, 4, 8);

    EncoderConfig heavier;
    heavier.stage_channels = {64, 128, 320, 512};
    heavier.stage_depths = {2, 2, 2, 2};
    heavier.heads = {1, 2, 5, 8};
    heavier.sr_ratios = {8, 4, 2, 1};
    heavier.ffn_expansion = {4, 4, 2, 2};
    heavier.base_h = heavier.base_w = 64;
    TpmConfig deploy_tpm; // embed 64, pooled
    t4t::DualSegModel<float> deploy(heavier, deploy_tpm, 13, 12, 9);

    auto toy_lat = t4t::measure_model_latency(toy, 32, 32, 10, 2);
    auto deploy_lat = t4t::measure_model_latency(deploy, 64, 64, 10, 2);
    CHECK(toy_lat.mean_ms < deploy_lat.mean_ms);
}

TEST_CASE("report renders aligned text and JSON lines") {
    auto rep = t4t::analytic_cost(toy_encoder_config(), toy_tpm_config(), {4, 4}, 32, 32);
    const auto text = rep.render_text();
    CHECK(text.find("GFLOPs = 2*MACs/1e9") != std::string::npos);
    CHECK(text.find("encoder.stage1.patch") != std::string::npos);
    CHECK(text.find("total") != std::string::npos);
    const auto jsonl = rep.render_jsonl();
    CHECK(jsonl.find("\"total_params\":") != std::string::npos);
    CHECK(jsonl.find("\"gflops_mac\":") != std::string::npos);
}
