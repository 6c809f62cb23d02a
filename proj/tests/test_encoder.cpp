#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"
#include "t4t/encoder.hpp"

#include <random>

using t4t::EncoderConfig;
using t4t::Tensor;

namespace {

EncoderConfig toy_config() {
    EncoderConfig cfg;
    cfg.stage_channels = {8, 16, 24, 32};
    cfg.stage_depths = {2, 2, 2, 2};
    cfg.heads = {1, 2, 3, 4};
    cfg.sr_ratios = {1, 1, 1, 1};
    cfg.ffn_expansion = {2, 2, 2, 2};
    cfg.base_h = cfg.base_w = 32;
    return cfg;
}

EncoderConfig micro_config() {
    EncoderConfig cfg;
    cfg.stage_channels = {4, 4, 8, 8};
    cfg.stage_depths = {1, 1, 1, 1};
    cfg.heads = {1, 1, 2, 2};
    cfg.sr_ratios = {1, 1, 1, 1};
    cfg.ffn_expansion = {2, 2, 2, 2};
    cfg.base_h = cfg.base_w = 32;
    return cfg;
}

Tensor<double> random_image(std::mt19937& rng, int h, int w) {
    return Tensor<double>::from_data(
        {3, h, w}, testutil::random_vec(rng, static_cast<std::size_t>(3) * h * w, 0, 1));
}

} // namespace

TEST_CASE("config validation rejects indivisible heads") {
    auto cfg = toy_config();
    cfg.heads = {3, 2, 3, 4}; // 8 % 3 != 0
    CHECK_THROWS_AS(cfg.validate(), t4t::ConfigError);
}

TEST_CASE("patch embed geometry: 512 input maps to the documented grids") {
    const auto g = t4t::conv_geometry({3, 512, 512}, {64, 3, 7, 7}, 4, 3);
    CHECK(g.oh == 128);
    CHECK(g.ow == 128);
    const auto g2 = t4t::conv_geometry({64, 128, 128}, {128, 64, 3, 3}, 2, 1);
    CHECK(g2.oh == 64);
    CHECK(g2.ow == 64);
}

TEST_CASE("toy encoder produces the documented pyramid shapes") {
    t4t::SplitMix64 rng(1);
    t4t::PyramidEncoder<double> enc(toy_config(), rng);
    std::mt19937 mrng(1);
    auto pyr = enc.forward(random_image(mrng, 32, 32));
    CHECK(pyr.f(0).shape() == std::vector<int>{8, 8, 8});
    CHECK(pyr.f(1).shape() == std::vector<int>{16, 4, 4});
    CHECK(pyr.f(2).shape() == std::vector<int>{24, 2, 2});
    CHECK(pyr.f(3).shape() == std::vector<int>{32, 1, 1});
    for (int s = 0; s < 4; ++s) CHECK(pyr.f(s).all_finite());
}

TEST_CASE("shape contract holds for several input sizes") {
    t4t::SplitMix64 rng(2);
    auto cfg = toy_config();
    cfg.base_h = cfg.base_w = 64;
    t4t::PyramidEncoder<double> enc(cfg, rng);
    std::mt19937 mrng(2);
    for (int hw : {32, 64, 96}) {
        auto pyr = enc.forward(random_image(mrng, hw, hw));
        for (int s = 0; s < 4; ++s) {
            const int ds = EncoderConfig::kDownsample[static_cast<std::size_t>(s)];
            CHECK(pyr.f(s).dim(0) == cfg.stage_channels[static_cast<std::size_t>(s)]);
            CHECK(pyr.f(s).dim(1) == hw / ds);
            CHECK(pyr.f(s).dim(2) == hw / ds);
        }
    }
}

TEST_CASE("encoder rejects inputs not divisible by 32") {
    t4t::SplitMix64 rng(3);
    t4t::PyramidEncoder<double> enc(toy_config(), rng);
    CHECK_THROWS_AS(enc.forward(Tensor<double>({3, 48, 48})), t4t::ConfigError);
}

TEST_CASE("position embedding interpolation is warned about") {
    t4t::SplitMix64 rng(4);
    auto cfg = toy_config();
    cfg.base_h = cfg.base_w = 64;
    t4t::PyramidEncoder<double> enc(cfg, rng);
    std::vector<std::string> warnings;
    auto prev = t4t::warn_sink();
    t4t::warn_sink() = [&](const std::string& msg) { warnings.push_back(msg); };
    std::mt19937 mrng(4);
    enc.forward(random_image(mrng, 32, 32));
    t4t::warn_sink() = prev;
    CHECK(warnings.size() == 4); // one per stage
    CHECK(warnings[0].find("interpolated") != std::string::npos);
}

TEST_CASE("single-token attention equals the value path") {
    t4t::SplitMix64 rng(5);
    const int c = 6;
    t4t::AttentionLayer<double> attn(c, 2, t4t::KvReduce::none, 1, rng);
    std::mt19937 mrng(5);
    auto tok = Tensor<double>::from_data({1, c}, testutil::random_vec(mrng, c));
    auto out = attn.forward(tok, 1, 1);
    // one key: the softmax weight is exactly 1, so out = proj(v(token))
    auto kv = oracle::matmul(tok.data(), attn.kv.w.data(), 1, c, 2 * c);
    std::vector<double> v(kv.begin() + c, kv.end());
    for (int j = 0; j < c; ++j) v[static_cast<std::size_t>(j)] += attn.kv.b.at(c + j);
    auto want = oracle::matmul(v, attn.proj.w.data(), 1, c, c);
    for (int j = 0; j < c; ++j) want[static_cast<std::size_t>(j)] += attn.proj.b.at(j);
    CHECK(testutil::max_abs_diff(out.data(), want) < 1e-12);
}

TEST_CASE("identical tokens give identical attention outputs") {
    t4t::SplitMix64 rng(6);
    const int c = 8, n = 9;
    t4t::AttentionLayer<double> attn(c, 2, t4t::KvReduce::none, 1, rng);
    std::mt19937 mrng(6);
    std::vector<double> row = testutil::random_vec(mrng, c);
    std::vector<double> all;
    for (int i = 0; i < n; ++i) all.insert(all.end(), row.begin(), row.end());
    auto out = attn.forward(Tensor<double>::from_data({n, c}, all), 3, 3);
    for (int i = 1; i < n; ++i)
        for (int j = 0; j < c; ++j)
            CHECK(out.at(i, j) == doctest::Approx(out.at(0, j)).epsilon(1e-12));
}

namespace {

// runs the layer's projections and the naive per-head attention with oracle
// loops only
std::vector<double> attention_reference(const t4t::AttentionLayer<double>& attn,
                                        const std::vector<double>& tokens, int n, int c,
                                        int heads) {
    auto project = [&](const t4t::LinearLayer<double>& lin, int cols) {
        auto y = oracle::matmul(tokens, lin.w.data(), n, c, cols);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < cols; ++j) y[static_cast<std::size_t>(i) * cols + j] += lin.b.at(j);
        return y;
    };
    auto q = project(attn.q, c);
    auto kvj = project(attn.kv, 2 * c);
    std::vector<double> k(static_cast<std::size_t>(n) * c), v(static_cast<std::size_t>(n) * c);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
            k[static_cast<std::size_t>(i) * c + j] = kvj[static_cast<std::size_t>(i) * 2 * c + j];
            v[static_cast<std::size_t>(i) * c + j] =
                kvj[static_cast<std::size_t>(i) * 2 * c + c + j];
        }
    auto mixed = oracle::attention(q, k, v, n, n, c, heads);
    auto out = oracle::matmul(mixed, attn.proj.w.data(), n, c, c);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(i) * c + j] += attn.proj.b.at(j);
    return out;
}

} // namespace

TEST_CASE("full attention matches the naive O(N^2) oracle (N=16, C=8, heads=2)") {
    t4t::SplitMix64 rng(7);
    const int n = 16, c = 8, heads = 2;
    t4t::AttentionLayer<double> attn(c, heads, t4t::KvReduce::none, 1, rng);
    std::mt19937 mrng(7);
    auto tokens = testutil::random_vec(mrng, static_cast<std::size_t>(n) * c);
    auto want = attention_reference(attn, tokens, n, c, heads);
    auto got = attn.forward(Tensor<double>::from_data({n, c}, tokens), 4, 4);
    CHECK(testutil::max_abs_diff(got.data(), want) < 1e-10);
}

TEST_CASE("attention oracle equivalence across sizes up to N=64") {
    t4t::SplitMix64 wrng(8);
    std::mt19937 mrng(8);
    for (const auto& [n, h, w, c, heads] :
         {std::tuple{4, 2, 2, 4, 1}, std::tuple{36, 6, 6, 6, 2}, std::tuple{64, 8, 8, 8, 4}}) {
        t4t::AttentionLayer<double> attn(c, heads, t4t::KvReduce::none, 1, wrng);
        auto tokens = testutil::random_vec(mrng, static_cast<std::size_t>(n) * c);
        auto want = attention_reference(attn, tokens, n, c, heads);
        auto got = attn.forward(Tensor<double>::from_data({n, c}, tokens), h, w);
        CHECK(testutil::max_abs_diff(got.data(), want) < 1e-10);
    }
}

TEST_CASE("attention rejects channels not divisible by heads") {
    t4t::SplitMix64 rng(9);
    CHECK_THROWS_AS(t4t::AttentionLayer<double>(6, 4, t4t::KvReduce::none, 1, rng),
                    t4t::ConfigError);
}

TEST_CASE("dw_ffn composition matches op-by-op oracle") {
    t4t::SplitMix64 rng(10);
    const int c = 6, e = 2, h = 4, w = 4, n = h * w;
    t4t::DwFfnLayer<double> ffn(c, e, rng);
    std::mt19937 mrng(10);
    auto tokens = testutil::random_vec(mrng, static_cast<std::size_t>(n) * c);

    auto t1 = oracle::matmul(tokens, ffn.fc1.w.data(), n, c, c * e);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c * e; ++j)
            t1[static_cast<std::size_t>(i) * c * e + j] += ffn.fc1.b.at(j);
    std::vector<double> chw(static_cast<std::size_t>(c * e) * n);
    for (int ch = 0; ch < c * e; ++ch)
        for (int p = 0; p < n; ++p)
            chw[static_cast<std::size_t>(ch) * n + p] =
                t1[static_cast<std::size_t>(p) * c * e + ch];
    int oh = 0, ow = 0;
    auto dw = oracle::depthwise_conv2d(chw, c * e, h, w, ffn.dw.w.data(), 3, 3, ffn.dw.b.data(),
                                       1, 1, oh, ow);
    std::vector<double> t2(static_cast<std::size_t>(n) * c * e);
    for (int ch = 0; ch < c * e; ++ch)
        for (int p = 0; p < n; ++p)
            t2[static_cast<std::size_t>(p) * c * e + ch] =
                dw[static_cast<std::size_t>(ch) * n + p];
    for (auto& vv : t2)
        vv = 0.5 * vv * (1.0 + std::tanh(0.7978845608028654 * (vv + 0.044715 * vv * vv * vv)));
    auto want = oracle::matmul(t2, ffn.fc2.w.data(), n, c * e, c);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) want[static_cast<std::size_t>(i) * c + j] += ffn.fc2.b.at(j);

    auto got = ffn.forward(Tensor<double>::from_data({n, c}, tokens), h, w);
    CHECK(testutil::max_abs_diff(got.data(), want) < 1e-10);
}

TEST_CASE("dw_ffn with identity linears and delta kernel reduces to gelu") {
    t4t::SplitMix64 rng(21);
    const int c = 4;
    t4t::DwFfnLayer<double> ffn(c, 1, rng);
    // fc1 = fc2 = identity, depthwise = centered delta
    for (auto* lin : {&ffn.fc1, &ffn.fc2}) {
        std::fill(lin->w.data().begin(), lin->w.data().end(), 0.0);
        std::fill(lin->b.data().begin(), lin->b.data().end(), 0.0);
        for (int i = 0; i < c; ++i) lin->w.ref(i, i) = 1.0;
    }
    std::fill(ffn.dw.w.data().begin(), ffn.dw.w.data().end(), 0.0);
    std::fill(ffn.dw.b.data().begin(), ffn.dw.b.data().end(), 0.0);
    for (int ch = 0; ch < c; ++ch) ffn.dw.w.data()[static_cast<std::size_t>(ch) * 9 + 4] = 1.0;
    std::mt19937 mrng(21);
    auto tokens = testutil::random_vec(mrng, 9 * c, -2, 2);
    auto out = ffn.forward(t4t::Tensor<double>::from_data({9, c}, tokens), 3, 3);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const double x = tokens[i];
        const double want = 0.5 * x * (1.0 + std::tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)));
        CHECK(out.data()[i] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("dw_ffn zero weights and biases give zero output") {
    t4t::SplitMix64 rng(11);
    t4t::DwFfnLayer<double> ffn(4, 2, rng);
    for (auto* t : {&ffn.fc1.w, &ffn.fc1.b, &ffn.dw.w, &ffn.dw.b, &ffn.fc2.w, &ffn.fc2.b})
        std::fill(t->data().begin(), t->data().end(), 0.0);
    std::mt19937 mrng(11);
    auto out = ffn.forward(Tensor<double>::from_data({9, 4}, testutil::random_vec(mrng, 36)), 3, 3);
    for (auto v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("dw_ffn demands valid spatial metadata") {
    t4t::SplitMix64 rng(12);
    t4t::DwFfnLayer<double> ffn(4, 2, rng);
    CHECK_THROWS_AS(ffn.forward(Tensor<double>({10, 4}), 3, 3), t4t::ValueError);
}

TEST_CASE("zeroed output projections make each block the identity") {
    t4t::SplitMix64 rng(13);
    t4t::EncoderBlock<double> blk(8, 2, t4t::KvReduce::none, 1, 2, rng);
    std::fill(blk.attn.proj.w.data().begin(), blk.attn.proj.w.data().end(), 0.0);
    std::fill(blk.attn.proj.b.data().begin(), blk.attn.proj.b.data().end(), 0.0);
    std::fill(blk.ffn.fc2.w.data().begin(), blk.ffn.fc2.w.data().end(), 0.0);
    std::fill(blk.ffn.fc2.b.data().begin(), blk.ffn.fc2.b.data().end(), 0.0);
    std::mt19937 mrng(13);
    auto tokens = testutil::random_vec(mrng, 16 * 8);
    auto out = blk.forward(Tensor<double>::from_data({16, 8}, tokens), 4, 4);
    CHECK(testutil::max_abs_diff(out.data(), tokens) == 0.0);
}

TEST_CASE("strided-conv K/V reduction keeps the output shape") {
    t4t::SplitMix64 rng(14);
    t4t::AttentionLayer<double> attn(8, 2, t4t::KvReduce::strided_conv, 2, rng);
    std::mt19937 mrng(14);
    auto out =
        attn.forward(Tensor<double>::from_data({64, 8}, testutil::random_vec(mrng, 512)), 8, 8);
    CHECK(out.shape() == std::vector<int>{64, 8});
    CHECK(out.all_finite());
}

TEST_CASE("gradient of mean(F4) w.r.t. a stage-1 weight matches finite differences") {
    t4t::SplitMix64 rng(15);
    t4t::PyramidEncoder<double> enc(micro_config(), rng);
    std::mt19937 mrng(15);
    auto img = random_image(mrng, 32, 32);

    auto& probe = enc.stages[0].blocks[0].attn.q.w; // a stage-1 weight tensor
    probe.set_requires_grad(true);
    t4t::Tape<double>::active().clear();
    auto loss = t4t::mean_all(enc.forward(img).f(3));
    t4t::backward(loss);
    const auto analytic = probe.grad();

    const double step = 1e-4;
    double worst = 0;
    std::mt19937 pick(99);
    std::uniform_int_distribution<int> which(0, static_cast<int>(probe.numel()) - 1);
    for (int trial = 0; trial < 5; ++trial) {
        const int i = which(pick);
        const double saved = probe.at(i);
        t4t::NoGradGuard<double> ng;
        probe.ref(i) = saved + step;
        const double fp = t4t::mean_all(enc.forward(img).f(3)).item();
        probe.ref(i) = saved - step;
        const double fm = t4t::mean_all(enc.forward(img).f(3)).item();
        probe.ref(i) = saved;
        const double numeric = (fp - fm) / (2 * step);
        const double denom =
            std::max({std::abs(analytic[static_cast<std::size_t>(i)]), std::abs(numeric), 1e-6});
        worst = std::max(worst, std::abs(analytic[static_cast<std::size_t>(i)] - numeric) / denom);
    }
    probe.set_requires_grad(false);
    probe.zero_grad();
    CHECK(worst < 1e-3);
}

TEST_CASE("every parameter receives a finite gradient from a scalar loss") {
    t4t::SplitMix64 rng(16);
    t4t::PyramidEncoder<double> enc(micro_config(), rng);
    enc.visit([](const std::string&, Tensor<double>& t) { t.set_requires_grad(true); });
    std::mt19937 mrng(16);
    auto pyr = enc.forward(random_image(mrng, 32, 32));
    auto loss = t4t::add(t4t::add(t4t::mean_all(pyr.f(0)), t4t::mean_all(pyr.f(1))),
                         t4t::add(t4t::mean_all(pyr.f(2)), t4t::mean_all(pyr.f(3))));
    t4t::backward(loss);
    int with_grad = 0, total = 0;
    enc.visit([&](const std::string& name, Tensor<double>& t) {
        ++total;
        REQUIRE_MESSAGE(t.grad().size() == t.data().size(), name);
        bool finite = true;
        for (double g : t.grad()) finite = finite && std::isfinite(g);
        CHECK_MESSAGE(finite, name);
        ++with_grad;
        t.set_requires_grad(false);
        t.zero_grad();
    });
    CHECK(with_grad == total);
}

TEST_CASE("encoder forward is deterministic for a fixed seed") {
    std::mt19937 mrng(17);
    auto img = random_image(mrng, 32, 32);
    t4t::SplitMix64 r1(42), r2(42);
    t4t::PyramidEncoder<double> e1(toy_config(), r1), e2(toy_config(), r2);
    auto p1 = e1.forward(img), p2 = e2.forward(img);
    for (int s = 0; s < 4; ++s) CHECK(p1.f(s).data() == p2.f(s).data());
}
