#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"
#include "t4t/model.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

using t4t::Tensor;
using t4t::TpmConfig;

namespace {

t4t::EncoderConfig toy_encoder_config() {
    t4t::EncoderConfig cfg;
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
    cfg.kv_pool = 0; // full attention at toy scale
    return cfg;
}

} // namespace

TEST_CASE("TPM parses a stage-4-like map to the shared C x H/4 x W/4 grid") {
    t4t::SplitMix64 rng(1);
    TpmConfig cfg; // embed 64, pooled K/V
    t4t::Tpm<double> tpm(512, cfg, rng);
    std::mt19937 mrng(1);
    auto f4 = Tensor<double>::from_data({512, 16, 16},
                                        testutil::random_vec(mrng, 512 * 16 * 16, -1, 1));
    auto out = tpm.forward(f4, 128, 128);
    CHECK(out.shape() == std::vector<int>{64, 128, 128});
    CHECK(out.all_finite());
}

TEST_CASE("TPM at the target resolution skips the resize") {
    t4t::SplitMix64 rng(2);
    auto cfg = toy_tpm_config();
    t4t::Tpm<double> tpm(8, cfg, rng);
    std::mt19937 mrng(2);
    auto f1 = Tensor<double>::from_data({8, 4, 4}, testutil::random_vec(mrng, 8 * 16));
    auto out = tpm.forward(f1, 4, 4);
    CHECK(out.shape() == std::vector<int>{8, 4, 4});
}

TEST_CASE("TPM rejects targets smaller than the source grid") {
    t4t::SplitMix64 rng(3);
    t4t::Tpm<double> tpm(8, toy_tpm_config(), rng);
    CHECK_THROWS_AS(tpm.forward(Tensor<double>({8, 4, 4}), 2, 2), t4t::ValueError);
}

TEST_CASE("TPM composition matches a staged oracle on a toy map") {
    t4t::SplitMix64 rng(4);
    TpmConfig cfg;
    cfg.embed_dim = 4;
    cfg.heads = 1;
    cfg.kv_pool = 0;
    const int cin = 8, h = 2, w = 2, n = h * w, c = 4;
    t4t::Tpm<double> tpm(cin, cfg, rng);
    std::mt19937 mrng(4);
    auto fmap = testutil::random_vec(mrng, static_cast<std::size_t>(cin) * n);

    // tokens from CHW
    std::vector<double> tokens(static_cast<std::size_t>(n) * cin);
    for (int ch = 0; ch < cin; ++ch)
        for (int p = 0; p < n; ++p)
            tokens[static_cast<std::size_t>(p) * cin + ch] =
                fmap[static_cast<std::size_t>(ch) * n + p];
    // projection
    auto proj = oracle::matmul(tokens, tpm.proj.w.data(), n, cin, c);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) proj[static_cast<std::size_t>(i) * c + j] += tpm.proj.b.at(j);
    // pre-norm attention with residual
    auto normed = oracle::layer_norm(proj, n, c, tpm.ln.gamma.data(), tpm.ln.beta.data());
    auto project = [&](const t4t::LinearLayer<double>& lin, int cols) {
        auto y = oracle::matmul(normed, lin.w.data(), n, c, cols);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < cols; ++j) y[static_cast<std::size_t>(i) * cols + j] += lin.b.at(j);
        return y;
    };
    auto q = project(tpm.attn.q, c);
    auto kvj = project(tpm.attn.kv, 2 * c);
    std::vector<double> k(static_cast<std::size_t>(n) * c), v(static_cast<std::size_t>(n) * c);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
            k[static_cast<std::size_t>(i) * c + j] = kvj[static_cast<std::size_t>(i) * 2 * c + j];
            v[static_cast<std::size_t>(i) * c + j] =
                kvj[static_cast<std::size_t>(i) * 2 * c + c + j];
        }
    auto mixed = oracle::attention(q, k, v, n, n, c, 1);
    auto attn_out = oracle::matmul(mixed, tpm.attn.proj.w.data(), n, c, c);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
            attn_out[static_cast<std::size_t>(i) * c + j] += tpm.attn.proj.b.at(j);
            attn_out[static_cast<std::size_t>(i) * c + j] += proj[static_cast<std::size_t>(i) * c + j];
        }
    // back to CHW and resize
    std::vector<double> chw(static_cast<std::size_t>(c) * n);
    for (int ch = 0; ch < c; ++ch)
        for (int p = 0; p < n; ++p)
            chw[static_cast<std::size_t>(ch) * n + p] =
                attn_out[static_cast<std::size_t>(p) * c + ch];
    auto want = oracle::bilinear(chw, c, h, w, 4, 4);

    auto got = tpm.forward(Tensor<double>::from_data({cin, h, w}, fmap), 4, 4);
    CHECK(testutil::max_abs_diff(got.data(), want) < 1e-10);
}

TEST_CASE("fuse_pyramid sum of zero maps is zero; {a,0,0,0} gives a") {
    std::mt19937 mrng(5);
    auto a = Tensor<double>::from_data({2, 3, 3}, testutil::random_vec(mrng, 18));
    std::vector<Tensor<double>> zeros{Tensor<double>({2, 3, 3}), Tensor<double>({2, 3, 3}),
                                      Tensor<double>({2, 3, 3}), Tensor<double>({2, 3, 3})};
    auto z = t4t::fuse_pyramid(zeros, t4t::FusionMode::sum);
    for (auto v : z.data()) CHECK(v == 0.0);
    std::vector<Tensor<double>> one{a, Tensor<double>({2, 3, 3}), Tensor<double>({2, 3, 3}),
                                    Tensor<double>({2, 3, 3})};
    auto s = t4t::fuse_pyramid(one, t4t::FusionMode::sum);
    CHECK(testutil::max_abs_diff(s.data(), a.data()) == 0.0);
}

TEST_CASE("fuse_pyramid concat keeps stage order as channel blocks") {
    std::vector<Tensor<double>> maps;
    for (int s = 0; s < 4; ++s) maps.push_back(Tensor<double>({2, 2, 2}, static_cast<double>(s + 1)));
    auto cat = t4t::fuse_pyramid(maps, t4t::FusionMode::concat);
    REQUIRE(cat.shape() == std::vector<int>{8, 2, 2});
    for (int ch = 0; ch < 8; ++ch)
        for (int p = 0; p < 4; ++p) CHECK(cat.at(ch, p / 2, p % 2) == 1.0 + ch / 2);
}

TEST_CASE("fuse_pyramid rejects mismatched shapes") {
    std::vector<Tensor<double>> maps{Tensor<double>({2, 3, 3}), Tensor<double>({2, 3, 3}),
                                     Tensor<double>({2, 3, 3}), Tensor<double>({2, 2, 2})};
    CHECK_THROWS_AS(t4t::fuse_pyramid(maps, t4t::FusionMode::sum), t4t::ShapeError);
}

TEST_CASE("seg head with zero weights yields uniform logits, argmax class 0") {
    t4t::SplitMix64 rng(6);
    t4t::SegHead<double> head(8, 5, rng);
    std::fill(head.conv.w.data().begin(), head.conv.w.data().end(), 0.0);
    std::mt19937 mrng(6);
    auto fused = Tensor<double>::from_data({8, 4, 4}, testutil::random_vec(mrng, 128));
    auto logits = head.forward(fused, 16, 16);
    CHECK(logits.shape() == std::vector<int>{5, 16, 16});
    auto classes = t4t::argmax_classes(logits);
    for (auto cl : classes) CHECK(cl == 0);
}

TEST_CASE("seg head upsamples 64x128x128 to 13x512x512") {
    t4t::SplitMix64 rng(7);
    t4t::SegHead<float> head(64, 13, rng);
    Tensor<float> fused({64, 128, 128}, 0.25f);
    auto logits = head.forward(fused, 512, 512);
    CHECK(logits.shape() == std::vector<int>{13, 512, 512});
}

TEST_CASE("seg head validates the x4 relation") {
    t4t::SplitMix64 rng(8);
    t4t::SegHead<double> head(8, 3, rng);
    CHECK_THROWS_AS(head.forward(Tensor<double>({8, 4, 4}), 15, 16), t4t::ValueError);
}

TEST_CASE("seg head gradient matches finite differences") {
    t4t::SplitMix64 rng(9);
    t4t::SegHead<double> head(4, 3, rng);
    std::mt19937 mrng(9);
    auto fused = Tensor<double>::from_data({4, 2, 2}, testutil::random_vec(mrng, 16));
    auto err = testutil::gradcheck_max_rel_err({head.conv.w, head.conv.b}, [&]() {
        auto y = head.forward(fused, 8, 8);
        return t4t::sum_all(t4t::mul(y, y));
    });
    CHECK(err < 1e-3);
}

TEST_CASE("dual forward emits both heads at full resolution") {
    t4t::DualSegModel<double> model(toy_encoder_config(), toy_tpm_config(), 13, 12, 77);
    std::mt19937 mrng(10);
    auto img = Tensor<double>::from_data({3, 32, 32}, testutil::random_vec(mrng, 3 * 32 * 32, 0, 1));
    auto out = model.forward(img);
    CHECK(out.general_logits.shape() == std::vector<int>{13, 32, 32});
    CHECK(out.trans_logits.shape() == std::vector<int>{12, 32, 32});
    CHECK(out.general_logits.all_finite());
    CHECK(out.trans_logits.all_finite());
}

TEST_CASE("perturbing head-1 parameters leaves head-2 logits bit-identical") {
    t4t::DualSegModel<double> model(toy_encoder_config(), toy_tpm_config(), 4, 4, 78);
    std::mt19937 mrng(11);
    auto img = Tensor<double>::from_data({3, 32, 32}, testutil::random_vec(mrng, 3 * 32 * 32, 0, 1));
    auto before = model.forward(img);
    model.general_head.visit("decoder_general", [](const std::string&, Tensor<double>& t) {
        for (auto& v : t.data()) v += 0.37;
    });
    auto after = model.forward(img);
    CHECK(after.trans_logits.data() == before.trans_logits.data());
    bool changed = after.general_logits.data() != before.general_logits.data();
    CHECK(changed);
}

TEST_CASE("gradient of head-1 loss w.r.t. head-2 parameters is identically zero") {
    t4t::DualSegModel<double> model(toy_encoder_config(), toy_tpm_config(), 4, 4, 79);
    model.set_requires_grad(true);
    std::mt19937 mrng(12);
    auto img = Tensor<double>::from_data({3, 32, 32}, testutil::random_vec(mrng, 3 * 32 * 32, 0, 1));
    auto out = model.forward(img);
    auto loss = t4t::mean_all(t4t::mul(out.general_logits, out.general_logits));
    t4t::backward(loss);
    model.trans_head.visit("decoder_trans", [](const std::string& name, Tensor<double>& t) {
        for (double g : t.grad()) CHECK_MESSAGE(g == 0.0, name);
    });
    bool encoder_touched = false;
    model.encoder.visit([&](const std::string&, Tensor<double>& t) {
        for (double g : t.grad()) encoder_touched = encoder_touched || g != 0.0;
    });
    CHECK(encoder_touched); // shared trunk does learn from head-1
    model.set_requires_grad(false);
    model.visit([](const std::string&, Tensor<double>& t) { t.zero_grad(); });
}

TEST_CASE("argmax maps are invariant under per-pixel constant logit shifts") {
    std::mt19937 mrng(13);
    auto logits = Tensor<double>::from_data({5, 3, 3}, testutil::random_vec(mrng, 45));
    auto base = t4t::argmax_classes(logits);
    auto shifted = logits;
    std::uniform_real_distribution<double> shift(-7, 7);
    for (int p = 0; p < 9; ++p) {
        const double s = shift(mrng);
        for (int c = 0; c < 5; ++c) shifted.data()[static_cast<std::size_t>(c) * 9 + p] += s;
    }
    CHECK(t4t::argmax_classes(shifted) == base);
}

TEST_CASE("feature map grayscale export: constant map becomes mid-gray 128") {
    auto map = Tensor<double>({3, 4, 4}, 2.0);
    auto img = t4t::feature_map_to_gray(map);
    for (auto px : img.data) CHECK(px == 128);
}

TEST_CASE("export writes eight H/4 grayscale files that round-trip") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "t4t_export_test";
    fs::remove_all(dir);
    fs::create_directories(dir);

    t4t::DualSegModel<double> model(toy_encoder_config(), toy_tpm_config(), 4, 4, 80);
    std::mt19937 mrng(14);
    auto img = Tensor<double>::from_data({3, 32, 32}, testutil::random_vec(mrng, 3 * 32 * 32, 0, 1));
    auto files = t4t::export_feature_maps(model, img, dir.string());
    CHECK(files.size() == 8);
    for (const auto& f : files) {
        auto back = t4t::read_pgm8(f);
        CHECK(back.w == 8);
        CHECK(back.h == 8);
        // byte-for-byte identity with what the writer produced
        std::ifstream in(f, std::ios::binary);
        std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        t4t::ImageU8 again;
        again.w = back.w;
        again.h = back.h;
        again.channels = 1;
        again.data = back.data;
        const auto copy = f + ".copy";
        t4t::write_pgm8(copy, again);
        std::ifstream in2(copy, std::ios::binary);
        std::string raw2((std::istreambuf_iterator<char>(in2)), std::istreambuf_iterator<char>());
        CHECK(raw == raw2);
    }
    fs::remove_all(dir);
}

TEST_CASE("export to an unwritable directory raises an I/O error") {
    t4t::DualSegModel<double> model(toy_encoder_config(), toy_tpm_config(), 4, 4, 81);
    auto img = Tensor<double>({3, 32, 32}, 0.5);
    CHECK_THROWS_AS(t4t::export_feature_maps(model, img, "/nonexistent/place"), t4t::IoError);
}
