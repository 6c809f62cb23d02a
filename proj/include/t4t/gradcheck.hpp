#pragma once

// Central finite-difference verification of every differentiable op and of
// the end-to-end toy model, run in double precision with step 1e-4.

#include "t4t/config.hpp"
#include "t4t/train.hpp"

#include <functional>
#include <string>
#include <vector>

namespace t4t {

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

namespace detail {

// probes every element of every listed tensor unless sample_stride > 1
template <typename LossFn>
double fd_max_rel_err(std::vector<Tensor<double>> params, LossFn loss_fn, int sample_stride = 1,
                      double step = 1e-4) {
    for (auto& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    Tape<double>::active().clear();
    auto loss = loss_fn();
    backward(loss);
    double worst = 0.0;
    for (auto& p : params) {
        const auto analytic = p.grad();
        for (std::int64_t i = 0; i < p.numel(); i += sample_stride) {
            const double saved = p.at(static_cast<int>(i));
            double fp, fm;
            {
                NoGradGuard<double> ng;
                p.ref(static_cast<int>(i)) = saved + step;
                fp = loss_fn().item();
                p.ref(static_cast<int>(i)) = saved - step;
                fm = loss_fn().item();
                p.ref(static_cast<int>(i)) = saved;
            }
            const double numeric = (fp - fm) / (2.0 * step);
            const double a = analytic[static_cast<std::size_t>(i)];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
        p.set_requires_grad(false);
        p.zero_grad();
    }
    return worst;
}

} // namespace detail

inline std::vector<GradCheckResult> run_gradcheck(double tolerance = 1e-3) {
    std::vector<GradCheckResult> results;
    SplitMix64 rng(1234);
    auto randomized = [&rng](Tensor<double>& t, double lo = -1.0, double hi = 1.0) {
        for (auto& v : t.data()) v = rng.uniform(lo, hi);
        return t;
    };
    auto check = [&](const std::string& name, std::vector<Tensor<double>> params,
                     std::function<Tensor<double>()> loss, int stride = 1) {
        GradCheckResult r;
        r.name = name;
        r.max_rel_err = detail::fd_max_rel_err(std::move(params), loss, stride);
        r.pass = r.max_rel_err < tolerance;
        results.push_back(r);
    };

    {
        Tensor<double> a({4, 3}), b({3, 5}), w({4, 5});
        randomized(a);
        randomized(b);
        randomized(w);
        check("matmul", {a, b}, [=]() { return sum_all(mul(matmul(a, b), w)); });
    }
    {
        Tensor<double> x({2, 5, 5}), k({3, 2, 3, 3}), bias({3});
        randomized(x);
        randomized(k);
        randomized(bias);
        check("conv2d", {x, k, bias}, [=]() {
            auto y = conv2d(x, k, bias, 2, 1);
            return sum_all(mul(y, y));
        });
    }
    {
        Tensor<double> x({3, 5, 5}), k({3, 1, 3, 3}), bias({3});
        randomized(x);
        randomized(k);
        randomized(bias);
        check("depthwise_conv2d", {x, k, bias}, [=]() {
            auto y = depthwise_conv2d(x, k, bias, 1, 1);
            return sum_all(mul(y, y));
        });
    }
    {
        Tensor<double> x({4, 6}), w({4, 6});
        randomized(x);
        randomized(w);
        check("softmax", {x}, [=]() { return sum_all(mul(softmax(x, 1), w)); });
    }
    {
        Tensor<double> x({3, 8}), g({8}), b({8}), w({3, 8});
        randomized(x);
        randomized(g, 0.5, 1.5);
        randomized(b);
        randomized(w);
        check("layer_norm", {x, g, b}, [=]() { return sum_all(mul(layer_norm(x, g, b), w)); });
    }
    {
        Tensor<double> x({11});
        randomized(x, -3.0, 3.0);
        check("gelu", {x}, [=]() { return sum_all(gelu(x)); });
    }
    {
        Tensor<double> x({2, 3, 3});
        randomized(x);
        check("bilinear_resize", {x}, [=]() {
            auto y = bilinear_resize(x, 7, 5);
            return sum_all(mul(y, y));
        });
    }
    {
        Tensor<double> x({2, 6, 6});
        randomized(x);
        check("avg_pool_to", {x}, [=]() {
            auto y = avg_pool_to(x, 2, 3);
            return sum_all(mul(y, y));
        });
    }
    {
        Tensor<double> logits({4, 3, 3});
        randomized(logits, -2.0, 2.0);
        std::vector<int> target(9);
        for (std::size_t i = 0; i < 9; ++i) target[i] = static_cast<int>(rng.uniform_int(0, 3));
        target[4] = 255; // exercised ignore path
        check("cross_entropy", {logits},
              [=]() { return cross_entropy(logits, target, 255); });
    }

    // end-to-end: toy dual model, sampled parameter elements
    {
        RunConfig cfg;
        apply_model_preset(cfg, "toy");
        cfg.seed = 4321;
        auto model = std::make_shared<DualSegModel<double>>(cfg.encoder, cfg.tpm,
                                                            cfg.general_classes,
                                                            cfg.trans_classes, cfg.seed);
        auto scene = generate_scene(dataset_scene_spec(99, 0, DatasetOptions{}));
        auto img = std::make_shared<Tensor<double>>(Tensor<double>::from_data(
            scene.frame.rgb.shape(),
            std::vector<double>(scene.frame.rgb.data().begin(), scene.frame.rgb.data().end())));
        std::vector<int> gt_g(scene.gt_general.begin(), scene.gt_general.end());
        std::vector<int> gt_t(scene.gt_trans.begin(), scene.gt_trans.end());

        std::vector<Tensor<double>> params = model->parameters();
        auto loss_fn = [model, img, gt_g, gt_t]() {
            auto out = model->forward(*img);
            return add(cross_entropy(out.general_logits, gt_g),
                       cross_entropy(out.trans_logits, gt_t));
        };
        // every ~301st scalar across all tensors keeps this under the time box
        GradCheckResult r;
        r.name = "toy_model_end_to_end";
        r.max_rel_err = detail::fd_max_rel_err(params, loss_fn, 301);
        r.pass = r.max_rel_err < tolerance;
        results.push_back(r);
    }
    return results;
}

} // namespace t4t
