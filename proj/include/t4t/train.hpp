#pragma once

// Training loop: decoupled-weight-decay Adam with poly learning-rate decay,
// alternating the two heads batch by batch; per-epoch cross-entropy,
// pixel-accuracy and mIoU per head.

#include "t4t/checkpoint.hpp"
#include "t4t/synth.hpp"

#include <functional>

namespace t4t {

inline double poly_lr(double base, std::int64_t iter, std::int64_t max_iter, double power) {
    if (max_iter <= 0) return base;
    const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(max_iter);
    return base * std::pow(std::max(frac, 0.0), power);
}

// m/v states keyed by parameter order; update:
//   m = b1*m + (1-b1)*g;  v = b2*v + (1-b2)*g^2
//   p -= lr * ( m_hat / (sqrt(v_hat) + eps) + weight_decay * p )
template <typename T>
class AdamW {
public:
    AdamW(double beta1, double beta2, double eps, double weight_decay)
        : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

    void step(std::vector<Tensor<T>>& params, double lr) {
        if (m_.empty()) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                m_[i].assign(static_cast<std::size_t>(params[i].numel()), 0.0);
                v_[i].assign(static_cast<std::size_t>(params[i].numel()), 0.0);
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i];
            const auto& g = p.grad();
            for (std::size_t j = 0; j < g.size(); ++j) {
                const double gj = static_cast<double>(g[j]);
                m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * gj;
                v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * gj * gj;
                const double mhat = m_[i][j] / bc1;
                const double vhat = v_[i][j] / bc2;
                const double pj = static_cast<double>(p.data()[j]);
                p.data()[j] = static_cast<T>(
                    pj - lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * pj));
            }
        }
    }

private:
    double beta1_, beta2_, eps_, weight_decay_;
    std::int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int classes) : k_(classes), counts_(static_cast<std::size_t>(classes) * classes, 0) {}

    void add(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt) {
        for (std::size_t i = 0; i < pred.size(); ++i)
            ++counts_[static_cast<std::size_t>(gt[i]) * k_ + pred[i]];
    }

    double pixel_accuracy() const {
        std::int64_t correct = 0, total = 0;
        for (int g = 0; g < k_; ++g)
            for (int p = 0; p < k_; ++p) {
                const auto c = counts_[static_cast<std::size_t>(g) * k_ + p];
                total += c;
                if (g == p) correct += c;
            }
        return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    }

    // mean IoU over classes that appear in ground truth or prediction
    double miou() const {
        double sum = 0;
        int present = 0;
        for (int c = 0; c < k_; ++c) {
            std::int64_t tp = counts_[static_cast<std::size_t>(c) * k_ + c];
            std::int64_t fp = 0, fn = 0;
            for (int o = 0; o < k_; ++o) {
                if (o == c) continue;
                fp += counts_[static_cast<std::size_t>(o) * k_ + c];
                fn += counts_[static_cast<std::size_t>(c) * k_ + o];
            }
            const auto uni = tp + fp + fn;
            if (uni == 0) continue;
            sum += static_cast<double>(tp) / static_cast<double>(uni);
            ++present;
        }
        return present ? sum / present : 0.0;
    }

private:
    int k_;
    std::vector<std::int64_t> counts_;
};

struct EpochLog {
    int epoch = 0;
    double lr = 0;
    double loss_general = 0, loss_trans = 0;
    double acc_general = 0, acc_trans = 0;
    double miou_general = 0, miou_trans = 0;

    std::string to_json() const {
        std::ostringstream os;
        os << "{\"epoch\":" << epoch << ",\"lr\":" << lr << ",\"loss_general\":" << loss_general
           << ",\"loss_trans\":" << loss_trans << ",\"acc_general\":" << acc_general
           << ",\"acc_trans\":" << acc_trans << ",\"miou_general\":" << miou_general
           << ",\"miou_trans\":" << miou_trans << "}";
        return os.str();
    }
};

inline std::vector<int> labels_as_targets(const std::vector<std::uint8_t>& gt) {
    return std::vector<int>(gt.begin(), gt.end());
}

// full evaluation pass over the dataset, no gradients
template <typename T>
EpochLog evaluate(DualSegModel<T>& model, const std::vector<Scene>& scenes, int general_classes,
                  int trans_classes) {
    NoGradGuard<T> ng;
    EpochLog log;
    ConfusionMatrix cm_g(general_classes), cm_t(trans_classes);
    for (const auto& scene : scenes) {
        Tensor<T> img = Tensor<T>::from_data(
            scene.frame.rgb.shape(),
            std::vector<T>(scene.frame.rgb.data().begin(), scene.frame.rgb.data().end()));
        auto out = model.forward(img);
        log.loss_general +=
            static_cast<double>(cross_entropy(out.general_logits,
                                              labels_as_targets(scene.gt_general)).item());
        log.loss_trans += static_cast<double>(
            cross_entropy(out.trans_logits, labels_as_targets(scene.gt_trans)).item());
        cm_g.add(argmax_classes(out.general_logits), scene.gt_general);
        cm_t.add(argmax_classes(out.trans_logits), scene.gt_trans);
    }
    const double n = static_cast<double>(scenes.size());
    log.loss_general /= n;
    log.loss_trans /= n;
    log.acc_general = cm_g.pixel_accuracy();
    log.acc_trans = cm_t.pixel_accuracy();
    log.miou_general = cm_g.miou();
    log.miou_trans = cm_t.miou();
    return log;
}

// Joint training by batch alternation: even batches update encoder + general
// head, odd batches encoder + transparency head.
template <typename T>
std::vector<EpochLog> train(DualSegModel<T>& model, const std::vector<Scene>& scenes,
                            const RunConfig& cfg,
                            const std::function<void(const EpochLog&)>& on_epoch = {}) {
    if (scenes.empty()) throw ValueError("train: empty dataset");
    auto params = model.parameters();
    model.set_requires_grad(true);
    AdamW<T> opt(0.9, 0.999, cfg.adam_eps, cfg.weight_decay);

    const std::int64_t batches_per_epoch =
        (static_cast<std::int64_t>(scenes.size()) + cfg.batch_size - 1) / cfg.batch_size;
    const std::int64_t max_iter = batches_per_epoch * cfg.epochs;
    std::int64_t iter = 0;
    SplitMix64 shuffle_rng(cfg.seed ^ 0x9d2c5680u);

    std::vector<EpochLog> history;
    std::vector<std::size_t> order(scenes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // seeded Fisher-Yates
        for (std::size_t i = order.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(order[i - 1], order[j]);
        }
        std::size_t cursor = 0;
        for (std::int64_t b = 0; b < batches_per_epoch; ++b, ++iter) {
            const bool general_turn = (iter % 2) == 0;
            const double lr = poly_lr(cfg.lr, iter, max_iter, cfg.poly_power);
            for (auto& p : params) p.zero_grad();
            int used = 0;
            for (int k = 0; k < cfg.batch_size && cursor < order.size(); ++k, ++cursor) {
                const auto& scene = scenes[order[cursor]];
                Tensor<T> img = Tensor<T>::from_data(
                    scene.frame.rgb.shape(),
                    std::vector<T>(scene.frame.rgb.data().begin(), scene.frame.rgb.data().end()));
                auto pyr = model.encoder.forward(img);
                Tensor<T> loss;
                if (general_turn) {
                    auto logits = model.general_head.forward(pyr, img.dim(1), img.dim(2));
                    loss = cross_entropy(logits, labels_as_targets(scene.gt_general));
                } else {
                    auto logits = model.trans_head.forward(pyr, img.dim(1), img.dim(2));
                    loss = cross_entropy(logits, labels_as_targets(scene.gt_trans));
                }
                if (!loss.all_finite())
                    throw ValueError("train: non-finite loss at iter " + std::to_string(iter));
                backward(loss);
                ++used;
            }
            if (used > 0) {
                // mean over the batch
                for (auto& p : params)
                    for (auto& g : p.grad()) g /= static_cast<T>(used);
                opt.step(params, lr);
            }
        }
        auto log = evaluate(model, scenes, cfg.general_classes, cfg.trans_classes);
        log.epoch = epoch;
        log.lr = poly_lr(cfg.lr, iter, max_iter, cfg.poly_power);
        history.push_back(log);
        if (on_epoch) on_epoch(log);
    }
    model.set_requires_grad(false);
    return history;
}

} // namespace t4t
