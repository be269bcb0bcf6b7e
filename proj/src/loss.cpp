#include "ducseg/train.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ducseg {

LossResult softmax_ce_loss(const Tensor& logits, const LabelMap& labels, LossReduction reduction)
{
    const auto& s = logits.shape();
    if (s.n != 1) throw std::invalid_argument("softmax_ce_loss: expects a single image");
    if (s.h != labels.height || s.w != labels.width)
        throw std::invalid_argument("softmax_ce_loss: logits " + to_string(s) + " do not match labels " +
                                    std::to_string(labels.height) + "x" + std::to_string(labels.width));
    validate_labels(labels, s.c);

    LossResult res{0.0, Tensor(s, 0.0), 0};
    std::vector<double> p(s.c);
    for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x) {
            const int label = labels.at(y, x);
            if (label == kIgnoreLabel) continue;
            double m = logits.at(0, 0, y, x);
            for (std::size_t c = 1; c < s.c; ++c) m = std::max(m, logits.at(0, c, y, x));
            double z = 0.0;
            for (std::size_t c = 0; c < s.c; ++c) {
                p[c] = std::exp(logits.at(0, c, y, x) - m);
                z += p[c];
            }
            const auto lbl = static_cast<std::size_t>(label);
            res.loss += m + std::log(z) - logits.at(0, lbl, y, x);
            for (std::size_t c = 0; c < s.c; ++c) res.grad.at(0, c, y, x) = p[c] / z - (c == lbl ? 1.0 : 0.0);
            ++res.pixels;
        }
    if (reduction == LossReduction::mean && res.pixels > 0) {
        const double inv = 1.0 / static_cast<double>(res.pixels);
        res.loss *= inv;
        for (auto& g : res.grad.data()) g *= inv;
    }
    return res;
}

void validate(const SgdConfig& cfg)
{
    if (!(cfg.base_lr >= 0.0)) throw std::invalid_argument("SgdConfig: base_lr must be >= 0");
    if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) throw std::invalid_argument("SgdConfig: momentum must be in [0, 1)");
    if (!(cfg.power > 0.0)) throw std::invalid_argument("SgdConfig: power must be > 0");
    if (cfg.batch < 1) throw std::invalid_argument("SgdConfig: batch must be >= 1");
}

double poly_lr(std::size_t iter, const SgdConfig& cfg)
{
    if (iter > cfg.max_iter)
        throw std::invalid_argument("poly_lr: iteration " + std::to_string(iter) + " beyond max_iter " +
                                    std::to_string(cfg.max_iter));
    if (iter == cfg.max_iter) return 0.0;
    const double frac = static_cast<double>(iter) / static_cast<double>(cfg.max_iter);
    return cfg.base_lr * std::pow(1.0 - frac, cfg.power);
}

void sgd_step(std::span<const ParamRef> params, SgdState& state, const SgdConfig& cfg, std::size_t iter)
{
    if (state.velocity.empty()) {
        for (const auto& p : params) state.velocity.emplace_back(p.value.size(), 0.0);
    }
    if (state.velocity.size() != params.size()) throw std::invalid_argument("sgd_step: parameter count changed");
    const double lr = poly_lr(iter, cfg);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& p = params[i];
        auto& v = state.velocity[i];
        if (p.grad.size() != p.value.size() || v.size() != p.value.size())
            throw std::invalid_argument("sgd_step: shape mismatch in parameter " + std::to_string(i));
        for (std::size_t j = 0; j < v.size(); ++j) {
            v[j] = cfg.momentum * v[j] - lr * (p.grad[j] + cfg.weight_decay * p.value[j]);
            p.value[j] += v[j];
        }
    }
}

}  // namespace ducseg
