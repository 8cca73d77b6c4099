#include "flowsr/optim.hpp"

#include <cmath>

#include "flowsr/errors.hpp"

namespace flowsr {

double AdamOptimizer::effective_lr(std::int64_t step) const {
    if (cfg_.warmup_steps <= 0 || step >= cfg_.warmup_steps) {
        return cfg_.lr;
    }
    return cfg_.lr * static_cast<double>(step) / static_cast<double>(cfg_.warmup_steps);
}

void AdamOptimizer::step(VelocityModel& model, const GradMap& grads) {
    if (model.frozen) {
        throw UsageError("adam: model is frozen");
    }
    if (m_.empty()) {
        for (const auto& [name, p] : model.params) {
            m_[name] = Tensor::zeros(p.shape());
            v_[name] = Tensor::zeros(p.shape());
        }
    }
    ++step_;
    const double lr = effective_lr(step_);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (auto& [name, p] : model.params) {
        const auto git = grads.find(name);
        if (git == grads.end()) {
            throw UsageError("adam: missing gradient for " + name);
        }
        const Tensor& g = git->second;
        if (!g.same_shape(p)) {
            throw DimensionError("adam: gradient shape mismatch for " + name);
        }
        if (!g.all_finite()) {
            throw TrainingError("adam: non-finite gradient in parameter '" + name + "'");
        }
        Tensor& m = m_[name];
        Tensor& v = v_[name];
        for (std::size_t i = 0; i < p.numel(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void ema_update(VelocityModel& model, double ratio) {
    if (model.frozen) {
        throw UsageError("ema_update: model is frozen");
    }
    if (!(ratio >= 0.0 && ratio < 1.0)) {
        throw ConfigError("ema_update: ratio must lie in [0,1)");
    }
    for (auto& [name, e] : model.ema) {
        const Tensor& p = model.params.at(name);
        for (std::size_t i = 0; i < e.numel(); ++i) {
            e[i] = ratio * e[i] + (1.0 - ratio) * p[i];
        }
    }
}

}  // namespace flowsr
