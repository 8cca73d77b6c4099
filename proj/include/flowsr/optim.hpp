#pragma once

#include <cstdint>

#include "flowsr/model.hpp"

namespace flowsr {

// Adam with bias correction and a linear learning-rate warmup.
struct AdamConfig {
    double lr = 1e-4;
    int warmup_steps = 1000;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class AdamOptimizer {
public:
    explicit AdamOptimizer(AdamConfig cfg) : cfg_(cfg) {}

    // Effective lr ramps linearly from lr/warmup at step 1 up to lr.
    double effective_lr(std::int64_t step) const;
    std::int64_t step_count() const { return step_; }

    // One update. Gradient shapes must mirror the parameters; a non-finite
    // gradient aborts with the offending parameter named.
    void step(VelocityModel& model, const GradMap& grads);

private:
    AdamConfig cfg_;
    std::int64_t step_ = 0;
    ParamSet m_;
    ParamSet v_;
};

// ema <- ratio * ema + (1 - ratio) * params, elementwise. ratio in [0,1).
void ema_update(VelocityModel& model, double ratio);

}  // namespace flowsr
