#pragma once

#include <cmath>

namespace ncast {

// Linear warm-up to base over `warmup` steps, then exponential decay with
// the given half-life in steps.
struct OptimizerSchedule {
    float base_lr = 1e-4f;
    int warmup = 100;
    float half_life = 10000.0f;
};

inline float lr_at(const OptimizerSchedule& s, long long step) {
    if (step < 0) return 0.0f;
    if (step <= s.warmup) return s.base_lr * (float)step / (float)s.warmup;
    return s.base_lr * std::pow(0.5f, (float)(step - s.warmup) / s.half_life);
}

}  // namespace ncast
