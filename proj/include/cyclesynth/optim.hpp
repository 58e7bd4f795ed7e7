#pragma once

#include "cyclesynth/checkpoint.hpp"
#include "cyclesynth/models.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace cyclesynth {

struct AdamConfig {
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Moment buffers mirror a ParamSet entry for entry (same order, same sizes).
struct AdamState {
    AdamConfig config;
    std::int64_t t = 0;
    std::vector<std::vector<Scalar>> m;
    std::vector<std::vector<Scalar>> v;
};

AdamState make_adam_state(const ParamSet& params, AdamConfig config = {});

// Bias-corrected Adam update of every entry from its .grad(). Throws
// ConfigError naming the first parameter without a gradient.
void adam_step(ParamSet& params, AdamState& state, double lr);

struct LrSchedule {
    double base_lr = 2e-4;
    int fixed_epochs = 100;
    int decay_epochs = 100;
};

// base_lr for epoch < fixed, then linear to zero at fixed + decay.
double lr_at(int epoch, const LrSchedule& s);

// "<prefix>.m.<name>", "<prefix>.v.<name>" tensors plus meta[prefix] = {t, betas, eps}.
void append_adam_state(Checkpoint& ckpt, const std::string& prefix, const ParamSet& params, const AdamState& state);
void restore_adam_state(const Checkpoint& ckpt, const std::string& prefix, const ParamSet& params, AdamState& state);

} // namespace cyclesynth
