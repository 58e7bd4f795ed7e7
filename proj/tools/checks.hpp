#pragma once

// Self-check suite shared by `cyclesynth selfcheck` and the acceptance runner.

#include <functional>
#include <string>
#include <vector>

namespace cyclesynth::checks {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0;
    std::size_t probes = 0;   // gradient checks only
    double max_rel_err = 0;   // gradient checks only
};

struct CheckOptions {
    // Op whose backward gets scaled by 1.5 (test hook), e.g. "tanh" or "generator".
    std::string corrupt_op;
    int shape_trials = 3;
    std::function<void(const CheckResult&)> on_result;
};

// Every differentiable op over random shapes, the losses, and both networks.
std::vector<CheckResult> gradient_checks(const CheckOptions& opt = {});
// Receptive field, generator shape preservation, discriminator output size.
std::vector<CheckResult> architecture_checks(const CheckOptions& opt = {});
// SVOL and checkpoint encode/decode are bitwise exact.
std::vector<CheckResult> roundtrip_checks(const CheckOptions& opt = {});

std::vector<CheckResult> all_checks(const CheckOptions& opt = {});

// Name of the first failing check, or empty.
std::string first_failure(const std::vector<CheckResult>& results);

} // namespace cyclesynth::checks
