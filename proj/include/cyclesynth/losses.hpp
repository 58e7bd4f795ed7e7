#pragma once

#include "cyclesynth/tensor.hpp"

namespace cyclesynth {

inline constexpr Scalar kDefaultLambda = 10;
inline constexpr Scalar kDefaultPairedMu = 100;

/// Scalar values of one training iteration. In paired mode `cycle` holds the
/// voxel L1 term and `lambda` holds mu, so total_g keeps the same identity.
struct LossBreakdown {
    double d_ct = 0;
    double d_mr = 0;
    double g_adv_ct = 0;
    double g_adv_mr = 0;
    double cycle = 0;
    double lambda = 0;
    double total_g = 0;
    double total_d = 0;
};

// Least-squares discriminator objective: mean((1 - real)^2) + mean(fake^2).
// The two maps are averaged independently, so their shapes may differ.
Tensor loss_dis(const Tensor& score_real, const Tensor& score_fake);
inline Tensor loss_dis_ct(const Tensor& score_real, const Tensor& score_fake) { return loss_dis(score_real, score_fake); }
inline Tensor loss_dis_mr(const Tensor& score_real, const Tensor& score_fake) { return loss_dis(score_real, score_fake); }

// Generator surrogate: mean((1 - fake)^2).
Tensor loss_gen_adv(const Tensor& score_fake);

// Per-voxel mean absolute difference; shapes must match.
Tensor mean_abs_diff(const Tensor& a, const Tensor& b);

Tensor loss_cycle(const Tensor& i_mr, const Tensor& rec_mr, const Tensor& i_ct, const Tensor& rec_ct);

Tensor loss_paired(const Tensor& fake_ct, const Tensor& real_ct, const Tensor& score_fake, Scalar mu = kDefaultPairedMu);

// adv_ct + adv_mr + lambda * cycle
Tensor generator_objective(const Tensor& adv_ct, const Tensor& adv_mr, const Tensor& cycle, Scalar lambda);

} // namespace cyclesynth
