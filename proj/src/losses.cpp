#include "cyclesynth/losses.hpp"

#include "cyclesynth/errors.hpp"
#include "cyclesynth/ops.hpp"

namespace cyclesynth {

namespace {

void require_nonempty(const Tensor& t, const char* what)
{
    if (!t.defined() || t.numel() == 0)
        throw ShapeError(std::string(what) + ": empty score map");
}

Tensor mean_sq_from(const Tensor& s, Scalar target)
{
    return ops::mean(ops::square(ops::add_scalar(s, -target)));
}

} // namespace

Tensor loss_dis(const Tensor& score_real, const Tensor& score_fake)
{
    require_nonempty(score_real, "loss_dis");
    require_nonempty(score_fake, "loss_dis");
    return ops::add(mean_sq_from(score_real, 1), mean_sq_from(score_fake, 0));
}

Tensor loss_gen_adv(const Tensor& score_fake)
{
    require_nonempty(score_fake, "loss_gen_adv");
    return mean_sq_from(score_fake, 1);
}

Tensor mean_abs_diff(const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape())
        throw ShapeError("mean_abs_diff: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    return ops::mean(ops::abs(ops::sub(a, b)));
}

Tensor loss_cycle(const Tensor& i_mr, const Tensor& rec_mr, const Tensor& i_ct, const Tensor& rec_ct)
{
    return ops::add(mean_abs_diff(rec_mr, i_mr), mean_abs_diff(rec_ct, i_ct));
}

Tensor loss_paired(const Tensor& fake_ct, const Tensor& real_ct, const Tensor& score_fake, Scalar mu)
{
    return ops::add(loss_gen_adv(score_fake), ops::scale(mean_abs_diff(fake_ct, real_ct), mu));
}

Tensor generator_objective(const Tensor& adv_ct, const Tensor& adv_mr, const Tensor& cycle, Scalar lambda)
{
    return ops::add(ops::add(adv_ct, adv_mr), ops::scale(cycle, lambda));
}

} // namespace cyclesynth
