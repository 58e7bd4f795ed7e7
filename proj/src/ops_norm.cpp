#include "cyclesynth/errors.hpp"
#include "cyclesynth/ops.hpp"
#include "cyclesynth/parallel.hpp"
#include "ops_internal.hpp"

#include <cmath>
#include <memory>

namespace cyclesynth::ops {

using detail_ops::make_result;
using detail_ops::Node;

Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps)
{
    if (x.ndim() != 4)
        throw ShapeError("instance_norm: expected [N,C,H,W], got " + shape_str(x.shape()));
    const auto n = x.dim(0);
    const auto c = x.dim(1);
    const auto plane = x.dim(2) * x.dim(3);
    if (plane < 2)
        throw ShapeError("instance_norm: plane of " + std::to_string(plane) +
                         " element(s) has no variance; need H*W >= 2, got " + shape_str(x.shape()));
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
        throw ShapeError("instance_norm: gamma/beta must be [" + std::to_string(c) + "], got " +
                         shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));

    auto xhat = std::make_shared<std::vector<Scalar>>(static_cast<std::size_t>(n * c * plane));
    auto inv_std = std::make_shared<std::vector<Scalar>>(static_cast<std::size_t>(n * c));
    std::vector<Scalar> out(xhat->size());
    auto xd = x.data();
    auto gd = gamma.data();
    auto bd = beta.data();

    parallel_for(n * c, [&](std::int64_t pc) {
        const Scalar* src = xd.data() + pc * plane;
        double acc = 0.0;
        for (std::int64_t i = 0; i < plane; ++i)
            acc += src[i];
        const double mu = acc / static_cast<double>(plane);
        double sq = 0.0;
        for (std::int64_t i = 0; i < plane; ++i) {
            const double d = src[i] - mu;
            sq += d * d;
        }
        const double var = sq / static_cast<double>(plane);
        const Scalar is = static_cast<Scalar>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        (*inv_std)[pc] = is;
        const auto ch = pc % c;
        Scalar* xh = xhat->data() + pc * plane;
        Scalar* dst = out.data() + pc * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
            xh[i] = static_cast<Scalar>((src[i] - mu)) * is;
            dst[i] = gd[ch] * xh[i] + bd[ch];
        }
    });

    return make_result(x.shape(), std::move(out), "instance_norm", {x, gamma, beta},
                       [xhat, inv_std, n, c, plane](Node& self) {
                           auto& xn = *self.inputs[0];
                           auto& gn = *self.inputs[1];
                           auto& bn = *self.inputs[2];
                           const auto& dy = self.grad;
                           std::vector<double> dgamma_part(static_cast<std::size_t>(n * c));
                           std::vector<double> dbeta_part(static_cast<std::size_t>(n * c));
                           std::span<Scalar> dx;
                           if (xn.requires_grad)
                               dx = xn.grad_buffer();
                           parallel_for(n * c, [&](std::int64_t pc) {
                               const Scalar* g = dy.data() + pc * plane;
                               const Scalar* xh = xhat->data() + pc * plane;
                               double sg = 0.0;
                               double sgx = 0.0;
                               for (std::int64_t i = 0; i < plane; ++i) {
                                   sg += g[i];
                                   sgx += static_cast<double>(g[i]) * xh[i];
                               }
                               dbeta_part[pc] = sg;
                               dgamma_part[pc] = sgx;
                               if (xn.requires_grad) {
                                   const Scalar gam = gn.data[pc % c];
                                   const Scalar mean_g = static_cast<Scalar>(sg / static_cast<double>(plane));
                                   const Scalar mean_gx = static_cast<Scalar>(sgx / static_cast<double>(plane));
                                   const Scalar is = (*inv_std)[pc];
                                   Scalar* d = dx.data() + pc * plane;
                                   for (std::int64_t i = 0; i < plane; ++i)
                                       d[i] += gam * is * (g[i] - mean_g - xh[i] * mean_gx);
                               }
                           });
                           if (gn.requires_grad) {
                               auto buf = gn.grad_buffer();
                               for (std::int64_t s = 0; s < n; ++s)
                                   for (std::int64_t ch = 0; ch < c; ++ch)
                                       buf[ch] += static_cast<Scalar>(dgamma_part[s * c + ch]);
                           }
                           if (bn.requires_grad) {
                               auto buf = bn.grad_buffer();
                               for (std::int64_t s = 0; s < n; ++s)
                                   for (std::int64_t ch = 0; ch < c; ++ch)
                                       buf[ch] += static_cast<Scalar>(dbeta_part[s * c + ch]);
                           }
                       });
}

} // namespace cyclesynth::ops
