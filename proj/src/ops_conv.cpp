#include "cyclesynth/errors.hpp"
#include "cyclesynth/ops.hpp"
#include "cyclesynth/parallel.hpp"
#include "ops_internal.hpp"

#include <Eigen/Core>

#include <algorithm>

namespace cyclesynth::ops {

using detail_ops::make_result;
using detail_ops::Node;

namespace {

using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<Mat>;
using ConstMapMat = Eigen::Map<const Mat>;

struct Geometry {
    std::int64_t n, cin, h, w;
    std::int64_t cout;
    int k, stride, pad;
    std::int64_t hp, wp; // padded (conv) or canvas (transpose) extent
    std::int64_t ho, wo;
};

// img: [C, hp, wp] -> col: [C*k*k, ho*wo]
void im2col(const Scalar* img, std::int64_t channels, std::int64_t hp, std::int64_t wp, int k, int stride,
            std::int64_t ho, std::int64_t wo, Scalar* col)
{
    const std::int64_t plane = ho * wo;
    for (std::int64_t c = 0; c < channels; ++c)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                Scalar* dst = col + ((c * k + ki) * k + kj) * plane;
                for (std::int64_t oh = 0; oh < ho; ++oh) {
                    const Scalar* src = img + (c * hp + oh * stride + ki) * wp + kj;
                    Scalar* row = dst + oh * wo;
                    if (stride == 1) {
                        std::copy(src, src + wo, row);
                    } else {
                        for (std::int64_t ow = 0; ow < wo; ++ow)
                            row[ow] = src[ow * stride];
                    }
                }
            }
}

// Adjoint of im2col: scatter-adds col back into img (which must be pre-zeroed).
void col2im(const Scalar* col, std::int64_t channels, std::int64_t hp, std::int64_t wp, int k, int stride,
            std::int64_t ho, std::int64_t wo, Scalar* img)
{
    const std::int64_t plane = ho * wo;
    for (std::int64_t c = 0; c < channels; ++c)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                const Scalar* src = col + ((c * k + ki) * k + kj) * plane;
                for (std::int64_t oh = 0; oh < ho; ++oh) {
                    Scalar* dst = img + (c * hp + oh * stride + ki) * wp + kj;
                    const Scalar* row = src + oh * wo;
                    for (std::int64_t ow = 0; ow < wo; ++ow)
                        dst[ow * stride] += row[ow];
                }
            }
}

// Maps a padded coordinate to its source index, or -1 for a zero pad cell.
inline std::int64_t source_index(std::int64_t i, std::int64_t n, PadMode mode)
{
    if (i >= 0 && i < n)
        return i;
    if (mode == PadMode::zeros)
        return -1;
    return i < 0 ? -i : 2 * (n - 1) - i;
}

void pad_plane_stack(const Scalar* x, std::int64_t channels, std::int64_t h, std::int64_t w, int pad,
                     PadMode mode, Scalar* out)
{
    const std::int64_t hp = h + 2 * pad;
    const std::int64_t wp = w + 2 * pad;
    for (std::int64_t c = 0; c < channels; ++c)
        for (std::int64_t i = 0; i < hp; ++i) {
            const auto si = source_index(i - pad, h, mode);
            Scalar* dst = out + (c * hp + i) * wp;
            if (si < 0) {
                std::fill(dst, dst + wp, Scalar(0));
                continue;
            }
            const Scalar* src = x + (c * h + si) * w;
            for (std::int64_t j = 0; j < wp; ++j) {
                const auto sj = source_index(j - pad, w, mode);
                dst[j] = sj < 0 ? Scalar(0) : src[sj];
            }
        }
}

// Adjoint of pad_plane_stack: folds padded gradients back onto the source.
void unpad_accumulate(const Scalar* dpad, std::int64_t channels, std::int64_t h, std::int64_t w, int pad,
                      PadMode mode, Scalar* dx)
{
    const std::int64_t hp = h + 2 * pad;
    const std::int64_t wp = w + 2 * pad;
    for (std::int64_t c = 0; c < channels; ++c)
        for (std::int64_t i = 0; i < hp; ++i) {
            const auto si = source_index(i - pad, h, mode);
            if (si < 0)
                continue;
            const Scalar* src = dpad + (c * hp + i) * wp;
            Scalar* dst = dx + (c * h + si) * w;
            for (std::int64_t j = 0; j < wp; ++j) {
                const auto sj = source_index(j - pad, w, mode);
                if (sj >= 0)
                    dst[sj] += src[j];
            }
        }
}

void check_bias(const Tensor& b, std::int64_t cout, const char* op)
{
    if (b.defined() && (b.ndim() != 1 || b.dim(0) != cout))
        throw ShapeError(std::string(op) + ": bias shape " + shape_str(b.shape()) + " does not match " +
                         std::to_string(cout) + " output channels");
}

// Sums per-sample partial buffers in sample order so the result does not
// depend on how samples were spread over workers.
void reduce_partials(const std::vector<std::vector<Scalar>>& partials, std::span<Scalar> dst)
{
    for (const auto& part : partials)
        for (std::size_t i = 0; i < dst.size(); ++i)
            dst[i] += part[i];
}

void bias_grad(const std::vector<Scalar>& g, std::int64_t n, std::int64_t cout, std::int64_t plane,
               std::span<Scalar> db)
{
    for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t c = 0; c < cout; ++c) {
            const Scalar* p = g.data() + (s * cout + c) * plane;
            double acc = 0.0;
            for (std::int64_t i = 0; i < plane; ++i)
                acc += p[i];
            db[c] += static_cast<Scalar>(acc);
        }
}

} // namespace

std::int64_t conv_out_size(std::int64_t in, int k, int stride, int pad)
{
    const auto span = in + 2 * static_cast<std::int64_t>(pad) - k;
    if (span < 0)
        return 0;
    return span / stride + 1;
}

std::int64_t conv_transpose_out_size(std::int64_t in, int k, int stride, int pad, int output_pad)
{
    return (in - 1) * stride - 2 * static_cast<std::int64_t>(pad) + k + output_pad;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad, PadMode pad_mode)
{
    if (x.ndim() != 4 || w.ndim() != 4)
        throw ShapeError("conv2d: expected x [N,C,H,W] and w [Cout,Cin,k,k], got " + shape_str(x.shape()) +
                         " and " + shape_str(w.shape()));
    if (w.dim(1) != x.dim(1) || w.dim(2) != w.dim(3))
        throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " incompatible with input " +
                         shape_str(x.shape()));
    if (stride < 1 || pad < 0)
        throw ShapeError("conv2d: stride must be >= 1 and pad >= 0");

    Geometry g{};
    g.n = x.dim(0);
    g.cin = x.dim(1);
    g.h = x.dim(2);
    g.w = x.dim(3);
    g.cout = w.dim(0);
    g.k = static_cast<int>(w.dim(2));
    g.stride = stride;
    g.pad = pad;
    g.hp = g.h + 2 * pad;
    g.wp = g.w + 2 * pad;
    check_bias(b, g.cout, "conv2d");
    if (g.k > g.hp || g.k > g.wp) {
        const auto h_out = (g.hp - g.k) / stride + 1;
        throw ShapeError("conv2d: kernel " + std::to_string(g.k) + " larger than padded input " +
                         std::to_string(g.hp) + "x" + std::to_string(g.wp) + " (computed H'=" +
                         std::to_string(h_out) + ")");
    }
    if (pad_mode == PadMode::reflect && (pad >= g.h || pad >= g.w))
        throw ShapeError("conv2d: reflect pad " + std::to_string(pad) + " requires input larger than " +
                         std::to_string(pad) + " in both dims, got " + shape_str(x.shape()));
    g.ho = conv_out_size(g.h, g.k, stride, pad);
    g.wo = conv_out_size(g.w, g.k, stride, pad);

    const std::int64_t kdim = g.cin * g.k * g.k;
    const std::int64_t plane = g.ho * g.wo;
    std::vector<Scalar> out(static_cast<std::size_t>(g.n * g.cout * plane));
    auto xd = x.data();
    auto wd = w.data();
    const Scalar* bd = b.defined() ? b.data().data() : nullptr;

    parallel_for(g.n, [&](std::int64_t s) {
        std::vector<Scalar> padded(static_cast<std::size_t>(g.cin * g.hp * g.wp));
        std::vector<Scalar> col(static_cast<std::size_t>(kdim * plane));
        pad_plane_stack(xd.data() + s * g.cin * g.h * g.w, g.cin, g.h, g.w, pad, pad_mode, padded.data());
        im2col(padded.data(), g.cin, g.hp, g.wp, g.k, stride, g.ho, g.wo, col.data());
        MapMat y(out.data() + s * g.cout * plane, g.cout, plane);
        y.noalias() = ConstMapMat(wd.data(), g.cout, kdim) * ConstMapMat(col.data(), kdim, plane);
        if (bd)
            for (std::int64_t c = 0; c < g.cout; ++c)
                y.row(c).array() += bd[c];
    });

    Tensor bias = b.defined() ? b : Tensor::zeros({g.cout});
    return make_result(Shape{g.n, g.cout, g.ho, g.wo}, std::move(out), "conv2d", {x, w, bias},
                       [g, pad_mode, kdim, plane](Node& self) {
                           auto& xn = *self.inputs[0];
                           auto& wn = *self.inputs[1];
                           auto& bn = *self.inputs[2];
                           const auto& dy = self.grad;
                           const bool need_x = xn.requires_grad;
                           const bool need_w = wn.requires_grad;
                           std::vector<std::vector<Scalar>> dw_parts;
                           if (need_w)
                               dw_parts.assign(static_cast<std::size_t>(g.n),
                                               std::vector<Scalar>(static_cast<std::size_t>(g.cout * kdim)));
                           std::span<Scalar> dx;
                           if (need_x)
                               dx = xn.grad_buffer();
                           if (need_x || need_w)
                               parallel_for(g.n, [&](std::int64_t s) {
                                   ConstMapMat dys(dy.data() + s * g.cout * plane, g.cout, plane);
                                   std::vector<Scalar> col(static_cast<std::size_t>(kdim * plane));
                                   if (need_w) {
                                       std::vector<Scalar> padded(static_cast<std::size_t>(g.cin * g.hp * g.wp));
                                       pad_plane_stack(xn.data.data() + s * g.cin * g.h * g.w, g.cin, g.h, g.w,
                                                       g.pad, pad_mode, padded.data());
                                       im2col(padded.data(), g.cin, g.hp, g.wp, g.k, g.stride, g.ho, g.wo,
                                              col.data());
                                       MapMat(dw_parts[s].data(), g.cout, kdim).noalias() =
                                           dys * ConstMapMat(col.data(), kdim, plane).transpose();
                                   }
                                   if (need_x) {
                                       MapMat dcol(col.data(), kdim, plane);
                                       dcol.noalias() = ConstMapMat(wn.data.data(), g.cout, kdim).transpose() * dys;
                                       std::vector<Scalar> dpad(static_cast<std::size_t>(g.cin * g.hp * g.wp),
                                                                Scalar(0));
                                       col2im(col.data(), g.cin, g.hp, g.wp, g.k, g.stride, g.ho, g.wo, dpad.data());
                                       unpad_accumulate(dpad.data(), g.cin, g.h, g.w, g.pad, pad_mode,
                                                        dx.data() + s * g.cin * g.h * g.w);
                                   }
                               });
                           if (need_w)
                               reduce_partials(dw_parts, wn.grad_buffer());
                           if (bn.requires_grad)
                               bias_grad(dy, g.n, g.cout, plane, bn.grad_buffer());
                       });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad, int output_pad)
{
    if (x.ndim() != 4 || w.ndim() != 4)
        throw ShapeError("conv_transpose2d: expected x [N,C,H,W] and w [Cin,Cout,k,k], got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
    if (w.dim(0) != x.dim(1) || w.dim(2) != w.dim(3))
        throw ShapeError("conv_transpose2d: weight " + shape_str(w.shape()) + " incompatible with input " +
                         shape_str(x.shape()));
    if (stride < 1 || pad < 0 || output_pad < 0)
        throw ShapeError("conv_transpose2d: stride must be >= 1, pad and output_pad >= 0");
    if (output_pad >= stride)
        throw ShapeError("conv_transpose2d: output_pad " + std::to_string(output_pad) + " must be < stride " +
                         std::to_string(stride));

    Geometry g{};
    g.n = x.dim(0);
    g.cin = x.dim(1);
    g.h = x.dim(2);
    g.w = x.dim(3);
    g.cout = w.dim(1);
    g.k = static_cast<int>(w.dim(2));
    g.stride = stride;
    g.pad = pad;
    g.ho = conv_transpose_out_size(g.h, g.k, stride, pad, output_pad);
    g.wo = conv_transpose_out_size(g.w, g.k, stride, pad, output_pad);
    check_bias(b, g.cout, "conv_transpose2d");
    if (g.ho <= 0 || g.wo <= 0)
        throw ShapeError("conv_transpose2d: invalid geometry, computed H'=" + std::to_string(g.ho) +
                         " W'=" + std::to_string(g.wo));
    g.hp = g.ho + 2 * pad;
    g.wp = g.wo + 2 * pad;

    const std::int64_t kdim = g.cout * g.k * g.k;
    const std::int64_t in_plane = g.h * g.w;
    const std::int64_t out_plane = g.ho * g.wo;
    std::vector<Scalar> out(static_cast<std::size_t>(g.n * g.cout * out_plane));
    auto xd = x.data();
    auto wd = w.data();
    const Scalar* bd = b.defined() ? b.data().data() : nullptr;

    parallel_for(g.n, [&](std::int64_t s) {
        std::vector<Scalar> col(static_cast<std::size_t>(kdim * in_plane));
        MapMat(col.data(), kdim, in_plane).noalias() =
            ConstMapMat(wd.data(), g.cin, kdim).transpose() *
            ConstMapMat(xd.data() + s * g.cin * in_plane, g.cin, in_plane);
        std::vector<Scalar> canvas(static_cast<std::size_t>(g.cout * g.hp * g.wp), Scalar(0));
        col2im(col.data(), g.cout, g.hp, g.wp, g.k, g.stride, g.h, g.w, canvas.data());
        Scalar* dst = out.data() + s * g.cout * out_plane;
        for (std::int64_t c = 0; c < g.cout; ++c) {
            const Scalar bias = bd ? bd[c] : Scalar(0);
            for (std::int64_t i = 0; i < g.ho; ++i) {
                const Scalar* src = canvas.data() + (c * g.hp + i + g.pad) * g.wp + g.pad;
                Scalar* row = dst + (c * g.ho + i) * g.wo;
                for (std::int64_t j = 0; j < g.wo; ++j)
                    row[j] = src[j] + bias;
            }
        }
    });

    Tensor bias = b.defined() ? b : Tensor::zeros({g.cout});
    return make_result(
        Shape{g.n, g.cout, g.ho, g.wo}, std::move(out), "conv_transpose2d", {x, w, bias},
        [g, kdim, in_plane, out_plane](Node& self) {
            auto& xn = *self.inputs[0];
            auto& wn = *self.inputs[1];
            auto& bn = *self.inputs[2];
            const auto& dy = self.grad;
            const bool need_x = xn.requires_grad;
            const bool need_w = wn.requires_grad;
            std::vector<std::vector<Scalar>> dw_parts;
            if (need_w)
                dw_parts.assign(static_cast<std::size_t>(g.n),
                                std::vector<Scalar>(static_cast<std::size_t>(g.cin * kdim)));
            std::span<Scalar> dx;
            if (need_x)
                dx = xn.grad_buffer();
            if (need_x || need_w)
                parallel_for(g.n, [&](std::int64_t s) {
                    // Zero-extended output gradient on the uncropped canvas.
                    std::vector<Scalar> dcanvas(static_cast<std::size_t>(g.cout * g.hp * g.wp), Scalar(0));
                    const Scalar* dys = dy.data() + s * g.cout * out_plane;
                    for (std::int64_t c = 0; c < g.cout; ++c)
                        for (std::int64_t i = 0; i < g.ho; ++i)
                            std::copy(dys + (c * g.ho + i) * g.wo, dys + (c * g.ho + i + 1) * g.wo,
                                      dcanvas.data() + (c * g.hp + i + g.pad) * g.wp + g.pad);
                    std::vector<Scalar> dcol(static_cast<std::size_t>(kdim * in_plane));
                    im2col(dcanvas.data(), g.cout, g.hp, g.wp, g.k, g.stride, g.h, g.w, dcol.data());
                    ConstMapMat dcm(dcol.data(), kdim, in_plane);
                    if (need_x) {
                        MapMat(dx.data() + s * g.cin * in_plane, g.cin, in_plane).noalias() +=
                            ConstMapMat(wn.data.data(), g.cin, kdim) * dcm;
                    }
                    if (need_w) {
                        MapMat(dw_parts[s].data(), g.cin, kdim).noalias() =
                            ConstMapMat(xn.data.data() + s * g.cin * in_plane, g.cin, in_plane) * dcm.transpose();
                    }
                });
            if (need_w)
                reduce_partials(dw_parts, wn.grad_buffer());
            if (bn.requires_grad)
                bias_grad(dy, g.n, g.cout, out_plane, bn.grad_buffer());
        });
}

} // namespace cyclesynth::ops
