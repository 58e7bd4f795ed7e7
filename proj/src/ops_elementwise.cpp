#include "cyclesynth/errors.hpp"
#include "cyclesynth/ops.hpp"
#include "ops_internal.hpp"

#include <cmath>

namespace cyclesynth::ops {

using detail_ops::make_result;
using detail_ops::Node;

namespace {

enum class Binary { add, sub, mul };

const char* binary_name(Binary op)
{
    switch (op) {
    case Binary::add:
        return "add";
    case Binary::sub:
        return "sub";
    case Binary::mul:
        return "mul";
    }
    return "?";
}

Tensor binary(Binary op, const Tensor& a, const Tensor& b)
{
    const auto na = a.numel();
    const auto nb = b.numel();
    Shape out_shape;
    if (a.shape() == b.shape() || (na == nb && na == 1))
        out_shape = a.shape();
    else if (nb == 1)
        out_shape = a.shape();
    else if (na == 1)
        out_shape = b.shape();
    else
        throw ShapeError(std::string(binary_name(op)) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));

    const auto n = shape_numel(out_shape);
    const bool bcast_a = na == 1 && n != 1;
    const bool bcast_b = nb == 1 && n != 1;
    auto da = a.data();
    auto db = b.data();
    std::vector<Scalar> out(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const Scalar x = da[bcast_a ? 0 : i];
        const Scalar y = db[bcast_b ? 0 : i];
        switch (op) {
        case Binary::add:
            out[i] = x + y;
            break;
        case Binary::sub:
            out[i] = x - y;
            break;
        case Binary::mul:
            out[i] = x * y;
            break;
        }
    }

    return make_result(out_shape, std::move(out), binary_name(op), {a, b}, [op, bcast_a, bcast_b](Node& self) {
        auto& in_a = *self.inputs[0];
        auto& in_b = *self.inputs[1];
        const auto& g = self.grad;
        const auto n = g.size();
        auto reduce_into = [n](Node& dst, bool bcast, auto&& term) {
            if (!dst.requires_grad)
                return;
            auto buf = dst.grad_buffer();
            if (bcast) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i)
                    acc += term(i);
                buf[0] += static_cast<Scalar>(acc);
            } else {
                for (std::size_t i = 0; i < n; ++i)
                    buf[i] += term(i);
            }
        };
        switch (op) {
        case Binary::add:
            reduce_into(in_a, bcast_a, [&](std::size_t i) { return g[i]; });
            reduce_into(in_b, bcast_b, [&](std::size_t i) { return g[i]; });
            break;
        case Binary::sub:
            reduce_into(in_a, bcast_a, [&](std::size_t i) { return g[i]; });
            reduce_into(in_b, bcast_b, [&](std::size_t i) { return -g[i]; });
            break;
        case Binary::mul:
            reduce_into(in_a, bcast_a, [&](std::size_t i) { return g[i] * in_b.data[bcast_b ? 0 : i]; });
            reduce_into(in_b, bcast_b, [&](std::size_t i) { return g[i] * in_a.data[bcast_a ? 0 : i]; });
            break;
        }
    });
}

// Unary op with derivative expressed through input x and output y.
template <typename F, typename DF>
Tensor unary(const Tensor& a, const char* name, F f, DF df)
{
    auto in = a.data();
    std::vector<Scalar> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i)
        out[i] = f(in[i]);
    return make_result(a.shape(), std::move(out), name, {a}, [df](Node& self) {
        auto& src = *self.inputs[0];
        if (!src.requires_grad)
            return;
        auto buf = src.grad_buffer();
        for (std::size_t i = 0; i < buf.size(); ++i)
            buf[i] += self.grad[i] * df(src.data[i], self.data[i]);
    });
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(Binary::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(Binary::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(Binary::mul, a, b); }

Tensor scale(const Tensor& a, Scalar factor)
{
    return unary(
        a, "scale", [factor](Scalar x) { return x * factor; }, [factor](Scalar, Scalar) { return factor; });
}

Tensor add_scalar(const Tensor& a, Scalar value)
{
    return unary(
        a, "add_scalar", [value](Scalar x) { return x + value; }, [](Scalar, Scalar) { return Scalar(1); });
}

Tensor square(const Tensor& a)
{
    return unary(
        a, "square", [](Scalar x) { return x * x; }, [](Scalar x, Scalar) { return Scalar(2) * x; });
}

Tensor abs(const Tensor& a)
{
    return unary(
        a, "abs", [](Scalar x) { return std::abs(x); },
        [](Scalar x, Scalar) { return x > 0 ? Scalar(1) : (x < 0 ? Scalar(-1) : Scalar(0)); });
}

Tensor tanh(const Tensor& a)
{
    return unary(
        a, "tanh", [](Scalar x) { return std::tanh(x); }, [](Scalar, Scalar y) { return Scalar(1) - y * y; });
}

Tensor relu(const Tensor& a)
{
    return unary(
        a, "relu", [](Scalar x) { return x > 0 ? x : Scalar(0); },
        [](Scalar x, Scalar) { return x > 0 ? Scalar(1) : Scalar(0); });
}

Tensor leaky_relu(const Tensor& a, Scalar slope)
{
    return unary(
        a, "leaky_relu", [slope](Scalar x) { return x > 0 ? x : slope * x; },
        [slope](Scalar x, Scalar) { return x > 0 ? Scalar(1) : slope; });
}

Tensor sum(const Tensor& a)
{
    if (a.numel() == 0)
        throw ShapeError("sum of empty tensor");
    double acc = 0.0;
    for (auto v : a.data())
        acc += v;
    return make_result(Shape{1}, {static_cast<Scalar>(acc)}, "sum", {a}, [](Node& self) {
        auto& src = *self.inputs[0];
        if (!src.requires_grad)
            return;
        auto buf = src.grad_buffer();
        for (auto& g : buf)
            g += self.grad[0];
    });
}

Tensor mean(const Tensor& a)
{
    const auto n = a.numel();
    if (n == 0)
        throw ShapeError("mean of empty tensor");
    double acc = 0.0;
    for (auto v : a.data())
        acc += v;
    return make_result(Shape{1}, {static_cast<Scalar>(acc / static_cast<double>(n))}, "mean", {a},
                       [n](Node& self) {
                           auto& src = *self.inputs[0];
                           if (!src.requires_grad)
                               return;
                           const Scalar g = self.grad[0] / static_cast<Scalar>(n);
                           auto buf = src.grad_buffer();
                           for (auto& v : buf)
                               v += g;
                       });
}

} // namespace cyclesynth::ops
