#include "cyclesynth/errors.hpp"
#include "cyclesynth/ops.hpp"
#include "support/gradcheck.hpp"
#include "support/reference_ops.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <random>

using namespace cyclesynth;
namespace t = cyclesynth::testing;

namespace {

std::vector<double> to_double(std::span<const Scalar> s) { return {s.begin(), s.end()}; }

Tensor from_double(const Shape& shape, const std::vector<double>& v, bool rg = false)
{
    return Tensor::from(shape, std::vector<Scalar>(v.begin(), v.end()), rg);
}

Tensor projected_loss(const Tensor& y, std::uint64_t seed)
{
    return ops::sum(ops::mul(y, t::random_like(y.shape(), seed)));
}

void expect_grads_ok(const t::GradCheckReport& r, const char* what)
{
    const auto* w = r.worst();
    ASSERT_NE(w, nullptr);
    EXPECT_LE(r.max_rel_err, t::kGradTolerance)
        << what << ": worst probe " << w->leaf << "[" << w->index << "] analytic=" << w->analytic
        << " numeric=" << w->numeric;
}

} // namespace

TEST(Elementwise, Examples)
{
    EXPECT_FLOAT_EQ(ops::square(Tensor::from({1}, {0.5f})).item(), 0.25f);
    auto a = ops::abs(Tensor::from({2}, {-3.0f, 2.0f}));
    EXPECT_EQ(a.data()[0], 3.0f);
    EXPECT_EQ(a.data()[1], 2.0f);
    EXPECT_EQ(ops::tanh(Tensor::from({1}, {0.0f})).item(), 0.0f);
    auto lr = ops::leaky_relu(Tensor::from({2}, {-1.0f, 2.0f}), 0.2f);
    EXPECT_FLOAT_EQ(lr.data()[0], -0.2f);
    EXPECT_FLOAT_EQ(lr.data()[1], 2.0f);
    auto r = ops::relu(Tensor::from({2}, {-1.0f, 2.0f}));
    EXPECT_EQ(r.data()[0], 0.0f);
}

TEST(Elementwise, ScalarBroadcast)
{
    auto x = Tensor::from({2, 2}, {1, 2, 3, 4});
    auto y = ops::mul(x, Tensor::scalar(2));
    EXPECT_EQ(y.shape(), (Shape{2, 2}));
    EXPECT_EQ(y.data()[3], 8.0f);
    auto z = ops::sub(Tensor::scalar(1), x);
    EXPECT_EQ(z.data()[0], 0.0f);
    EXPECT_EQ(z.data()[3], -3.0f);
}

TEST(Elementwise, ShapeMismatchNamesBothShapes)
{
    try {
        ops::add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2}));
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        EXPECT_NE(std::strstr(e.what(), "[2,3]"), nullptr);
        EXPECT_NE(std::strstr(e.what(), "[3,2]"), nullptr);
    }
}

TEST(Reduce, Examples)
{
    EXPECT_DOUBLE_EQ(ops::mean(Tensor::from({4}, {1, 2, 3, 4})).item(), 2.5);
    EXPECT_THROW(ops::sum(Tensor::zeros({0})), ShapeError);
    EXPECT_THROW(ops::mean(Tensor::zeros({2, 0})), ShapeError);
    EXPECT_FLOAT_EQ(ops::mean(Tensor::full({3, 7}, 1.75f)).item(), 1.75f);
}

TEST(Conv2d, OnesKernelSumsNine)
{
    auto y = ops::conv2d(Tensor::full({1, 1, 4, 4}, 1), Tensor::full({1, 1, 3, 3}, 1), Tensor::zeros({1}), 1, 0);
    ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
    for (auto v : y.data())
        EXPECT_EQ(v, 9.0f);
}

TEST(Conv2d, StridedGeometry)
{
    // floor((256 + 2 - 4)/2) + 1 = 128
    EXPECT_EQ(ops::conv_out_size(256, 4, 2, 1), 128);
    auto y = ops::conv2d(Tensor::zeros({1, 1, 256, 256}), Tensor::zeros({2, 1, 4, 4}), Tensor(), 2, 1);
    EXPECT_EQ(y.shape(), (Shape{1, 2, 128, 128}));
}

TEST(Conv2d, IdentityKernel)
{
    auto x = t::random_like({2, 1, 5, 6}, 3);
    auto y = ops::conv2d(x, Tensor::full({1, 1, 1, 1}, 1), Tensor::zeros({1}), 1, 0);
    ASSERT_EQ(y.shape(), x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i)
        EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv2d, InvalidGeometryReportsOutputSize)
{
    try {
        ops::conv2d(Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({1, 1, 7, 7}), Tensor(), 1, 1);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        EXPECT_NE(std::strstr(e.what(), "H'="), nullptr) << e.what();
    }
    EXPECT_THROW(ops::conv2d(Tensor::zeros({1, 2, 8, 8}), Tensor::zeros({1, 3, 3, 3}), Tensor(), 1, 1),
                 ShapeError);
    EXPECT_THROW(ops::conv2d(Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({1, 1, 3, 3}), Tensor(), 1, 3,
                             ops::PadMode::reflect),
                 ShapeError);
}

TEST(Conv2d, MatchesDirectLoopsBothPadModes)
{
    const t::Dims4 xd{2, 3, 7, 6};
    auto x = t::random_like({2, 3, 7, 6}, 10);
    auto w = t::random_like({4, 3, 3, 3}, 11);
    auto b = t::random_like({4}, 12);
    for (bool reflect : {false, true})
        for (int stride : {1, 2}) {
            auto y = ops::conv2d(x, w, b, stride, 2, reflect ? ops::PadMode::reflect : ops::PadMode::zeros);
            t::Dims4 od{};
            auto ref = t::naive_conv2d(to_double(x.data()), xd, to_double(w.data()), 4, 3, to_double(b.data()),
                                       stride, 2, reflect, &od);
            ASSERT_EQ(y.shape(), (Shape{od.n, od.c, od.h, od.w}));
            for (std::size_t i = 0; i < ref.size(); ++i)
                EXPECT_NEAR(y.data()[i], ref[i], 1e-5) << "reflect=" << reflect << " stride=" << stride;
        }
}

TEST(Conv2d, Linearity)
{
    auto x = t::random_like({1, 2, 6, 6}, 20);
    auto y = t::random_like({1, 2, 6, 6}, 21);
    auto w = t::random_like({3, 2, 3, 3}, 22);
    const Scalar a = 0.7f, c = -1.3f;
    auto lhs = ops::conv2d(ops::add(ops::scale(x, a), ops::scale(y, c)), w, Tensor(), 2, 1);
    auto rhs = ops::add(ops::scale(ops::conv2d(x, w, Tensor(), 2, 1), a), ops::scale(ops::conv2d(y, w, Tensor(), 2, 1), c));
    double num = 0, den = 0;
    for (std::int64_t i = 0; i < lhs.numel(); ++i) {
        num = std::max(num, std::abs(double(lhs.data()[i]) - rhs.data()[i]));
        den = std::max(den, std::abs(double(rhs.data()[i])));
    }
    EXPECT_LE(num / den, 1e-4);
}

TEST(ConvTranspose2d, Geometry)
{
    EXPECT_EQ(ops::conv_transpose_out_size(64, 3, 2, 1, 1), 128);
    auto y = ops::conv_transpose2d(Tensor::zeros({1, 4, 64, 64}), Tensor::zeros({4, 2, 3, 3}), Tensor(), 2, 1, 1);
    EXPECT_EQ(y.shape(), (Shape{1, 2, 128, 128}));
    EXPECT_THROW(ops::conv_transpose2d(Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1, 1, 3, 3}), Tensor(), 2, 1, 2),
                 ShapeError);
}

TEST(ConvTranspose2d, IdentityKernel)
{
    auto x = t::random_like({1, 1, 4, 5}, 30);
    auto y = ops::conv_transpose2d(x, Tensor::full({1, 1, 1, 1}, 1), Tensor::zeros({1}), 1, 0, 0);
    ASSERT_EQ(y.shape(), x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i)
        EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(ConvTranspose2d, MatchesScatterDefinition)
{
    const t::Dims4 xd{2, 3, 4, 5};
    auto x = t::random_like({2, 3, 4, 5}, 31);
    auto w = t::random_like({3, 2, 3, 3}, 32);
    auto b = t::random_like({2}, 33);
    auto y = ops::conv_transpose2d(x, w, b, 2, 1, 1);
    t::Dims4 od{};
    auto ref = t::naive_conv_transpose2d(to_double(x.data()), xd, to_double(w.data()), 2, 3, to_double(b.data()), 2,
                                         1, 1, &od);
    ASSERT_EQ(y.shape(), (Shape{od.n, od.c, od.h, od.w}));
    for (std::size_t i = 0; i < ref.size(); ++i)
        EXPECT_NEAR(y.data()[i], ref[i], 1e-5);
}

TEST(ConvTranspose2d, AdjointOfConv2dBruteForce)
{
    // <conv(x), y> = <x, conv^T(y)> on 5x5 inputs, computed with the direct-loop
    // reference so the identity is checked independently of the GEMM path.
    struct Case {
        int k, stride, pad;
    };
    for (auto cs : {Case{3, 2, 1}, Case{3, 1, 1}, Case{4, 2, 1}, Case{2, 1, 0}}) {
        const t::Dims4 xd{1, 2, 5, 5};
        auto x = t::random_like({1, 2, 5, 5}, 40 + cs.k);
        auto w = t::random_like({3, 2, cs.k, cs.k}, 50 + cs.stride);
        auto cx = ops::conv2d(x, w, Tensor(), cs.stride, cs.pad);
        // output_pad chosen so the transpose lands back on 5x5
        const int opad =
            static_cast<int>(5 - ops::conv_transpose_out_size(cx.dim(2), cs.k, cs.stride, cs.pad, 0));
        ASSERT_GE(opad, 0);
        ASSERT_LT(opad, cs.stride > 1 ? cs.stride : 1);
        auto y = t::random_like(cx.shape(), 60);
        auto ty = ops::conv_transpose2d(y, w, Tensor(), cs.stride, cs.pad, opad);
        ASSERT_EQ(ty.shape(), x.shape());

        const double lhs = t::dot(to_double(cx.data()), to_double(y.data()));
        const double rhs = t::dot(to_double(x.data()), to_double(ty.data()));
        EXPECT_LE(std::abs(lhs - rhs) / std::max(std::abs(lhs), 1e-12), 1e-4);

        // Same identity with both sides from the direct-loop reference.
        const t::Dims4 yd{1, 3, cx.dim(2), cx.dim(3)};
        auto ref_cx = t::naive_conv2d(to_double(x.data()), xd, to_double(w.data()), 3, cs.k, {}, cs.stride, cs.pad,
                                      false);
        auto ref_ty = t::naive_conv_transpose2d(to_double(y.data()), yd, to_double(w.data()), 2, cs.k, {}, cs.stride,
                                                cs.pad, opad);
        EXPECT_NEAR(t::dot(ref_cx, to_double(y.data())), t::dot(to_double(x.data()), ref_ty), 1e-9);
    }
}

TEST(InstanceNorm, Examples)
{
    auto ones = Tensor::full({1}, 1);
    auto zero = Tensor::zeros({1});
    auto flat = ops::instance_norm(Tensor::full({1, 1, 3, 3}, 4.2f), ones, zero);
    for (auto v : flat.data())
        EXPECT_EQ(v, 0.0f);
    auto two_point = ops::instance_norm(Tensor::from({1, 1, 1, 2}, {1, 3}), ones, zero, 0);
    EXPECT_FLOAT_EQ(two_point.data()[0], -1.0f);
    EXPECT_FLOAT_EQ(two_point.data()[1], 1.0f);
    auto shifted = ops::instance_norm(t::random_like({1, 1, 3, 3}, 1), zero, Tensor::full({1}, 5));
    for (auto v : shifted.data())
        EXPECT_EQ(v, 5.0f);
    EXPECT_THROW(ops::instance_norm(Tensor::zeros({1, 1, 1, 1}), ones, zero), ShapeError);
}

TEST(InstanceNorm, PlanesAreStandardized)
{
    auto x = t::random_like({2, 3, 5, 4}, 70, -3, 5);
    auto y = ops::instance_norm(x, Tensor::full({3}, 1), Tensor::zeros({3}), 0);
    for (std::int64_t p = 0; p < 6; ++p) {
        double m = 0, v = 0;
        for (int i = 0; i < 20; ++i)
            m += y.data()[p * 20 + i];
        m /= 20;
        for (int i = 0; i < 20; ++i)
            v += (y.data()[p * 20 + i] - m) * (y.data()[p * 20 + i] - m);
        EXPECT_NEAR(m, 0.0, 1e-5);
        EXPECT_NEAR(v / 20, 1.0, 1e-4);
    }
}

TEST(Backward, Examples)
{
    auto x = Tensor::from({1}, {3}, true);
    backward(ops::sum(ops::square(x)));
    EXPECT_FLOAT_EQ(x.grad()[0], 6.0f);

    auto y = Tensor::from({4}, {1, 2, 3, 4}, true);
    backward(ops::mean(y));
    for (auto g : y.grad())
        EXPECT_FLOAT_EQ(g, 0.25f);

    EXPECT_THROW(backward(ops::square(y)), ShapeError);
    EXPECT_THROW(backward(ops::sum(Tensor::from({2}, {1, 2}))), Error);
}

TEST(Backward, GradientsAccumulateAcrossUses)
{
    // f = sum(x*x + 3x) reuses x three times: df/dx = 2x + 3
    auto x = Tensor::from({2}, {1, -2}, true);
    backward(ops::sum(ops::add(ops::mul(x, x), ops::scale(x, 3))));
    EXPECT_FLOAT_EQ(x.grad()[0], 5.0f);
    EXPECT_FLOAT_EQ(x.grad()[1], -1.0f);
}

TEST(Backward, TapeVisitsEachNodeOnce)
{
    auto x = Tensor::from({3}, {1, 2, 3}, true);
    auto h = ops::tanh(x);
    auto loss = ops::sum(ops::add(ops::mul(h, h), h)); // h feeds three edges
    auto tape = Tape::record(loss);
    // x, tanh, mul, add, sum
    EXPECT_EQ(tape.size(), 5u);
    for (std::size_t i = 1; i < tape.size(); ++i)
        EXPECT_LT(tape.nodes()[i - 1]->seq, tape.nodes()[i]->seq);
}

TEST(Backward, DetachCutsTheGraph)
{
    auto x = Tensor::from({2}, {1, 2}, true);
    auto d = ops::square(x).detach();
    EXPECT_FALSE(d.requires_grad());
    auto y = Tensor::from({2}, {1, 1}, true);
    backward(ops::sum(ops::mul(d, y)));
    EXPECT_FALSE(x.has_grad());
    EXPECT_FLOAT_EQ(y.grad()[1], 4.0f);
}

// Random shapes <= 6 per dim for every differentiable op.
class OpGradients : public ::testing::TestWithParam<int> {};

TEST_P(OpGradients, MatchFiniteDifferences)
{
    const std::uint64_t seed = 1000 + GetParam();
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> dim(1, 6);
    const Shape s{dim(rng), dim(rng), dim(rng) + 1, dim(rng)};

    auto a = t::random_like(s, seed + 1, -1.5, 1.5, true);
    auto b = t::random_like(s, seed + 2, -1.5, 1.5, true);
    auto c = t::random_like({1}, seed + 3, -1, 1, true);

    using Fn = std::function<Tensor()>;
    const std::vector<std::pair<const char*, Fn>> unary = {
        {"add", [&] { return ops::add(a, b); }},
        {"sub", [&] { return ops::sub(a, b); }},
        {"mul", [&] { return ops::mul(a, b); }},
        {"mul_scalar", [&] { return ops::mul(a, c); }},
        {"square", [&] { return ops::square(a); }},
        {"abs", [&] { return ops::abs(a); }},
        {"tanh", [&] { return ops::tanh(a); }},
        {"relu", [&] { return ops::relu(a); }},
        {"leaky_relu", [&] { return ops::leaky_relu(a, 0.2f); }},
        {"mean", [&] { return ops::mean(ops::mul(a, b)); }},
    };
    for (const auto& [name, fn] : unary) {
        auto report = t::check_gradients(fn, {{"a", a}, {"b", b}, {"c", c}}, 8, seed);
        expect_grads_ok(report, name);
    }
}

TEST_P(OpGradients, ConvAndNormMatchFiniteDifferences)
{
    const std::uint64_t seed = 2000 + GetParam();
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> dim(3, 6);
    std::uniform_int_distribution<int> ch(1, 3);
    const std::int64_t n = ch(rng), cin = ch(rng), cout = ch(rng), h = dim(rng), w = dim(rng);

    auto x = t::random_like({n, cin, h, w}, seed + 1, -1, 1, true);
    auto wc = t::random_like({cout, cin, 3, 3}, seed + 2, -0.5, 0.5, true);
    auto bc = t::random_like({cout}, seed + 3, -0.5, 0.5, true);
    auto wt = t::random_like({cin, cout, 3, 3}, seed + 4, -0.5, 0.5, true);
    auto gamma = t::random_like({cin}, seed + 5, 0.5, 1.5, true);
    auto beta = t::random_like({cin}, seed + 6, -0.5, 0.5, true);

    const int stride = 1 + GetParam() % 2;
    auto conv_zero = [&] { return ops::conv2d(x, wc, bc, stride, 1); };
    auto conv_reflect = [&] { return ops::conv2d(x, wc, bc, stride, 1, ops::PadMode::reflect); };
    auto convt = [&] { return ops::conv_transpose2d(x, wt, bc, 2, 1, 1); };
    auto norm = [&] { return ops::instance_norm(x, gamma, beta); };

    expect_grads_ok(t::check_gradients(conv_zero, {{"x", x}, {"w", wc}, {"b", bc}}, 8, seed), "conv2d zeros");
    expect_grads_ok(t::check_gradients(conv_reflect, {{"x", x}, {"w", wc}, {"b", bc}}, 8, seed), "conv2d reflect");
    expect_grads_ok(t::check_gradients(convt, {{"x", x}, {"w", wt}, {"b", bc}}, 8, seed), "conv_transpose2d");
    expect_grads_ok(t::check_gradients(norm, {{"x", x}, {"gamma", gamma}, {"beta", beta}}, 8, seed),
                    "instance_norm");
}

INSTANTIATE_TEST_SUITE_P(RandomShapes, OpGradients, ::testing::Range(0, 6));

TEST(Backward, ReplayIsBitwiseDeterministic)
{
    auto run = [] {
        auto x = t::random_like({2, 2, 6, 6}, 5, -1, 1, true);
        auto w = t::random_like({3, 2, 3, 3}, 6, -1, 1, true);
        auto g = Tensor::full({3}, 1, true);
        auto bt = Tensor::zeros({3}, true);
        auto y = ops::relu(ops::instance_norm(ops::conv2d(x, w, Tensor(), 1, 1, ops::PadMode::reflect), g, bt));
        auto loss = projected_loss(y, 7);
        backward(loss);
        std::vector<Scalar> out(y.data().begin(), y.data().end());
        out.insert(out.end(), x.grad().begin(), x.grad().end());
        out.insert(out.end(), w.grad().begin(), w.grad().end());
        return out;
    };
    auto a = run();
    auto b = run();
    ASSERT_EQ(a.size(), b.size());
    EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(Scalar)), 0);
}
