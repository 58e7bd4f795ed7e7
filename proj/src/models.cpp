#include "cyclesynth/models.hpp"

#include "cyclesynth/errors.hpp"
#include "cyclesynth/ops.hpp"

#include <random>
#include <stdexcept>

namespace cyclesynth {

Tensor& ParamSet::add(std::string name, Shape shape)
{
    if (contains(name))
        throw Error("duplicate parameter name '" + name + "'");
    entries_.push_back({std::move(name), Tensor::zeros(std::move(shape), true)});
    return entries_.back().tensor;
}

Tensor& ParamSet::at(const std::string& name)
{
    for (auto& e : entries_)
        if (e.name == name)
            return e.tensor;
    throw Error("no parameter named '" + name + "'");
}

const Tensor& ParamSet::at(const std::string& name) const
{
    return const_cast<ParamSet*>(this)->at(name);
}

bool ParamSet::contains(const std::string& name) const
{
    for (const auto& e : entries_)
        if (e.name == name)
            return true;
    return false;
}

std::int64_t ParamSet::count() const
{
    std::int64_t n = 0;
    for (const auto& e : entries_)
        n += e.tensor.numel();
    return n;
}

void ParamSet::zero_grad()
{
    for (auto& e : entries_)
        e.tensor.zero_grad();
}

void ParamSet::clear_grads()
{
    for (auto& e : entries_)
        e.tensor.clear_grad();
}

void ParamSet::set_requires_grad(bool flag)
{
    for (auto& e : entries_)
        e.tensor.set_requires_grad(flag);
}

namespace {

void add_conv(ParamSet& ps, const std::string& prefix, std::int64_t cout, std::int64_t cin, int k, bool norm)
{
    ps.add(prefix + ".w", {cout, cin, k, k});
    ps.add(prefix + ".b", {cout});
    if (norm) {
        ps.add(prefix + ".gamma", {cout});
        ps.add(prefix + ".beta", {cout});
    }
}

void add_conv_transpose(ParamSet& ps, const std::string& prefix, std::int64_t cin, std::int64_t cout, int k)
{
    ps.add(prefix + ".w", {cin, cout, k, k});
    ps.add(prefix + ".b", {cout});
    ps.add(prefix + ".gamma", {cout});
    ps.add(prefix + ".beta", {cout});
}

bool ends_with(const std::string& s, const char* suffix)
{
    const std::string suf(suffix);
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

// Weights ~ N(0, 0.02); biases and betas 0; gammas 1.
void initialize(ParamSet& ps, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 0.02);
    for (auto& e : ps.entries()) {
        auto d = e.tensor.mutable_data();
        if (ends_with(e.name, ".w")) {
            for (auto& v : d)
                v = static_cast<Scalar>(normal(rng));
        } else if (ends_with(e.name, ".gamma")) {
            std::fill(d.begin(), d.end(), Scalar(1));
        } else {
            std::fill(d.begin(), d.end(), Scalar(0));
        }
    }
}

void require_positive(int width, const char* what)
{
    if (width <= 0)
        throw ConfigError(std::string(what) + " width must be positive, got " + std::to_string(width));
}

Tensor conv_norm(const ParamSet& ps, const std::string& prefix, const Tensor& x, int stride, int pad,
                 ops::PadMode mode)
{
    auto y = ops::conv2d(x, ps.at(prefix + ".w"), ps.at(prefix + ".b"), stride, pad, mode);
    return ops::instance_norm(y, ps.at(prefix + ".gamma"), ps.at(prefix + ".beta"), kNormEps);
}

void check_single_channel(const Tensor& x, const char* net)
{
    if (x.ndim() != 4 || x.dim(1) != 1)
        throw ShapeError(std::string(net) + ": expected input [N,1,H,W], got " + shape_str(x.shape()));
}

} // namespace

GeneratorParams init_generator(int base_width, std::uint64_t seed)
{
    require_positive(base_width, "generator");
    const std::int64_t f = base_width;
    GeneratorParams g;
    g.base_width = base_width;
    auto& ps = g.params;
    add_conv(ps, "stem", f, 1, 7, true);
    add_conv(ps, "down1", 2 * f, f, 3, true);
    add_conv(ps, "down2", 4 * f, 2 * f, 3, true);
    for (int r = 1; r <= kResidualBlocks; ++r) {
        const auto prefix = "res" + std::to_string(r);
        add_conv(ps, prefix + ".conv1", 4 * f, 4 * f, 3, true);
        add_conv(ps, prefix + ".conv2", 4 * f, 4 * f, 3, true);
    }
    add_conv_transpose(ps, "up1", 4 * f, 2 * f, 3);
    add_conv_transpose(ps, "up2", 2 * f, f, 3);
    add_conv(ps, "head", 1, f, 7, false);
    initialize(ps, seed);
    return g;
}

DiscriminatorParams init_discriminator(int base_width, std::uint64_t seed)
{
    require_positive(base_width, "discriminator");
    const std::int64_t d = base_width;
    DiscriminatorParams p;
    p.base_width = base_width;
    auto& ps = p.params;
    add_conv(ps, "c1", d, 1, 4, false);
    add_conv(ps, "c2", 2 * d, d, 4, true);
    add_conv(ps, "c3", 4 * d, 2 * d, 4, true);
    add_conv(ps, "c4", 8 * d, 4 * d, 4, true);
    add_conv(ps, "c5", 1, 8 * d, 4, false);
    initialize(ps, seed);
    return p;
}

Tensor generator_forward(const GeneratorParams& p, const Tensor& x)
{
    check_single_channel(x, "generator");
    const auto h = x.dim(2);
    const auto w = x.dim(3);
    if (h % 4 != 0 || w % 4 != 0 || h < 8 || w < 8)
        throw ShapeError("generator: H and W must be multiples of 4 and at least 8, got " + shape_str(x.shape()));
    const auto& ps = p.params;
    using ops::PadMode;

    auto y = ops::relu(conv_norm(ps, "stem", x, 1, 3, PadMode::reflect));
    y = ops::relu(conv_norm(ps, "down1", y, 2, 1, PadMode::zeros));
    y = ops::relu(conv_norm(ps, "down2", y, 2, 1, PadMode::zeros));
    for (int r = 1; r <= kResidualBlocks; ++r) {
        const auto prefix = "res" + std::to_string(r);
        auto branch = ops::relu(conv_norm(ps, prefix + ".conv1", y, 1, 1, PadMode::reflect));
        branch = conv_norm(ps, prefix + ".conv2", branch, 1, 1, PadMode::reflect);
        y = ops::add(y, branch);
    }
    for (const char* up : {"up1", "up2"}) {
        const std::string prefix(up);
        auto t = ops::conv_transpose2d(y, ps.at(prefix + ".w"), ps.at(prefix + ".b"), 2, 1, 1);
        y = ops::relu(ops::instance_norm(t, ps.at(prefix + ".gamma"), ps.at(prefix + ".beta"), kNormEps));
    }
    y = ops::conv2d(y, ps.at("head.w"), ps.at("head.b"), 1, 3, PadMode::reflect);
    return ops::tanh(y);
}

std::pair<std::int64_t, std::int64_t> discriminator_output_size(std::int64_t h, std::int64_t w)
{
    for (const auto& l : discriminator_layers()) {
        h = ops::conv_out_size(h, l.kernel, l.stride, 1);
        w = ops::conv_out_size(w, l.kernel, l.stride, 1);
    }
    return {h, w};
}

Tensor discriminator_forward(const DiscriminatorParams& p, const Tensor& x)
{
    check_single_channel(x, "discriminator");
    // Every layer must produce a non-empty map and normalized layers need >= 2 cells.
    {
        auto h = x.dim(2);
        auto w = x.dim(3);
        const auto layers = discriminator_layers();
        for (std::size_t i = 0; i < layers.size(); ++i) {
            h = ops::conv_out_size(h, layers[i].kernel, layers[i].stride, 1);
            w = ops::conv_out_size(w, layers[i].kernel, layers[i].stride, 1);
            const bool normed = i >= 1 && i <= 3;
            if (h < 1 || w < 1 || (normed && h * w < 2))
                throw ShapeError("discriminator: input " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                                 " too small, layer " + std::to_string(i + 1) + " output would be " +
                                 std::to_string(h) + "x" + std::to_string(w));
        }
    }
    const auto& ps = p.params;
    using ops::PadMode;
    auto y = ops::leaky_relu(ops::conv2d(x, ps.at("c1.w"), ps.at("c1.b"), 2, 1), kLeakySlope);
    y = ops::leaky_relu(conv_norm(ps, "c2", y, 2, 1, PadMode::zeros), kLeakySlope);
    y = ops::leaky_relu(conv_norm(ps, "c3", y, 2, 1, PadMode::zeros), kLeakySlope);
    y = ops::leaky_relu(conv_norm(ps, "c4", y, 1, 1, PadMode::zeros), kLeakySlope);
    return ops::conv2d(y, ps.at("c5.w"), ps.at("c5.b"), 1, 1);
}

int receptive_field(std::span<const ConvLayer> layers)
{
    int field = 1;
    int jump = 1;
    for (const auto& l : layers) {
        field += (l.kernel - 1) * jump;
        jump *= l.stride;
    }
    return field;
}

std::vector<ConvLayer> discriminator_layers() { return {{4, 2}, {4, 2}, {4, 2}, {4, 1}, {4, 1}}; }

std::int64_t generator_param_count(int base_width)
{
    const std::int64_t f = base_width;
    auto conv = [](std::int64_t cout, std::int64_t cin, std::int64_t k, bool norm) {
        return cout * cin * k * k + cout + (norm ? 2 * cout : 0);
    };
    return conv(f, 1, 7, true) + conv(2 * f, f, 3, true) + conv(4 * f, 2 * f, 3, true) +
           kResidualBlocks * 2 * conv(4 * f, 4 * f, 3, true) + conv(2 * f, 4 * f, 3, true) +
           conv(f, 2 * f, 3, true) + conv(1, f, 7, false);
}

std::int64_t discriminator_param_count(int base_width)
{
    const std::int64_t d = base_width;
    auto conv = [](std::int64_t cout, std::int64_t cin, bool norm) { return cout * cin * 16 + cout + (norm ? 2 * cout : 0); };
    return conv(d, 1, false) + conv(2 * d, d, true) + conv(4 * d, 2 * d, true) + conv(8 * d, 4 * d, true) +
           conv(1, 8 * d, false);
}

} // namespace cyclesynth
