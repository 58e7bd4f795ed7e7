#include "checks.hpp"

#include "cyclesynth/checkpoint.hpp"
#include "cyclesynth/data.hpp"
#include "cyclesynth/losses.hpp"
#include "cyclesynth/models.hpp"
#include "cyclesynth/ops.hpp"
#include "cyclesynth/train.hpp"

#include "support/gradcheck.hpp"
#include "support/reference_nets.hpp"

#include <chrono>
#include <cstdio>
#include <map>
#include <random>

namespace cyclesynth::checks {

namespace t = cyclesynth::testing;

namespace {

using Clock = std::chrono::steady_clock;
using Fn = std::function<Tensor()>;

// Identity forward whose backward scales the incoming gradient.
Tensor corrupted(const Tensor& y)
{
    auto node = std::make_shared<detail::Node>();
    node->shape = y.shape();
    node->data.assign(y.data().begin(), y.data().end());
    node->op = "corrupted";
    node->seq = detail::next_seq();
    if (y.requires_grad()) {
        node->requires_grad = true;
        node->inputs.push_back(y.node_ptr());
        node->backward_fn = [](detail::Node& self) {
            std::vector<Scalar> g(self.grad.begin(), self.grad.end());
            for (auto& v : g)
                v *= Scalar(1.5);
            self.inputs[0]->accumulate_grad(g);
        };
    }
    return Tensor(std::move(node));
}

Fn maybe_corrupt(const std::string& name, Fn fn, const CheckOptions& opt)
{
    if (name != opt.corrupt_op)
        return fn;
    return [fn] { return corrupted(fn()); };
}

std::string describe_worst(const t::GradCheckReport& r)
{
    const auto* w = r.worst();
    if (!w)
        return "no probes";
    char buf[256];
    std::snprintf(buf, sizeof buf, "max rel err %.3g at %s[%lld] (analytic %.6g, numeric %.6g)", w->rel_err,
                  w->leaf.c_str(), static_cast<long long>(w->index), w->analytic, w->numeric);
    return buf;
}

struct GradAccumulator {
    std::size_t probes = 0;
    double max_rel = 0;
    std::string worst;
    double seconds = 0;

    void add(const t::GradCheckReport& r, double secs)
    {
        probes += r.probes.size();
        seconds += secs;
        if (r.max_rel_err >= max_rel) {
            max_rel = r.max_rel_err;
            worst = describe_worst(r);
        }
    }
};

CheckResult finish(const std::string& name, const GradAccumulator& acc, std::size_t min_probes)
{
    CheckResult c;
    c.name = "gradient " + name;
    c.probes = acc.probes;
    c.max_rel_err = acc.max_rel;
    c.seconds = acc.seconds;
    c.passed = acc.probes >= min_probes && acc.max_rel <= t::kGradTolerance;
    char buf[400];
    std::snprintf(buf, sizeof buf, "%zu probes, tolerance %.0e; %s", acc.probes, t::kGradTolerance, acc.worst.c_str());
    c.detail = buf;
    return c;
}

void emit(std::vector<CheckResult>& out, CheckResult c, const CheckOptions& opt)
{
    if (opt.on_result)
        opt.on_result(c);
    out.push_back(std::move(c));
}

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

} // namespace

std::vector<CheckResult> gradient_checks(const CheckOptions& opt)
{
    std::vector<std::string> order;
    std::map<std::string, GradAccumulator> acc;
    auto run = [&](const std::string& name, Fn fn, std::vector<t::NamedLeaf> leaves, int probes, std::uint64_t seed) {
        if (!acc.count(name))
            order.push_back(name);
        const auto t0 = Clock::now();
        const auto report = t::check_gradients(maybe_corrupt(name, std::move(fn), opt), std::move(leaves), probes, seed);
        acc[name].add(report, since(t0));
    };

    for (int trial = 0; trial < opt.shape_trials; ++trial) {
        const std::uint64_t seed = 5000 + static_cast<std::uint64_t>(trial);
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<int> dim(1, 6);
        const Shape s{dim(rng), dim(rng), dim(rng) + 1, dim(rng)};
        auto a = t::random_like(s, seed + 1, -1.5, 1.5, true);
        auto b = t::random_like(s, seed + 2, -1.5, 1.5, true);
        auto c = t::random_like({1}, seed + 3, -1, 1, true);
        const std::vector<t::NamedLeaf> abc{{"a", a}, {"b", b}, {"c", c}};
        const std::vector<std::pair<std::string, Fn>> elementwise = {
            {"add", [=] { return ops::add(a, b); }},
            {"sub", [=] { return ops::sub(a, b); }},
            {"mul", [=] { return ops::mul(a, b); }},
            {"mul_broadcast", [=] { return ops::mul(a, c); }},
            {"scale", [=] { return ops::scale(a, Scalar(-1.75)); }},
            {"add_scalar", [=] { return ops::add_scalar(a, Scalar(0.3)); }},
            {"square", [=] { return ops::square(a); }},
            {"abs", [=] { return ops::abs(a); }},
            {"tanh", [=] { return ops::tanh(a); }},
            {"relu", [=] { return ops::relu(a); }},
            {"leaky_relu", [=] { return ops::leaky_relu(a, Scalar(0.2)); }},
            {"sum", [=] { return ops::sum(ops::mul(a, b)); }},
            {"mean", [=] { return ops::mean(ops::mul(a, b)); }},
        };
        for (const auto& [name, fn] : elementwise)
            run(name, fn, abc, 8, seed);

        std::uniform_int_distribution<int> sp(3, 6), ch(1, 3);
        const std::int64_t n = ch(rng), cin = ch(rng), cout = ch(rng), h = sp(rng), w = sp(rng);
        auto x = t::random_like({n, cin, h, w}, seed + 11, -1, 1, true);
        auto wc = t::random_like({cout, cin, 3, 3}, seed + 12, -0.5, 0.5, true);
        auto bc = t::random_like({cout}, seed + 13, -0.5, 0.5, true);
        auto wt = t::random_like({cin, cout, 3, 3}, seed + 14, -0.5, 0.5, true);
        auto gamma = t::random_like({cin}, seed + 15, 0.5, 1.5, true);
        auto beta = t::random_like({cin}, seed + 16, -0.5, 0.5, true);
        const int stride = 1 + trial % 2;
        run("conv2d", [=] { return ops::conv2d(x, wc, bc, stride, 1); }, {{"x", x}, {"w", wc}, {"b", bc}}, 8, seed);
        run("conv2d_reflect", [=] { return ops::conv2d(x, wc, bc, stride, 1, ops::PadMode::reflect); },
            {{"x", x}, {"w", wc}, {"b", bc}}, 8, seed);
        run("conv_transpose2d", [=] { return ops::conv_transpose2d(x, wt, bc, 2, 1, 1); },
            {{"x", x}, {"w", wt}, {"b", bc}}, 8, seed);
        run("instance_norm", [=] { return ops::instance_norm(x, gamma, beta); },
            {{"x", x}, {"gamma", gamma}, {"beta", beta}}, 8, seed);

        auto real = t::random_like({1, 1, 3, 4}, seed + 21, -1, 1, true);
        auto fake = t::random_like({1, 1, 5, 2}, seed + 22, -1, 1, true);
        auto img_a = t::random_like({1, 1, 4, 4}, seed + 23, -1, 1, true);
        auto img_b = t::random_like({1, 1, 4, 4}, seed + 24, -1, 1, true);
        auto img_c = t::random_like({1, 1, 4, 4}, seed + 25, -1, 1, true);
        auto img_d = t::random_like({1, 1, 4, 4}, seed + 26, -1, 1, true);
        run("loss_dis", [=] { return loss_dis(real, fake); }, {{"real", real}, {"fake", fake}}, 12, seed);
        run("loss_gen_adv", [=] { return loss_gen_adv(fake); }, {{"fake", fake}}, 24, seed);
        run("loss_cycle", [=] { return loss_cycle(img_a, img_b, img_c, img_d); },
            {{"i_mr", img_a}, {"rec_mr", img_b}, {"i_ct", img_c}, {"rec_ct", img_d}}, 6, seed);
        run("loss_paired", [=] { return loss_paired(img_a, img_b, fake, Scalar(3)); },
            {{"fake_ct", img_a}, {"real_ct", img_b}, {"score", fake}}, 8, seed);
    }

    std::vector<CheckResult> out;
    for (const auto& name : order)
        emit(out, finish(name, acc[name], 20), opt);

    {
        const auto t0 = Clock::now();
        auto g = init_generator(8, 21);
        auto x = t::random_like({1, 1, 16, 16}, 22, -1, 1, true);
        std::vector<std::string> leaves{"input"};
        for (const auto& e : g.params.entries())
            leaves.push_back(e.name);
        const auto report = t::check_against_reference(
            maybe_corrupt("generator", [&] { return generator_forward(g, x); }, opt),
            [](const t::RefParams& p, const std::vector<double>& in) { return t::ref_generator(p, 8, in, {1, 1, 16, 16}); },
            x, g.params, leaves, 1, 23);
        GradAccumulator a;
        a.add(report, since(t0));
        emit(out, finish("generator (16x16, F=8)", a, 20), opt);
    }
    {
        const auto t0 = Clock::now();
        auto d = init_discriminator(8, 31);
        auto x = t::random_like({1, 1, 32, 32}, 32, -1, 1, true);
        std::vector<std::string> leaves{"input"};
        for (const auto& e : d.params.entries())
            leaves.push_back(e.name);
        const auto report = t::check_against_reference(
            maybe_corrupt("discriminator", [&] { return discriminator_forward(d, x); }, opt),
            [](const t::RefParams& p, const std::vector<double>& in) {
                return t::ref_discriminator(p, 8, in, {1, 1, 32, 32});
            },
            x, d.params, leaves, 2, 33);
        GradAccumulator a;
        a.add(report, since(t0));
        emit(out, finish("discriminator (32x32, D=8)", a, 20), opt);
    }
    return out;
}

std::vector<CheckResult> architecture_checks(const CheckOptions& opt)
{
    std::vector<CheckResult> out;
    {
        const auto t0 = Clock::now();
        const auto layers = discriminator_layers();
        const int rf = receptive_field(layers);
        emit(out, {"receptive field", rf == 70, "discriminator receptive field " + std::to_string(rf) + " (expect 70)",
                   since(t0)},
             opt);
    }
    const auto g = init_generator(4, 3);
    for (std::int64_t s : {16, 64, 256}) {
        const auto t0 = Clock::now();
        const auto y = generator_forward(g, Tensor::zeros({1, 1, s, s}));
        const bool ok = y.shape() == Shape{1, 1, s, s};
        emit(out, {"generator shape " + std::to_string(s), ok, shape_str({1, 1, s, s}) + " -> " + shape_str(y.shape()),
                   since(t0)},
             opt);
    }
    {
        const auto t0 = Clock::now();
        const auto d = init_discriminator(4, 4);
        const auto y = discriminator_forward(d, Tensor::zeros({1, 1, 256, 256}));
        const auto [oh, ow] = discriminator_output_size(256, 256);
        const bool ok = y.shape() == Shape{1, 1, 30, 30} && oh == 30 && ow == 30;
        emit(out, {"discriminator map 256", ok, "256x256 -> " + shape_str(y.shape()) + " (expect [1, 1, 30, 30])",
                   since(t0)},
             opt);
    }
    return out;
}

std::vector<CheckResult> roundtrip_checks(const CheckOptions& opt)
{
    std::vector<CheckResult> out;
    {
        const auto t0 = Clock::now();
        PhantomSpec spec;
        spec.n_volumes = 1;
        spec.slices_per_volume = 3;
        spec.height = spec.width = 32;
        const auto pairs = phantom_generate(spec, 5);
        bool ok = true;
        for (const auto* v : {&pairs[0].mr, &pairs[0].ct}) {
            const auto bytes = encode_volume(*v);
            const auto back = decode_volume(bytes);
            ok = ok && encode_volume(back) == bytes && back.voxels == v->voxels && back.mask == v->mask;
        }
        emit(out, {"svol roundtrip", ok, ok ? "bitwise exact" : "decoded volume differs", since(t0)}, opt);
    }
    {
        const auto t0 = Clock::now();
        TrainConfig cfg;
        cfg.gen_width = 4;
        cfg.dis_width = 4;
        auto st = init_train_state(cfg);
        st.epoch = 2;
        const auto bytes = encode_checkpoint(to_checkpoint(st));
        const auto again = encode_checkpoint(to_checkpoint(from_checkpoint(decode_checkpoint(bytes))));
        const bool ok = again == bytes;
        emit(out, {"checkpoint roundtrip", ok, ok ? "bitwise exact" : "re-encoded checkpoint differs", since(t0)}, opt);
    }
    return out;
}

std::vector<CheckResult> all_checks(const CheckOptions& opt)
{
    auto out = gradient_checks(opt);
    for (auto* group : {&architecture_checks, &roundtrip_checks}) {
        auto more = (*group)(opt);
        out.insert(out.end(), more.begin(), more.end());
    }
    return out;
}

std::string first_failure(const std::vector<CheckResult>& results)
{
    for (const auto& r : results)
        if (!r.passed)
            return r.name;
    return {};
}

} // namespace cyclesynth::checks
