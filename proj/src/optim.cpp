#include "cyclesynth/optim.hpp"

#include "cyclesynth/errors.hpp"

#include <cmath>

namespace cyclesynth {

AdamState make_adam_state(const ParamSet& params, AdamConfig config)
{
    AdamState s;
    s.config = config;
    for (const auto& e : params.entries()) {
        s.m.emplace_back(static_cast<std::size_t>(e.tensor.numel()), Scalar(0));
        s.v.emplace_back(static_cast<std::size_t>(e.tensor.numel()), Scalar(0));
    }
    return s;
}

void adam_step(ParamSet& params, AdamState& state, double lr)
{
    auto& entries = params.entries();
    if (state.m.size() != entries.size() || state.v.size() != entries.size())
        throw ConfigError("adam_step: optimizer state has " + std::to_string(state.m.size()) + " buffers for " +
                          std::to_string(entries.size()) + " parameters");
    for (const auto& e : entries)
        if (!e.tensor.has_grad())
            throw ConfigError("adam_step: parameter '" + e.name + "' has no gradient");

    const auto& c = state.config;
    const std::int64_t t = state.t + 1;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
    for (std::size_t k = 0; k < entries.size(); ++k) {
        auto& e = entries[k];
        const auto g = e.tensor.grad();
        auto p = e.tensor.mutable_data();
        auto& m = state.m[k];
        auto& v = state.v[k];
        if (m.size() != p.size())
            throw ConfigError("adam_step: state size mismatch for '" + e.name + "'");
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g[i];
            const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
            const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
            m[i] = static_cast<Scalar>(mi);
            v[i] = static_cast<Scalar>(vi);
            const double step = lr * (mi / bc1) / (std::sqrt(vi / bc2) + c.eps);
            p[i] = static_cast<Scalar>(p[i] - step);
        }
    }
    state.t = t;
}

double lr_at(int epoch, const LrSchedule& s)
{
    if (s.fixed_epochs < 0 || s.decay_epochs < 0)
        throw ConfigError("lr_at: negative epoch counts in schedule");
    const int total = s.fixed_epochs + s.decay_epochs;
    if (epoch < 0 || epoch > total)
        throw ConfigError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(total) + "]");
    if (epoch < s.fixed_epochs)
        return s.base_lr;
    if (s.decay_epochs == 0)
        return 0.0;
    return s.base_lr * (1.0 - static_cast<double>(epoch - s.fixed_epochs) / s.decay_epochs);
}

void append_adam_state(Checkpoint& ckpt, const std::string& prefix, const ParamSet& params, const AdamState& state)
{
    const auto& entries = params.entries();
    for (std::size_t k = 0; k < entries.size(); ++k) {
        const auto& shape = entries[k].tensor.shape();
        ckpt.tensors.push_back({prefix + ".m." + entries[k].name, Tensor::from(shape, state.m[k])});
        ckpt.tensors.push_back({prefix + ".v." + entries[k].name, Tensor::from(shape, state.v[k])});
    }
    ckpt.meta[prefix] = {{"t", state.t},
                         {"beta1", state.config.beta1},
                         {"beta2", state.config.beta2},
                         {"eps", state.config.eps}};
}

void restore_adam_state(const Checkpoint& ckpt, const std::string& prefix, const ParamSet& params, AdamState& state)
{
    if (!ckpt.meta.contains(prefix))
        throw DataError("checkpoint has no optimizer state '" + prefix + "'");
    const auto& meta = ckpt.meta.at(prefix);
    AdamState s;
    s.t = meta.at("t").get<std::int64_t>();
    s.config = {meta.at("beta1").get<double>(), meta.at("beta2").get<double>(), meta.at("eps").get<double>()};
    for (const auto& e : params.entries()) {
        for (auto* buf : {&s.m, &s.v}) {
            const auto name = prefix + (buf == &s.m ? ".m." : ".v.") + e.name;
            const auto& t = ckpt.at(name);
            if (t.shape() != e.tensor.shape())
                throw DataError("checkpoint tensor '" + name + "' has shape " + shape_str(t.shape()) + ", expected " +
                                shape_str(e.tensor.shape()));
            buf->emplace_back(t.data().begin(), t.data().end());
        }
    }
    state = std::move(s);
}

} // namespace cyclesynth
