#pragma once

#include "cyclesynth/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cyclesynth {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Ordered, named parameter collection. Order is construction order and is
/// the order used for initialization, checkpoints and optimizer state.
class ParamSet {
public:
    Tensor& add(std::string name, Shape shape);

    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const;

    std::vector<NamedTensor>& entries() noexcept { return entries_; }
    const std::vector<NamedTensor>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }

    std::int64_t count() const;
    void zero_grad();
    void clear_grads();
    void set_requires_grad(bool flag);

private:
    std::vector<NamedTensor> entries_;
};

inline constexpr int kResidualBlocks = 9;
inline constexpr Scalar kLeakySlope = Scalar(0.2);
inline constexpr Scalar kNormEps = Scalar(1e-5);

/// Synthesis network (Syn_CT / Syn_MR): 7x7 stem, two stride-2 downsamplers,
/// nine residual blocks at 4F channels, two fractionally strided upsamplers and
/// a 7x7 tanh head. Single channel in and out.
struct GeneratorParams {
    int base_width = 64;
    ParamSet params;
};

/// 70x70 PatchGAN discriminator (Dis_CT / Dis_MR) producing raw patch scores.
struct DiscriminatorParams {
    int base_width = 64;
    ParamSet params;
};

GeneratorParams init_generator(int base_width, std::uint64_t seed);
DiscriminatorParams init_discriminator(int base_width, std::uint64_t seed);

Tensor generator_forward(const GeneratorParams& p, const Tensor& x);
Tensor discriminator_forward(const DiscriminatorParams& p, const Tensor& x);

// Spatial output size of the discriminator for an HxW input (no allocation).
std::pair<std::int64_t, std::int64_t> discriminator_output_size(std::int64_t h, std::int64_t w);

struct ConvLayer {
    int kernel;
    int stride;
};

int receptive_field(std::span<const ConvLayer> layers);
std::vector<ConvLayer> discriminator_layers();

std::int64_t generator_param_count(int base_width);
std::int64_t discriminator_param_count(int base_width);

} // namespace cyclesynth
