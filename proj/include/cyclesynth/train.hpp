#pragma once

#include "cyclesynth/checkpoint.hpp"
#include "cyclesynth/data.hpp"
#include "cyclesynth/losses.hpp"
#include "cyclesynth/models.hpp"
#include "cyclesynth/optim.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace cyclesynth {

enum class TrainMode { unpaired_cycle, paired_baseline };

std::string to_string(TrainMode m);
TrainMode parse_train_mode(const std::string& s);

struct TrainConfig {
    TrainMode mode = TrainMode::unpaired_cycle;
    double lambda = kDefaultLambda;
    double paired_mu = kDefaultPairedMu;
    LrSchedule schedule{};
    AdamConfig adam{};
    int batch_size = 1;
    int image_pool_size = 50; // 0 disables the pool
    std::uint64_t seed = 0;
    int gen_width = 64;
    int dis_width = 64;
    bool augment = true;
    std::int64_t pad_total = -1; // -1: default_pad_total of the slice size
    bool forbid_same_index = true;
    int checkpoint_every = 10; // epochs; the final epoch is always saved
    int log_every = 1;         // iterations

    int total_epochs() const { return schedule.fixed_epochs + schedule.decay_epochs; }

    // Every violated constraint, one message each.
    std::vector<std::string> problems() const;
    // Throws ConfigError listing all problems.
    void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Buffer of past fakes shown to the discriminators. Until full, every query
/// stores and returns the new fake. Once full, with probability 1/2 the new
/// fake is returned; otherwise a random stored image is returned and replaced.
class ImagePool {
public:
    explicit ImagePool(int capacity = 50) : capacity_(capacity) {}

    // `fake` must be detached from the tape.
    Tensor query(const Tensor& fake, std::mt19937_64& rng);

    int capacity() const noexcept { return capacity_; }
    std::size_t size() const noexcept { return images_.size(); }
    const std::vector<Tensor>& images() const noexcept { return images_; }

    void append_to(Checkpoint& ckpt, const std::string& prefix) const;
    void restore_from(const Checkpoint& ckpt, const std::string& prefix);

private:
    int capacity_;
    std::vector<Tensor> images_;
};

struct Nets {
    GeneratorParams syn_ct;
    GeneratorParams syn_mr;
    DiscriminatorParams dis_ct;
    DiscriminatorParams dis_mr;
};

struct Optimizers {
    AdamState syn_ct;
    AdamState syn_mr;
    AdamState dis_ct;
    AdamState dis_mr;
};

Nets init_nets(const TrainConfig& cfg);
Optimizers init_optimizers(const Nets& nets, const TrainConfig& cfg);

struct GeneratorUpdate {
    LossBreakdown losses; // discriminator fields unset
    Tensor fake_ct;       // detached
    Tensor fake_mr;       // detached
};

/// Forward and backward cycles, then one joint Adam step of both generators on
/// adv_ct + adv_mr + lambda * cycle. Discriminator parameters are frozen (no
/// gradient is accumulated into them) for the duration.
GeneratorUpdate generator_update_unpaired(const Tensor& i_mr, const Tensor& i_ct, Nets& nets, Optimizers& opts,
                                          const TrainConfig& cfg, double lr);

/// One Adam step of `d` on loss_dis(d(real), d(fake)), where `fake` is routed
/// through `pool` when given. Returns the loss value.
double discriminator_update(DiscriminatorParams& d, AdamState& state, const Tensor& real, const Tensor& fake,
                            ImagePool* pool, double lr, std::mt19937_64& rng, const std::string& name);

/// Generator update on adv_ct + adv_mr + lambda * cycle (both generators
/// jointly, discriminators frozen), then Dis_CT and Dis_MR updates on pooled
/// fakes cut from the generator tape. Inputs are [B,1,H,W] in [-1, 1].
LossBreakdown train_step_unpaired(const Tensor& i_mr, const Tensor& i_ct, Nets& nets, Optimizers& opts,
                                  ImagePool& pool_ct, ImagePool& pool_mr, const TrainConfig& cfg, double lr,
                                  std::mt19937_64& rng);

/// Syn_CT update on loss_paired, then Dis_CT on the same fake (detached).
/// Only d_ct, g_adv_ct, cycle (= L1 term), lambda (= mu) and totals are set.
LossBreakdown train_step_paired(const Tensor& i_mr, const Tensor& i_ct_aligned, Nets& nets, Optimizers& opts,
                                const TrainConfig& cfg, double lr);

// Throws NumericError naming `what` if any value is NaN or infinite.
void require_finite(const Tensor& t, const std::string& what);

struct TrainState {
    TrainConfig config;
    int epoch = 0; // completed epochs
    Nets nets;
    Optimizers opts;
    ImagePool pool_ct;
    ImagePool pool_mr;
};

TrainState init_train_state(const TrainConfig& cfg);
Checkpoint to_checkpoint(const TrainState& s);
TrainState from_checkpoint(const Checkpoint& ckpt);

// "ckpt_epoch{N}.csyn"
std::string checkpoint_name(int epoch);
inline constexpr const char* kLossLogName = "loss_log.csv";
inline constexpr const char* kLossLogHeader = "epoch,iter,lr,d_ct,d_mr,g_adv_ct,g_adv_mr,cycle,total_g,total_d";

struct EpochSummary {
    int epoch = 0;
    double lr = 0;
    int iterations = 0;
    LossBreakdown mean; // per-field average over the epoch
};

struct TrainResult {
    std::filesystem::path final_checkpoint;
    std::filesystem::path loss_log;
    std::vector<std::filesystem::path> checkpoints;
    std::vector<EpochSummary> epochs; // epochs run by this call
};

struct TrainOptions {
    std::optional<std::filesystem::path> resume_from;
    std::function<void(const EpochSummary&)> on_epoch;
};

/// Epoch e uses lr_at(e). Each epoch walks the sampling plan (max of the two
/// slice counts for unpaired, the shared slice list for paired) in batches.
/// Writes ckpt_epoch0 before the first step, then every checkpoint_every
/// epochs and at the end; the CSV log gets one row per logged iteration.
TrainResult run_training(const Dataset& ds, const TrainConfig& cfg, const std::filesystem::path& out_dir,
                         const TrainOptions& options = {});

// Syn_CT when mr_to_ct, else Syn_MR.
const GeneratorParams& generator_for(const Nets& nets, bool mr_to_ct);

/// Every slice through `g`; the output carries the target modality window and
/// the input's mask. Height and width must be multiples of 4.
SliceVolume translate_volume(const GeneratorParams& g, const SliceVolume& in, Modality target);

} // namespace cyclesynth
