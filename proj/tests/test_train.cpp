#include "cyclesynth/errors.hpp"
#include "cyclesynth/train.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

using namespace cyclesynth;
namespace fs = std::filesystem;

namespace {

std::uint64_t hash_values(const ParamSet& ps)
{
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& e : ps.entries())
        for (auto v : e.tensor.data()) {
            unsigned char b[sizeof(Scalar)];
            std::memcpy(b, &v, sizeof v);
            for (auto c : b)
                h = (h ^ c) * 1099511628211ULL;
        }
    return h;
}

std::uint64_t hash_grads(const ParamSet& ps)
{
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& e : ps.entries())
        for (auto v : e.tensor.grad()) {
            unsigned char b[sizeof(Scalar)];
            std::memcpy(b, &v, sizeof v);
            for (auto c : b)
                h = (h ^ c) * 1099511628211ULL;
        }
    return h;
}

TrainConfig tiny_config()
{
    TrainConfig c;
    c.gen_width = 4;
    c.dis_width = 4;
    c.seed = 7;
    c.schedule = {2e-4, 1, 1};
    c.checkpoint_every = 1;
    return c;
}

Tensor random_image(std::int64_t s, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<Scalar> v(static_cast<std::size_t>(s * s));
    for (auto& x : v)
        x = static_cast<Scalar>(u(rng));
    return Tensor::from({1, 1, s, s}, std::move(v));
}

Dataset phantom_dataset(int volumes, int slices, int size, std::uint64_t seed = 1)
{
    PhantomSpec spec;
    spec.n_volumes = volumes;
    spec.slices_per_volume = slices;
    spec.height = spec.width = size;
    Dataset ds;
    for (const auto& p : phantom_generate(spec, seed)) {
        ds.mr.push_back(p.mr);
        ds.ct.push_back(p.ct);
    }
    return ds;
}

void zero_params(ParamSet& ps)
{
    for (auto& e : ps.entries())
        for (auto& v : e.tensor.mutable_data())
            v = 0;
}

fs::path fresh_dir(const std::string& name)
{
    const auto d = fs::temp_directory_path() / ("cyclesynth_test_" + name);
    fs::remove_all(d);
    return d;
}

std::vector<std::string> read_lines(const fs::path& p)
{
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);)
        out.push_back(l);
    return out;
}

bool bitwise_mode() { return sizeof(Scalar) == sizeof(float); }

} // namespace

TEST(TrainConfig, JsonRoundTripAndExhaustiveValidation)
{
    auto c = tiny_config();
    c.mode = TrainMode::paired_baseline;
    c.seed = 0xfedcba9876543210ULL;
    c.lambda = 3.5;
    const auto j = to_json(c);
    EXPECT_EQ(to_json(train_config_from_json(j)), j);

    TrainConfig bad;
    bad.batch_size = 0;
    bad.gen_width = 0;
    bad.lambda = -1;
    bad.pad_total = 3;
    EXPECT_EQ(bad.problems().size(), 4u);
    try {
        bad.validate();
        FAIL();
    } catch (const ConfigError& e) {
        const std::string m = e.what();
        for (const auto* key : {"batch_size", "generator width", "lambda", "pad_total"})
            EXPECT_NE(m.find(key), std::string::npos) << key;
    }
    EXPECT_THROW(parse_train_mode("semi"), ConfigError);
    const TrainConfig defaults;
    EXPECT_EQ(defaults.lambda, 10);
    EXPECT_EQ(defaults.image_pool_size, 50);
    EXPECT_EQ(defaults.batch_size, 1);
    EXPECT_EQ(defaults.total_epochs(), 200);
    EXPECT_EQ(defaults.schedule.base_lr, 2e-4);
}

TEST(ImagePool, CapacityAndSwapBehaviour)
{
    ImagePool pool(5);
    std::mt19937_64 rng(3);
    int returned_new = 0, returned_old = 0;
    for (int i = 0; i < 400; ++i) {
        const auto img = Tensor::full({1, 1, 2, 2}, static_cast<Scalar>(i));
        const auto out = pool.query(img, rng);
        ASSERT_LE(pool.size(), 5u);
        if (i < 5) {
            ASSERT_EQ(out.data()[0], i);
            continue;
        }
        if (out.data()[0] == i) {
            ++returned_new;
        } else {
            ++returned_old;
            ASSERT_LT(out.data()[0], i);
            // The returned image left the pool, and the new one took its place.
            bool has_new = false;
            for (const auto& t : pool.images()) {
                ASSERT_NE(t.data()[0], out.data()[0]);
                has_new |= t.data()[0] == i;
            }
            ASSERT_TRUE(has_new);
        }
    }
    EXPECT_NEAR(returned_new / 395.0, 0.5, 0.1);
    EXPECT_GT(returned_old, 0);

    ImagePool off(0);
    const auto img = Tensor::full({1, 1, 2, 2}, 9);
    EXPECT_EQ(off.query(img, rng).node(), img.node());
    EXPECT_EQ(off.size(), 0u);

    Checkpoint ck;
    pool.append_to(ck, "pool");
    ImagePool back(1);
    back.restore_from(decode_checkpoint(encode_checkpoint(ck)), "pool");
    ASSERT_EQ(back.size(), pool.size());
    EXPECT_EQ(back.capacity(), 5);
    for (std::size_t i = 0; i < back.size(); ++i)
        EXPECT_EQ(back.images()[i].data()[0], pool.images()[i].data()[0]);
}

TEST(TrainStep, ZeroGeneratorsOnZeroImagesHaveZeroCycle)
{
    auto cfg = tiny_config();
    auto nets = init_nets(cfg);
    auto opts = init_optimizers(nets, cfg);
    zero_params(nets.syn_ct.params);
    zero_params(nets.syn_mr.params);
    ImagePool pc(cfg.image_pool_size), pm(cfg.image_pool_size);
    std::mt19937_64 rng(1);
    const auto zero = Tensor::zeros({1, 1, 32, 32});
    const auto l = train_step_unpaired(zero, zero, nets, opts, pc, pm, cfg, 2e-4, rng);
    EXPECT_EQ(l.cycle, 0.0);
}

TEST(TrainStep, LambdaZeroTotalIsAdversarialSum)
{
    auto cfg = tiny_config();
    cfg.lambda = 0;
    auto nets = init_nets(cfg);
    auto opts = init_optimizers(nets, cfg);
    ImagePool pc(50), pm(50);
    std::mt19937_64 rng(1);
    const auto l = train_step_unpaired(random_image(32, 1), random_image(32, 2), nets, opts, pc, pm, cfg, 2e-4, rng);
    EXPECT_GT(l.cycle, 0.0);
    EXPECT_EQ(l.total_g, static_cast<double>(static_cast<Scalar>(l.g_adv_ct) + static_cast<Scalar>(l.g_adv_mr)));
    EXPECT_EQ(l.total_d, l.d_ct + l.d_mr);
}

TEST(TrainStep, OneStepMovesAllFourNetworks)
{
    auto cfg = tiny_config();
    auto nets = init_nets(cfg);
    auto opts = init_optimizers(nets, cfg);
    const auto before = std::array{hash_values(nets.syn_ct.params), hash_values(nets.syn_mr.params),
                                   hash_values(nets.dis_ct.params), hash_values(nets.dis_mr.params)};
    ImagePool pc(50), pm(50);
    std::mt19937_64 rng(1);
    const auto l = train_step_unpaired(random_image(32, 1), random_image(32, 2), nets, opts, pc, pm, cfg, 2e-4, rng);
    EXPECT_GT(l.total_g, 0);
    EXPECT_GT(l.total_d, 0);
    EXPECT_NE(hash_values(nets.syn_ct.params), before[0]);
    EXPECT_NE(hash_values(nets.syn_mr.params), before[1]);
    EXPECT_NE(hash_values(nets.dis_ct.params), before[2]);
    EXPECT_NE(hash_values(nets.dis_mr.params), before[3]);
}

TEST(TrainStep, UpdatesNeverTouchTheOppositeNetworks)
{
    auto cfg = tiny_config();
    auto nets = init_nets(cfg);
    auto opts = init_optimizers(nets, cfg);
    ImagePool pc(50), pm(50);
    std::mt19937_64 rng(4);
    // Leave distinctive gradients on the discriminators first.
    const auto mr = random_image(32, 5), ct = random_image(32, 6);
    discriminator_update(nets.dis_ct, opts.dis_ct, ct, mr, nullptr, 2e-4, rng, "d_ct");
    discriminator_update(nets.dis_mr, opts.dis_mr, mr, ct, nullptr, 2e-4, rng, "d_mr");

    const auto d_vals = std::array{hash_values(nets.dis_ct.params), hash_values(nets.dis_mr.params)};
    const auto d_grads = std::array{hash_grads(nets.dis_ct.params), hash_grads(nets.dis_mr.params)};
    auto g = generator_update_unpaired(mr, ct, nets, opts, cfg, 2e-4);
    EXPECT_EQ(hash_values(nets.dis_ct.params), d_vals[0]);
    EXPECT_EQ(hash_values(nets.dis_mr.params), d_vals[1]);
    EXPECT_EQ(hash_grads(nets.dis_ct.params), d_grads[0]);
    EXPECT_EQ(hash_grads(nets.dis_mr.params), d_grads[1]);
    EXPECT_TRUE(nets.dis_ct.params.entries()[0].tensor.requires_grad());
    EXPECT_FALSE(g.fake_ct.requires_grad());

    const auto g_vals = std::array{hash_values(nets.syn_ct.params), hash_values(nets.syn_mr.params)};
    const auto g_grads = std::array{hash_grads(nets.syn_ct.params), hash_grads(nets.syn_mr.params)};
    discriminator_update(nets.dis_ct, opts.dis_ct, ct, g.fake_ct, &pc, 2e-4, rng, "d_ct");
    discriminator_update(nets.dis_mr, opts.dis_mr, mr, g.fake_mr, &pm, 2e-4, rng, "d_mr");
    EXPECT_EQ(hash_values(nets.syn_ct.params), g_vals[0]);
    EXPECT_EQ(hash_values(nets.syn_mr.params), g_vals[1]);
    EXPECT_EQ(hash_grads(nets.syn_ct.params), g_grads[0]);
    EXPECT_EQ(hash_grads(nets.syn_mr.params), g_grads[1]);
}

TEST(TrainStep, NanNamesTheFirstBadTensor)
{
    auto cfg = tiny_config();
    auto nets = init_nets(cfg);
    auto opts = init_optimizers(nets, cfg);
    nets.syn_mr.params.at("head.b").mutable_data()[0] = std::numeric_limits<Scalar>::quiet_NaN();
    ImagePool pc(50), pm(50);
    std::mt19937_64 rng(1);
    try {
        train_step_unpaired(random_image(32, 1), random_image(32, 2), nets, opts, pc, pm, cfg, 2e-4, rng);
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("rec_mr"), std::string::npos) << e.what();
    }
    EXPECT_TRUE(nets.dis_ct.params.entries()[0].tensor.requires_grad());
}

TEST(TrainStep, PairedWithoutL1AgainstSilentDiscriminatorCostsOne)
{
    auto cfg = tiny_config();
    cfg.paired_mu = 0;
    auto nets = init_nets(cfg);
    auto opts = init_optimizers(nets, cfg);
    zero_params(nets.dis_ct.params);
    const auto l = train_step_paired(random_image(32, 1), random_image(32, 2), nets, opts, cfg, 2e-4);
    EXPECT_EQ(l.total_g, 1.0);
    EXPECT_EQ(l.g_adv_ct, 1.0);
    EXPECT_EQ(l.lambda, 0.0);
    EXPECT_EQ(l.d_mr, 0.0);
}

TEST(TrainStep, PairedDiscriminatorBranchMatchesUnpairedBranch)
{
    auto cfg = tiny_config();
    auto a = init_nets(cfg);
    auto oa = init_optimizers(a, cfg);
    auto b = init_nets(cfg);
    auto ob = init_optimizers(b, cfg);
    const auto mr = random_image(32, 1), ct = random_image(32, 2);
    const auto l = train_step_paired(mr, ct, a, oa, cfg, 2e-4);
    // Same generator update by hand, then the unpaired discriminator branch without a pool.
    b.syn_ct.params.zero_grad();
    {
        b.dis_ct.params.set_requires_grad(false);
        auto fake = generator_forward(b.syn_ct, mr);
        backward(loss_paired(fake, ct, discriminator_forward(b.dis_ct, fake), static_cast<Scalar>(cfg.paired_mu)));
        b.dis_ct.params.set_requires_grad(true);
    }
    adam_step(b.syn_ct.params, ob.syn_ct, 2e-4);
    std::mt19937_64 rng(0);
    // The fake the paired step showed its discriminator came from the pre-update generator.
    const auto fake = generator_forward(init_nets(cfg).syn_ct, mr);
    const double d = discriminator_update(b.dis_ct, ob.dis_ct, ct, fake, nullptr, 2e-4, rng, "d_ct");
    EXPECT_EQ(d, l.d_ct);
    EXPECT_EQ(hash_values(a.dis_ct.params), hash_values(b.dis_ct.params));
    EXPECT_EQ(hash_values(a.syn_ct.params), hash_values(b.syn_ct.params));
}

TEST(TrainStep, SeededTwoStepRunsAreBitwiseIdentical)
{
    for (auto mode : {TrainMode::unpaired_cycle, TrainMode::paired_baseline}) {
        auto cfg = tiny_config();
        cfg.mode = mode;
        std::vector<std::uint8_t> bytes[2];
        for (auto& out : bytes) {
            auto s = init_train_state(cfg);
            std::mt19937_64 rng(9);
            for (int k = 0; k < 2; ++k) {
                const auto mr = random_image(32, 10 + k), ct = random_image(32, 20 + k);
                if (mode == TrainMode::unpaired_cycle)
                    train_step_unpaired(mr, ct, s.nets, s.opts, s.pool_ct, s.pool_mr, cfg, 2e-4, rng);
                else
                    train_step_paired(mr, ct, s.nets, s.opts, cfg, 2e-4);
            }
            out = encode_checkpoint(to_checkpoint(s));
        }
        EXPECT_EQ(bytes[0], bytes[1]) << to_string(mode);
    }
}

TEST(TrainState, CheckpointRoundTripIsExact)
{
    auto cfg = tiny_config();
    auto s = init_train_state(cfg);
    std::mt19937_64 rng(2);
    train_step_unpaired(random_image(32, 1), random_image(32, 2), s.nets, s.opts, s.pool_ct, s.pool_mr, cfg, 2e-4,
                        rng);
    s.epoch = 3;
    const auto bytes = encode_checkpoint(to_checkpoint(s));
    const auto back = from_checkpoint(decode_checkpoint(bytes));
    EXPECT_EQ(back.epoch, 3);
    EXPECT_EQ(back.pool_ct.size(), 1u);
    EXPECT_EQ(back.opts.dis_mr.t, 1);
    if (bitwise_mode())
        EXPECT_EQ(encode_checkpoint(to_checkpoint(back)), bytes);
}

TEST(RunTraining, ZeroEpochsWritesOnlyTheInitialCheckpoint)
{
    const auto dir = fresh_dir("zero_epochs");
    auto cfg = tiny_config();
    cfg.schedule = {2e-4, 0, 0};
    const auto r = run_training(phantom_dataset(2, 2, 32), cfg, dir);
    EXPECT_EQ(r.checkpoints.size(), 1u);
    EXPECT_EQ(r.final_checkpoint, dir / "ckpt_epoch0.csyn");
    EXPECT_TRUE(r.epochs.empty());
    EXPECT_EQ(read_lines(r.loss_log), std::vector<std::string>{kLossLogHeader});
    int files = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir))
        ++files;
    EXPECT_EQ(files, 2);
    const auto s = from_checkpoint(load_checkpoint(r.final_checkpoint));
    EXPECT_EQ(s.epoch, 0);
    EXPECT_EQ(encode_checkpoint(to_checkpoint(s)), encode_checkpoint(to_checkpoint(init_train_state(cfg))));
}

TEST(RunTraining, LogRowsAndLearningRatesFollowTheSchedule)
{
    const auto dir = fresh_dir("log_rows");
    auto cfg = tiny_config();
    cfg.batch_size = 3;
    cfg.schedule = {1e-3, 1, 2};
    cfg.checkpoint_every = 2;
    const auto ds = phantom_dataset(2, 4, 32); // 8 slices, 3 batches per epoch
    const auto r = run_training(ds, cfg, dir);
    const auto lines = read_lines(r.loss_log);
    ASSERT_EQ(lines.size(), 1u + 3 * 3);
    EXPECT_EQ(lines[0], kLossLogHeader);
    for (std::size_t i = 1; i < lines.size(); ++i) {
        std::stringstream ss(lines[i]);
        std::string epoch, iter, lr;
        std::getline(ss, epoch, ',');
        std::getline(ss, iter, ',');
        std::getline(ss, lr, ',');
        EXPECT_EQ(std::stoi(iter), static_cast<int>((i - 1) % 3));
        EXPECT_EQ(std::stod(lr), lr_at(std::stoi(epoch), cfg.schedule)) << lines[i];
    }
    ASSERT_EQ(r.epochs.size(), 3u);
    EXPECT_EQ(r.epochs[2].lr, lr_at(2, cfg.schedule));
    // Initial, cadence (epoch 2) and final (epoch 3).
    std::vector<fs::path> expected{dir / "ckpt_epoch0.csyn", dir / "ckpt_epoch2.csyn", dir / "ckpt_epoch3.csyn"};
    EXPECT_EQ(r.checkpoints, expected);
}

TEST(RunTraining, ResumeMatchesUninterruptedRun)
{
    if (!bitwise_mode())
        GTEST_SKIP() << "bitwise resume is guaranteed for the f32 build only";
    const auto ds = phantom_dataset(2, 3, 24);
    auto cfg = tiny_config();
    const auto full = run_training(ds, cfg, fresh_dir("resume_full"));
    const auto resumed_dir = fresh_dir("resume_part");
    fs::create_directories(resumed_dir);
    TrainOptions opt;
    opt.resume_from = full.checkpoints.at(1);
    ASSERT_EQ(opt.resume_from->filename(), "ckpt_epoch1.csyn");
    const auto part = run_training(ds, cfg, resumed_dir, opt);
    ASSERT_EQ(part.epochs.size(), 1u);
    EXPECT_EQ(read_file_bytes(part.final_checkpoint), read_file_bytes(full.final_checkpoint));

    auto other = cfg;
    other.lambda = 1;
    EXPECT_THROW(run_training(ds, other, resumed_dir, opt), ConfigError);
}

TEST(RunTraining, LargeLambdaDrivesCycleLossDown)
{
    auto cfg = tiny_config();
    cfg.lambda = 1e4;
    cfg.schedule = {2e-4, 10, 0};
    cfg.checkpoint_every = 100;
    const auto r = run_training(phantom_dataset(2, 10, 24), cfg, fresh_dir("large_lambda"));
    ASSERT_EQ(r.epochs.size(), 10u);
    EXPECT_EQ(r.epochs[0].iterations * 10, 200);
    for (std::size_t e = 1; e < r.epochs.size(); ++e)
        EXPECT_LT(r.epochs[e].mean.cycle, r.epochs[e - 1].mean.cycle) << "epoch " << e;
}

TEST(RunTraining, RejectsBadInputs)
{
    auto cfg = tiny_config();
    Dataset empty;
    EXPECT_THROW(run_training(empty, cfg, fresh_dir("bad")), DataError);
    auto ds = phantom_dataset(2, 1, 16);
    EXPECT_THROW(run_training(ds, cfg, fresh_dir("bad")), ShapeError);
    TrainOptions opt;
    opt.resume_from = "/nonexistent/ckpt_epoch1.csyn";
    try {
        run_training(phantom_dataset(2, 1, 24), cfg, fresh_dir("bad"), opt);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("/nonexistent/ckpt_epoch1.csyn"), std::string::npos);
    }
}

TEST(Translate, CarriesTargetWindowAndMask)
{
    auto cfg = tiny_config();
    const auto nets = init_nets(cfg);
    const auto ds = phantom_dataset(1, 2, 32);
    const auto out = translate_volume(generator_for(nets, true), ds.mr[0], Modality::SYNTH_CT);
    EXPECT_EQ(out.modality, Modality::SYNTH_CT);
    EXPECT_EQ(out.window.lo, kCtWindow.lo);
    EXPECT_EQ(out.window.hi, kCtWindow.hi);
    EXPECT_EQ(out.mask, ds.mr[0].mask);
    EXPECT_EQ(out.voxels.size(), ds.mr[0].voxels.size());
    EXPECT_EQ(translate_volume(generator_for(nets, true), ds.mr[0], Modality::SYNTH_CT).voxels, out.voxels);
    const auto back = translate_volume(generator_for(nets, false), out, Modality::SYNTH_MR);
    EXPECT_EQ(back.window.hi, kMrWindow.hi);
    // Inference leaves no gradient state behind on the parameters.
    EXPECT_FALSE(nets.syn_ct.params.entries()[0].tensor.has_grad());

    auto odd = ds.mr[0];
    odd.width = 30;
    odd.height = 33;
    odd.voxels.resize(static_cast<std::size_t>(2 * 30 * 33));
    odd.mask.reset();
    EXPECT_THROW(translate_volume(generator_for(nets, true), odd, Modality::SYNTH_CT), ShapeError);
}
