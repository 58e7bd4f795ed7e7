#include "cyclesynth/train.hpp"

#include "cyclesynth/errors.hpp"
#include "cyclesynth/ops.hpp"
#include "cyclesynth/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace cyclesynth {

namespace {

// Stream identifiers for derive_seed.
enum : std::uint64_t { kStreamInit = 1, kStreamSampling = 2, kStreamStep = 3 };
enum : std::uint64_t { kNetSynCt = 0, kNetSynMr = 1, kNetDisCt = 2, kNetDisMr = 3 };

double item(const Tensor& t) { return static_cast<double>(t.item()); }

// Discriminator parameters stay off the tape while a generator step runs.
class Frozen {
public:
    explicit Frozen(ParamSet& ps) : ps_(ps) { ps_.set_requires_grad(false); }
    ~Frozen() { ps_.set_requires_grad(true); }
    Frozen(const Frozen&) = delete;
    Frozen& operator=(const Frozen&) = delete;

private:
    ParamSet& ps_;
};

Tensor stack_images(const std::vector<std::vector<std::uint8_t>>& images, std::int64_t h, std::int64_t w)
{
    const auto b = static_cast<std::int64_t>(images.size());
    std::vector<Scalar> v;
    v.reserve(static_cast<std::size_t>(b * h * w));
    for (const auto& img : images)
        for (auto q : img)
            v.push_back(to_model_range(q));
    return Tensor::from({b, 1, h, w}, std::move(v));
}

Tensor batch_item(const Tensor& t, std::int64_t i)
{
    const auto per = t.numel() / t.dim(0);
    const auto d = t.data().subspan(static_cast<std::size_t>(i * per), static_cast<std::size_t>(per));
    return Tensor::from({1, t.dim(1), t.dim(2), t.dim(3)}, std::vector<Scalar>(d.begin(), d.end()));
}

nlohmann::json without_cadence(nlohmann::json j)
{
    j.erase("checkpoint_every");
    j.erase("log_every");
    return j;
}

void write_log_row(std::ostream& os, int epoch, int iter, double lr, const LossBreakdown& l)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", epoch, iter, lr, l.d_ct, l.d_mr,
                  l.g_adv_ct, l.g_adv_mr, l.cycle, l.total_g, l.total_d);
    os << buf;
}

void accumulate(LossBreakdown& sum, const LossBreakdown& l)
{
    sum.d_ct += l.d_ct;
    sum.d_mr += l.d_mr;
    sum.g_adv_ct += l.g_adv_ct;
    sum.g_adv_mr += l.g_adv_mr;
    sum.cycle += l.cycle;
    sum.lambda = l.lambda;
    sum.total_g += l.total_g;
    sum.total_d += l.total_d;
}

LossBreakdown divided(LossBreakdown s, int n)
{
    const double k = n > 0 ? 1.0 / n : 0.0;
    s.d_ct *= k;
    s.d_mr *= k;
    s.g_adv_ct *= k;
    s.g_adv_mr *= k;
    s.cycle *= k;
    s.total_g *= k;
    s.total_d *= k;
    return s;
}

} // namespace

std::string to_string(TrainMode m) { return m == TrainMode::unpaired_cycle ? "unpaired_cycle" : "paired_baseline"; }

TrainMode parse_train_mode(const std::string& s)
{
    if (s == "unpaired_cycle" || s == "unpaired")
        return TrainMode::unpaired_cycle;
    if (s == "paired_baseline" || s == "paired")
        return TrainMode::paired_baseline;
    throw ConfigError("unknown training mode '" + s + "' (expected unpaired or paired)");
}

std::vector<std::string> TrainConfig::problems() const
{
    std::vector<std::string> out;
    auto need = [&](bool ok, const std::string& msg) {
        if (!ok)
            out.push_back(msg);
    };
    need(std::isfinite(lambda) && lambda >= 0, "lambda must be finite and >= 0");
    need(std::isfinite(paired_mu) && paired_mu >= 0, "paired_mu must be finite and >= 0");
    need(std::isfinite(schedule.base_lr) && schedule.base_lr >= 0, "base_lr must be finite and >= 0");
    need(schedule.fixed_epochs >= 0, "epochs_fixed must be >= 0");
    need(schedule.decay_epochs >= 0, "epochs_decay must be >= 0");
    need(adam.beta1 >= 0 && adam.beta1 < 1, "adam beta1 must be in [0, 1)");
    need(adam.beta2 >= 0 && adam.beta2 < 1, "adam beta2 must be in [0, 1)");
    need(adam.eps > 0, "adam eps must be > 0");
    need(batch_size >= 1, "batch_size must be >= 1");
    need(image_pool_size >= 0, "image_pool_size must be >= 0");
    need(gen_width >= 1, "generator width must be >= 1");
    need(dis_width >= 1, "discriminator width must be >= 1");
    need(pad_total == -1 || (pad_total >= 0 && pad_total % 2 == 0), "pad_total must be -1 or a non-negative even count");
    need(checkpoint_every >= 1, "checkpoint_every must be >= 1");
    need(log_every >= 1, "log_every must be >= 1");
    return out;
}

void TrainConfig::validate() const
{
    const auto p = problems();
    if (p.empty())
        return;
    std::string msg = "invalid training config:";
    for (const auto& s : p)
        msg += "\n  - " + s;
    throw ConfigError(msg);
}

nlohmann::json to_json(const TrainConfig& c)
{
    return {
        {"mode", to_string(c.mode)},
        {"lambda", c.lambda},
        {"paired_mu", c.paired_mu},
        {"base_lr", c.schedule.base_lr},
        {"epochs_fixed", c.schedule.fixed_epochs},
        {"epochs_decay", c.schedule.decay_epochs},
        {"adam_beta1", c.adam.beta1},
        {"adam_beta2", c.adam.beta2},
        {"adam_eps", c.adam.eps},
        {"batch_size", c.batch_size},
        {"image_pool_size", c.image_pool_size},
        {"seed", c.seed},
        {"gen_width", c.gen_width},
        {"dis_width", c.dis_width},
        {"augment", c.augment},
        {"pad_total", c.pad_total},
        {"forbid_same_index", c.forbid_same_index},
        {"checkpoint_every", c.checkpoint_every},
        {"log_every", c.log_every},
    };
}

TrainConfig train_config_from_json(const nlohmann::json& j)
{
    TrainConfig c;
    try {
        c.mode = parse_train_mode(j.at("mode").get<std::string>());
        c.lambda = j.at("lambda").get<double>();
        c.paired_mu = j.at("paired_mu").get<double>();
        c.schedule.base_lr = j.at("base_lr").get<double>();
        c.schedule.fixed_epochs = j.at("epochs_fixed").get<int>();
        c.schedule.decay_epochs = j.at("epochs_decay").get<int>();
        c.adam.beta1 = j.at("adam_beta1").get<double>();
        c.adam.beta2 = j.at("adam_beta2").get<double>();
        c.adam.eps = j.at("adam_eps").get<double>();
        c.batch_size = j.at("batch_size").get<int>();
        c.image_pool_size = j.at("image_pool_size").get<int>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.gen_width = j.at("gen_width").get<int>();
        c.dis_width = j.at("dis_width").get<int>();
        c.augment = j.at("augment").get<bool>();
        c.pad_total = j.at("pad_total").get<std::int64_t>();
        c.forbid_same_index = j.at("forbid_same_index").get<bool>();
        c.checkpoint_every = j.at("checkpoint_every").get<int>();
        c.log_every = j.at("log_every").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("training config: ") + e.what());
    }
    return c;
}

// ---- Image pool -----------------------------------------------------------------

Tensor ImagePool::query(const Tensor& fake, std::mt19937_64& rng)
{
    if (capacity_ == 0)
        return fake;
    const auto b = fake.dim(0);
    std::vector<Scalar> out;
    out.reserve(static_cast<std::size_t>(fake.numel()));
    for (std::int64_t i = 0; i < b; ++i) {
        auto img = batch_item(fake, i);
        Tensor chosen = img;
        if (static_cast<int>(images_.size()) < capacity_) {
            images_.push_back(img);
        } else if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) >= 0.5) {
            const auto k = std::uniform_int_distribution<std::size_t>(0, images_.size() - 1)(rng);
            chosen = images_[k];
            images_[k] = img;
        }
        out.insert(out.end(), chosen.data().begin(), chosen.data().end());
    }
    return Tensor::from(fake.shape(), std::move(out));
}

void ImagePool::append_to(Checkpoint& ckpt, const std::string& prefix) const
{
    for (std::size_t i = 0; i < images_.size(); ++i)
        ckpt.tensors.push_back({prefix + "." + std::to_string(i), images_[i].detach()});
    ckpt.meta[prefix] = {{"capacity", capacity_}, {"size", images_.size()}};
}

void ImagePool::restore_from(const Checkpoint& ckpt, const std::string& prefix)
{
    if (!ckpt.meta.contains(prefix))
        throw DataError("checkpoint has no image pool '" + prefix + "'");
    capacity_ = ckpt.meta[prefix].at("capacity").get<int>();
    const auto n = ckpt.meta[prefix].at("size").get<std::size_t>();
    images_.clear();
    for (std::size_t i = 0; i < n; ++i)
        images_.push_back(ckpt.at(prefix + "." + std::to_string(i)).detach());
}

// ---- Steps ----------------------------------------------------------------------

Nets init_nets(const TrainConfig& cfg)
{
    auto s = [&](std::uint64_t net) { return derive_seed(cfg.seed, {kStreamInit, net}); };
    return Nets{init_generator(cfg.gen_width, s(kNetSynCt)), init_generator(cfg.gen_width, s(kNetSynMr)),
                init_discriminator(cfg.dis_width, s(kNetDisCt)), init_discriminator(cfg.dis_width, s(kNetDisMr))};
}

Optimizers init_optimizers(const Nets& nets, const TrainConfig& cfg)
{
    return Optimizers{make_adam_state(nets.syn_ct.params, cfg.adam), make_adam_state(nets.syn_mr.params, cfg.adam),
                      make_adam_state(nets.dis_ct.params, cfg.adam), make_adam_state(nets.dis_mr.params, cfg.adam)};
}

void require_finite(const Tensor& t, const std::string& what)
{
    for (auto v : t.data())
        if (!std::isfinite(v))
            throw NumericError("non-finite value in " + what + " (" + t.op_name() + ")");
}

GeneratorUpdate generator_update_unpaired(const Tensor& i_mr, const Tensor& i_ct, Nets& nets, Optimizers& opts,
                                          const TrainConfig& cfg, double lr)
{
    auto& n = nets;
    GeneratorUpdate out;
    out.losses.lambda = cfg.lambda;
    n.syn_ct.params.zero_grad();
    n.syn_mr.params.zero_grad();
    {
        const Frozen freeze_ct(n.dis_ct.params);
        const Frozen freeze_mr(n.dis_mr.params);
        auto fake_ct = generator_forward(n.syn_ct, i_mr);
        require_finite(fake_ct, "fake_ct");
        auto rec_mr = generator_forward(n.syn_mr, fake_ct);
        require_finite(rec_mr, "rec_mr");
        auto fake_mr = generator_forward(n.syn_mr, i_ct);
        require_finite(fake_mr, "fake_mr");
        auto rec_ct = generator_forward(n.syn_ct, fake_mr);
        require_finite(rec_ct, "rec_ct");
        auto adv_ct = loss_gen_adv(discriminator_forward(n.dis_ct, fake_ct));
        require_finite(adv_ct, "g_adv_ct");
        auto adv_mr = loss_gen_adv(discriminator_forward(n.dis_mr, fake_mr));
        require_finite(adv_mr, "g_adv_mr");
        auto cyc = loss_cycle(i_mr, rec_mr, i_ct, rec_ct);
        require_finite(cyc, "cycle");
        auto total = generator_objective(adv_ct, adv_mr, cyc, static_cast<Scalar>(cfg.lambda));
        require_finite(total, "total_g");
        backward(total);
        out.fake_ct = fake_ct.detach();
        out.fake_mr = fake_mr.detach();
        out.losses.g_adv_ct = item(adv_ct);
        out.losses.g_adv_mr = item(adv_mr);
        out.losses.cycle = item(cyc);
        out.losses.total_g = item(total);
    }
    adam_step(n.syn_ct.params, opts.syn_ct, lr);
    adam_step(n.syn_mr.params, opts.syn_mr, lr);
    return out;
}

double discriminator_update(DiscriminatorParams& d, AdamState& state, const Tensor& real, const Tensor& fake,
                            ImagePool* pool, double lr, std::mt19937_64& rng, const std::string& name)
{
    d.params.zero_grad();
    const auto cut = fake.detach();
    const auto shown = pool ? pool->query(cut, rng) : cut;
    auto loss = loss_dis(discriminator_forward(d, real), discriminator_forward(d, shown));
    require_finite(loss, name);
    backward(loss);
    adam_step(d.params, state, lr);
    return item(loss);
}

LossBreakdown train_step_unpaired(const Tensor& i_mr, const Tensor& i_ct, Nets& nets, Optimizers& opts,
                                  ImagePool& pool_ct, ImagePool& pool_mr, const TrainConfig& cfg, double lr,
                                  std::mt19937_64& rng)
{
    auto g = generator_update_unpaired(i_mr, i_ct, nets, opts, cfg, lr);
    auto out = g.losses;
    out.d_ct = discriminator_update(nets.dis_ct, opts.dis_ct, i_ct, g.fake_ct, &pool_ct, lr, rng, "d_ct");
    out.d_mr = discriminator_update(nets.dis_mr, opts.dis_mr, i_mr, g.fake_mr, &pool_mr, lr, rng, "d_mr");
    out.total_d = out.d_ct + out.d_mr;
    return out;
}

LossBreakdown train_step_paired(const Tensor& i_mr, const Tensor& i_ct_aligned, Nets& nets, Optimizers& opts,
                                const TrainConfig& cfg, double lr)
{
    auto& n = nets;
    LossBreakdown out;
    out.lambda = cfg.paired_mu;
    n.syn_ct.params.zero_grad();
    Tensor fake_ct;
    {
        const Frozen freeze(n.dis_ct.params);
        fake_ct = generator_forward(n.syn_ct, i_mr);
        require_finite(fake_ct, "fake_ct");
        auto score = discriminator_forward(n.dis_ct, fake_ct);
        auto adv = loss_gen_adv(score);
        require_finite(adv, "g_adv_ct");
        auto l1 = mean_abs_diff(fake_ct, i_ct_aligned);
        require_finite(l1, "paired L1");
        auto total = loss_paired(fake_ct, i_ct_aligned, score, static_cast<Scalar>(cfg.paired_mu));
        require_finite(total, "total_g");
        backward(total);
        out.g_adv_ct = item(adv);
        out.cycle = item(l1);
        out.total_g = item(total);
    }
    adam_step(n.syn_ct.params, opts.syn_ct, lr);

    std::mt19937_64 unused(0);
    out.d_ct = discriminator_update(n.dis_ct, opts.dis_ct, i_ct_aligned, fake_ct, nullptr, lr, unused, "d_ct");
    out.total_d = out.d_ct;
    return out;
}

// ---- State and checkpoints ------------------------------------------------------------

TrainState init_train_state(const TrainConfig& cfg)
{
    cfg.validate();
    TrainState s{cfg, 0, init_nets(cfg), {}, ImagePool(cfg.image_pool_size), ImagePool(cfg.image_pool_size)};
    s.opts = init_optimizers(s.nets, cfg);
    return s;
}

Checkpoint to_checkpoint(const TrainState& s)
{
    Checkpoint c;
    c.meta["format"] = "cyclesynth-train";
    c.meta["epoch"] = s.epoch;
    c.meta["config"] = to_json(s.config);
    c.meta["gen_width"] = s.nets.syn_ct.base_width;
    c.meta["dis_width"] = s.nets.dis_ct.base_width;
    append_params(c, "syn_ct", s.nets.syn_ct.params);
    append_params(c, "syn_mr", s.nets.syn_mr.params);
    append_params(c, "dis_ct", s.nets.dis_ct.params);
    append_params(c, "dis_mr", s.nets.dis_mr.params);
    append_adam_state(c, "adam.syn_ct", s.nets.syn_ct.params, s.opts.syn_ct);
    append_adam_state(c, "adam.syn_mr", s.nets.syn_mr.params, s.opts.syn_mr);
    append_adam_state(c, "adam.dis_ct", s.nets.dis_ct.params, s.opts.dis_ct);
    append_adam_state(c, "adam.dis_mr", s.nets.dis_mr.params, s.opts.dis_mr);
    s.pool_ct.append_to(c, "pool_ct");
    s.pool_mr.append_to(c, "pool_mr");
    return c;
}

TrainState from_checkpoint(const Checkpoint& ckpt)
{
    if (ckpt.meta.value("format", "") != "cyclesynth-train")
        throw DataError("checkpoint is not a training checkpoint");
    const auto cfg = train_config_from_json(ckpt.meta.at("config"));
    auto s = init_train_state(cfg);
    s.epoch = ckpt.meta.at("epoch").get<int>();
    restore_params(ckpt, "syn_ct", s.nets.syn_ct.params);
    restore_params(ckpt, "syn_mr", s.nets.syn_mr.params);
    restore_params(ckpt, "dis_ct", s.nets.dis_ct.params);
    restore_params(ckpt, "dis_mr", s.nets.dis_mr.params);
    restore_adam_state(ckpt, "adam.syn_ct", s.nets.syn_ct.params, s.opts.syn_ct);
    restore_adam_state(ckpt, "adam.syn_mr", s.nets.syn_mr.params, s.opts.syn_mr);
    restore_adam_state(ckpt, "adam.dis_ct", s.nets.dis_ct.params, s.opts.dis_ct);
    restore_adam_state(ckpt, "adam.dis_mr", s.nets.dis_mr.params, s.opts.dis_mr);
    s.pool_ct.restore_from(ckpt, "pool_ct");
    s.pool_mr.restore_from(ckpt, "pool_mr");
    return s;
}

std::string checkpoint_name(int epoch) { return "ckpt_epoch" + std::to_string(epoch) + ".csyn"; }

// ---- Loop ---------------------------------------------------------------------------

TrainResult run_training(const Dataset& ds, const TrainConfig& cfg, const std::filesystem::path& out_dir,
                         const TrainOptions& options)
{
    cfg.validate();
    ds.validate();
    const auto h = ds.mr.front().height;
    const auto w = ds.mr.front().width;
    if (h % 4 != 0 || w % 4 != 0)
        throw ShapeError("training slices must be multiples of 4, got " + std::to_string(h) + "x" + std::to_string(w));
    discriminator_output_size(h, w); // rejects slices too small for the discriminator

    TrainState state = init_train_state(cfg);
    if (options.resume_from) {
        auto resumed = from_checkpoint(load_checkpoint(*options.resume_from));
        if (without_cadence(to_json(resumed.config)) != without_cadence(to_json(cfg)))
            throw ConfigError("resume: checkpoint " + options.resume_from->string() +
                              " was written with a different training config");
        resumed.config = cfg;
        state = std::move(resumed);
    }

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec)
        throw DataError("cannot create " + out_dir.string() + ": " + ec.message());

    TrainResult result;
    result.loss_log = out_dir / kLossLogName;
    {
        // Keep logged rows of epochs already completed (resume into the same directory).
        std::vector<std::string> kept;
        if (options.resume_from && std::filesystem::exists(result.loss_log)) {
            std::ifstream in(result.loss_log);
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line))
                if (!line.empty() && std::stoi(line.substr(0, line.find(','))) < state.epoch)
                    kept.push_back(line);
        }
        std::ofstream log(result.loss_log, std::ios::trunc);
        if (!log)
            throw DataError("cannot write " + result.loss_log.string());
        log << kLossLogHeader << '\n';
        for (const auto& l : kept)
            log << l << '\n';
    }
    auto save = [&] {
        const auto path = out_dir / checkpoint_name(state.epoch);
        save_checkpoint(path, to_checkpoint(state));
        result.checkpoints.push_back(path);
        result.final_checkpoint = path;
    };
    if (!options.resume_from)
        save();

    const AugmentSpec spec{h, w, cfg.pad_total < 0 ? std::min(default_pad_total(h), default_pad_total(w)) : cfg.pad_total};
    const auto sampling_seed = derive_seed(cfg.seed, {kStreamSampling});
    auto prepare = [&](const SliceVolume& v, std::int64_t s, std::optional<CropOffset> at) {
        const auto img = v.slice(s);
        if (!cfg.augment)
            return std::vector<std::uint8_t>(img.begin(), img.end());
        return pad_and_crop(img, h, w, spec, *at);
    };

    std::ofstream log(result.loss_log, std::ios::app);
    for (int e = state.epoch; e < cfg.total_epochs(); ++e) {
        const double lr = lr_at(e, cfg.schedule);
        EpochSummary summary{e, lr, 0, {}};
        LossBreakdown sum;
        const bool unpaired = cfg.mode == TrainMode::unpaired_cycle;
        std::vector<std::pair<SliceRef, SliceRef>> plan;
        if (unpaired) {
            plan = unpaired_epoch(ds, sampling_seed, e, cfg.forbid_same_index);
        } else {
            for (const auto& r : paired_epoch(ds, sampling_seed, e))
                plan.emplace_back(r, r);
        }
        const auto n = static_cast<int>(plan.size());
        const int iters = (n + cfg.batch_size - 1) / cfg.batch_size;
        for (int it = 0; it < iters; ++it) {
            std::mt19937_64 rng(derive_seed(cfg.seed, {kStreamStep, static_cast<std::uint64_t>(e),
                                                       static_cast<std::uint64_t>(it)}));
            std::vector<std::vector<std::uint8_t>> mr_imgs, ct_imgs;
            for (int k = it * cfg.batch_size; k < std::min(n, (it + 1) * cfg.batch_size); ++k) {
                const auto& [m, c] = plan[k];
                std::optional<CropOffset> at_mr, at_ct;
                if (cfg.augment) {
                    at_mr = draw_crop(spec, rng);
                    at_ct = unpaired ? draw_crop(spec, rng) : *at_mr;
                }
                mr_imgs.push_back(prepare(ds.mr[m.volume], m.slice, at_mr));
                ct_imgs.push_back(prepare(ds.ct[c.volume], c.slice, at_ct));
            }
            const auto i_mr = stack_images(mr_imgs, h, w);
            const auto i_ct = stack_images(ct_imgs, h, w);
            LossBreakdown l;
            try {
                l = unpaired ? train_step_unpaired(i_mr, i_ct, state.nets, state.opts, state.pool_ct, state.pool_mr,
                                                   cfg, lr, rng)
                             : train_step_paired(i_mr, i_ct, state.nets, state.opts, cfg, lr);
            } catch (const NumericError& err) {
                throw NumericError(std::string(err.what()) + " at epoch " + std::to_string(e) + ", iteration " +
                                   std::to_string(it));
            }
            accumulate(sum, l);
            ++summary.iterations;
            if (it % cfg.log_every == 0)
                write_log_row(log, e, it, lr, l);
        }
        log.flush();
        if (!log)
            throw DataError("cannot write " + result.loss_log.string());
        summary.mean = divided(sum, summary.iterations);
        state.epoch = e + 1;
        if (state.epoch % cfg.checkpoint_every == 0 || state.epoch == cfg.total_epochs())
            save();
        result.epochs.push_back(summary);
        if (options.on_epoch)
            options.on_epoch(summary);
    }
    if (result.final_checkpoint.empty()) {
        // Resumed at or past the last epoch: nothing to train, re-emit the final state.
        save();
    }
    return result;
}

// ---- Inference ------------------------------------------------------------------------

const GeneratorParams& generator_for(const Nets& nets, bool mr_to_ct) { return mr_to_ct ? nets.syn_ct : nets.syn_mr; }

SliceVolume translate_volume(const GeneratorParams& g, const SliceVolume& in, Modality target)
{
    in.validate();
    if (in.height % 4 != 0 || in.width % 4 != 0)
        throw ShapeError("translate: slice size " + std::to_string(in.height) + "x" + std::to_string(in.width) +
                         " is not a multiple of 4");
    // Detached copy so inference records no tape for the parameters.
    GeneratorParams frozen{g.base_width, {}};
    for (const auto& e : g.params.entries()) {
        const auto src = e.tensor.data();
        std::copy(src.begin(), src.end(), frozen.params.add(e.name, e.tensor.shape()).mutable_data().begin());
    }
    frozen.params.set_requires_grad(false);

    SliceVolume out;
    out.modality = target;
    out.slices = in.slices;
    out.height = in.height;
    out.width = in.width;
    out.spacing_mm = in.spacing_mm;
    out.window = is_ct_like(target) ? kCtWindow : kMrWindow;
    out.mask = in.mask;
    out.voxels.resize(in.voxels.size());
    for (std::int64_t s = 0; s < in.slices; ++s) {
        const auto y = generator_forward(frozen, slice_tensor(in, s));
        require_finite(y, "synthesized slice " + std::to_string(s));
        auto dst = out.mutable_slice(s);
        const auto d = y.data();
        for (std::size_t i = 0; i < dst.size(); ++i)
            dst[i] = from_model_range(d[i]);
    }
    return out;
}

} // namespace cyclesynth
