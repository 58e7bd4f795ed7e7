// Acceptance runner: one PASS/FAIL line per criterion, exit status 0 iff all pass.
// Criteria 6-8 train real models and take several minutes on one core.

#include "checks.hpp"

#include "cyclesynth/checkpoint.hpp"
#include "cyclesynth/data.hpp"
#include "cyclesynth/evalx.hpp"
#include "cyclesynth/losses.hpp"
#include "cyclesynth/ops.hpp"
#include "cyclesynth/optim.hpp"
#include "cyclesynth/parallel.hpp"
#include "cyclesynth/train.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>

using namespace cyclesynth;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

// ---- 1. reference table ----------------------------------------------------------------

Outcome criterion_table()
{
    const std::vector<double> mae_u{70.3, 76.2, 75.5, 75.2, 72.0, 73.0};
    const std::vector<double> mae_p{86.2, 98.8, 96.9, 86.0, 81.7, 87.0};
    const std::vector<double> psnr_u{31.1, 32.1, 32.9, 32.9, 32.3, 32.5};
    const std::vector<double> psnr_p{29.3, 30.1, 30.1, 31.7, 31.2, 30.9};
    std::vector<EvalRow> u, p;
    for (std::size_t i = 0; i < mae_u.size(); ++i) {
        u.push_back({"patient " + std::to_string(i + 1), mae_u[i], psnr_u[i], 0});
        p.push_back({"patient " + std::to_string(i + 1), mae_p[i], psnr_p[i], 0});
    }
    const auto au = aggregate(u);
    const auto ap = aggregate(p);
    auto ms = [](double m, double sd) { return format_1dp(m) + " +- " + format_1dp(sd); };
    const std::string got[4] = {ms(au.mean_mae, *au.sd_mae), ms(ap.mean_mae, *ap.sd_mae),
                                ms(au.mean_psnr, *au.sd_psnr), ms(ap.mean_psnr, *ap.sd_psnr)};
    const std::string want[4] = {"73.7 +- 2.3", "89.4 +- 6.8", "32.3 +- 0.7", "30.6 +- 0.9"};
    bool ok = true;
    for (int i = 0; i < 4; ++i)
        ok = ok && got[i] == want[i];
    const auto t = paired_ttest(mae_u, mae_p);
    ok = ok && t.p_two_sided < 0.05;
    return {ok, "MAE " + got[0] + " / " + got[1] + ", PSNR " + got[2] + " / " + got[3] +
                    fmt(", MAE paired t-test t=%.4f p=%.3g (< 0.05)", t.t, t.p_two_sided)};
}

// ---- 2, 3. gradient and architecture suites -------------------------------------------

Outcome from_checks(const std::vector<checks::CheckResult>& rs, bool gradient)
{
    std::size_t passed = 0;
    std::size_t min_probes = SIZE_MAX;
    double worst = 0;
    std::string failing;
    for (const auto& r : rs) {
        passed += r.passed;
        if (!r.passed && failing.empty())
            failing = r.name + ": " + r.detail;
        if (gradient) {
            min_probes = std::min(min_probes, r.probes);
            worst = std::max(worst, r.max_rel_err);
        }
    }
    std::string detail = fmt("%zu/%zu checks pass", passed, rs.size());
    if (gradient)
        detail += fmt(", min probes %zu (>= 20), max rel err %.3g (<= 1e-2)", min_probes, worst);
    if (!failing.empty())
        detail += "; first failure " + failing;
    const bool ok = passed == rs.size() && !rs.empty() && (!gradient || (min_probes >= 20 && worst <= 1e-2));
    return {ok, detail};
}

// ---- 4. loss identities -----------------------------------------------------------------

Outcome criterion_losses()
{
    constexpr double tol = 1e-6;
    double worst = 0;
    int n = 0;
    auto expect = [&](const Tensor& t, double want) {
        worst = std::max(worst, std::abs(static_cast<double>(t.item()) - want));
        ++n;
    };
    auto full = [](Scalar v) { return Tensor::full({1, 1, 6, 6}, v); };
    auto img = [](Scalar v) { return Tensor::full({1, 1, 16, 16}, v); };

    expect(loss_dis_ct(full(1), full(0)), 0.0);
    expect(loss_dis_ct(full(0.5f), full(0.5f)), 0.5);
    expect(loss_dis_ct(full(0), full(1)), 2.0);
    expect(loss_dis_mr(full(1), full(0)), 0.0);
    expect(loss_dis_mr(full(0.5f), full(0.5f)), 0.5);
    expect(loss_dis_mr(full(0), full(1)), 2.0);
    expect(loss_gen_adv(full(1)), 0.0);
    expect(loss_gen_adv(full(0)), 1.0);
    expect(loss_gen_adv(full(0.5f)), 0.25);

    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<Scalar> xs(256);
    for (auto& x : xs)
        x = static_cast<Scalar>(u(rng));
    const auto a = Tensor::from({1, 1, 16, 16}, xs);
    std::vector<Scalar> ys(256);
    for (auto& y : ys)
        y = static_cast<Scalar>(u(rng));
    const auto b = Tensor::from({1, 1, 16, 16}, ys);
    expect(loss_cycle(a, a, b, b), 0.0);
    expect(loss_cycle(a, ops::add_scalar(a, 0.1f), b, ops::add_scalar(b, 0.1f)), 0.2);
    expect(loss_cycle(a, a, b, ops::add_scalar(b, 0.5f)), 0.5);
    expect(loss_paired(a, a, full(1), 100), 0.0);
    expect(loss_paired(ops::add_scalar(img(0.25f), 0.01f), img(0.25f), full(1), 100), 1.0);
    const auto score = Tensor::from({1, 1, 1, 3}, {0.2f, 0.7f, 1.3f});
    expect(loss_paired(a, b, score, 0), static_cast<double>(loss_gen_adv(score).item()));

    // total_g(2 lambda) - total_g(lambda) = lambda * cycle, over a spread of operating points.
    double lin = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const auto adv_ct = Tensor::scalar(static_cast<Scalar>(std::abs(u(rng))));
        const auto adv_mr = Tensor::scalar(static_cast<Scalar>(std::abs(u(rng))));
        const auto cyc = Tensor::scalar(static_cast<Scalar>(std::abs(u(rng)) * 0.5));
        const Scalar lambda = trial == 0 ? kDefaultLambda : static_cast<Scalar>(std::abs(u(rng)) * 20);
        const double g1 = generator_objective(adv_ct, adv_mr, cyc, lambda).item();
        const double g2 = generator_objective(adv_ct, adv_mr, cyc, 2 * lambda).item();
        lin = std::max(lin, std::abs((g2 - g1) - static_cast<double>(lambda) * cyc.item()));
    }
    const bool ok = worst <= tol && lin <= tol;
    return {ok, fmt("%d examples, max abs err %.3g; lambda-linearity max err %.3g (tolerance 1e-6)", n, worst, lin)};
}

// ---- 5. schedule ------------------------------------------------------------------------

Outcome criterion_schedule()
{
    const LrSchedule s;
    const double v[4] = {lr_at(0, s), lr_at(99, s), lr_at(150, s), lr_at(200, s)};
    const bool ok = v[0] == 2e-4 && v[1] == 2e-4 && v[2] == 1e-4 && v[3] == 0.0;
    return {ok, fmt("lr_at(0)=%.17g lr_at(99)=%.17g lr_at(150)=%.17g lr_at(200)=%.17g", v[0], v[1], v[2], v[3])};
}

// ---- 6-8. training ---------------------------------------------------------------------

constexpr std::uint64_t kTrainPhantomSeed = 2024;
constexpr std::uint64_t kHeldOutPhantomSeed = 7777;
constexpr std::uint64_t kTrainSeed = 11;
constexpr int kHeldOutVolumes = 3;

PhantomSpec train_spec(int shift_px, double prob)
{
    PhantomSpec s;
    s.n_volumes = 8;
    s.slices_per_volume = 16;
    s.height = 64;
    s.width = 64;
    s.max_shift_px = shift_px;
    s.shift_probability = prob;
    return s;
}

TrainConfig train_config(TrainMode mode)
{
    TrainConfig c;
    c.mode = mode;
    c.gen_width = 16;
    c.dis_width = 16;
    c.schedule.fixed_epochs = 5;
    c.schedule.decay_epochs = 5;
    c.batch_size = 1;
    c.seed = kTrainSeed;
    c.checkpoint_every = 1000;
    return c;
}

Dataset to_dataset(const std::vector<PhantomPair>& pairs)
{
    Dataset ds;
    for (const auto& p : pairs) {
        ds.mr.push_back(p.mr);
        ds.ct.push_back(p.ct);
    }
    return ds;
}

const std::vector<PhantomPair>& held_out()
{
    static const auto pairs = [] {
        auto s = train_spec(0, 0);
        s.n_volumes = kHeldOutVolumes;
        return phantom_generate(s, kHeldOutPhantomSeed);
    }();
    return pairs;
}

struct RunOutput {
    TrainResult result;
    std::vector<double> cycle_by_epoch;
    double seconds = 0;
};

RunOutput train_run(const Dataset& ds, const TrainConfig& cfg, const fs::path& dir, const char* tag)
{
    fs::remove_all(dir);
    RunOutput out;
    const auto t0 = Clock::now();
    TrainOptions opt;
    opt.on_epoch = [&](const EpochSummary& s) {
        out.cycle_by_epoch.push_back(s.mean.cycle);
        std::printf("    [%s] epoch %d  lr %.2e  cycle %.4f  d_ct %.4f  d_mr %.4f  (%.0f s)\n", tag, s.epoch, s.lr,
                    s.mean.cycle, s.mean.d_ct, s.mean.d_mr, since(t0));
        std::fflush(stdout);
    };
    out.result = run_training(ds, cfg, dir, opt);
    out.seconds = since(t0);
    return out;
}

// Masked MAE in HU of the MR->CT generator on each held-out volume, against the aligned CT.
std::vector<double> held_out_mae(const fs::path& checkpoint)
{
    const auto state = from_checkpoint(load_checkpoint(checkpoint));
    std::vector<double> maes;
    for (const auto& p : held_out()) {
        const auto synth = translate_volume(generator_for(state.nets, true), p.mr, Modality::SYNTH_CT);
        maes.push_back(mae(p.ct_aligned, synth, *p.ct_aligned.mask));
    }
    return maes;
}

// The MR image passed through unchanged and read as CT: its u8 levels under the CT window.
double identity_mae(const PhantomPair& p)
{
    SliceVolume id = p.mr;
    id.modality = Modality::SYNTH_CT;
    id.window = p.ct_aligned.window;
    return mae(p.ct_aligned, id, *p.ct_aligned.mask);
}

std::string join(const std::vector<double>& xs, const char* f = "%.1f")
{
    std::string s;
    for (const auto& x : xs)
        s += (s.empty() ? "" : ", ") + fmt(f, x);
    return "[" + s + "]";
}

struct Context {
    fs::path work;
    std::optional<RunOutput> run_a;

    const RunOutput& criterion6_run()
    {
        if (!run_a) {
            set_max_threads(1);
            run_a = train_run(to_dataset(phantom_generate(train_spec(0, 0), kTrainPhantomSeed)),
                              train_config(TrainMode::unpaired_cycle), work / "c6_run_a", "c6");
        }
        return *run_a;
    }
};

Outcome criterion_learning(Context& ctx)
{
    const auto& run = ctx.criterion6_run();
    const auto& c = run.cycle_by_epoch;
    if (c.size() != 10)
        return {false, fmt("expected 10 epoch summaries, got %zu", c.size())};
    const bool cycle_ok = c.back() <= 0.5 * c.front();
    const auto synth = held_out_mae(run.result.final_checkpoint);
    std::vector<double> ident;
    bool beats = true;
    for (std::size_t v = 0; v < held_out().size(); ++v) {
        ident.push_back(identity_mae(held_out()[v]));
        beats = beats && synth[v] < ident[v];
    }
    return {cycle_ok && beats,
            fmt("cycle epoch avg %.4f -> %.4f (ratio %.3f, need <= 0.5); held-out MAE [HU] synth ", c.front(),
                c.back(), c.back() / c.front()) +
                join(synth) + " vs identity " + join(ident) + fmt("; training %.0f s", run.seconds)};
}

Outcome criterion_misalignment(Context& ctx)
{
    const auto ds = to_dataset(phantom_generate(train_spec(3, 0.5), kTrainPhantomSeed));
    std::size_t shifted = 0, total = 0;
    for (const auto& p : phantom_generate(train_spec(3, 0.5), kTrainPhantomSeed))
        for (const auto& s : p.shifts) {
            shifted += s[0] != 0 || s[1] != 0;
            ++total;
        }
    const auto u = train_run(ds, train_config(TrainMode::unpaired_cycle), ctx.work / "c7_unpaired", "c7 unpaired");
    const auto p = train_run(ds, train_config(TrainMode::paired_baseline), ctx.work / "c7_paired", "c7 paired");
    const auto mu = held_out_mae(u.result.final_checkpoint);
    const auto mp = held_out_mae(p.result.final_checkpoint);
    const double a = mean_of(mu);
    const double b = mean_of(mp);
    return {a < b, fmt("%zu/%zu training CT slices shifted; held-out mean MAE [HU] unpaired %.2f ", shifted, total, a) +
                       join(mu) + fmt(" vs paired %.2f ", b) + join(mp) +
                       fmt("; training %.0f s + %.0f s", u.seconds, p.seconds)};
}

Outcome criterion_reproducibility(Context& ctx)
{
    const auto& a = ctx.criterion6_run();
    set_max_threads(1);
    const auto b = train_run(to_dataset(phantom_generate(train_spec(0, 0), kTrainPhantomSeed)),
                             train_config(TrainMode::unpaired_cycle), ctx.work / "c8_run_b", "c8");
    const auto ca = slurp(a.result.final_checkpoint);
    const auto cb = slurp(b.result.final_checkpoint);
    const bool same = !ca.empty() && ca == cb;
    const auto rt = from_checks(checks::roundtrip_checks(), false);
    return {same && rt.passed, fmt("final checkpoints %s (%zu bytes); round trips: ", same ? "identical" : "DIFFER",
                                   ca.size()) +
                                   rt.detail};
}

struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome(Context&)> run;
};

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Acceptance criteria runner"};
    std::vector<int> only;
    std::string work = (fs::temp_directory_path() / "cyclesynth_acceptance").string();
    app.add_option("criteria", only, "Run only these criteria (1-8)");
    app.add_option("--work-dir", work, "Scratch directory for training runs")->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    Context ctx{work, std::nullopt};
    fs::create_directories(ctx.work);

    const std::vector<Criterion> all = {
        {1, "reference table aggregates and t-test", 1, [](Context&) { return criterion_table(); }},
        {2, "gradient suite", 300, [](Context&) { return from_checks(checks::gradient_checks(), true); }},
        {3, "architecture checks", 60, [](Context&) { return from_checks(checks::architecture_checks(), false); }},
        {4, "loss identities", 1e9, [](Context&) { return criterion_losses(); }},
        {5, "learning-rate schedule", 1e9, [](Context&) { return criterion_schedule(); }},
        {6, "desk-scale learning", 1800, criterion_learning},
        {7, "misalignment: unpaired beats paired", 3600, criterion_misalignment},
        {8, "reproducibility", 1e9, criterion_reproducibility},
    };
    const std::set<int> selected(only.begin(), only.end());

    int failures = 0;
    std::vector<std::string> summary;
    for (const auto& c : all) {
        if (!selected.empty() && !selected.count(c.id))
            continue;
        std::printf("running criterion %d: %s\n", c.id, c.name);
        std::fflush(stdout);
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = c.run(ctx);
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        double secs = since(t0);
        // Criterion 8 reuses the criterion 6 run; its own budget covers only the repeat.
        std::string budget;
        if (c.budget_s < 1e8) {
            budget = fmt(", budget %.0f s", c.budget_s);
            if (secs > c.budget_s) {
                o.passed = false;
                o.detail += " (over runtime budget)";
            }
        }
        const auto line = fmt("%s  criterion %d  %s: ", o.passed ? "PASS" : "FAIL", c.id, c.name) + o.detail +
                          fmt(" (%.1f s", secs) + budget + ")";
        std::printf("%s\n", line.c_str());
        std::fflush(stdout);
        summary.push_back(line);
        failures += !o.passed;
    }
    std::printf("\n==== acceptance summary ====\n");
    for (const auto& s : summary)
        std::printf("%s\n", s.c_str());
    std::printf("%d of %zu criteria failed\n", failures, summary.size());
    return failures == 0 ? 0 : 1;
}
