#include "checks.hpp"

#include "cyclesynth/checkpoint.hpp"
#include "cyclesynth/data.hpp"
#include "cyclesynth/errors.hpp"
#include "cyclesynth/evalx.hpp"
#include "cyclesynth/parallel.hpp"
#include "cyclesynth/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#ifndef CYCLESYNTH_VERSION
#define CYCLESYNTH_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace cyclesynth;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

std::string hex64(std::uint64_t v)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string fnv1a_file(const fs::path& p)
{
    const auto bytes = read_file_bytes(p);
    std::uint64_t h = 1469598103934665603ULL;
    for (auto b : bytes)
        h = (h ^ b) * 1099511628211ULL;
    return hex64(h);
}

std::string utc_now()
{
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_json(const fs::path& p, const json& j)
{
    std::ofstream out(p);
    if (!out)
        throw DataError("cannot write '" + p.string() + "'");
    out << j.dump(2) << "\n";
    if (!out)
        throw DataError("write failed for '" + p.string() + "'");
}

json read_json(const fs::path& p)
{
    std::ifstream in(p);
    if (!in)
        throw DataError("cannot read '" + p.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("'" + p.string() + "' is not valid JSON: " + e.what());
    }
}

std::pair<int, int> parse_size(const std::string& s)
{
    const auto x = s.find('x');
    try {
        if (x == std::string::npos)
            throw std::invalid_argument(s);
        std::size_t used = 0;
        const int h = std::stoi(s.substr(0, x), &used);
        if (used != x)
            throw std::invalid_argument(s);
        const auto rest = s.substr(x + 1);
        const int w = std::stoi(rest, &used);
        if (used != rest.size())
            throw std::invalid_argument(s);
        return {h, w};
    } catch (const std::logic_error&) {
        throw ConfigError("invalid size '" + s + "' (expected HxW, e.g. 64x64)");
    }
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- phantom ------------------------------------------------------------------------

struct PhantomArgs {
    fs::path out;
    int volumes = 8;
    std::string size = "64x64";
    int slices = 16;
    int misalign_px = 0;
    double misalign_prob = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t shape_seed = 1;
    bool with_aligned = false;
};

int cmd_phantom(const PhantomArgs& a)
{
    PhantomSpec spec;
    spec.n_volumes = a.volumes;
    spec.slices_per_volume = a.slices;
    std::tie(spec.height, spec.width) = parse_size(a.size);
    spec.max_shift_px = a.misalign_px;
    spec.shift_probability = a.misalign_prob;
    spec.shape_seed = a.shape_seed;
    const auto pairs = phantom_generate(spec, a.seed);
    auto files = write_phantom_dir(a.out, spec, a.seed, pairs);
    if (a.with_aligned) {
        for (std::size_t v = 0; v < pairs.size(); ++v) {
            char name[32];
            std::snprintf(name, sizeof name, "aligned_ct_%03zu.svol", v);
            files.push_back(a.out / name);
            save_volume(pairs[v].ct_aligned, files.back());
        }
    }
    std::cout << "wrote " << files.size() << " files to " << a.out.string() << "\n";
    return kOk;
}

// ---- train --------------------------------------------------------------------------

struct TrainArgs {
    fs::path data;
    fs::path out;
    std::string mode = "unpaired";
    fs::path config_file;
    fs::path resume;
    bool quiet = false;
};

int cmd_train(const TrainArgs& a, TrainConfig cfg, const std::vector<std::string>& argv)
{
    fs::path data = a.data;
    if (!a.config_file.empty()) {
        // A run manifest or a bare config; explicit flags do not override it.
        const auto j = read_json(a.config_file);
        cfg = train_config_from_json(j.contains("config") ? j["config"] : j);
        if (data.empty() && j.contains("data_dir"))
            data = j["data_dir"].get<std::string>();
    }
    if (data.empty())
        throw ConfigError("train: --data is required");
    cfg.validate();
    const auto started = std::chrono::steady_clock::now();
    const auto ds = load_dataset(data);

    std::error_code ec;
    fs::create_directories(a.out, ec);
    if (ec)
        throw DataError("cannot create '" + a.out.string() + "': " + ec.message());

    json inputs = json::array();
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(data))
        if (e.is_regular_file())
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files)
        inputs.push_back({{"path", fs::absolute(f).string()}, {"fnv1a64", fnv1a_file(f)}});
    json manifest = {
        {"tool", "cyclesynth"},
        {"version", CYCLESYNTH_VERSION},
        {"command_line", argv},
        {"config", to_json(cfg)},
        {"seeds", {{"seed", cfg.seed}}},
        {"threads", max_threads()},
        {"scalar", sizeof(Scalar) == 4 ? "f32" : "f64"},
        {"data_dir", fs::absolute(data).string()},
        {"inputs", inputs},
        {"started_at", utc_now()},
        {"outputs", {{"out_dir", fs::absolute(a.out).string()}, {"loss_log", kLossLogName}}},
        {"resume_from", a.resume.empty() ? json(nullptr) : json(a.resume.string())},
    };
    const auto manifest_path = a.out / "run_manifest.json";
    write_json(manifest_path, manifest);

    TrainOptions opt;
    if (!a.resume.empty())
        opt.resume_from = a.resume;
    if (!a.quiet) {
        opt.on_epoch = [&](const EpochSummary& s) {
            std::printf("epoch %d  lr %.3g  d_ct %.4f  d_mr %.4f  g_ct %.4f  g_mr %.4f  cycle %.4f  (%d iters, %.0f s)\n",
                        s.epoch, s.lr, s.mean.d_ct, s.mean.d_mr, s.mean.g_adv_ct, s.mean.g_adv_mr, s.mean.cycle,
                        s.iterations, seconds_since(started));
            std::fflush(stdout);
        };
    }
    const auto result = run_training(ds, cfg, a.out, opt);

    json cks = json::array();
    for (const auto& c : result.checkpoints)
        cks.push_back(c.filename().string());
    manifest["finished_at"] = utc_now();
    manifest["wall_clock_s"] = seconds_since(started);
    manifest["outputs"]["checkpoints"] = cks;
    manifest["outputs"]["final_checkpoint"] = result.final_checkpoint.filename().string();
    write_json(manifest_path, manifest);
    std::cout << "final checkpoint " << result.final_checkpoint.string() << "\n";
    return kOk;
}

// ---- infer --------------------------------------------------------------------------

struct InferArgs {
    fs::path ckpt;
    fs::path in;
    std::string direction;
    fs::path out;
    fs::path reference;
};

int cmd_infer(const InferArgs& a)
{
    const auto state = from_checkpoint(load_checkpoint(a.ckpt));
    const auto vol = load_volume(a.in);
    const bool to_ct = a.direction == "mr2ct";
    if (to_ct == is_ct_like(vol.modality))
        throw DataError("--direction " + a.direction + " does not accept a " + to_string(vol.modality) + " volume");
    const auto t0 = std::chrono::steady_clock::now();
    const auto out = translate_volume(generator_for(state.nets, to_ct), vol, to_ct ? Modality::SYNTH_CT : Modality::SYNTH_MR);
    const double secs = seconds_since(t0);
    save_volume(out, a.out);
    std::printf("translated %lld slices (%lldx%lld) in %.2f s (%.1f slices/s) -> %s\n",
                static_cast<long long>(out.slices), static_cast<long long>(out.height),
                static_cast<long long>(out.width), secs, static_cast<double>(out.slices) / std::max(secs, 1e-9),
                a.out.string().c_str());
    if (!a.reference.empty()) {
        const auto ref = load_volume(a.reference);
        const auto& mask = ref.mask ? ref.mask : out.mask;
        if (!mask)
            throw DataError("no mask on '" + a.reference.string() + "' or on the translated volume");
        std::printf("masked MAE to reference: %.3f (%s window units)\n", mae(ref, out, *mask),
                    to_string(ref.modality).c_str());
    }
    return kOk;
}

// ---- eval ---------------------------------------------------------------------------

struct EvalArgs {
    fs::path real;
    fs::path synth;
    fs::path synth_b;
    fs::path pairs;
    fs::path rows;
    std::string mask_from = "real";
    std::string psnr_mode = "rmse_corrected";
    double peak = kDefaultPsnrPeak;
    fs::path report;
    fs::path error_map;
    std::string labels = "A,B";
};

std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) {
        const auto b = cell.find_first_not_of(" \t\r");
        const auto e = cell.find_last_not_of(" \t\r");
        out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
    }
    return out;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p, std::vector<std::string>& header)
{
    std::ifstream in(p);
    if (!in)
        throw DataError("cannot read '" + p.string() + "'");
    std::string line;
    if (!std::getline(in, line))
        throw DataError("'" + p.string() + "' is empty");
    header = split_csv_line(line);
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#')
            continue;
        auto cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw DataError("'" + p.string() + "': row '" + line + "' has " + std::to_string(cells.size()) +
                            " cells, header has " + std::to_string(header.size()));
        rows.push_back(std::move(cells));
    }
    return rows;
}

std::size_t column(const std::vector<std::string>& header, const std::string& name, const fs::path& p)
{
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name)
            return i;
    throw DataError("'" + p.string() + "' has no column '" + name + "'");
}

bool has_column(const std::vector<std::string>& header, const std::string& name)
{
    return std::find(header.begin(), header.end(), name) != header.end();
}

double parse_number(const std::string& s, const fs::path& p)
{
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size())
            return v;
    } catch (const std::logic_error&) {
    }
    throw DataError("'" + p.string() + "': '" + s + "' is not a number");
}

std::vector<std::uint8_t> pick_mask(const std::string& from, const SliceVolume& real, const SliceVolume& synth,
                                    const std::string& where)
{
    if (from == "real") {
        if (!real.mask)
            throw DataError(where + ": real volume carries no mask (use --mask-from compute)");
        return *real.mask;
    }
    if (from == "synth") {
        if (!synth.mask)
            throw DataError(where + ": synthesized volume carries no mask");
        return *synth.mask;
    }
    return head_mask(real);
}

struct ReportPair {
    EvalReport a;
    std::optional<EvalReport> b;
};

void finish_report(EvalReport& r)
{
    r.aggregate = aggregate(r.rows, &r.warnings);
}

int print_and_save(ReportPair& rp, const EvalArgs& a)
{
    finish_report(rp.a);
    const auto comma = a.labels.find(',');
    const auto label_a = a.labels.substr(0, comma);
    const auto label_b = comma == std::string::npos ? std::string("B") : a.labels.substr(comma + 1);
    json j = to_json(rp.a);
    if (rp.b) {
        finish_report(*rp.b);
        std::cout << format_comparison(rp.a, label_a, *rp.b, label_b);
        std::vector<double> ma, mb, pa, pb;
        for (std::size_t i = 0; i < rp.a.rows.size(); ++i) {
            ma.push_back(rp.a.rows[i].mae_hu);
            mb.push_back(rp.b->rows[i].mae_hu);
            pa.push_back(rp.a.rows[i].psnr_db);
            pb.push_back(rp.b->rows[i].psnr_db);
        }
        j = {{"labels", {label_a, label_b}}, {"a", to_json(rp.a)}, {"b", to_json(*rp.b)}};
        for (const auto& [name, x, y] : {std::tuple{"mae", &ma, &mb}, std::tuple{"psnr", &pa, &pb}}) {
            if (x->size() < 2) {
                std::cout << "paired t-test (" << name << "): skipped, fewer than two pairs\n";
                continue;
            }
            const auto t = paired_ttest(*x, *y);
            std::printf("paired t-test (%s, %s - %s): t = %.4f, df = %d, p = %.6g\n", name, label_a.c_str(),
                        label_b.c_str(), t.t, t.df, t.p_two_sided);
            j["ttest"][name] = {{"t", t.t}, {"df", t.df}, {"p_two_sided", t.p_two_sided}, {"mean_diff", t.mean_diff}};
        }
    } else {
        std::cout << format_table(rp.a);
    }
    if (!a.report.empty()) {
        write_json(a.report, j);
        std::cout << "report written to " << a.report.string() << "\n";
    }
    return kOk;
}

int cmd_eval(const EvalArgs& a)
{
    const auto mode = parse_psnr_mode(a.psnr_mode);
    const int modes = !a.rows.empty() + !a.pairs.empty() + !a.real.empty();
    if (modes != 1)
        throw ConfigError("eval: give exactly one of --real/--synth, --pairs or --rows");
    ReportPair rp;
    rp.a.mode = mode;
    rp.a.peak = a.peak;

    if (!a.rows.empty()) {
        std::vector<std::string> header;
        const auto rows = read_csv(a.rows, header);
        const auto id = column(header, "id", a.rows);
        const auto m = column(header, "mae_hu", a.rows);
        const auto p = column(header, "psnr_db", a.rows);
        const bool two = has_column(header, "mae_hu_b");
        if (two)
            rp.b = EvalReport{mode, a.peak, {}, {}, {}};
        for (const auto& r : rows) {
            rp.a.rows.push_back({r[id], parse_number(r[m], a.rows), parse_number(r[p], a.rows), 0});
            if (two)
                rp.b->rows.push_back({r[id], parse_number(r[column(header, "mae_hu_b", a.rows)], a.rows),
                                      parse_number(r[column(header, "psnr_db_b", a.rows)], a.rows), 0});
        }
        return print_and_save(rp, a);
    }

    struct Job {
        std::string id;
        fs::path real, synth, synth_b;
    };
    std::vector<Job> jobs;
    if (!a.pairs.empty()) {
        std::vector<std::string> header;
        const auto rows = read_csv(a.pairs, header);
        const auto base = a.pairs.parent_path();
        const auto id = column(header, "id", a.pairs);
        const auto r = column(header, "real", a.pairs);
        const auto s = column(header, "synth", a.pairs);
        const bool two = has_column(header, "synth_b");
        for (const auto& row : rows) {
            auto resolve = [&](const std::string& f) { return fs::path(f).is_absolute() ? fs::path(f) : base / f; };
            jobs.push_back({row[id], resolve(row[r]), resolve(row[s]),
                            two ? resolve(row[column(header, "synth_b", a.pairs)]) : fs::path()});
        }
    } else {
        if (a.synth.empty())
            throw ConfigError("eval: --real needs --synth");
        jobs.push_back({a.synth.stem().string(), a.real, a.synth, a.synth_b});
    }
    if (!jobs.empty() && !jobs.front().synth_b.empty())
        rp.b = EvalReport{mode, a.peak, {}, {}, {}};

    for (const auto& job : jobs) {
        const auto real = load_volume(job.real);
        const auto synth = load_volume(job.synth);
        const auto mask = pick_mask(a.mask_from, real, synth, job.id);
        if (jobs.size() == 1) {
            // MAE first, so an identical pair still reports it before PSNR fails.
            std::printf("%s: MAE %.3f HU over %zu voxels\n", job.id.c_str(), mae(real, synth, mask),
                        static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1)));
        }
        rp.a.rows.push_back(evaluate_volume(job.id, real, synth, mask, mode, a.peak));
        if (rp.b) {
            if (job.synth_b.empty())
                throw DataError(job.id + ": missing second synthesized volume");
            const auto sb = load_volume(job.synth_b);
            rp.b->rows.push_back(evaluate_volume(job.id, real, sb, mask, mode, a.peak));
        }
        if (!a.error_map.empty()) {
            if (jobs.size() != 1)
                throw ConfigError("--error-map needs a single --real/--synth pair");
            save_volume(cyclesynth::error_map(real, synth), a.error_map);
        }
    }
    return print_and_save(rp, a);
}

// ---- selfcheck ----------------------------------------------------------------------

int cmd_selfcheck(std::string corrupt_op)
{
    if (corrupt_op.empty())
        if (const char* env = std::getenv("CYCLESYNTH_SELFCHECK_CORRUPT"))
            corrupt_op = env;
    checks::CheckOptions opt;
    opt.corrupt_op = corrupt_op;
    opt.on_result = [](const checks::CheckResult& r) {
        std::printf("%s  %-34s %s (%.2f s)\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str(), r.seconds);
        std::fflush(stdout);
    };
    const auto t0 = std::chrono::steady_clock::now();
    const auto results = checks::all_checks(opt);
    const auto failed = checks::first_failure(results);
    std::printf("%zu checks in %.1f s\n", results.size(), seconds_since(t0));
    if (!failed.empty()) {
        std::printf("selfcheck failed: first failing check is '%s'\n", failed.c_str());
        return kNumeric;
    }
    std::printf("selfcheck passed\n");
    return kOk;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"cyclesynth: unpaired MR-to-CT synthesis with cycle-consistent adversarial networks"};
    app.set_version_flag("--version", CYCLESYNTH_VERSION);
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "Worker cap (overrides CYCLESYNTH_THREADS; 1 = bitwise-reproducible)")
        ->check(CLI::PositiveNumber);

    PhantomArgs pa;
    auto* phantom = app.add_subcommand("phantom", "Generate paired head phantoms as SVOL volumes");
    phantom->add_option("--out", pa.out, "Output directory")->required();
    phantom->add_option("--volumes", pa.volumes, "Number of MR/CT volume pairs")->capture_default_str();
    phantom->add_option("--size", pa.size, "Slice size HxW (multiples of 4, >= 16)")->capture_default_str();
    phantom->add_option("--slices", pa.slices, "Slices per volume")->capture_default_str();
    phantom->add_option("--misalign-px", pa.misalign_px, "Max per-slice CT shift in pixels")->capture_default_str();
    phantom->add_option("--misalign-prob", pa.misalign_prob, "Probability that a CT slice is shifted")
        ->capture_default_str();
    phantom->add_option("--seed", pa.seed, "Seed")->capture_default_str();
    phantom->add_option("--shape-seed", pa.shape_seed, "Seed of the anatomy model")->capture_default_str();
    phantom->add_flag("--with-aligned", pa.with_aligned, "Also write aligned_ct_NNN.svol ground truth");

    TrainArgs ta;
    TrainConfig cfg;
    int dis_width = 0;
    bool no_augment = false, allow_same = false, no_pool = false;
    auto* train = app.add_subcommand("train", "Train unpaired (cycle) or paired synthesis networks");
    train->add_option("--data", ta.data, "Phantom/data directory with mr_*.svol and ct_*.svol");
    train->add_option("--out", ta.out, "Run directory")->required();
    train->add_option("--mode", ta.mode, "unpaired or paired")
        ->check(CLI::IsMember({"unpaired", "paired", "unpaired_cycle", "paired_baseline"}))
        ->capture_default_str();
    train->add_option("--epochs-fixed", cfg.schedule.fixed_epochs, "Epochs at the base learning rate")
        ->capture_default_str();
    train->add_option("--epochs-decay", cfg.schedule.decay_epochs, "Epochs of linear decay to zero")
        ->capture_default_str();
    train->add_option("--lr", cfg.schedule.base_lr, "Base learning rate")->capture_default_str();
    train->add_option("--lambda", cfg.lambda, "Cycle-consistency weight")->capture_default_str();
    train->add_option("--mu", cfg.paired_mu, "Voxel L1 weight (paired mode)")->capture_default_str();
    train->add_option("--beta1", cfg.adam.beta1, "Adam beta1")->capture_default_str();
    train->add_option("--beta2", cfg.adam.beta2, "Adam beta2")->capture_default_str();
    train->add_option("--width", cfg.gen_width, "Generator base width F")->capture_default_str();
    train->add_option("--dis-width", dis_width, "Discriminator base width D (default: F)");
    train->add_option("--batch-size", cfg.batch_size, "Batch size")->capture_default_str();
    train->add_option("--pool-size", cfg.image_pool_size, "Image pool capacity")->capture_default_str();
    train->add_flag("--no-pool", no_pool, "Disable the image pool");
    train->add_flag("--no-augment", no_augment, "Disable pad-and-crop augmentation");
    train->add_option("--pad-total", cfg.pad_total, "Augmentation padding (-1: 30/256 of the slice size)")
        ->capture_default_str();
    train->add_flag("--allow-same-index", allow_same, "Allow MR and CT slices of the same volume in one pair");
    train->add_option("--seed", cfg.seed, "Seed")->capture_default_str();
    train->add_option("--checkpoint-every", cfg.checkpoint_every, "Checkpoint cadence in epochs")
        ->capture_default_str();
    train->add_option("--log-every", cfg.log_every, "Loss log cadence in iterations")->capture_default_str();
    train->add_option("--resume", ta.resume, "Resume from a training checkpoint");
    train->add_option("--config", ta.config_file, "Take the config from a run manifest or config JSON");
    train->add_flag("--quiet", ta.quiet, "No per-epoch output");

    InferArgs ia;
    auto* infer = app.add_subcommand("infer", "Translate a volume with a trained generator");
    infer->add_option("--ckpt", ia.ckpt, "Training checkpoint")->required();
    infer->add_option("--in", ia.in, "Input SVOL")->required();
    infer->add_option("--direction", ia.direction, "mr2ct or ct2mr")
        ->required()
        ->check(CLI::IsMember({"mr2ct", "ct2mr"}));
    infer->add_option("--out", ia.out, "Output SVOL")->required();
    infer->add_option("--reference", ia.reference, "Reference CT: log the masked MAE in HU (mr2ct)");

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "Masked MAE/PSNR, Table-style aggregates and paired t-test");
    eval->add_option("--real", ea.real, "Reference CT volume");
    eval->add_option("--synth", ea.synth, "Synthesized CT volume");
    eval->add_option("--synth-b", ea.synth_b, "Second synthesized volume for comparison");
    eval->add_option("--pairs", ea.pairs, "CSV with columns id,real,synth[,synth_b]");
    eval->add_option("--rows", ea.rows, "CSV of precomputed metrics id,mae_hu,psnr_db[,mae_hu_b,psnr_db_b]");
    eval->add_option("--mask-from", ea.mask_from, "real or synth (embedded mask), or compute (head mask of real)")
        ->check(CLI::IsMember({"real", "synth", "compute"}))
        ->capture_default_str();
    eval->add_option("--psnr-mode", ea.psnr_mode, "rmse_corrected or paper_verbatim")
        ->check(CLI::IsMember({"rmse_corrected", "paper_verbatim"}))
        ->capture_default_str();
    eval->add_option("--psnr-peak", ea.peak, "PSNR peak value")->capture_default_str();
    eval->add_option("--labels", ea.labels, "Column labels for two-set comparisons")->capture_default_str();
    eval->add_option("--report", ea.report, "Write the report as JSON");
    eval->add_option("--error-map", ea.error_map, "Write |real - synth| as an SVOL (single pair)");

    std::string corrupt;
    auto* selfcheck = app.add_subcommand("selfcheck", "Gradient, architecture and round-trip checks");
    selfcheck->add_option("--corrupt-op", corrupt, "Test hook: scale the backward of this op by 1.5");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (threads > 0)
            set_max_threads(threads);
        if (*phantom)
            return cmd_phantom(pa);
        if (*train) {
            cfg.mode = parse_train_mode(ta.mode);
            cfg.dis_width = dis_width > 0 ? dis_width : cfg.gen_width;
            cfg.augment = !no_augment;
            cfg.forbid_same_index = !allow_same;
            if (no_pool)
                cfg.image_pool_size = 0;
            return cmd_train(ta, cfg, std::vector<std::string>(argv, argv + argc));
        }
        if (*infer)
            return cmd_infer(ia);
        if (*eval)
            return cmd_eval(ea);
        if (*selfcheck)
            return cmd_selfcheck(corrupt);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kNumeric;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    }
    return kUsage;
}
