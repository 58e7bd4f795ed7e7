#include "cyclesynth/data.hpp"
#include "cyclesynth/errors.hpp"
#include "cyclesynth/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace cyclesynth {

namespace {

enum Tissue : int { kAir, kScalp, kSkull, kGray, kWhite, kCsf, kCavity, kTissueCount };

struct Intensity {
    double ct;
    double mr;
};

// Class intensities: CT in HU, MR in scanner units (T1-like contrast).
constexpr Intensity kTissue[kTissueCount] = {
    {-1000, 0}, {40, 2300}, {1000, 250}, {40, 1300}, {25, 1800}, {8, 500}, {-1000, 0},
};

constexpr double kCtNoise = 10;
constexpr double kMrNoise = 25;

struct Ellipse {
    double cy, cx, ry, rx, theta;

    // Normalized radius: < 1 inside.
    double radius(double y, double x) const
    {
        const double c = std::cos(theta), s = std::sin(theta);
        const double dy = y - cy, dx = x - cx;
        const double u = (c * dy + s * dx) / ry;
        const double v = (-s * dy + c * dx) / rx;
        return std::sqrt(u * u + v * v);
    }
};

struct HeadModel {
    Ellipse head;
    double scalp;   // radial thickness as a fraction of the head radius
    double skull;
    std::vector<Ellipse> white; // relative to head centre, in head-radius units
    std::vector<Ellipse> ventricles;
    Ellipse cavity;
    double mr_gain;
};

HeadModel draw_model(std::mt19937_64& rng, double h, double w)
{
    std::uniform_real_distribution<double> u(0, 1);
    auto range = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
    HeadModel m;
    m.head = {h / 2 + range(-0.03, 0.03) * h, w / 2 + range(-0.03, 0.03) * w, range(0.36, 0.42) * h,
              range(0.30, 0.36) * w, range(-0.25, 0.25)};
    m.scalp = range(0.06, 0.09);
    m.skull = range(0.10, 0.15);
    const int n_white = 2 + static_cast<int>(u(rng) * 2);
    for (int i = 0; i < n_white; ++i)
        m.white.push_back({range(-0.35, 0.35), range(-0.35, 0.35), range(0.12, 0.25), range(0.10, 0.22),
                           range(0, std::numbers::pi)});
    const double vy = range(-0.1, 0.05), spread = range(0.08, 0.14);
    const double vr = range(0.06, 0.09);
    m.ventricles.push_back({vy, -spread, vr * 1.8, vr, range(-0.2, 0.2)});
    m.ventricles.push_back({vy, spread, vr * 1.8, vr, range(-0.2, 0.2)});
    m.cavity = {range(-0.62, -0.5), range(-0.12, 0.12), range(0.07, 0.11), range(0.10, 0.16), range(-0.3, 0.3)};
    m.mr_gain = range(0.95, 1.05);
    return m;
}

// Tissue at pixel (y, x) of the slice at normalized height z in [-1, 1].
Tissue classify(const HeadModel& m, double z, double y, double x)
{
    const double shrink = std::sqrt(1.0 - 0.55 * z * z);
    Ellipse head = m.head;
    head.ry *= shrink;
    head.rx *= shrink;
    const double r = head.radius(y, x);
    if (r >= 1.0)
        return kAir;
    if (r >= 1.0 - m.scalp)
        return kScalp;
    if (r >= 1.0 - m.scalp - m.skull)
        return kSkull;
    // Local coordinates in units of the (shrunk) head radii, rotated with the head.
    const double c = std::cos(head.theta), s = std::sin(head.theta);
    const double ly = (c * (y - head.cy) + s * (x - head.cx)) / head.ry;
    const double lx = (-s * (y - head.cy) + c * (x - head.cx)) / head.rx;
    const double inner = 1.0 - m.scalp - m.skull;
    auto inside = [&](const Ellipse& e, double scale) {
        Ellipse t = e;
        t.cy *= inner;
        t.cx *= inner;
        t.ry *= inner * scale;
        t.rx *= inner * scale;
        return t.radius(ly, lx) < 1.0;
    };
    if (z < 0.4 && inside(m.cavity, 1.0 - z))
        return kCavity;
    for (const auto& v : m.ventricles)
        if (inside(v, std::max(0.0, 1.0 - 1.5 * z * z)))
            return kCsf;
    for (const auto& e : m.white)
        if (inside(e, shrink))
            return kWhite;
    return kGray;
}

void render_slice(const HeadModel& m, double z, int h, int w, int dy, int dx, std::uint64_t noise_seed,
                  std::vector<std::uint8_t>* mr, std::vector<std::uint8_t>* ct)
{
    std::mt19937_64 rng(noise_seed);
    std::normal_distribution<double> n(0, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const auto t = classify(m, z, y - dy + 0.5, x - dx + 0.5);
            const double e_mr = n(rng), e_ct = n(rng);
            if (mr) {
                const double v = t == kAir || t == kCavity ? std::abs(e_mr) * kMrNoise
                                                           : kTissue[t].mr * m.mr_gain + e_mr * kMrNoise;
                mr->push_back(quantize(v, kMrWindow));
            }
            if (ct)
                ct->push_back(quantize(kTissue[t].ct + e_ct * kCtNoise, kCtWindow));
        }
}

SliceVolume make_volume(Modality m, const PhantomSpec& spec, Window w)
{
    SliceVolume v;
    v.modality = m;
    v.slices = spec.slices_per_volume;
    v.height = spec.height;
    v.width = spec.width;
    v.spacing_mm = {2.0, 256.0 / spec.height, 256.0 / spec.width};
    v.window = w;
    v.voxels.reserve(static_cast<std::size_t>(v.voxel_count()));
    return v;
}

} // namespace

void check_phantom_spec(const PhantomSpec& s)
{
    if (s.n_volumes <= 0 || s.slices_per_volume <= 0)
        throw ConfigError("phantom: volume and slice counts must be positive");
    if (s.height % 4 != 0 || s.width % 4 != 0 || s.height < 16 || s.width < 16)
        throw ConfigError("phantom: size must be multiples of 4 and at least 16, got " + std::to_string(s.height) +
                          "x" + std::to_string(s.width));
    if (s.max_shift_px < 0)
        throw ConfigError("phantom: max_shift_px must be >= 0");
    if (s.shift_probability < 0 || s.shift_probability > 1)
        throw ConfigError("phantom: misalignment probability must be in [0, 1]");
}

std::vector<PhantomPair> phantom_generate(const PhantomSpec& spec, std::uint64_t seed)
{
    check_phantom_spec(spec);
    std::vector<PhantomPair> out;
    for (int v = 0; v < spec.n_volumes; ++v) {
        const auto vid = static_cast<std::uint64_t>(v);
        std::mt19937_64 shape_rng(derive_seed(spec.shape_seed, {seed, vid, 0}));
        const auto model = draw_model(shape_rng, spec.height, spec.width);
        std::mt19937_64 shift_rng(derive_seed(seed, {vid, 1}));
        std::uniform_real_distribution<double> coin(0, 1);
        std::uniform_int_distribution<int> off(-spec.max_shift_px, spec.max_shift_px);

        PhantomPair p{make_volume(Modality::MR, spec, kMrWindow), make_volume(Modality::CT, spec, kCtWindow),
                      make_volume(Modality::CT, spec, kCtWindow), {}};
        for (int s = 0; s < spec.slices_per_volume; ++s) {
            const double z = spec.slices_per_volume == 1 ? 0.0 : -0.8 + 1.6 * s / (spec.slices_per_volume - 1);
            const auto sid = static_cast<std::uint64_t>(s);
            std::array<int, 2> shift{0, 0};
            // Shifted slices always move; (0, 0) is redrawn.
            if (spec.max_shift_px > 0 && coin(shift_rng) < spec.shift_probability)
                while (shift[0] == 0 && shift[1] == 0)
                    shift = {off(shift_rng), off(shift_rng)};
            p.shifts.push_back(shift);
            const auto noise = derive_seed(seed, {vid, 2, sid});
            render_slice(model, z, spec.height, spec.width, 0, 0, noise, &p.mr.voxels, &p.ct_aligned.voxels);
            if (shift[0] == 0 && shift[1] == 0) {
                const auto sl = p.ct_aligned.slice(s);
                p.ct.voxels.insert(p.ct.voxels.end(), sl.begin(), sl.end());
            } else {
                render_slice(model, z, spec.height, spec.width, shift[0], shift[1], derive_seed(seed, {vid, 3, sid}),
                             nullptr, &p.ct.voxels);
            }
        }
        const auto mask = head_mask(p.ct_aligned);
        p.ct_aligned.mask = mask;
        p.mr.mask = mask;
        p.ct.mask = head_mask(p.ct);
        out.push_back(std::move(p));
    }
    return out;
}

nlohmann::json alignment_json(const PhantomSpec& spec, std::uint64_t seed, const std::vector<PhantomPair>& pairs)
{
    nlohmann::json vols = nlohmann::json::array();
    for (std::size_t v = 0; v < pairs.size(); ++v) {
        nlohmann::json shifts = nlohmann::json::array();
        for (const auto& s : pairs[v].shifts)
            shifts.push_back({s[0], s[1]});
        vols.push_back({{"index", v}, {"shifts", shifts}});
    }
    return {{"seed", seed},
            {"spec",
             {{"n_volumes", spec.n_volumes},
              {"slices_per_volume", spec.slices_per_volume},
              {"height", spec.height},
              {"width", spec.width},
              {"shape_seed", spec.shape_seed},
              {"max_shift_px", spec.max_shift_px},
              {"shift_probability", spec.shift_probability}}},
            {"volumes", vols}};
}

namespace {

std::string indexed(const char* prefix, std::size_t i)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%03zu.svol", prefix, i);
    return buf;
}

} // namespace

std::vector<std::filesystem::path> write_phantom_dir(const std::filesystem::path& dir, const PhantomSpec& spec,
                                                     std::uint64_t seed, const std::vector<PhantomPair>& pairs)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec)
        throw DataError("cannot create '" + dir.string() + "': " + ec.message());
    std::vector<std::filesystem::path> files;
    for (std::size_t v = 0; v < pairs.size(); ++v) {
        files.push_back(dir / indexed("mr", v));
        save_volume(pairs[v].mr, files.back());
        files.push_back(dir / indexed("ct", v));
        save_volume(pairs[v].ct, files.back());
    }
    files.push_back(dir / "alignment.json");
    std::ofstream out(files.back());
    if (!out)
        throw DataError("cannot open '" + files.back().string() + "' for writing");
    out << alignment_json(spec, seed, pairs).dump(2) << "\n";
    if (!out)
        throw DataError("write failed for '" + files.back().string() + "'");
    return files;
}

Dataset load_dataset(const std::filesystem::path& dir)
{
    if (!std::filesystem::is_directory(dir))
        throw DataError("data directory '" + dir.string() + "' does not exist");
    std::vector<std::filesystem::path> mr, ct;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (entry.path().extension() != ".svol")
            continue;
        if (name.rfind("mr_", 0) == 0)
            mr.push_back(entry.path());
        else if (name.rfind("ct_", 0) == 0)
            ct.push_back(entry.path());
    }
    std::sort(mr.begin(), mr.end());
    std::sort(ct.begin(), ct.end());
    Dataset ds;
    for (const auto& p : mr)
        ds.mr.push_back(load_volume(p));
    for (const auto& p : ct)
        ds.ct.push_back(load_volume(p));
    if (ds.mr.empty() || ds.ct.empty())
        throw DataError("data directory '" + dir.string() + "' has no mr_*.svol / ct_*.svol volumes");
    ds.validate();
    return ds;
}

} // namespace cyclesynth
