#include "cyclesynth/evalx.hpp"

#include "cyclesynth/errors.hpp"

#include <boost/math/special_functions/beta.hpp>

#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace cyclesynth {

namespace {

void check_pair(const SliceVolume& real, const SliceVolume& synth, std::span<const std::uint8_t> mask)
{
    if (!is_ct_like(real.modality) || !is_ct_like(synth.modality))
        throw DataError("evaluation: expected CT volumes, got " + to_string(real.modality) + " and " +
                        to_string(synth.modality));
    if (real.slices != synth.slices || real.height != synth.height || real.width != synth.width)
        throw ShapeError("evaluation: volume dims differ (" + std::to_string(real.slices) + "x" +
                         std::to_string(real.height) + "x" + std::to_string(real.width) + " vs " +
                         std::to_string(synth.slices) + "x" + std::to_string(synth.height) + "x" +
                         std::to_string(synth.width) + ")");
    if (real.voxels.size() != synth.voxels.size())
        throw ShapeError("evaluation: voxel counts differ");
    if (mask.size() != real.voxels.size())
        throw ShapeError("evaluation: mask has " + std::to_string(mask.size()) + " entries for " +
                         std::to_string(real.voxels.size()) + " voxels");
}

struct Sums {
    double abs = 0;
    double sq = 0;
    std::int64_t n = 0;
};

Sums masked_sums(const SliceVolume& real, const SliceVolume& synth, std::span<const std::uint8_t> mask)
{
    check_pair(real, synth, mask);
    Sums s;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i])
            continue;
        const double d = dequantize(real.voxels[i], real.window) - dequantize(synth.voxels[i], synth.window);
        s.abs += std::abs(d);
        s.sq += d * d;
        ++s.n;
    }
    if (s.n == 0)
        throw DataError("evaluation: empty mask");
    return s;
}

std::string fixed(double x, int decimals)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, x);
    return buf;
}

std::string mean_sd(double m, const std::optional<double>& sd)
{
    return sd ? format_1dp(m) + " +- " + format_1dp(*sd) : format_1dp(m);
}

} // namespace

std::string to_string(PsnrMode m) { return m == PsnrMode::paper_verbatim ? "paper_verbatim" : "rmse_corrected"; }

PsnrMode parse_psnr_mode(const std::string& s)
{
    if (s == "paper_verbatim")
        return PsnrMode::paper_verbatim;
    if (s == "rmse_corrected")
        return PsnrMode::rmse_corrected;
    throw ConfigError("unknown PSNR mode '" + s + "' (expected rmse_corrected or paper_verbatim)");
}

double mae(const SliceVolume& real, const SliceVolume& synth, std::span<const std::uint8_t> mask)
{
    const auto s = masked_sums(real, synth, mask);
    return s.abs / static_cast<double>(s.n);
}

double mse(const SliceVolume& real, const SliceVolume& synth, std::span<const std::uint8_t> mask)
{
    const auto s = masked_sums(real, synth, mask);
    return s.sq / static_cast<double>(s.n);
}

double psnr_from_mse(double m, PsnrMode mode, double peak)
{
    if (!(peak > 0))
        throw ConfigError("PSNR peak must be > 0");
    if (m == 0)
        throw NumericError("infinite PSNR: volumes are identical within the mask");
    const double denom = mode == PsnrMode::paper_verbatim ? m : std::sqrt(m);
    return 20.0 * std::log10(peak / denom);
}

double psnr(const SliceVolume& real, const SliceVolume& synth, std::span<const std::uint8_t> mask, PsnrMode mode,
            double peak)
{
    return psnr_from_mse(mse(real, synth, mask), mode, peak);
}

double mean_of(std::span<const double> xs)
{
    if (xs.empty())
        throw DataError("mean of an empty list");
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double sample_sd(std::span<const double> xs)
{
    if (xs.size() < 2)
        throw DataError("sample SD needs at least two values");
    const double m = mean_of(xs);
    double ss = 0;
    for (auto x : xs)
        ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

Aggregate aggregate(std::span<const EvalRow> rows, std::vector<std::string>* warnings)
{
    if (rows.empty())
        throw DataError("aggregate: no rows");
    std::vector<double> m, p;
    for (const auto& r : rows) {
        m.push_back(r.mae_hu);
        p.push_back(r.psnr_db);
    }
    Aggregate a;
    a.n = rows.size();
    a.mean_mae = mean_of(m);
    a.mean_psnr = mean_of(p);
    if (rows.size() >= 2) {
        a.sd_mae = sample_sd(m);
        a.sd_psnr = sample_sd(p);
    } else if (warnings) {
        warnings->push_back("SD omitted: fewer than two rows");
    }
    return a;
}

EvalRow evaluate_volume(const std::string& id, const SliceVolume& real, const SliceVolume& synth,
                        std::span<const std::uint8_t> mask, PsnrMode mode, double peak)
{
    const auto s = masked_sums(real, synth, mask);
    const auto n = static_cast<double>(s.n);
    return EvalRow{id, s.abs / n, psnr_from_mse(s.sq / n, mode, peak), s.n};
}

double student_t_cdf(double t, int df)
{
    if (df < 1)
        throw ConfigError("t distribution needs df >= 1");
    if (std::isinf(t))
        return t > 0 ? 1.0 : 0.0;
    const double nu = df;
    // P(|T| > |t|) = I_{nu / (nu + t^2)}(nu / 2, 1 / 2)
    const double tail = boost::math::ibeta(nu / 2.0, 0.5, nu / (nu + t * t));
    return t >= 0 ? 1.0 - tail / 2.0 : tail / 2.0;
}

TTestResult paired_ttest(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size())
        throw ShapeError("paired t-test: lists have " + std::to_string(a.size()) + " and " + std::to_string(b.size()) +
                         " values");
    if (a.size() < 2)
        throw DataError("paired t-test needs at least two pairs");
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        d[i] = a[i] - b[i];
    const double m = mean_of(d);
    const double sd = sample_sd(d);
    if (!(sd > 0))
        throw NumericError("paired t-test: differences have zero variance");
    TTestResult r;
    r.df = static_cast<int>(d.size()) - 1;
    r.mean_diff = m;
    r.t = m / (sd / std::sqrt(static_cast<double>(d.size())));
    const double nu = r.df;
    r.p_two_sided = boost::math::ibeta(nu / 2.0, 0.5, nu / (nu + r.t * r.t));
    return r;
}

SliceVolume error_map(const SliceVolume& real, const SliceVolume& synth)
{
    std::vector<std::uint8_t> all(real.voxels.size(), 1);
    check_pair(real, synth, all);
    SliceVolume out;
    out.modality = real.modality;
    out.slices = real.slices;
    out.height = real.height;
    out.width = real.width;
    out.spacing_mm = real.spacing_mm;
    out.window = Window{0.0, real.window.span()};
    out.mask = real.mask;
    out.voxels.resize(real.voxels.size());
    for (std::size_t i = 0; i < out.voxels.size(); ++i) {
        const double d = dequantize(real.voxels[i], real.window) - dequantize(synth.voxels[i], synth.window);
        out.voxels[i] = quantize(std::abs(d), out.window);
    }
    return out;
}

std::string format_1dp(double x)
{
    char snapped[64];
    std::snprintf(snapped, sizeof snapped, "%.12g", x);
    const double s = std::strtod(snapped, nullptr);
    const double r = std::round(s * 10.0) / 10.0;
    return fixed(r == 0 ? 0.0 : r, 1);
}

nlohmann::json to_json(const EvalReport& r)
{
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"id", row.id}, {"mae_hu", row.mae_hu}, {"psnr_db", row.psnr_db}, {"n_voxels", row.n_voxels}});
    nlohmann::json agg = {{"n", r.aggregate.n}, {"mean_mae", r.aggregate.mean_mae},
                          {"mean_psnr", r.aggregate.mean_psnr}};
    agg["sd_mae"] = r.aggregate.sd_mae ? nlohmann::json(*r.aggregate.sd_mae) : nlohmann::json(nullptr);
    agg["sd_psnr"] = r.aggregate.sd_psnr ? nlohmann::json(*r.aggregate.sd_psnr) : nlohmann::json(nullptr);
    return {{"metric_mode", to_string(r.mode)}, {"psnr_peak", r.peak}, {"rows", rows}, {"aggregate", agg},
            {"warnings", r.warnings}};
}

std::string format_table(const EvalReport& r)
{
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "%-20s %-14s %-14s %s\n", "", "MAE [HU]", "PSNR [dB]", "N");
    os << line;
    for (const auto& row : r.rows) {
        std::snprintf(line, sizeof line, "%-20s %-14s %-14s %lld\n", row.id.c_str(), format_1dp(row.mae_hu).c_str(),
                      format_1dp(row.psnr_db).c_str(), static_cast<long long>(row.n_voxels));
        os << line;
    }
    const auto& a = r.aggregate;
    std::snprintf(line, sizeof line, "%-20s %-14s %-14s\n", "Average +- SD", mean_sd(a.mean_mae, a.sd_mae).c_str(),
                  mean_sd(a.mean_psnr, a.sd_psnr).c_str());
    os << line;
    os << "PSNR mode: " << to_string(r.mode) << ", peak " << fixed(r.peak, 0) << "\n";
    for (const auto& w : r.warnings)
        os << "warning: " << w << "\n";
    return os.str();
}

std::string format_comparison(const EvalReport& a, const std::string& a_name, const EvalReport& b,
                              const std::string& b_name)
{
    if (a.rows.size() != b.rows.size())
        throw ShapeError("comparison table: reports have different row counts");
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "%-20s %-30s %-30s\n", "", "MAE [HU]", "PSNR [dB]");
    os << line;
    std::snprintf(line, sizeof line, "%-20s %-14s %-15s %-14s %-15s\n", "", a_name.c_str(), b_name.c_str(),
                  a_name.c_str(), b_name.c_str());
    os << line;
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        std::snprintf(line, sizeof line, "%-20s %-14s %-15s %-14s %-15s\n", a.rows[i].id.c_str(),
                      format_1dp(a.rows[i].mae_hu).c_str(), format_1dp(b.rows[i].mae_hu).c_str(),
                      format_1dp(a.rows[i].psnr_db).c_str(), format_1dp(b.rows[i].psnr_db).c_str());
        os << line;
    }
    const auto& x = a.aggregate;
    const auto& y = b.aggregate;
    std::snprintf(line, sizeof line, "%-20s %-14s %-15s %-14s %-15s\n", "Average +- SD",
                  mean_sd(x.mean_mae, x.sd_mae).c_str(), mean_sd(y.mean_mae, y.sd_mae).c_str(),
                  mean_sd(x.mean_psnr, x.sd_psnr).c_str(), mean_sd(y.mean_psnr, y.sd_psnr).c_str());
    os << line;
    return os.str();
}

} // namespace cyclesynth
