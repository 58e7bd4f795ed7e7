#pragma once

#include "cyclesynth/data.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cyclesynth {

enum class PsnrMode { paper_verbatim, rmse_corrected };

std::string to_string(PsnrMode m);
PsnrMode parse_psnr_mode(const std::string& s);

inline constexpr double kDefaultPsnrPeak = 4095.0;

// Metrics work in HU: each volume is dequantized through its own window.
// The mask has one byte per voxel (nonzero = inside).
double mae(const SliceVolume& real, const SliceVolume& synth, std::span<const std::uint8_t> mask);
double mse(const SliceVolume& real, const SliceVolume& synth, std::span<const std::uint8_t> mask);

/// paper_verbatim: 20 log10(peak / MSE); rmse_corrected: 20 log10(peak / sqrt(MSE)).
/// Zero MSE throws NumericError("infinite PSNR").
double psnr(const SliceVolume& real, const SliceVolume& synth, std::span<const std::uint8_t> mask,
            PsnrMode mode = PsnrMode::rmse_corrected, double peak = kDefaultPsnrPeak);
double psnr_from_mse(double mse, PsnrMode mode, double peak = kDefaultPsnrPeak);

struct EvalRow {
    std::string id;
    double mae_hu = 0;
    double psnr_db = 0;
    std::int64_t n_voxels = 0;
};

struct Aggregate {
    std::size_t n = 0;
    double mean_mae = 0;
    double mean_psnr = 0;
    // Sample (n - 1) standard deviations; absent for fewer than two rows.
    std::optional<double> sd_mae;
    std::optional<double> sd_psnr;
};

struct EvalReport {
    PsnrMode mode = PsnrMode::rmse_corrected;
    double peak = kDefaultPsnrPeak;
    std::vector<EvalRow> rows;
    Aggregate aggregate;
    std::vector<std::string> warnings;
};

double mean_of(std::span<const double> xs);
double sample_sd(std::span<const double> xs);

// Warnings (e.g. SD omitted) are appended when `warnings` is given.
Aggregate aggregate(std::span<const EvalRow> rows, std::vector<std::string>* warnings = nullptr);

EvalRow evaluate_volume(const std::string& id, const SliceVolume& real, const SliceVolume& synth,
                        std::span<const std::uint8_t> mask, PsnrMode mode = PsnrMode::rmse_corrected,
                        double peak = kDefaultPsnrPeak);

struct TTestResult {
    double t = 0;
    int df = 0;
    double p_two_sided = 0;
    double mean_diff = 0; // mean(a - b)
};

// Student t CDF through the regularized incomplete beta function.
double student_t_cdf(double t, int df);

/// Paired t-test on a[i] - b[i]. Needs equal lengths >= 2 and nonzero
/// variance of the differences (NumericError otherwise).
TTestResult paired_ttest(std::span<const double> a, std::span<const double> b);

/// |real - synth| in HU, quantized into a [0, span of real's window] display
/// window. Carries real's mask.
SliceVolume error_map(const SliceVolume& real, const SliceVolume& synth);

// One-decimal rendering used in reports: half away from zero after removing
// binary representation noise, so 30.55 prints as 30.6.
std::string format_1dp(double x);

nlohmann::json to_json(const EvalReport& r);
// Columns: id, MAE, PSNR, N; then "Average +- SD".
std::string format_table(const EvalReport& r);

// Two-column (e.g. unpaired vs paired) Table-1 layout from two reports.
std::string format_comparison(const EvalReport& a, const std::string& a_name, const EvalReport& b,
                              const std::string& b_name);

} // namespace cyclesynth
