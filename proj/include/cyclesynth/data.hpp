#pragma once

#include "cyclesynth/tensor.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cyclesynth {

enum class Modality { MR, CT, SYNTH_MR, SYNTH_CT };

std::string to_string(Modality m);
Modality parse_modality(const std::string& s);
// CT and SYNTH_CT are in Hounsfield units.
bool is_ct_like(Modality m);

struct Window {
    double lo = 0;
    double hi = 1;
    double span() const { return hi - lo; }
};

inline constexpr Window kCtWindow{-600, 1400};
inline constexpr Window kMrWindow{0, 3500};
inline constexpr double kHeadMaskThresholdHu = -300;

/// Quantized slice stack. Voxels are slice-major, row-major u8 levels of the
/// intensity window; the optional mask holds 0/1 per voxel.
struct SliceVolume {
    Modality modality = Modality::CT;
    std::int64_t slices = 0;
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::array<double, 3> spacing_mm{1, 1, 1};
    Window window = kCtWindow;
    std::vector<std::uint8_t> voxels;
    std::optional<std::vector<std::uint8_t>> mask;

    std::int64_t slice_size() const { return height * width; }
    std::int64_t voxel_count() const { return slices * height * width; }
    std::span<const std::uint8_t> slice(std::int64_t s) const;
    std::span<std::uint8_t> mutable_slice(std::int64_t s);
    // Throws DataError if sizes, dims or window are inconsistent.
    void validate() const;
};

void check_window(const Window& w);

// round(255 * clamp((v - lo) / (hi - lo), 0, 1)); throws ConfigError if lo >= hi.
std::uint8_t quantize(double v, const Window& w);
double dequantize(std::uint8_t q, const Window& w);

// q / 255 * 2 - 1, and its rounding inverse (clamped to [0, 255]).
Scalar to_model_range(std::uint8_t q);
std::uint8_t from_model_range(double x);

// One slice as a [1, 1, H, W] tensor in model range.
Tensor slice_tensor(const SliceVolume& v, std::int64_t s);
Tensor image_tensor(std::span<const std::uint8_t> levels, std::int64_t h, std::int64_t w);

// ---- SVOL container --------------------------------------------------------

std::vector<std::uint8_t> encode_volume(const SliceVolume& v);
SliceVolume decode_volume(std::span<const std::uint8_t> bytes);
void save_volume(const SliceVolume& v, const std::filesystem::path& path);
SliceVolume load_volume(const std::filesystem::path& path);

// ---- Head mask ---------------------------------------------------------------

/// Per slice: voxels above `threshold_hu` (dequantized), keep the largest
/// 8-connected component, fill background regions not 4-connected to the
/// border. Slices without foreground get an empty mask; a volume without any
/// foreground is an error.
std::vector<std::uint8_t> head_mask(const SliceVolume& ct, double threshold_hu = kHeadMaskThresholdHu);

// Single 2D plane version used by head_mask; exposed for tests.
std::vector<std::uint8_t> largest_component_filled(std::span<const std::uint8_t> binary, std::int64_t h,
                                                   std::int64_t w);

// ---- Pad and crop ------------------------------------------------------------

struct AugmentSpec {
    std::int64_t target_h = 256;
    std::int64_t target_w = 256;
    std::int64_t pad_total = 30; // padded size is target + pad_total
};

// 30/256 of the target, rounded to an even count: 30 for 256, 8 for 64.
std::int64_t default_pad_total(std::int64_t target);
AugmentSpec default_augment(std::int64_t target_h, std::int64_t target_w);

struct CropOffset {
    std::int64_t row = 0;
    std::int64_t col = 0;
};

CropOffset draw_crop(const AugmentSpec& spec, std::mt19937_64& rng);
// Edge-replicated pad to (target + pad_total), then crop at `at`.
std::vector<std::uint8_t> pad_and_crop(std::span<const std::uint8_t> img, std::int64_t h, std::int64_t w,
                                       const AugmentSpec& spec, CropOffset at);
std::vector<std::uint8_t> augment(std::span<const std::uint8_t> img, std::int64_t h, std::int64_t w,
                                  const AugmentSpec& spec, std::mt19937_64& rng);

// ---- Phantoms ------------------------------------------------------------------

struct PhantomSpec {
    int n_volumes = 8;
    int slices_per_volume = 16;
    int height = 64;
    int width = 64;
    std::uint64_t shape_seed = 1;
    int max_shift_px = 0;
    double shift_probability = 0.0;
};

void check_phantom_spec(const PhantomSpec& spec);

struct PhantomPair {
    SliceVolume mr;              // MR
    SliceVolume ct;              // CT, possibly shifted per slice
    SliceVolume ct_aligned;      // CT rendered on the MR geometry
    std::vector<std::array<int, 2>> shifts; // (dy, dx) per slice applied to `ct`
};

/// Head-like phantoms: scalp, skull ring, brain with white-matter blobs,
/// ventricles and an air cavity. Both modalities render the same geometry
/// with class-wise intensities, so a pixelwise MR->CT mapping exists. Masks
/// (head_mask of the aligned CT) are attached to all three volumes.
std::vector<PhantomPair> phantom_generate(const PhantomSpec& spec, std::uint64_t seed);

nlohmann::json alignment_json(const PhantomSpec& spec, std::uint64_t seed, const std::vector<PhantomPair>& pairs);

// ---- Datasets and sampling ---------------------------------------------------------

struct SliceRef {
    int volume = 0;
    std::int64_t slice = 0;
    friend bool operator==(const SliceRef&, const SliceRef&) = default;
};

struct Dataset {
    std::vector<SliceVolume> mr;
    std::vector<SliceVolume> ct;

    std::vector<SliceRef> mr_slices() const;
    std::vector<SliceRef> ct_slices() const;
    void validate() const;
};

// Reads mr_*.svol and ct_*.svol (sorted by name) from a phantom directory.
Dataset load_dataset(const std::filesystem::path& dir);
// Writes mr_NNN.svol, ct_NNN.svol and alignment.json; returns the file list.
std::vector<std::filesystem::path> write_phantom_dir(const std::filesystem::path& dir, const PhantomSpec& spec,
                                                     std::uint64_t seed, const std::vector<PhantomPair>& pairs);

/// Epoch plan for unpaired training: two independently shuffled streams over
/// the MR and CT slice lists, length max(n_mr, n_ct); the shorter list is
/// continued with fresh shuffles. With forbid_same_index no position pairs
/// slices of the same volume index.
std::vector<std::pair<SliceRef, SliceRef>> unpaired_epoch(const Dataset& ds, std::uint64_t seed, int epoch,
                                                          bool forbid_same_index);

// Epoch plan for paired training: one shuffle of slice positions shared by both modalities.
std::vector<SliceRef> paired_epoch(const Dataset& ds, std::uint64_t seed, int epoch);

} // namespace cyclesynth
