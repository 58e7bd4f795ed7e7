#include "cyclesynth/data.hpp"

#include "cyclesynth/checkpoint.hpp"
#include "cyclesynth/errors.hpp"
#include "cyclesynth/rng.hpp"

#include "byte_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>

namespace cyclesynth {

namespace {

constexpr char kMagic[] = "SVOL1";
constexpr std::size_t kMagicLen = 5;

} // namespace

std::string to_string(Modality m)
{
    switch (m) {
    case Modality::MR:
        return "MR";
    case Modality::CT:
        return "CT";
    case Modality::SYNTH_MR:
        return "SYNTH_MR";
    case Modality::SYNTH_CT:
        return "SYNTH_CT";
    }
    return "?";
}

Modality parse_modality(const std::string& s)
{
    for (auto m : {Modality::MR, Modality::CT, Modality::SYNTH_MR, Modality::SYNTH_CT})
        if (to_string(m) == s)
            return m;
    throw DataError("unknown modality '" + s + "'");
}

bool is_ct_like(Modality m) { return m == Modality::CT || m == Modality::SYNTH_CT; }

std::span<const std::uint8_t> SliceVolume::slice(std::int64_t s) const
{
    if (s < 0 || s >= slices)
        throw DataError("slice index " + std::to_string(s) + " out of range [0, " + std::to_string(slices) + ")");
    return std::span<const std::uint8_t>(voxels).subspan(static_cast<std::size_t>(s * slice_size()),
                                                         static_cast<std::size_t>(slice_size()));
}

std::span<std::uint8_t> SliceVolume::mutable_slice(std::int64_t s)
{
    if (s < 0 || s >= slices)
        throw DataError("slice index " + std::to_string(s) + " out of range [0, " + std::to_string(slices) + ")");
    return std::span<std::uint8_t>(voxels).subspan(static_cast<std::size_t>(s * slice_size()),
                                                   static_cast<std::size_t>(slice_size()));
}

void check_window(const Window& w)
{
    if (!(w.lo < w.hi))
        throw ConfigError("intensity window requires lo < hi, got [" + std::to_string(w.lo) + ", " +
                          std::to_string(w.hi) + "]");
}

void SliceVolume::validate() const
{
    if (slices <= 0 || height <= 0 || width <= 0)
        throw DataError("volume dims must be positive, got [" + std::to_string(slices) + "," + std::to_string(height) +
                        "," + std::to_string(width) + "]");
    if (!(window.lo < window.hi))
        throw DataError("volume window requires lo < hi");
    if (static_cast<std::int64_t>(voxels.size()) != voxel_count())
        throw DataError("volume has " + std::to_string(voxels.size()) + " voxels, dims imply " +
                        std::to_string(voxel_count()));
    if (mask && static_cast<std::int64_t>(mask->size()) != voxel_count())
        throw DataError("volume mask has " + std::to_string(mask->size()) + " entries, dims imply " +
                        std::to_string(voxel_count()));
}

std::uint8_t quantize(double v, const Window& w)
{
    check_window(w);
    const double t = std::clamp((v - w.lo) / w.span(), 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(255.0 * t));
}

double dequantize(std::uint8_t q, const Window& w) { return w.lo + (q / 255.0) * w.span(); }

Scalar to_model_range(std::uint8_t q) { return static_cast<Scalar>(q / 255.0 * 2.0 - 1.0); }

std::uint8_t from_model_range(double x)
{
    const double q = std::clamp((x + 1.0) / 2.0 * 255.0, 0.0, 255.0);
    return static_cast<std::uint8_t>(std::lround(q));
}

Tensor image_tensor(std::span<const std::uint8_t> levels, std::int64_t h, std::int64_t w)
{
    if (static_cast<std::int64_t>(levels.size()) != h * w)
        throw ShapeError("image_tensor: " + std::to_string(levels.size()) + " levels for " + std::to_string(h) + "x" +
                         std::to_string(w));
    std::vector<Scalar> v(levels.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = to_model_range(levels[i]);
    return Tensor::from({1, 1, h, w}, std::move(v));
}

Tensor slice_tensor(const SliceVolume& v, std::int64_t s) { return image_tensor(v.slice(s), v.height, v.width); }

// ---- SVOL ------------------------------------------------------------------

std::vector<std::uint8_t> encode_volume(const SliceVolume& v)
{
    v.validate();
    const nlohmann::json header = {{"modality", to_string(v.modality)},
                                   {"dims", {v.slices, v.height, v.width}},
                                   {"spacing_mm", v.spacing_mm},
                                   {"window", {v.window.lo, v.window.hi}},
                                   {"has_mask", v.mask.has_value()}};
    const auto text = header.dump();
    std::vector<std::uint8_t> out;
    out.reserve(kMagicLen + 4 + text.size() + 2 * v.voxels.size());
    out.insert(out.end(), kMagic, kMagic + kMagicLen);
    byte_io::put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), v.voxels.begin(), v.voxels.end());
    if (v.mask)
        out.insert(out.end(), v.mask->begin(), v.mask->end());
    return out;
}

SliceVolume decode_volume(std::span<const std::uint8_t> bytes)
{
    using Kind = FormatError::Kind;
    if (bytes.size() < kMagicLen || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw FormatError(Kind::bad_magic, "volume: bad magic");
    if (bytes[4] != static_cast<std::uint8_t>(kMagic[4]))
        throw FormatError(Kind::bad_version,
                          "volume: unsupported version '" + std::string(1, static_cast<char>(bytes[4])) + "'");
    if (bytes.size() < kMagicLen + 4)
        throw FormatError(Kind::truncated, "volume: truncated header");
    const auto len = byte_io::get_u32(bytes.data() + kMagicLen);
    const std::size_t body = kMagicLen + 4 + static_cast<std::size_t>(len);
    if (bytes.size() < body)
        throw FormatError(Kind::truncated, "volume: truncated header");

    SliceVolume v;
    bool has_mask = false;
    try {
        const auto h = nlohmann::json::parse(bytes.begin() + kMagicLen + 4, bytes.begin() + static_cast<std::ptrdiff_t>(body));
        v.modality = parse_modality(h.at("modality").get<std::string>());
        const auto dims = h.at("dims").get<std::vector<std::int64_t>>();
        if (dims.size() != 3)
            throw FormatError(Kind::bad_header, "volume: dims must have 3 entries");
        v.slices = dims[0];
        v.height = dims[1];
        v.width = dims[2];
        v.spacing_mm = h.at("spacing_mm").get<std::array<double, 3>>();
        const auto win = h.at("window").get<std::vector<double>>();
        if (win.size() != 2 || !(win[0] < win[1]))
            throw FormatError(Kind::bad_header, "volume: window must be [lo, hi] with lo < hi");
        v.window = {win[0], win[1]};
        has_mask = h.at("has_mask").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(Kind::bad_header, std::string("volume: malformed header: ") + e.what());
    } catch (const FormatError&) {
        throw;
    } catch (const DataError& e) {
        throw FormatError(Kind::bad_header, std::string("volume: ") + e.what());
    }
    if (v.slices <= 0 || v.height <= 0 || v.width <= 0)
        throw FormatError(Kind::bad_header, "volume: dims must be positive");

    const auto n = static_cast<std::size_t>(v.voxel_count());
    const std::size_t expected = n * (has_mask ? 2 : 1);
    const std::size_t payload = bytes.size() - body;
    if (payload < expected)
        throw FormatError(Kind::truncated, "volume: payload has " + std::to_string(payload) + " bytes, header dims need " +
                                               std::to_string(expected));
    if (payload > expected)
        throw FormatError(Kind::inconsistent, "volume: header dims need " + std::to_string(expected) +
                                                  " payload bytes, found " + std::to_string(payload));
    const auto* p = bytes.data() + body;
    v.voxels.assign(p, p + n);
    if (has_mask) {
        v.mask.emplace(p + n, p + 2 * n);
        for (auto m : *v.mask)
            if (m > 1)
                throw FormatError(Kind::inconsistent, "volume: mask values must be 0 or 1");
    }
    return v;
}

void save_volume(const SliceVolume& v, const std::filesystem::path& path) { write_file_bytes(path, encode_volume(v)); }

SliceVolume load_volume(const std::filesystem::path& path)
{
    const auto bytes = read_file_bytes(path);
    try {
        return decode_volume(bytes);
    } catch (const FormatError& e) {
        throw FormatError(e.kind(), path.string() + ": " + e.what());
    }
}

// ---- Head mask ---------------------------------------------------------------

std::vector<std::uint8_t> largest_component_filled(std::span<const std::uint8_t> binary, std::int64_t h,
                                                   std::int64_t w)
{
    const auto n = static_cast<std::size_t>(h * w);
    std::vector<int> label(n, 0);
    std::vector<std::int64_t> sizes{0};
    std::deque<std::int64_t> queue;
    for (std::int64_t start = 0; start < h * w; ++start) {
        if (!binary[start] || label[start])
            continue;
        const int id = static_cast<int>(sizes.size());
        std::int64_t count = 0;
        label[start] = id;
        queue.push_back(start);
        while (!queue.empty()) {
            const auto p = queue.front();
            queue.pop_front();
            ++count;
            const auto r = p / w, c = p % w;
            for (std::int64_t dr = -1; dr <= 1; ++dr)
                for (std::int64_t dc = -1; dc <= 1; ++dc) {
                    const auto rr = r + dr, cc = c + dc;
                    if (rr < 0 || rr >= h || cc < 0 || cc >= w)
                        continue;
                    const auto q = rr * w + cc;
                    if (binary[q] && !label[q]) {
                        label[q] = id;
                        queue.push_back(q);
                    }
                }
        }
        sizes.push_back(count);
    }
    std::vector<std::uint8_t> out(n, 0);
    if (sizes.size() == 1)
        return out;
    // First largest in raster order wins ties.
    const int best = static_cast<int>(std::max_element(sizes.begin() + 1, sizes.end()) - sizes.begin());

    // Background reachable from the border (4-connected) stays background.
    std::vector<std::uint8_t> outside(n, 0);
    auto seed = [&](std::int64_t p) {
        if (label[p] != best && !outside[p]) {
            outside[p] = 1;
            queue.push_back(p);
        }
    };
    for (std::int64_t c = 0; c < w; ++c) {
        seed(c);
        seed((h - 1) * w + c);
    }
    for (std::int64_t r = 0; r < h; ++r) {
        seed(r * w);
        seed(r * w + w - 1);
    }
    while (!queue.empty()) {
        const auto p = queue.front();
        queue.pop_front();
        const auto r = p / w, c = p % w;
        if (r > 0)
            seed(p - w);
        if (r + 1 < h)
            seed(p + w);
        if (c > 0)
            seed(p - 1);
        if (c + 1 < w)
            seed(p + 1);
    }
    for (std::size_t i = 0; i < n; ++i)
        out[i] = outside[i] ? 0 : 1;
    return out;
}

std::vector<std::uint8_t> head_mask(const SliceVolume& ct, double threshold_hu)
{
    ct.validate();
    if (!is_ct_like(ct.modality))
        throw DataError("head_mask: expected a CT volume, got " + to_string(ct.modality));
    std::vector<std::uint8_t> mask;
    mask.reserve(ct.voxels.size());
    std::vector<std::uint8_t> binary(static_cast<std::size_t>(ct.slice_size()));
    bool any = false;
    for (std::int64_t s = 0; s < ct.slices; ++s) {
        const auto sl = ct.slice(s);
        for (std::size_t i = 0; i < binary.size(); ++i)
            binary[i] = dequantize(sl[i], ct.window) > threshold_hu ? 1 : 0;
        const auto m = largest_component_filled(binary, ct.height, ct.width);
        any = any || std::find(m.begin(), m.end(), 1) != m.end();
        mask.insert(mask.end(), m.begin(), m.end());
    }
    if (!any)
        throw DataError("head_mask: no voxel above " + std::to_string(threshold_hu) + " HU");
    return mask;
}

// ---- Pad and crop ------------------------------------------------------------

std::int64_t default_pad_total(std::int64_t target)
{
    return 2 * std::llround(30.0 / 256.0 * static_cast<double>(target) / 2.0);
}

AugmentSpec default_augment(std::int64_t target_h, std::int64_t target_w)
{
    return {target_h, target_w, default_pad_total(std::max(target_h, target_w))};
}

CropOffset draw_crop(const AugmentSpec& spec, std::mt19937_64& rng)
{
    std::uniform_int_distribution<std::int64_t> d(0, spec.pad_total);
    const auto row = d(rng);
    const auto col = d(rng);
    return {row, col};
}

std::vector<std::uint8_t> pad_and_crop(std::span<const std::uint8_t> img, std::int64_t h, std::int64_t w,
                                       const AugmentSpec& spec, CropOffset at)
{
    const auto ph = spec.target_h + spec.pad_total;
    const auto pw = spec.target_w + spec.pad_total;
    if (spec.pad_total < 0 || h > ph || w > pw || h <= 0 || w <= 0)
        throw ShapeError("augment: slice " + std::to_string(h) + "x" + std::to_string(w) + " exceeds padded size " +
                         std::to_string(ph) + "x" + std::to_string(pw));
    if (static_cast<std::int64_t>(img.size()) != h * w)
        throw ShapeError("augment: buffer size does not match dims");
    if (at.row < 0 || at.col < 0 || at.row > ph - spec.target_h || at.col > pw - spec.target_w)
        throw ShapeError("augment: crop offset outside padded image");
    // Symmetric padding: the odd pixel, if any, goes after.
    const auto top = (ph - h) / 2;
    const auto left = (pw - w) / 2;
    std::vector<std::uint8_t> out(static_cast<std::size_t>(spec.target_h * spec.target_w));
    for (std::int64_t r = 0; r < spec.target_h; ++r) {
        const auto sr = std::clamp<std::int64_t>(r + at.row - top, 0, h - 1);
        for (std::int64_t c = 0; c < spec.target_w; ++c) {
            const auto sc = std::clamp<std::int64_t>(c + at.col - left, 0, w - 1);
            out[r * spec.target_w + c] = img[sr * w + sc];
        }
    }
    return out;
}

std::vector<std::uint8_t> augment(std::span<const std::uint8_t> img, std::int64_t h, std::int64_t w,
                                  const AugmentSpec& spec, std::mt19937_64& rng)
{
    return pad_and_crop(img, h, w, spec, draw_crop(spec, rng));
}

// ---- Datasets and sampling ---------------------------------------------------------

namespace {

std::vector<SliceRef> refs_of(const std::vector<SliceVolume>& vols)
{
    std::vector<SliceRef> out;
    for (std::size_t v = 0; v < vols.size(); ++v)
        for (std::int64_t s = 0; s < vols[v].slices; ++s)
            out.push_back({static_cast<int>(v), s});
    return out;
}

std::vector<SliceRef> stream(const std::vector<SliceRef>& items, std::size_t length, std::uint64_t seed)
{
    std::vector<SliceRef> out;
    out.reserve(length);
    std::uint64_t round = 0;
    while (out.size() < length) {
        auto perm = items;
        std::mt19937_64 rng(derive_seed(seed, {round++}));
        std::shuffle(perm.begin(), perm.end(), rng);
        for (const auto& r : perm) {
            if (out.size() == length)
                break;
            out.push_back(r);
        }
    }
    return out;
}

} // namespace

std::vector<SliceRef> Dataset::mr_slices() const { return refs_of(mr); }
std::vector<SliceRef> Dataset::ct_slices() const { return refs_of(ct); }

void Dataset::validate() const
{
    if (mr.empty() || ct.empty())
        throw DataError("dataset needs at least one MR and one CT volume");
    const auto h = mr.front().height, w = mr.front().width;
    for (const auto* set : {&mr, &ct})
        for (const auto& v : *set) {
            v.validate();
            if (v.height != h || v.width != w)
                throw DataError("dataset mixes slice sizes " + std::to_string(h) + "x" + std::to_string(w) + " and " +
                                std::to_string(v.height) + "x" + std::to_string(v.width));
        }
    for (const auto& v : mr)
        if (is_ct_like(v.modality))
            throw DataError("MR list contains a " + to_string(v.modality) + " volume");
    for (const auto& v : ct)
        if (!is_ct_like(v.modality))
            throw DataError("CT list contains a " + to_string(v.modality) + " volume");
}

std::vector<std::pair<SliceRef, SliceRef>> unpaired_epoch(const Dataset& ds, std::uint64_t seed, int epoch,
                                                          bool forbid_same_index)
{
    const auto mr = ds.mr_slices();
    const auto ct = ds.ct_slices();
    if (mr.empty() || ct.empty())
        throw DataError("unpaired sampling needs slices in both modalities");
    const auto n = std::max(mr.size(), ct.size());
    const auto e = static_cast<std::uint64_t>(epoch);
    auto a = stream(mr, n, derive_seed(seed, {e, 0}));
    auto b = stream(ct, n, derive_seed(seed, {e, 1}));
    if (forbid_same_index) {
        for (std::size_t k = 0; k < n; ++k) {
            if (a[k].volume != b[k].volume)
                continue;
            bool fixed = false;
            for (std::size_t off = 1; off < n && !fixed; ++off) {
                const auto j = (k + off) % n;
                if (b[j].volume != a[k].volume && b[k].volume != a[j].volume) {
                    std::swap(b[k], b[j]);
                    fixed = true;
                }
            }
            if (!fixed)
                throw ConfigError("forbid_same_index: cannot avoid pairing volume " + std::to_string(a[k].volume) +
                                  " with itself");
        }
    }
    std::vector<std::pair<SliceRef, SliceRef>> out(n);
    for (std::size_t k = 0; k < n; ++k)
        out[k] = {a[k], b[k]};
    return out;
}

std::vector<SliceRef> paired_epoch(const Dataset& ds, std::uint64_t seed, int epoch)
{
    if (ds.mr.size() != ds.ct.size())
        throw DataError("paired training needs as many CT as MR volumes");
    for (std::size_t v = 0; v < ds.mr.size(); ++v)
        if (ds.mr[v].slices != ds.ct[v].slices)
            throw DataError("paired volume " + std::to_string(v) + " has mismatched slice counts");
    const auto items = ds.mr_slices();
    return stream(items, items.size(), derive_seed(seed, {static_cast<std::uint64_t>(epoch), 2}));
}

} // namespace cyclesynth
