#include "cyclesynth/checkpoint.hpp"

#include "cyclesynth/errors.hpp"

#include "byte_io.hpp"

#include <cstring>
#include <fstream>

namespace cyclesynth {

namespace {

constexpr char kMagic[] = "CSYN1";
constexpr std::size_t kMagicLen = 5;

} // namespace

const Tensor& Checkpoint::at(const std::string& name) const
{
    for (const auto& t : tensors)
        if (t.name == name)
            return t.tensor;
    throw DataError("checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::contains(const std::string& name) const
{
    for (const auto& t : tensors)
        if (t.name == name)
            return true;
    return false;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt)
{
    nlohmann::json entries = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& t : ckpt.tensors) {
        entries.push_back({{"name", t.name}, {"shape", t.tensor.shape()}, {"dtype", "f32"}, {"offset", offset}});
        offset += static_cast<std::uint64_t>(t.tensor.numel()) * 4;
    }
    nlohmann::json manifest = {{"entries", entries}, {"meta", ckpt.meta}};
    const std::string text = manifest.dump();

    std::vector<std::uint8_t> out;
    out.reserve(kMagicLen + 4 + text.size() + offset);
    out.insert(out.end(), kMagic, kMagic + kMagicLen);
    byte_io::put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    for (const auto& t : ckpt.tensors)
        for (auto v : t.tensor.data())
            byte_io::put_f32(out, static_cast<float>(v));
    return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes)
{
    using Kind = FormatError::Kind;
    if (bytes.size() < kMagicLen || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw FormatError(Kind::bad_magic, "checkpoint: bad magic");
    if (bytes[4] != static_cast<std::uint8_t>(kMagic[4]))
        throw FormatError(Kind::bad_version, "checkpoint: unsupported version '" +
                                                 std::string(1, static_cast<char>(bytes[4])) + "'");
    if (bytes.size() < kMagicLen + 4)
        throw FormatError(Kind::truncated, "checkpoint: truncated header");
    const auto len = byte_io::get_u32(bytes.data() + kMagicLen);
    const std::size_t body = kMagicLen + 4 + len;
    if (bytes.size() < body)
        throw FormatError(Kind::truncated, "checkpoint: truncated manifest");

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.begin() + kMagicLen + 4, bytes.begin() + static_cast<std::ptrdiff_t>(body));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(Kind::bad_header, std::string("checkpoint: manifest is not valid JSON: ") + e.what());
    }

    Checkpoint ckpt;
    try {
        ckpt.meta = manifest.value("meta", nlohmann::json::object());
        const auto payload = bytes.subspan(body);
        std::uint64_t expected_offset = 0;
        for (const auto& e : manifest.at("entries")) {
            const auto name = e.at("name").get<std::string>();
            if (e.at("dtype").get<std::string>() != "f32")
                throw FormatError(Kind::bad_header, "checkpoint: entry '" + name + "' has unsupported dtype");
            const auto shape = e.at("shape").get<Shape>();
            const auto offset = e.at("offset").get<std::uint64_t>();
            if (offset != expected_offset)
                throw FormatError(Kind::inconsistent, "checkpoint: entry '" + name + "' offset " +
                                                          std::to_string(offset) + " is not tightly packed");
            const auto n = static_cast<std::uint64_t>(shape_numel(shape));
            if (offset + 4 * n > payload.size())
                throw FormatError(Kind::truncated, "checkpoint: payload truncated in entry '" + name + "'");
            std::vector<Scalar> values(n);
            for (std::uint64_t i = 0; i < n; ++i)
                values[i] = static_cast<Scalar>(byte_io::get_f32(payload.data() + offset + 4 * i));
            ckpt.tensors.push_back({name, Tensor::from(shape, std::move(values))});
            expected_offset = offset + 4 * n;
        }
        if (expected_offset != payload.size())
            throw FormatError(Kind::inconsistent, "checkpoint: " + std::to_string(payload.size() - expected_offset) +
                                                      " trailing payload bytes");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(Kind::bad_header, std::string("checkpoint: malformed manifest: ") + e.what());
    }
    return ckpt;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open '" + path.string() + "' for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw DataError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw DataError("write failed for '" + path.string() + "'");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt)
{
    write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

void append_params(Checkpoint& ckpt, const std::string& prefix, const ParamSet& params)
{
    for (const auto& e : params.entries())
        ckpt.tensors.push_back({prefix + "." + e.name, e.tensor.detach()});
}

void restore_params(const Checkpoint& ckpt, const std::string& prefix, ParamSet& params)
{
    for (auto& e : params.entries()) {
        const auto& src = ckpt.at(prefix + "." + e.name);
        if (src.shape() != e.tensor.shape())
            throw DataError("checkpoint tensor '" + prefix + "." + e.name + "' has shape " + shape_str(src.shape()) +
                            ", expected " + shape_str(e.tensor.shape()));
        auto dst = e.tensor.mutable_data();
        std::copy(src.data().begin(), src.data().end(), dst.begin());
    }
}

} // namespace cyclesynth
