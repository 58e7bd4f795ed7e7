#pragma once

#include "cyclesynth/models.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace cyclesynth {

/// "CSYN1" container: magic, u32 LE manifest length, JSON manifest
/// {"entries": [{name, shape, dtype, offset}...], "meta": {...}}, then the
/// tightly packed little-endian f32 payload in entry order.
struct Checkpoint {
    std::vector<NamedTensor> tensors;
    nlohmann::json meta = nlohmann::json::object();

    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies every parameter under "<prefix>.<name>"; values are snapshotted.
void append_params(Checkpoint& ckpt, const std::string& prefix, const ParamSet& params);
// Overwrites params in place; every entry must exist with a matching shape.
void restore_params(const Checkpoint& ckpt, const std::string& prefix, ParamSet& params);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

} // namespace cyclesynth
