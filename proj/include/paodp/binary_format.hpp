#pragma once

// Shared container layout for datasets (.paod) and checkpoints (.paoc):
//   magic[4] | version u32 LE | json_len u32 LE | UTF-8 JSON | float32 LE payload

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace paodp {

class FormatError : public std::runtime_error {
public:
    enum class Kind { io, bad_magic, version_mismatch, truncated, malformed };

    FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

struct Container {
    nlohmann::json meta;
    std::vector<float> payload;
};

void write_container(
    const std::filesystem::path& path, std::string_view magic, std::uint32_t version,
    const nlohmann::json& meta, std::span<const float> payload);

/// Reads and validates the header. `expected_floats` is derived from the
/// metadata by the caller-supplied function; a short payload is reported as
/// truncated, trailing bytes as malformed.
Container read_container(
    const std::filesystem::path& path, std::string_view magic, std::uint32_t version,
    std::size_t (*expected_floats)(const nlohmann::json&));

std::vector<unsigned char> encode_container(
    std::string_view magic, std::uint32_t version, const nlohmann::json& meta,
    std::span<const float> payload);

}  // namespace paodp
