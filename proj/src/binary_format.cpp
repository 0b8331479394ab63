#include "paodp/binary_format.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace paodp {

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const unsigned char* p)
{
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::vector<unsigned char> encode_container(
    std::string_view magic, std::uint32_t version, const nlohmann::json& meta,
    std::span<const float> payload)
{
    if (magic.size() != 4)
        throw std::invalid_argument("container magic must be 4 bytes");
    const std::string text = meta.dump();
    std::vector<unsigned char> out;
    out.reserve(12 + text.size() + 4 * payload.size());
    out.insert(out.end(), magic.begin(), magic.end());
    put_u32(out, version);
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    for (float f : payload)
        put_u32(out, std::bit_cast<std::uint32_t>(f));
    return out;
}

void write_container(
    const std::filesystem::path& path, std::string_view magic, std::uint32_t version,
    const nlohmann::json& meta, std::span<const float> payload)
{
    const auto bytes = encode_container(magic, version, meta, payload);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw FormatError(FormatError::Kind::io, "cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw FormatError(FormatError::Kind::io, "write failed: " + path.string());
}

Container read_container(
    const std::filesystem::path& path, std::string_view magic, std::uint32_t version,
    std::size_t (*expected_floats)(const nlohmann::json&))
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FormatError(FormatError::Kind::io, "cannot open for reading: " + path.string());
    const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};

    if (bytes.size() < 4 || std::memcmp(bytes.data(), magic.data(), 4) != 0)
        throw FormatError(FormatError::Kind::bad_magic, "bad magic in " + path.string());
    if (bytes.size() < 12)
        throw FormatError(FormatError::Kind::truncated, "truncated header in " + path.string());
    const std::uint32_t file_version = get_u32(bytes.data() + 4);
    if (file_version != version)
        throw FormatError(
            FormatError::Kind::version_mismatch,
            "version mismatch: file has " + std::to_string(file_version) + ", expected " + std::to_string(version));
    const std::size_t json_len = get_u32(bytes.data() + 8);
    if (bytes.size() < 12 + json_len)
        throw FormatError(FormatError::Kind::truncated, "truncated metadata in " + path.string());

    Container result;
    try {
        result.meta = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(json_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Kind::malformed, std::string("metadata is not valid JSON: ") + e.what());
    }

    std::size_t floats = 0;
    try {
        floats = expected_floats(result.meta);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Kind::malformed, std::string("metadata missing fields: ") + e.what());
    }
    const std::size_t available = bytes.size() - 12 - json_len;
    if (available < 4 * floats)
        throw FormatError(
            FormatError::Kind::truncated,
            "truncated payload: expected " + std::to_string(4 * floats) + " bytes, found " + std::to_string(available));
    if (available > 4 * floats)
        throw FormatError(FormatError::Kind::malformed, "trailing bytes after payload");

    result.payload.resize(floats);
    const unsigned char* p = bytes.data() + 12 + json_len;
    for (std::size_t i = 0; i < floats; ++i, p += 4)
        result.payload[i] = std::bit_cast<float>(get_u32(p));
    return result;
}

}  // namespace paodp
