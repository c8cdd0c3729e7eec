#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "cascreg/transform.hpp"
#include "cascreg/volume.hpp"

namespace cascreg {

// VVOL1 layout, all integers and floats little-endian:
//   0   char[5]  "VVOL1"
//   5   u8       dtype, 1 = f32
//   6   u16      reserved, 0
//   8   u32 x3   nx, ny, nz
//   20  f64 x3   spacing x, y, z
//   44  u32      channel count C >= 1
//   48  C x (u16 length, name bytes)
//   ... C * nx * ny * nz f32, channel-major, x fastest
// A lone channel with an empty name is a scalar image.

class VolumeIoError : public std::runtime_error {
public:
    enum class Kind { open_failed, bad_magic, unsupported_dtype, bad_header, dim_overflow, truncated, trailing_data, write_failed };

    VolumeIoError(Kind kind, const std::string& what, std::uint64_t offset = 0)
        : std::runtime_error(what), kind_(kind), offset_(offset) {}
    Kind kind() const { return kind_; }
    /// Byte offset where the problem was detected.
    std::uint64_t offset() const { return offset_; }

private:
    Kind kind_;
    std::uint64_t offset_;
};

struct VolumeFileHeader {
    Dims dims{};
    Spacing spacing{};
    std::uint8_t dtype = 1;
    std::vector<std::string> channel_names;

    std::uint64_t header_bytes() const;
    std::uint64_t payload_bytes() const;
    bool operator==(const VolumeFileHeader&) const = default;
};

using VolumeData = std::variant<Volume3, LabelVolume>;

std::vector<std::uint8_t> encode_volume(const VolumeFileHeader& header, std::span<const Volume3* const> channels);
/// Parses a whole file image; the returned channels follow header order.
std::vector<Volume3> decode_volume(std::span<const std::uint8_t> bytes, VolumeFileHeader& header);

VolumeFileHeader read_volume_header(const std::filesystem::path& path);
VolumeData read_volume(const std::filesystem::path& path);
/// Requires a single channel.
Volume3 read_image(const std::filesystem::path& path);
/// Any channel count; a scalar image becomes one unnamed channel.
LabelVolume read_labels(const std::filesystem::path& path);
/// Three channels named u_x, u_y, u_z.
DisplacementField read_displacement(const std::filesystem::path& path);

// Writes go to "<path>.partial" and are renamed into place when complete.
void write_volume(const std::filesystem::path& path, const Volume3& vol);
void write_volume(const std::filesystem::path& path, const LabelVolume& labels);
void write_displacement(const std::filesystem::path& path, const DisplacementField& disp);
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace cascreg
