#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "nirev/core.hpp"

namespace nirev::io {

// EVT1: "EVT1", u32 width, u32 height, u64 t_start, u64 t_end, u64 count,
// then count packed records (u64 t, u16 x, u16 y, i8 p). Little-endian.
inline constexpr std::size_t kEventHeaderBytes = 36;
inline constexpr std::size_t kEventRecordBytes = 13;

std::vector<std::uint8_t> encode_events(const EventStream& stream);
EventStream decode_events(std::span<const std::uint8_t> bytes);

std::size_t write_events(const EventStream& stream, std::ostream& out);
std::size_t write_events(const EventStream& stream, const std::filesystem::path& path);
EventStream read_events(std::istream& in);
EventStream read_events(const std::filesystem::path& path);

// VOX1: "VOX1", u32 bins, u32 height, u32 width, then float32 values,
// bin-major then row-major.
std::vector<std::uint8_t> encode_voxel(const VoxelGrid& grid);
VoxelGrid decode_voxel(std::span<const std::uint8_t> bytes);

std::size_t write_voxel(const VoxelGrid& grid, std::ostream& out);
std::size_t write_voxel(const VoxelGrid& grid, const std::filesystem::path& path);
VoxelGrid read_voxel(std::istream& in);
VoxelGrid read_voxel(const std::filesystem::path& path);

/// Binary PGM (P5). maxval <= 255 is read as 8-bit, otherwise 16-bit
/// big-endian. Values are normalized by maxval.
Frame decode_pgm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pgm(const Frame& frame, int bit_depth = 16);
Frame read_pgm(const std::filesystem::path& path);
void write_pgm(const Frame& frame, const std::filesystem::path& path, int bit_depth = 16);

/// CSV interchange: header row "t,x,y,p", then one event per line. The CSV
/// carries no geometry, so the sensor size is supplied by the caller. When
/// the window is not given it spans the first to last timestamp.
EventStream read_events_csv(std::istream& in, int width, int height);
EventStream read_events_csv(std::istream& in, int width, int height, std::uint64_t t_start,
                            std::uint64_t t_end);
void write_events_csv(const EventStream& stream, std::ostream& out);

/// A named float32 tensor inside a PRM1 container.
struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<float> data;
};

// PRM1: "PRM1", u32 count, then per tensor: u32 name_len, name bytes,
// u32 ndim, u32 dims[ndim], float32 data[prod(dims)].
std::vector<std::uint8_t> encode_params(std::span<const NamedTensor> tensors);
std::vector<NamedTensor> decode_params(std::span<const std::uint8_t> bytes);
void write_params(std::span<const NamedTensor> tensors, const std::filesystem::path& path);
std::vector<NamedTensor> read_params(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace nirev::io
