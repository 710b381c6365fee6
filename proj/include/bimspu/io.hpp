#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "bimspu/geometry.hpp"

namespace bimspu {

// XYZ text: one "x y z" per line, LF endings. Values are written at f32
// precision so a write/read round trip is exact at f32.
PointCloud read_xyz(const std::filesystem::path& path);
PointCloud parse_xyz(std::istream& in, const std::string& source = "<stream>");
void write_xyz(const std::filesystem::path& path, const PointCloud& cloud);
void write_xyz(std::ostream& out, const PointCloud& cloud);

// OFF meshes with triangular faces only.
Mesh read_off(const std::filesystem::path& path);
Mesh parse_off(std::istream& in, const std::string& source = "<stream>");
void write_off(const std::filesystem::path& path, const Mesh& mesh);

/// Ground-truth training patches, each of `points_per_patch` points.
struct PatchDataset {
  std::uint32_t points_per_patch = 0;
  std::vector<PointCloud> patches;
  std::vector<std::string> object_ids;  ///< one per patch
};

inline constexpr std::uint32_t kPatchContainerVersion = 1;

/// BPUP container: "BPUP", u32 version, u32 count, u32 points per patch,
/// f32 xyz triples patch by patch, then u32-length-prefixed object ids.
void write_patch_dataset(const std::filesystem::path& path, const PatchDataset& dataset);
PatchDataset read_patch_dataset(const std::filesystem::path& path);
std::string encode_patch_dataset(const PatchDataset& dataset);
PatchDataset decode_patch_dataset(const std::string& bytes);

/// Little-endian binary helpers shared by the container and checkpoint formats.
class ByteWriter {
 public:
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void bytes(const std::string& s);  ///< u32 length prefix + raw bytes
  void raw(const std::string& s);
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& buf, std::string what) : buf_(buf), what_(std::move(what)) {}
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  std::string bytes();
  std::string raw(std::size_t n);
  bool done() const { return pos_ == buf_.size(); }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  void need(std::size_t n);
  const std::string& buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::string& bytes);

}  // namespace bimspu
