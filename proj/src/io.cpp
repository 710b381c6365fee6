#include "bimspu/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace bimspu {

namespace {

std::string located(const std::string& source, std::size_t line, const std::string& msg) {
  return source + ":" + std::to_string(line) + ": " + msg;
}

// Splits on whitespace, dropping '#' comments.
std::vector<std::string> tokens_of(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line.substr(0, line.find('#')));
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

double parse_real(const std::string& tok, const std::string& source, std::size_t line) {
  double v = 0.0;
  const char* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw DataError(located(source, line, "invalid number '" + tok + "'"));
  }
  return v;
}

// XYZ files are f32: parse straight to the nearest float so write/read is exact.
double parse_f32(const std::string& tok, const std::string& source, std::size_t line) {
  float v = 0.0f;
  const char* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw DataError(located(source, line, "invalid number '" + tok + "'"));
  }
  return v;
}

std::uint64_t parse_count(const std::string& tok, const std::string& source, std::size_t line) {
  std::uint64_t v = 0;
  const char* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw DataError(located(source, line, "invalid integer '" + tok + "'"));
  }
  return v;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

}  // namespace

// ---------------------------------------------------------------------------
// XYZ

PointCloud parse_xyz(std::istream& in, const std::string& source) {
  PointCloud cloud;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto toks = tokens_of(line);
    if (toks.empty()) continue;
    if (toks.size() != 3) {
      throw DataError(located(source, lineno, "expected 3 coordinates, found " + std::to_string(toks.size())));
    }
    cloud.points.emplace_back(parse_f32(toks[0], source, lineno), parse_f32(toks[1], source, lineno),
                              parse_f32(toks[2], source, lineno));
  }
  if (cloud.empty()) throw DataError(source + ": no points");
  return cloud;
}

PointCloud read_xyz(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_xyz(in, path.string());
}

void write_xyz(std::ostream& out, const PointCloud& cloud) {
  char buf[96];
  for (const auto& p : cloud.points) {
    const int n = std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g\n", static_cast<double>(static_cast<float>(p.x())),
                                static_cast<double>(static_cast<float>(p.y())),
                                static_cast<double>(static_cast<float>(p.z())));
    out.write(buf, n);
  }
}

void write_xyz(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_xyz(out, cloud);
  if (!out) throw DataError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// OFF

Mesh parse_off(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  auto next_tokens = [&]() -> std::vector<std::string> {
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      auto toks = tokens_of(line);
      if (!toks.empty()) return toks;
    }
    throw DataError(located(source, lineno, "unexpected end of file"));
  };

  auto header = next_tokens();
  if (header.front() != "OFF") throw DataError(located(source, lineno, "missing OFF header"));
  // Counts may share the header line.
  std::vector<std::string> counts(header.begin() + 1, header.end());
  if (counts.empty()) counts = next_tokens();
  if (counts.size() < 2) throw DataError(located(source, lineno, "expected vertex and face counts"));
  const auto nv = parse_count(counts[0], source, lineno);
  const auto nf = parse_count(counts[1], source, lineno);

  Mesh mesh;
  mesh.vertices.reserve(nv);
  for (std::uint64_t v = 0; v < nv; ++v) {
    const auto toks = next_tokens();
    if (toks.size() < 3) throw DataError(located(source, lineno, "vertex needs 3 coordinates"));
    mesh.vertices.emplace_back(parse_real(toks[0], source, lineno), parse_real(toks[1], source, lineno),
                               parse_real(toks[2], source, lineno));
  }
  mesh.triangles.reserve(nf);
  for (std::uint64_t f = 0; f < nf; ++f) {
    const auto toks = next_tokens();
    if (parse_count(toks[0], source, lineno) != 3 || toks.size() < 4) {
      throw DataError(located(source, lineno, "only triangular faces are supported"));
    }
    std::array<std::uint32_t, 3> tri{};
    for (int c = 0; c < 3; ++c) {
      const auto idx = parse_count(toks[1 + c], source, lineno);
      if (idx >= nv) throw DataError(located(source, lineno, "vertex index out of range"));
      tri[c] = static_cast<std::uint32_t>(idx);
    }
    mesh.triangles.push_back(tri);
  }
  return mesh;
}

Mesh read_off(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_off(in, path.string());
}

void write_off(const std::filesystem::path& path, const Mesh& mesh) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "OFF\n" << mesh.vertices.size() << ' ' << mesh.triangles.size() << " 0\n";
  char buf[96];
  for (const auto& v : mesh.vertices) {
    const int n = std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", v.x(), v.y(), v.z());
    out.write(buf, n);
  }
  for (const auto& t : mesh.triangles) out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
}

// ---------------------------------------------------------------------------
// Binary helpers

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::bytes(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buf_ += s;
}

void ByteWriter::raw(const std::string& s) { buf_ += s; }

void ByteReader::need(std::size_t n) {
  if (buf_.size() - pos_ < n) throw DataError(what_ + ": truncated at byte " + std::to_string(pos_));
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * i);
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

std::string ByteReader::bytes() {
  const auto n = u32();
  return raw(n);
}

std::string ByteReader::raw(std::size_t n) {
  need(n);
  std::string out = buf_.substr(pos_, n);
  pos_ += n;
  return out;
}

std::string read_file_bytes(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Patch container

std::string encode_patch_dataset(const PatchDataset& dataset) {
  if (dataset.object_ids.size() != dataset.patches.size()) {
    throw ContractError("patch dataset: object id count does not match patch count");
  }
  ByteWriter w;
  w.raw("BPUP");
  w.u32(kPatchContainerVersion);
  w.u32(static_cast<std::uint32_t>(dataset.patches.size()));
  w.u32(dataset.points_per_patch);
  for (const auto& patch : dataset.patches) {
    if (patch.size() != dataset.points_per_patch) {
      throw ContractError("patch dataset: patch has " + std::to_string(patch.size()) + " points, expected " +
                          std::to_string(dataset.points_per_patch));
    }
    for (const auto& p : patch.points) {
      w.f32(static_cast<float>(p.x()));
      w.f32(static_cast<float>(p.y()));
      w.f32(static_cast<float>(p.z()));
    }
  }
  for (const auto& id : dataset.object_ids) w.bytes(id);
  return w.str();
}

PatchDataset decode_patch_dataset(const std::string& bytes) {
  ByteReader r(bytes, "patch container");
  if (r.raw(4) != "BPUP") throw DataError("patch container: bad magic");
  const auto version = r.u32();
  if (version != kPatchContainerVersion) {
    throw DataError("patch container: unsupported version " + std::to_string(version));
  }
  PatchDataset ds;
  const auto count = r.u32();
  ds.points_per_patch = r.u32();
  if (ds.points_per_patch == 0) throw DataError("patch container: zero points per patch");
  if (static_cast<std::uint64_t>(count) * ds.points_per_patch * 12 > r.remaining()) {
    throw DataError("patch container: count field exceeds stored data");
  }
  ds.patches.resize(count);
  for (auto& patch : ds.patches) {
    patch.points.resize(ds.points_per_patch);
    for (auto& p : patch.points) {
      const float x = r.f32(), y = r.f32(), z = r.f32();
      p = Point3(x, y, z);
    }
  }
  ds.object_ids.resize(count);
  for (auto& id : ds.object_ids) id = r.bytes();
  if (!r.done()) throw DataError("patch container: trailing bytes after object ids");
  return ds;
}

void write_patch_dataset(const std::filesystem::path& path, const PatchDataset& dataset) {
  write_file_bytes(path, encode_patch_dataset(dataset));
}

PatchDataset read_patch_dataset(const std::filesystem::path& path) {
  return decode_patch_dataset(read_file_bytes(path));
}

}  // namespace bimspu
