#include "urbanclip/util/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "urbanclip/errors.hpp"

namespace urbanclip::util {
namespace {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats assume a little-endian host");

constexpr char kMagic[4] = {'U', 'R', 'B', 'C'};
constexpr std::size_t kHeaderBytes = 16;

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

std::uint32_t get_u32(const char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

}  // namespace

std::string encode_f32_blob(const Float32Blob& blob) {
  const std::size_t n = std::size_t(blob.h) * blob.w * blob.c;
  if (blob.data.size() != n) {
    throw ShapeError("f32 blob: data length " + std::to_string(blob.data.size()) +
                     " does not match header " + std::to_string(blob.h) + "x" +
                     std::to_string(blob.w) + "x" + std::to_string(blob.c));
  }
  std::string out;
  out.reserve(kHeaderBytes + n * 4);
  out.append(kMagic, 4);
  put_u32(out, blob.h);
  put_u32(out, blob.w);
  put_u32(out, blob.c);
  out.append(reinterpret_cast<const char*>(blob.data.data()), n * 4);
  return out;
}

Float32Blob decode_f32_blob(const std::string& bytes) {
  if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw IoError("f32 blob: missing URBC header");
  }
  Float32Blob blob;
  blob.h = get_u32(bytes.data() + 4);
  blob.w = get_u32(bytes.data() + 8);
  blob.c = get_u32(bytes.data() + 12);
  const std::uint64_t n = std::uint64_t(blob.h) * blob.w * blob.c;
  if (bytes.size() - kHeaderBytes != n * 4) {
    throw IoError("f32 blob: payload is " + std::to_string(bytes.size() - kHeaderBytes) +
                  " bytes, header implies " + std::to_string(n * 4));
  }
  blob.data.resize(n);
  std::memcpy(blob.data.data(), bytes.data() + kHeaderBytes, n * 4);
  return blob;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_f32_blob(const std::filesystem::path& path, const Float32Blob& blob) {
  write_file_atomic(path, encode_f32_blob(blob));
}

Float32Blob read_f32_blob(const std::filesystem::path& path) {
  try {
    return decode_f32_blob(read_file(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace urbanclip::util
