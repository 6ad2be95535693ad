#include "layerfuse/npy.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <regex>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include "fs_util.hpp"
#include "layerfuse/error.hpp"

namespace layerfuse {

namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;

struct Header {
  char byte_order = '<';
  std::size_t item_size = 4;
  bool fortran_order = false;
  Shape shape;
};

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw DataError(fmt::format("{}: {}", path.string(), what));
}

Header parse_header(const std::filesystem::path& path, const std::string& text) {
  static const std::regex descr_re(R"('descr'\s*:\s*'([^']*)')");
  static const std::regex fortran_re(R"('fortran_order'\s*:\s*(True|False))");
  static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");

  Header h;
  std::smatch m;
  if (!std::regex_search(text, m, descr_re)) fail(path, "NPY header has no 'descr'");
  const std::string descr = m[1];
  if (descr.size() != 3 || descr[1] != 'f' || (descr[2] != '4' && descr[2] != '8')) {
    fail(path, fmt::format("unsupported dtype '{}' (need 32- or 64-bit float)", descr));
  }
  if (descr[0] == '>' || descr[0] == '<') {
    h.byte_order = descr[0];
  } else if (descr[0] == '=') {
    h.byte_order = std::endian::native == std::endian::little ? '<' : '>';
  } else {
    fail(path, fmt::format("unsupported byte order in dtype '{}'", descr));
  }
  h.item_size = descr[2] == '4' ? 4 : 8;

  if (!std::regex_search(text, m, fortran_re)) fail(path, "NPY header has no 'fortran_order'");
  h.fortran_order = m[1] == "True";
  if (h.fortran_order) fail(path, "Fortran-ordered arrays are not supported");

  if (!std::regex_search(text, m, shape_re)) fail(path, "NPY header has no 'shape'");
  const std::string dims = m[1];
  static const std::regex int_re(R"(\d+)");
  for (auto it = std::sregex_iterator(dims.begin(), dims.end(), int_re); it != std::sregex_iterator(); ++it) {
    h.shape.push_back(std::stoull(it->str()));
  }
  return h;
}

template <typename UInt>
UInt byteswap(UInt v) {
  UInt out = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    out = static_cast<UInt>((out << 8) | (v & 0xff));
    v >>= 8;
  }
  return out;
}

template <typename Float, typename UInt>
std::vector<float> decode(const std::vector<char>& raw, std::size_t count, bool swap) {
  std::vector<float> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    UInt bits;
    std::memcpy(&bits, raw.data() + i * sizeof(UInt), sizeof(UInt));
    if (swap) bits = byteswap(bits);
    out[i] = static_cast<float>(std::bit_cast<Float>(bits));
  }
  return out;
}

}  // namespace

Tensor load_tensor(const std::filesystem::path& path, const std::optional<Shape>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open tensor file");

  char magic[kMagicLen];
  in.read(magic, kMagicLen);
  if (!in || std::memcmp(magic, kMagic, kMagicLen) != 0) fail(path, "not an NPY file (bad magic)");
  unsigned char version[2];
  in.read(reinterpret_cast<char*>(version), 2);
  if (!in || (version[0] != 1 && version[0] != 2)) fail(path, "unsupported NPY version");

  std::size_t header_len = 0;
  if (version[0] == 1) {
    unsigned char len[2];
    in.read(reinterpret_cast<char*>(len), 2);
    header_len = len[0] | (std::size_t{len[1]} << 8);
  } else {
    unsigned char len[4];
    in.read(reinterpret_cast<char*>(len), 4);
    header_len = len[0] | (std::size_t{len[1]} << 8) | (std::size_t{len[2]} << 16) | (std::size_t{len[3]} << 24);
  }
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) fail(path, "truncated NPY header");

  const Header h = parse_header(path, text);
  if (h.shape.size() < 2 || h.shape.size() > 4) {
    fail(path, fmt::format("tensor rank must be 2, 3 or 4, got shape {}", shape_string(h.shape)));
  }
  const std::size_t count = element_count(h.shape);
  std::vector<char> raw(count * h.item_size);
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    fail(path, fmt::format("truncated payload: expected {} bytes", raw.size()));
  }

  const bool swap = (h.byte_order == '<') != (std::endian::native == std::endian::little);
  std::vector<float> data;
  if (h.item_size == 4) {
    data = decode<float, std::uint32_t>(raw, count, swap);
  } else {
    spdlog::warn("{}: narrowing 64-bit float tensor to 32-bit", path.string());
    data = decode<double, std::uint64_t>(raw, count, swap);
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) fail(path, fmt::format("non-finite value at flat index {}", i));
  }
  if (expected && *expected != h.shape) {
    fail(path, fmt::format("shape {} does not match declared {}", shape_string(h.shape), shape_string(*expected)));
  }
  try {
    return Tensor(h.shape, std::move(data));
  } catch (const std::invalid_argument& e) {
    fail(path, e.what());
  }
}

void write_npy(const std::filesystem::path& path, const Shape& shape, std::span<const float> data) {
  std::string dims = fmt::format("{}", fmt::join(shape, ", "));
  if (shape.size() == 1) dims += ",";
  std::string dict = fmt::format("{{'descr': '<f4', 'fortran_order': False, 'shape': ({}), }}", dims);
  // Magic + version + length field + dict + '\n' padded to a multiple of 64.
  const std::size_t prefix = kMagicLen + 2 + 2;
  const std::size_t total = (prefix + dict.size() + 1 + 63) / 64 * 64;
  dict.append(total - prefix - dict.size() - 1, ' ');
  dict.push_back('\n');

  std::string bytes(kMagic, kMagicLen);
  bytes.push_back('\x01');
  bytes.push_back('\x00');
  bytes.push_back(static_cast<char>(dict.size() & 0xff));
  bytes.push_back(static_cast<char>((dict.size() >> 8) & 0xff));
  bytes += dict;
  const std::size_t header_size = bytes.size();
  bytes.resize(header_size + data.size() * 4);
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(data[i]);
    if constexpr (std::endian::native == std::endian::big) bits = byteswap(bits);
    std::memcpy(bytes.data() + header_size + i * 4, &bits, 4);
  }
  detail::atomic_write(path, bytes);
}

void write_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  write_npy(path, tensor.shape(), tensor.data());
}

}  // namespace layerfuse
