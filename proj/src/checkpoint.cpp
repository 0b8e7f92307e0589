#include "checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace fnet {

namespace {

constexpr unsigned char kMagic[4] = {'F', 'N', 'C', 'K'};
constexpr unsigned char kVersion = 1;

// Checkpoints stay far below this; the cap bounds allocations when a header
// field is corrupt.
constexpr std::uint32_t kMaxBlob = 1u << 30;

struct Reader {
  const unsigned char* p;
  std::size_t n;
  std::size_t pos = 0;

  void need(std::size_t count, const char* what) {
    if (pos + count > n)
      throw FormatError(std::string("checkpoint truncated reading ") + what + ": need " +
                            std::to_string(pos + count) + " bytes, have " + std::to_string(n),
                        static_cast<std::int64_t>(n));
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = get_u32le(p + pos);
    pos += 4;
    return v;
  }
  unsigned char u8(const char* what) {
    need(1, what);
    return p[pos++];
  }
  std::string str(std::uint32_t len, const char* what) {
    need(len, what);
    std::string s(reinterpret_cast<const char*>(p + pos), len);
    pos += len;
    return s;
  }
};

}  // namespace

std::vector<unsigned char> encode_fnck(const NetworkParams& net) {
  const auto declared = declare_params(net.arch);
  if (net.tensors.size() != declared.size())
    throw InvalidArgumentError("parameter set does not match the architecture: have " +
                               std::to_string(net.tensors.size()) + " paths, expected " +
                               std::to_string(declared.size()));
  for (const auto& [path, shape] : declared) {
    auto it = net.tensors.find(path);
    if (it == net.tensors.end())
      throw InvalidArgumentError("parameter set is missing path: " + path);
    if (it->second.shape != shape)
      throw InvalidArgumentError("parameter has the wrong shape: " + path);
  }

  std::vector<unsigned char> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  out.push_back(kVersion);
  const std::string arch = net.arch.to_json();
  put_u32le(out, static_cast<std::uint32_t>(arch.size()));
  out.insert(out.end(), arch.begin(), arch.end());
  put_u32le(out, static_cast<std::uint32_t>(net.tensors.size()));
  for (const auto& [path, tensor] : net.tensors) {
    put_u32le(out, static_cast<std::uint32_t>(path.size()));
    out.insert(out.end(), path.begin(), path.end());
    out.push_back(static_cast<unsigned char>(tensor.shape.size()));
    for (int d : tensor.shape) put_u32le(out, static_cast<std::uint32_t>(d));
    for (float v : tensor.data) put_f32le(out, v);
  }
  return out;
}

NetworkParams decode_fnck(const unsigned char* bytes, std::size_t n) {
  Reader r{bytes, n};
  r.need(4, "magic");
  if (std::memcmp(bytes, kMagic, 4) != 0) throw FormatError("bad checkpoint magic", 0);
  r.pos = 4;
  unsigned char version = r.u8("version");
  if (version != kVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);

  std::uint32_t arch_len = r.u32("architecture length");
  if (arch_len > kMaxBlob)
    throw FormatError("architecture blob length is implausible", 5);
  std::string arch_json = r.str(arch_len, "architecture config");

  NetworkParams net;
  net.arch = ArchConfig::from_json(arch_json);
  const auto declared = declare_params(net.arch);

  std::uint32_t count = r.u32("record count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t path_len = r.u32("record path length");
    if (path_len > kMaxBlob) throw FormatError("record path length is implausible");
    std::string path = r.str(path_len, "record path");
    auto decl = declared.find(path);
    if (decl == declared.end())
      throw FormatError("checkpoint has a path the architecture does not declare: " + path);
    if (net.tensors.count(path) != 0)
      throw FormatError("checkpoint repeats path: " + path);
    unsigned char rank = r.u8("record rank");
    std::vector<int> shape(rank);
    std::int64_t numel = 1;
    for (unsigned char d = 0; d < rank; ++d) {
      std::uint32_t extent = r.u32("record dims");
      if (extent == 0 || extent > kMaxBlob) throw FormatError("record extent is implausible");
      shape[d] = static_cast<int>(extent);
      numel *= extent;
    }
    if (shape != decl->second)
      throw FormatError("checkpoint shape disagrees with the architecture at: " + path);
    r.need(static_cast<std::size_t>(numel) * 4, "record payload");
    Tensor<float> t(shape);
    for (std::int64_t k = 0; k < numel; ++k) {
      t.data[static_cast<std::size_t>(k)] = get_f32le(r.p + r.pos);
      r.pos += 4;
    }
    net.tensors.emplace(std::move(path), std::move(t));
  }

  if (net.tensors.size() != declared.size())
    for (const auto& [path, shape] : declared)
      if (net.tensors.count(path) == 0)
        throw FormatError("checkpoint is missing path: " + path);
  if (r.pos != n)
    throw FormatError("checkpoint has " + std::to_string(n - r.pos) + " trailing bytes",
                      static_cast<std::int64_t>(r.pos));
  return net;
}

NetworkParams read_fnck(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint for reading: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path);
  try {
    return decode_fnck(bytes.data(), bytes.size());
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what(), e.offset());
  }
}

void write_fnck(const NetworkParams& net, const std::string& path) {
  const std::vector<unsigned char> bytes = encode_fnck(net);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace fnet
