#include "voxel.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>

namespace fnet {

VoxelModel4D VoxelModel4D::zeros(std::array<std::uint32_t, 4> dims, VoxelKind kind) {
  VoxelModel4D m;
  m.dims = dims;
  m.kind = kind;
  std::int64_t n = static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2] * dims[3];
  m.data.assign(static_cast<std::size_t>(n), 0.0f);
  return m;
}

std::int64_t VoxelModel4D::occupied_count(int frame1) const {
  const float* f = frame(frame1);
  std::int64_t n = frame_size(), c = 0;
  for (std::int64_t i = 0; i < n; ++i) c += (f[i] > 0.5f) ? 1 : 0;
  return c;
}

std::int64_t VoxelModel4D::occupied_count() const {
  std::int64_t c = 0;
  for (int t = 1; t <= frame_count(); ++t) c += occupied_count(t);
  return c;
}

void VoxelModel4D::validate() const {
  for (int i = 0; i < 4; ++i)
    if (dims[i] == 0) throw DimensionError("voxel model has a zero extent");
  if (static_cast<std::int64_t>(data.size()) != size())
    throw DimensionError("voxel payload length does not match dims");
  if (kind == VoxelKind::binary) {
    for (float v : data)
      if (v != 0.0f && v != 1.0f)
        throw InvalidArgumentError("binary model contains a value other than 0/1");
  } else {
    for (float v : data)
      if (!(v >= 0.0f && v <= 1.0f))
        throw InvalidArgumentError("probabilistic model contains a value outside [0,1]");
  }
}

void InterpolationTask::validate() const {
  if (total_frames < 1) throw InvalidArgumentError("task has no frames");
  std::vector<char> seen(static_cast<std::size_t>(total_frames) + 1, 0);
  auto mark = [&](const std::vector<int>& v) {
    int prev = 0;
    for (int f : v) {
      if (f < 1 || f > total_frames) throw InvalidArgumentError("frame index out of range");
      if (f <= prev) throw InvalidArgumentError("frame list not sorted/unique");
      if (seen[static_cast<std::size_t>(f)]) throw InvalidArgumentError("frame in both lists");
      seen[static_cast<std::size_t>(f)] = 1;
      prev = f;
    }
  };
  mark(input_frames);
  mark(target_frames);
  for (int f = 1; f <= total_frames; ++f)
    if (!seen[static_cast<std::size_t>(f)])
      throw InvalidArgumentError("frame " + std::to_string(f) + " in neither list");
  if (input_frames.empty() || input_frames.front() != 1)
    throw InvalidArgumentError("input frames must start at frame 1 (end-diastole)");
}

AxisPermutation AxisPermutation::inverse() const {
  AxisPermutation inv;
  for (int i = 0; i < 4; ++i) inv.perm[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = i;
  return inv;
}

void AxisPermutation::validate() const {
  std::array<bool, 4> seen{false, false, false, false};
  for (int v : perm) {
    if (v < 0 || v > 3 || seen[static_cast<std::size_t>(v)])
      throw InvalidArgumentError("axis permutation is not a bijection over {0,1,2,3}");
    seen[static_cast<std::size_t>(v)] = true;
  }
}

std::pair<VoxelModel4D, InterpolationTask> subsample_frames(const VoxelModel4D& model,
                                                            int interval) {
  int total = model.frame_count();
  if (total < 2) throw InvalidArgumentError("subsampling needs at least 2 frames");
  if (interval < 1 || interval > 3)
    throw InvalidArgumentError("frame interval must be 1, 2 or 3");

  InterpolationTask task;
  task.total_frames = total;
  int step = interval + 1;
  std::vector<char> is_input(static_cast<std::size_t>(total) + 1, 0);
  for (int f = 1; f <= total; f += step) {
    task.input_frames.push_back(f);
    is_input[static_cast<std::size_t>(f)] = 1;
  }
  if (task.input_frames.size() < 2)
    throw InvalidArgumentError("interval " + std::to_string(interval) +
                               " leaves fewer than 2 input frames");
  for (int f = 1; f <= total; ++f)
    if (!is_input[static_cast<std::size_t>(f)]) task.target_frames.push_back(f);

  VoxelModel4D lfr;
  lfr.dims = model.dims;
  lfr.dims[3] = static_cast<std::uint32_t>(task.input_frames.size());
  lfr.kind = model.kind;
  lfr.data.resize(static_cast<std::size_t>(lfr.size()));
  std::int64_t fs = model.frame_size();
  for (std::size_t i = 0; i < task.input_frames.size(); ++i) {
    const float* src = model.frame(task.input_frames[i]);
    std::copy(src, src + fs, lfr.data.begin() + static_cast<std::int64_t>(i) * fs);
  }
  return {std::move(lfr), std::move(task)};
}

VoxelModel4D transpose(const VoxelModel4D& model, const AxisPermutation& p) {
  p.validate();
  VoxelModel4D out;
  out.kind = model.kind;
  for (int i = 0; i < 4; ++i)
    out.dims[static_cast<std::size_t>(i)] = model.dims[static_cast<std::size_t>(p.perm[static_cast<std::size_t>(i)])];
  out.data.resize(static_cast<std::size_t>(model.size()));

  // out[c0,c1,c2,c3] = in[old coords], where new axis i carries old axis perm[i]
  std::array<std::uint32_t, 4> oc{};  // old coordinates
  std::array<std::uint32_t, 4> nd = out.dims;
  std::int64_t idx = 0;
  std::array<std::uint32_t, 4> nc{};
  for (nc[3] = 0; nc[3] < nd[3]; ++nc[3])
    for (nc[2] = 0; nc[2] < nd[2]; ++nc[2])
      for (nc[1] = 0; nc[1] < nd[1]; ++nc[1])
        for (nc[0] = 0; nc[0] < nd[0]; ++nc[0]) {
          for (int i = 0; i < 4; ++i) oc[static_cast<std::size_t>(p.perm[static_cast<std::size_t>(i)])] = nc[static_cast<std::size_t>(i)];
          out.data[static_cast<std::size_t>(idx++)] = model.at(oc[0], oc[1], oc[2], oc[3]);
        }
  return out;
}

namespace {

void require_binary_pair(const VoxelModel4D& a, const VoxelModel4D& b, std::int64_t n_a,
                         std::int64_t n_b) {
  if (n_a != n_b) throw DimensionError("dice: operands have different shapes");
  if (a.kind != VoxelKind::binary || b.kind != VoxelKind::binary)
    throw InvalidArgumentError("dice: operands must be binary");
}

double dice_span(const float* a, const float* b, std::int64_t n) {
  std::int64_t inter = 0, na = 0, nb = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    bool va = a[i] > 0.5f, vb = b[i] > 0.5f;
    na += va;
    nb += vb;
    inter += (va && vb);
  }
  if (na + nb == 0) return 1.0;  // both empty: defined as perfect agreement
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

}  // namespace

double dice_coefficient(const VoxelModel4D& a, const VoxelModel4D& b) {
  if (a.dims != b.dims) throw DimensionError("dice: operands have different dims");
  require_binary_pair(a, b, a.size(), b.size());
  return dice_span(a.data.data(), b.data.data(), a.size());
}

double dice_frames(const VoxelModel4D& a, int frame_a, const VoxelModel4D& b, int frame_b) {
  if (a.dims[0] != b.dims[0] || a.dims[1] != b.dims[1] || a.dims[2] != b.dims[2])
    throw DimensionError("dice: frames have different spatial dims");
  require_binary_pair(a, b, a.frame_size(), b.frame_size());
  return dice_span(a.frame(frame_a), b.frame(frame_b), a.frame_size());
}

VoxelModel4D binarize(const VoxelModel4D& m, float threshold) {
  VoxelModel4D out = m;
  out.kind = VoxelKind::binary;
  for (float& v : out.data) v = (v >= threshold) ? 1.0f : 0.0f;
  return out;
}

std::int64_t mismatch_count(const VoxelModel4D& a, int frame_a, const VoxelModel4D& b,
                            int frame_b) {
  if (a.frame_size() != b.frame_size())
    throw DimensionError("mismatch_count: frames have different sizes");
  const float* pa = a.frame(frame_a);
  const float* pb = b.frame(frame_b);
  std::int64_t n = a.frame_size(), c = 0;
  for (std::int64_t i = 0; i < n; ++i) c += ((pa[i] > 0.5f) != (pb[i] > 0.5f)) ? 1 : 0;
  return c;
}

// ---------------------------------------------------------------------------
// VOX4 codec
// ---------------------------------------------------------------------------

static constexpr char kVoxMagic[4] = {'V', 'O', 'X', '4'};
static constexpr std::size_t kVoxHeaderSize = 24;

std::vector<unsigned char> encode_vox4(const VoxelModel4D& model) {
  model.validate();
  std::vector<unsigned char> out;
  std::int64_t n = model.size();
  out.reserve(kVoxHeaderSize +
              static_cast<std::size_t>(n) * (model.kind == VoxelKind::binary ? 1 : 4));
  out.insert(out.end(), kVoxMagic, kVoxMagic + 4);
  out.push_back(1);  // version
  out.push_back(static_cast<unsigned char>(model.kind));
  out.push_back(0);
  out.push_back(0);
  for (int i = 0; i < 4; ++i) put_u32le(out, model.dims[static_cast<std::size_t>(i)]);
  if (model.kind == VoxelKind::binary) {
    for (std::int64_t i = 0; i < n; ++i)
      out.push_back(model.data[static_cast<std::size_t>(i)] != 0.0f ? 1 : 0);
  } else {
    for (std::int64_t i = 0; i < n; ++i) put_f32le(out, model.data[static_cast<std::size_t>(i)]);
  }
  return out;
}

VoxelModel4D decode_vox4(const unsigned char* bytes, std::size_t n) {
  if (n < kVoxHeaderSize)
    throw FormatError("VOX4: file shorter than the 24-byte header", static_cast<std::int64_t>(n));
  if (std::memcmp(bytes, kVoxMagic, 4) != 0) throw FormatError("VOX4: bad magic", 0);
  if (bytes[4] != 1)
    throw FormatError("VOX4: unsupported version " + std::to_string(bytes[4]), 4);
  if (bytes[5] > 1) throw FormatError("VOX4: unknown kind " + std::to_string(bytes[5]), 5);
  if (bytes[6] != 0 || bytes[7] != 0) throw FormatError("VOX4: reserved bytes must be zero", 6);

  VoxelModel4D m;
  m.kind = static_cast<VoxelKind>(bytes[5]);
  std::uint64_t total = 1;
  for (int i = 0; i < 4; ++i) {
    std::uint32_t d = get_u32le(bytes + 8 + 4 * i);
    if (d == 0) throw FormatError("VOX4: zero extent in dims", 8 + 4 * i);
    m.dims[static_cast<std::size_t>(i)] = d;
    total *= d;
    if (total > (1ull << 31))
      throw FormatError("VOX4: dims overflow a 2^31 element budget", 8 + 4 * i);
  }
  std::size_t elem = (m.kind == VoxelKind::binary) ? 1 : 4;
  std::uint64_t want = total * elem;
  if (n - kVoxHeaderSize != want)
    throw FormatError("VOX4: payload has " + std::to_string(n - kVoxHeaderSize) +
                          " bytes, expected " + std::to_string(want),
                      static_cast<std::int64_t>(n));

  m.data.resize(static_cast<std::size_t>(total));
  const unsigned char* p = bytes + kVoxHeaderSize;
  if (m.kind == VoxelKind::binary) {
    for (std::uint64_t i = 0; i < total; ++i) {
      if (p[i] > 1)
        throw FormatError("VOX4: binary payload byte not 0/1",
                          static_cast<std::int64_t>(kVoxHeaderSize + i));
      m.data[static_cast<std::size_t>(i)] = static_cast<float>(p[i]);
    }
  } else {
    for (std::uint64_t i = 0; i < total; ++i) {
      float v = get_f32le(p + 4 * i);
      if (!(v >= 0.0f && v <= 1.0f))
        throw FormatError("VOX4: probabilistic value outside [0,1]",
                          static_cast<std::int64_t>(kVoxHeaderSize + 4 * i));
      m.data[static_cast<std::size_t>(i)] = v;
    }
  }
  return m;
}

VoxelModel4D read_vox4(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  try {
    return decode_vox4(bytes.data(), bytes.size());
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void write_vox4(const VoxelModel4D& model, const std::string& path) {
  std::vector<unsigned char> bytes = encode_vox4(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path);
}

}  // namespace fnet
