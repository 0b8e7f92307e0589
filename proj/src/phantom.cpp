#include "phantom.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "threadpool.hpp"

namespace fnet {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kJitterSpan = 0.03;  // radii jitter factor is 1 ± this
}  // namespace

void PhantomParams::validate() const {
  if (grid_size < 8) throw InvalidArgumentError("phantom: grid_size must be >= 8");
  if (!(wall_thickness > 0.0)) throw InvalidArgumentError("phantom: wall_thickness must be > 0");
  for (double r : outer_radii)
    if (!(r - wall_thickness > 0.0))
      throw InvalidArgumentError("phantom: outer radius must exceed the wall thickness");
  if (systole_frame < 4 || systole_frame > 7)
    throw InvalidArgumentError("phantom: systole_frame must lie in [4..7]");
  if (!(min_scale > 0.3 && min_scale < 0.95))
    throw InvalidArgumentError("phantom: min_scale must lie in (0.3, 0.95)");
  // conservative fit check: the longest (jittered) radius must fit from the
  // center to every face at maximal scale, whatever the rotation
  double rmax = *std::max_element(outer_radii.begin(), outer_radii.end()) * (1.0 + kJitterSpan);
  for (double c : center) {
    if (c - rmax < -0.5 || c + rmax > grid_size - 0.5)
      throw InvalidArgumentError("phantom: shell does not fit inside the grid at full scale");
  }
}

double volume_scale(int frame1, const PhantomParams& params) {
  params.validate();
  if (frame1 < 1 || frame1 > kPhantomFrames)
    throw InvalidArgumentError("phantom: frame index out of range");
  double sf = params.systole_frame;
  double m = params.min_scale;
  double f = frame1;
  if (frame1 <= params.systole_frame) {
    double u = (f - 1.0) / (sf - 1.0);  // 0 at end-diastole, 1 at systole
    return m + (1.0 - m) * (1.0 + std::cos(kPi * u)) / 2.0;
  }
  double u = (f - sf) / (kPhantomFrames - sf);
  double top = m + 0.95 * (1.0 - m);  // never returns to the frame-1 maximum
  return m + (top - m) * (1.0 - std::cos(kPi * u)) / 2.0;
}

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 euler_rotation(const std::array<double, 3>& ang) {
  double ca = std::cos(ang[0]), sa = std::sin(ang[0]);
  double cb = std::cos(ang[1]), sb = std::sin(ang[1]);
  double cc = std::cos(ang[2]), sc = std::sin(ang[2]);
  // R = Rz(c) * Ry(b) * Rx(a)
  Mat3 r;
  r[0] = {cc * cb, cc * sb * sa - sc * ca, cc * sb * ca + sc * sa};
  r[1] = {sc * cb, sc * sb * sa + cc * ca, sc * sb * ca - cc * sa};
  r[2] = {-sb, cb * sa, cb * ca};
  return r;
}

}  // namespace

VoxelModel4D generate_phantom(const PhantomParams& params) {
  params.validate();
  int D = params.grid_size;

  Rng jitter = Rng::substream(params.seed, "phantom-jitter");
  std::array<double, 3> radii{};
  std::array<double, 3> center{};
  for (int i = 0; i < 3; ++i)
    radii[static_cast<std::size_t>(i)] =
        params.outer_radii[static_cast<std::size_t>(i)] *
        jitter.uniform(1.0 - kJitterSpan, 1.0 + kJitterSpan);
  for (int i = 0; i < 3; ++i)
    center[static_cast<std::size_t>(i)] =
        params.center[static_cast<std::size_t>(i)] + jitter.uniform(-0.5, 0.5);

  Mat3 r = euler_rotation(params.rotation);
  auto m = VoxelModel4D::zeros(
      {static_cast<std::uint32_t>(D), static_cast<std::uint32_t>(D), static_cast<std::uint32_t>(D),
       kPhantomFrames},
      VoxelKind::binary);

  for (int t = 1; t <= kPhantomFrames; ++t) {
    double s = volume_scale(t, params);
    std::array<double, 3> ro{}, ri{};
    for (int i = 0; i < 3; ++i) {
      auto u = static_cast<std::size_t>(i);
      ro[u] = radii[u] * s;
      ri[u] = (radii[u] - params.wall_thickness) * s;
    }
    float* frame = m.frame(t);
    std::int64_t idx = 0, count = 0;
    for (int z = 0; z < D; ++z)
      for (int y = 0; y < D; ++y)
        for (int x = 0; x < D; ++x, ++idx) {
          double px = x - center[0], py = y - center[1], pz = z - center[2];
          // body coordinates: q = R^T (p - c)
          double qx = r[0][0] * px + r[1][0] * py + r[2][0] * pz;
          double qy = r[0][1] * px + r[1][1] * py + r[2][1] * pz;
          double qz = r[0][2] * px + r[1][2] * py + r[2][2] * pz;
          auto quad = [&](const std::array<double, 3>& rr) {
            double a = qx / rr[0], b = qy / rr[1], c = qz / rr[2];
            return a * a + b * b + c * c;
          };
          if (quad(ro) <= 1.0 && quad(ri) > 1.0) {
            frame[static_cast<std::size_t>(idx)] = 1.0f;
            ++count;
          }
        }
    // canonical index order is x-fastest; the loop above fills z-slowest,
    // which is the same layout
    if (count == 0)
      throw InvalidArgumentError("phantom: degenerate shell, frame " + std::to_string(t) +
                                 " has no voxels");
  }
  return m;
}

PhantomParams random_params(int grid_size, Rng& rng) {
  PhantomParams p;
  p.grid_size = grid_size;
  double half = (grid_size - 1) / 2.0;
  double rbase = grid_size * rng.uniform(0.30, 0.38);
  for (int i = 0; i < 3; ++i)
    p.outer_radii[static_cast<std::size_t>(i)] = rbase * rng.uniform(0.85, 1.0);
  double rmin = *std::min_element(p.outer_radii.begin(), p.outer_radii.end());
  p.wall_thickness = rmin * rng.uniform(0.22, 0.34);
  for (int i = 0; i < 3; ++i)
    p.center[static_cast<std::size_t>(i)] = half + rng.uniform(-1.0, 1.0);
  p.systole_frame = static_cast<int>(rng.range(4, 7));
  p.min_scale = rng.uniform(0.55, 0.80);
  for (int i = 0; i < 3; ++i)
    p.rotation[static_cast<std::size_t>(i)] = rng.uniform(-kPi, kPi);
  p.seed = rng.next_u64();
  // keep the jittered shell inside the grid: shrink radii if the draw was tight
  double rmax = *std::max_element(p.outer_radii.begin(), p.outer_radii.end());
  double room = half - 1.0 - 0.5;
  double need = rmax * (1.0 + kJitterSpan);
  if (need > room) {
    double f = room / need;
    for (auto& r : p.outer_radii) r *= f;
    p.wall_thickness *= f;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

VoxelModel4D augment(const VoxelModel4D& model, std::array<int, 3> shift, double z_rotation,
                     std::int64_t* voxels_lost) {
  if (model.kind != VoxelKind::binary)
    throw InvalidArgumentError("augment: model must be binary");
  std::int64_t before = model.occupied_count();

  const int X = static_cast<int>(model.dims[0]);
  const int Y = static_cast<int>(model.dims[1]);
  const int Z = static_cast<int>(model.dims[2]);
  const int T = static_cast<int>(model.dims[3]);

  VoxelModel4D rotated = model;
  if (z_rotation != 0.0) {
    rotated = VoxelModel4D::zeros(model.dims, VoxelKind::binary);
    double cx = (X - 1) / 2.0, cy = (Y - 1) / 2.0;
    double c = std::cos(z_rotation), s = std::sin(z_rotation);
    for (int t = 0; t < T; ++t)
      for (int z = 0; z < Z; ++z)
        for (int y = 0; y < Y; ++y)
          for (int x = 0; x < X; ++x) {
            // source = inverse rotation of the output coordinate
            double dx = x - cx, dy = y - cy;
            long sx = std::lround(cx + c * dx + s * dy);
            long sy = std::lround(cy - s * dx + c * dy);
            if (sx < 0 || sx >= X || sy < 0 || sy >= Y) continue;
            rotated.at(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y),
                       static_cast<std::uint32_t>(z), static_cast<std::uint32_t>(t)) =
                model.at(static_cast<std::uint32_t>(sx), static_cast<std::uint32_t>(sy),
                         static_cast<std::uint32_t>(z), static_cast<std::uint32_t>(t));
          }
  }

  VoxelModel4D out = rotated;
  if (shift != std::array<int, 3>{0, 0, 0}) {
    out = VoxelModel4D::zeros(model.dims, VoxelKind::binary);
    for (int t = 0; t < T; ++t)
      for (int z = 0; z < Z; ++z) {
        int sz = z - shift[2];
        if (sz < 0 || sz >= Z) continue;
        for (int y = 0; y < Y; ++y) {
          int sy = y - shift[1];
          if (sy < 0 || sy >= Y) continue;
          for (int x = 0; x < X; ++x) {
            int sx = x - shift[0];
            if (sx < 0 || sx >= X) continue;
            out.at(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y),
                   static_cast<std::uint32_t>(z), static_cast<std::uint32_t>(t)) =
                rotated.at(static_cast<std::uint32_t>(sx), static_cast<std::uint32_t>(sy),
                           static_cast<std::uint32_t>(sz), static_cast<std::uint32_t>(t));
          }
        }
      }
  }

  if (voxels_lost) *voxels_lost = before - out.occupied_count();
  return out;
}

// ---------------------------------------------------------------------------
// Dataset building
// ---------------------------------------------------------------------------

std::array<int, 3> split_sizes(int n, const std::array<double, 3>& fractions) {
  double sum = fractions[0] + fractions[1] + fractions[2];
  if (std::fabs(sum - 1.0) > 1e-9)
    throw InvalidArgumentError("split fractions must sum to 1");
  for (double f : fractions)
    if (f < 0.0) throw InvalidArgumentError("split fractions must be >= 0");
  std::array<int, 3> sizes{};
  std::array<double, 3> rem{};
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    auto u = static_cast<std::size_t>(i);
    double exact = fractions[u] * n;
    sizes[u] = static_cast<int>(std::floor(exact));
    rem[u] = exact - sizes[u];
    assigned += sizes[u];
  }
  // largest remainder; ties go to the earlier split
  while (assigned < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (rem[static_cast<std::size_t>(i)] > rem[static_cast<std::size_t>(best)]) best = i;
    sizes[static_cast<std::size_t>(best)] += 1;
    rem[static_cast<std::size_t>(best)] = -1.0;
    ++assigned;
  }
  return sizes;
}

std::map<std::string, int> DatasetManifest::counts() const {
  std::map<std::string, int> c;
  for (const auto& e : entries) ++c[e.split];
  return c;
}

std::vector<const ManifestEntry*> DatasetManifest::split(const std::string& tag) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.split == tag) out.push_back(&e);
  return out;
}

void DatasetManifest::write(const std::string& path) const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : entries)
    j.push_back({{"path", e.path}, {"subject_id", e.subject_id}, {"split", e.split}});
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("short write to " + path);
}

DatasetManifest DatasetManifest::read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": not valid JSON: " + e.what());
  }
  if (!j.is_array()) throw FormatError(path + ": manifest must be a JSON list");
  DatasetManifest m;
  for (const auto& item : j) {
    if (!item.is_object() || !item.contains("path") || !item.contains("subject_id") ||
        !item.contains("split"))
      throw FormatError(path + ": manifest entries need path, subject_id and split");
    ManifestEntry e;
    e.path = item.at("path").get<std::string>();
    e.subject_id = item.at("subject_id").get<std::string>();
    e.split = item.at("split").get<std::string>();
    if (e.split != "train" && e.split != "val" && e.split != "test")
      throw FormatError(path + ": unknown split tag '" + e.split + "'");
    m.entries.push_back(std::move(e));
  }
  return m;
}

void DatasetManifest::validate(const std::string& base_dir) const {
  std::vector<std::string> ids;
  for (const auto& e : entries) ids.push_back(e.subject_id);
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw InvalidArgumentError("manifest: duplicate subject id");
  for (const auto& e : entries)
    (void)read_vox4((std::filesystem::path(base_dir) / e.path).string());
}

namespace {

std::string zero_pad(int v, int width) {
  std::string s = std::to_string(v);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

}  // namespace

DatasetManifest build_dataset(const BuildDatasetOptions& opt, const std::string& output_dir) {
  if (opt.n_subjects < 3) throw InvalidArgumentError("build_dataset: need at least 3 subjects");
  if (opt.augment_factor < 1)
    throw InvalidArgumentError("build_dataset: augment_factor must be >= 1");
  if (opt.max_shift < 0) throw InvalidArgumentError("build_dataset: max_shift must be >= 0");
  auto sizes = split_sizes(opt.n_subjects, opt.split_fractions);

  std::error_code ec;
  std::filesystem::create_directories(output_dir, ec);
  if (ec) throw IoError("cannot create " + output_dir + ": " + ec.message());

  std::vector<std::vector<ManifestEntry>> per_subject(
      static_cast<std::size_t>(opt.n_subjects));

  global_pool().for_each_index(opt.n_subjects, [&](std::int64_t i) {
    std::uint64_t subject_seed = opt.seed + static_cast<std::uint64_t>(i);
    const char* split = (i < sizes[0]) ? "train" : (i < sizes[0] + sizes[1]) ? "val" : "test";
    std::string sid = "subj_" + zero_pad(static_cast<int>(i), 3);

    Rng rng(subject_seed);
    PhantomParams params = random_params(opt.grid_size, rng);
    params.seed = subject_seed;
    VoxelModel4D model = generate_phantom(params);

    auto& list = per_subject[static_cast<std::size_t>(i)];
    std::string fname = sid + ".vox4";
    write_vox4(model, (std::filesystem::path(output_dir) / fname).string());
    list.push_back({fname, sid, split});

    {
      nlohmann::json meta{{"subject_id", sid},
                          {"seed", subject_seed},
                          {"grid_size", params.grid_size},
                          {"outer_radii", params.outer_radii},
                          {"wall_thickness", params.wall_thickness},
                          {"center", params.center},
                          {"systole_frame", params.systole_frame},
                          {"min_scale", params.min_scale},
                          {"rotation", params.rotation}};
      std::ofstream ms((std::filesystem::path(output_dir) / (sid + ".meta.json")).string(),
                       std::ios::trunc);
      ms << meta.dump(2) << "\n";
    }

    if (std::string(split) != "train") return;
    for (int j = 1; j < opt.augment_factor; ++j) {
      Rng ar = Rng::substream(subject_seed, "augment-" + std::to_string(j));
      std::array<int, 3> shift{};
      for (auto& s : shift)
        s = static_cast<int>(ar.range(-opt.max_shift, opt.max_shift));
      double angle = ar.uniform(-opt.max_rotation, opt.max_rotation);
      if (opt.rotation_quarter_turns)
        angle += static_cast<double>(ar.range(0, 3)) * (kPi / 2.0);
      VoxelModel4D aug = augment(model, shift, angle);
      std::string aid = sid + "_a" + zero_pad(j, 2);
      std::string afile = aid + ".vox4";
      write_vox4(aug, (std::filesystem::path(output_dir) / afile).string());
      list.push_back({afile, aid, split});
    }
  });

  DatasetManifest manifest;
  for (auto& list : per_subject)
    manifest.entries.insert(manifest.entries.end(), list.begin(), list.end());
  manifest.write((std::filesystem::path(output_dir) / "manifest.json").string());
  return manifest;
}

}  // namespace fnet
