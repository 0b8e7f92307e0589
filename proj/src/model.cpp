#include "model.hpp"

#include <cmath>
#include <utility>

#include "json.hpp"

namespace fnet {

namespace {

// Axis bookkeeping for the three spatiotemporal encoders. Starting from the
// network input [T, X, Y, Z], `to_role` moves one spatial axis into the
// channel slot (z for xy, x for yz, y for zx) so the residual blocks convolve
// over the remaining two spatial axes plus time. `align` brings a block
// output back to [T, sp0, sp1, sp2] with the spatial axes in canonical
// (X, Y, Z) order; `pool_axis` is where the channel-role axis lands there,
// still at full extent until the cumulative-stride average pool shrinks it.
struct StRole {
  const char* name;
  std::array<int, 4> to_role;
  std::array<int, 4> align;
  int pool_axis;
};

constexpr StRole kStRoles[3] = {
    {"xy", {3, 1, 2, 0}, {3, 1, 2, 0}, 3},
    {"yz", {1, 2, 3, 0}, {3, 0, 1, 2}, 1},
    {"zx", {2, 3, 1, 0}, {3, 2, 0, 1}, 2},
};

std::string level_path(const std::string& base, int level) {
  return base + "/l" + std::to_string(level);
}

// Levels whose fused feature somebody consumes: the deepest always feeds the
// bottleneck, the rest only exist for decoder skip connections.
std::vector<bool> fused_levels_needed(const ArchConfig& cfg) {
  std::vector<bool> need(static_cast<std::size_t>(cfg.depth), cfg.has_decoder_skips());
  need[static_cast<std::size_t>(cfg.depth) - 1] = true;
  return need;
}

void declare_conv(std::map<std::string, std::vector<int>>& out, const std::string& prefix,
                  int in_ch, int out_ch, std::array<int, 3> kernel) {
  out[prefix + "/w"] = {out_ch, in_ch, kernel[0], kernel[1], kernel[2]};
  out[prefix + "/b"] = {out_ch};
}

void declare_dense(std::map<std::string, std::vector<int>>& out, const std::string& prefix,
                   int in_dim, int out_dim) {
  out[prefix + "/w"] = {out_dim, in_dim};
  out[prefix + "/b"] = {out_dim};
}

void declare_enc_block(std::map<std::string, std::vector<int>>& out, const ArchConfig& cfg,
                       const std::string& prefix, int in_ch, int out_ch) {
  declare_conv(out, prefix + "/main1", in_ch, out_ch, {3, 3, 3});
  declare_conv(out, prefix + "/main2", out_ch, out_ch, {3, 3, 3});
  if (cfg.has_residual_skip()) declare_conv(out, prefix + "/skip", in_ch, out_ch, {3, 3, 3});
}

}  // namespace

const char* to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_skip: return "no_skip";
    case Variant::no_residual: return "no_residual";
    case Variant::no_st_encoders: return "no_st_encoders";
    case Variant::baseline: return "baseline";
  }
  throw InvalidArgumentError("unknown variant value");
}

Variant variant_from_string(const std::string& name) {
  for (Variant v : all_variants())
    if (name == to_string(v)) return v;
  throw InvalidArgumentError("unknown variant: " + name);
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v{Variant::full, Variant::no_skip, Variant::no_residual,
                                      Variant::no_st_encoders, Variant::baseline};
  return v;
}

bool ArchConfig::has_st_encoders() const {
  return variant != Variant::no_st_encoders && variant != Variant::baseline;
}

bool ArchConfig::has_decoder_skips() const {
  return variant != Variant::no_skip && variant != Variant::baseline;
}

bool ArchConfig::has_residual_skip() const {
  return variant != Variant::no_residual && variant != Variant::baseline;
}

void ArchConfig::validate() const {
  if (grid_size < 2) throw InvalidArgumentError("grid_size must be at least 2");
  if (depth < 1) throw InvalidArgumentError("depth must be positive");
  if (base_channels < 1) throw InvalidArgumentError("base_channels must be positive");
  if (input_frames < 1) throw InvalidArgumentError("input_frames must be positive");
  if (output_frames <= input_frames)
    throw InvalidArgumentError("output_frames must exceed input_frames");
  int stride_total = 1 << depth;
  if (grid_size % stride_total != 0 || grid_size / stride_total < 1)
    throw InvalidArgumentError("grid_size must be divisible by 2^depth with a nonzero quotient");
  for (int d : latent_dims)
    if (d < 1) throw InvalidArgumentError("latent dimensions must be positive");
  if (latent_dims[0] < latent_dims[1] || latent_dims[1] < latent_dims[2])
    throw InvalidArgumentError("latent dimensions must not increase toward the top level");
}

std::string ArchConfig::to_json() const {
  nlohmann::json j;
  j["grid_size"] = grid_size;
  j["input_frames"] = input_frames;
  j["output_frames"] = output_frames;
  j["depth"] = depth;
  j["base_channels"] = base_channels;
  j["latent_dims"] = latent_dims;
  j["variant"] = to_string(variant);
  return j.dump();
}

ArchConfig ArchConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("architecture config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("architecture config must be a JSON object");
  static const char* keys[] = {"grid_size",     "input_frames", "output_frames", "depth",
                               "base_channels", "latent_dims",  "variant"};
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : keys) known = known || item.key() == k;
    if (!known) throw FormatError("architecture config has unknown key: " + item.key());
  }
  ArchConfig cfg;
  try {
    cfg.grid_size = j.at("grid_size").get<int>();
    cfg.input_frames = j.at("input_frames").get<int>();
    cfg.output_frames = j.at("output_frames").get<int>();
    cfg.depth = j.at("depth").get<int>();
    cfg.base_channels = j.at("base_channels").get<int>();
    auto dims = j.at("latent_dims").get<std::vector<int>>();
    if (dims.size() != 3) throw FormatError("latent_dims must have three entries");
    std::copy(dims.begin(), dims.end(), cfg.latent_dims.begin());
    cfg.variant = variant_from_string(j.at("variant").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("architecture config field error: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::map<std::string, std::vector<int>> declare_params(const ArchConfig& cfg) {
  cfg.validate();
  std::map<std::string, std::vector<int>> out;
  const int D = cfg.grid_size;
  const int L = cfg.depth;
  const auto fused_needed = fused_levels_needed(cfg);

  for (int l = 1; l <= L; ++l) {
    int in_ch = l == 1 ? cfg.input_frames : cfg.level_channels(l - 1);
    declare_enc_block(out, cfg, level_path("enc_sp", l), in_ch, cfg.level_channels(l));
  }

  if (cfg.has_st_encoders()) {
    for (const StRole& role : kStRoles) {
      std::string base = std::string("st_") + role.name;
      for (int l = 1; l <= L; ++l) {
        declare_enc_block(out, cfg, level_path(base, l), D, D);
        if (fused_needed[static_cast<std::size_t>(l) - 1])
          declare_conv(out, level_path(base, l) + "/proj", cfg.input_frames,
                       cfg.level_channels(l), {1, 1, 1});
      }
    }
    for (int l = 1; l <= L; ++l) {
      if (!fused_needed[static_cast<std::size_t>(l) - 1]) continue;
      int c = cfg.level_channels(l);
      declare_conv(out, level_path("fuse", l) + "/gate", 4 * c, 4 * c, {3, 3, 3});
      declare_conv(out, level_path("fuse", l) + "/out", 4 * c, c, {3, 3, 1});
    }
  }

  const int n0 = static_cast<int>(cfg.deepest_flat_size());
  int prev = n0;
  for (int i = 1; i <= 3; ++i) {
    int dim = cfg.latent_dims[static_cast<std::size_t>(i) - 1];
    std::string base = "lvae/up" + std::to_string(i);
    declare_dense(out, base + "/h", prev, 2 * dim);
    declare_dense(out, base + "/mu", 2 * dim, dim);
    declare_dense(out, base + "/lv", 2 * dim, dim);
    prev = 2 * dim;
  }
  for (int i = 2; i >= 1; --i) {
    int dim = cfg.latent_dims[static_cast<std::size_t>(i) - 1];
    int above = cfg.latent_dims[static_cast<std::size_t>(i)];
    std::string base = "lvae/prior" + std::to_string(i);
    declare_dense(out, base + "/h", above, 2 * dim);
    declare_dense(out, base + "/mu", 2 * dim, dim);
    declare_dense(out, base + "/lv", 2 * dim, dim);
  }
  declare_dense(out, "lvae/dec/h", cfg.latent_dims[0], 2 * cfg.latent_dims[0]);
  declare_dense(out, "lvae/dec/out", 2 * cfg.latent_dims[0], n0);

  for (int l = L; l >= 1; --l) {
    int in_ch = cfg.level_channels(l);
    if (l >= 2 && cfg.has_decoder_skips()) in_ch += cfg.level_channels(l - 1);
    int out_ch = l >= 2 ? cfg.level_channels(l - 1) : cfg.base_channels;
    declare_conv(out, level_path("dec", l) + "/conv", in_ch, out_ch, {3, 3, 3});
  }
  declare_conv(out, "dec/out", cfg.base_channels, cfg.output_frames, {1, 1, 1});
  return out;
}

NetworkParams make_variant(const ArchConfig& cfg) {
  NetworkParams net;
  net.arch = cfg;
  for (const auto& [path, shape] : declare_params(cfg))
    net.tensors.emplace(path, Tensor<float>(shape));
  return net;
}

NetworkParams init_params(const ArchConfig& cfg, std::uint64_t seed) {
  NetworkParams net = make_variant(cfg);
  Rng rng = Rng::substream(seed, "init");
  for (auto& [path, tensor] : net.tensors) {
    if (path.size() >= 2 && path.compare(path.size() - 2, 2, "/b") == 0) continue;
    std::int64_t fan_in = 1;
    for (std::size_t i = 1; i < tensor.shape.size(); ++i) fan_in *= tensor.shape[i];
    float sd = std::sqrt(2.0f / static_cast<float>(fan_in));
    for (float& v : tensor.data) v = sd * static_cast<float>(rng.normal());
  }
  return net;
}

std::int64_t param_count(const ArchConfig& cfg) {
  std::int64_t n = 0;
  for (const auto& [path, shape] : declare_params(cfg)) n += Tensor<float>::numel_of(shape);
  return n;
}

namespace {

template <typename T>
struct Builder {
  Graph<T>& g;
  const ArchConfig& cfg;
  const ParamMap<T>& params;
  NetworkBuild<T>& nb;
  bool need_grad;

  int p(const std::string& path) {
    auto cached = nb.param_nodes.find(path);
    if (cached != nb.param_nodes.end()) return cached->second;
    auto it = params.find(path);
    if (it == params.end()) throw InvalidArgumentError("missing parameter: " + path);
    int id = g.leaf(it->second, need_grad);
    nb.param_nodes.emplace(path, id);
    return id;
  }

  int conv(int x, const std::string& prefix, const ConvSpec& spec) {
    return g.conv3d(x, p(prefix + "/w"), p(prefix + "/b"), spec);
  }

  int conv_block(int x, const std::string& prefix, const ConvSpec& spec) {
    return g.relu(conv(x, prefix, spec));
  }

  int enc_block(int x, const std::string& prefix, int in_ch, int out_ch,
                std::array<int, 3> stride) {
    ConvSpec strided{in_ch, out_ch, {3, 3, 3}, stride, {1, 1, 1}};
    ConvSpec plain{out_ch, out_ch, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}};
    int main = conv_block(conv_block(x, prefix + "/main1", strided), prefix + "/main2", plain);
    if (!cfg.has_residual_skip()) return main;
    return g.add(main, conv_block(x, prefix + "/skip", strided));
  }

  void encode_spatial(int x) {
    for (int l = 1; l <= cfg.depth; ++l) {
      int in_ch = l == 1 ? cfg.input_frames : cfg.level_channels(l - 1);
      x = enc_block(x, level_path("enc_sp", l), in_ch, cfg.level_channels(l), {2, 2, 2});
      nb.spatial[static_cast<std::size_t>(l) - 1] = x;
    }
  }

  void encode_st(int input, const StRole& role, const std::vector<bool>& aligned_needed,
                 std::vector<int>& aligned) {
    std::string base = std::string("st_") + role.name;
    int x = g.permute4(input, role.to_role);
    for (int l = 1; l <= cfg.depth; ++l) {
      x = enc_block(x, level_path(base, l), cfg.grid_size, cfg.grid_size, {2, 2, 1});
      ++nb.st_block_calls;
      if (!aligned_needed[static_cast<std::size_t>(l) - 1]) continue;
      int a = g.permute4(x, role.align);
      std::array<int, 3> factor{1, 1, 1};
      factor[static_cast<std::size_t>(role.pool_axis) - 1] = 1 << l;
      a = g.avg_pool(a, factor);
      ConvSpec proj{cfg.input_frames, cfg.level_channels(l), {1, 1, 1}, {1, 1, 1}, {0, 0, 0}};
      aligned[static_cast<std::size_t>(l) - 1] = conv(a, level_path(base, l) + "/proj", proj);
    }
  }

  int fuse(int level, int sp, int xy, int yz, int zx) {
    int c = cfg.level_channels(level);
    int cat = g.concat0({sp, xy, yz, zx});
    ConvSpec gate{4 * c, 4 * c, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}};
    int wmap = g.sigmoid(conv(cat, level_path("fuse", level) + "/gate", gate));
    nb.fuse_gate[static_cast<std::size_t>(level) - 1] = wmap;
    ConvSpec mix{4 * c, c, {3, 3, 1}, {1, 1, 1}, {1, 1, 0}};
    return conv_block(g.mul(cat, wmap), level_path("fuse", level) + "/out", mix);
  }

  std::pair<int, int> precision_merge(int mu_a, int lv_a, int mu_b, int lv_b, int dim) {
    int prec_a = g.exp_(g.scale(lv_a, T(-1)));
    int prec_b = g.exp_(g.scale(lv_b, T(-1)));
    int ones = g.leaf({dim}, std::vector<T>(static_cast<std::size_t>(dim), T(1)), false);
    int var = g.div(ones, g.add(prec_a, prec_b));
    int mu = g.mul(var, g.add(g.mul(mu_a, prec_a), g.mul(mu_b, prec_b)));
    int lv = g.clamp(g.log_(var), T(-10), T(10));
    return {mu, lv};
  }

  int dense_head(int x, const std::string& prefix) {
    return g.dense(x, p(prefix + "/w"), p(prefix + "/b"));
  }

  int lvae(int deepest, bool train_mode, Rng* sampler) {
    std::vector<int> deep_shape = g.shape(deepest);
    int n0 = static_cast<int>(Tensor<T>::numel_of(deep_shape));
    int d = g.reshape(deepest, {n0});

    std::array<int, 3> bu_mu{}, bu_lv{};
    for (int i = 1; i <= 3; ++i) {
      std::string base = "lvae/up" + std::to_string(i);
      int h = g.relu(dense_head(d, base + "/h"));
      bu_mu[static_cast<std::size_t>(i) - 1] = dense_head(h, base + "/mu");
      bu_lv[static_cast<std::size_t>(i) - 1] =
          g.clamp(dense_head(h, base + "/lv"), T(-10), T(10));
      d = h;
    }

    int prior_mu = -1, prior_lv = -1;
    for (int level = 3; level >= 1; --level) {
      std::size_t li = static_cast<std::size_t>(level) - 1;
      int dim = cfg.latent_dims[li];
      if (level == 3) {
        std::vector<T> zero(static_cast<std::size_t>(dim), T(0));
        prior_mu = g.leaf({dim}, zero, false);
        prior_lv = g.leaf({dim}, zero, false);
      }
      auto [post_mu, post_lv] = precision_merge(bu_mu[li], bu_lv[li], prior_mu, prior_lv, dim);
      int zed;
      if (train_mode) {
        std::vector<T> eps(static_cast<std::size_t>(dim));
        for (T& e : eps) e = static_cast<T>(sampler->normal());
        int eps_leaf = g.leaf({dim}, eps, false);
        zed = g.add(post_mu, g.mul(g.exp_(g.scale(post_lv, T(0.5))), eps_leaf));
      } else {
        zed = post_mu;
      }
      nb.post_mu[li] = post_mu;
      nb.post_logvar[li] = post_lv;
      nb.prior_mu[li] = prior_mu;
      nb.prior_logvar[li] = prior_lv;
      nb.z[li] = zed;
      if (level > 1) {
        std::string base = "lvae/prior" + std::to_string(level - 1);
        int h = g.relu(dense_head(zed, base + "/h"));
        prior_mu = dense_head(h, base + "/mu");
        prior_lv = g.clamp(dense_head(h, base + "/lv"), T(-10), T(10));
      }
    }

    int h = g.relu(dense_head(nb.z[0], "lvae/dec/h"));
    return g.reshape(dense_head(h, "lvae/dec/out"), deep_shape);
  }

  void decode(int x) {
    nb.taps.emplace("lvae/decode", x);
    for (int l = cfg.depth; l >= 1; --l) {
      x = g.upsample2(x, {true, true, true});
      nb.taps.emplace(level_path("dec", l) + "/up", x);
      int in_ch = cfg.level_channels(l);
      if (l >= 2 && cfg.has_decoder_skips()) {
        x = g.concat0({x, nb.fused[static_cast<std::size_t>(l) - 2]});
        in_ch += cfg.level_channels(l - 1);
      }
      int out_ch = l >= 2 ? cfg.level_channels(l - 1) : cfg.base_channels;
      ConvSpec spec{in_ch, out_ch, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}};
      x = conv_block(x, level_path("dec", l) + "/conv", spec);
      nb.taps.emplace(level_path("dec", l) + "/out", x);
    }
    ConvSpec head{cfg.base_channels, cfg.output_frames, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}};
    int pre = conv(x, "dec/out", head);
    nb.taps.emplace("dec/head_pre", pre);
    nb.output = g.sigmoid(pre);
  }
};

}  // namespace

template <typename T>
LatentStateT<T> NetworkBuild<T>::latents(const Graph<T>& g) const {
  LatentStateT<T> s;
  for (std::size_t i = 0; i < 3; ++i) {
    s.levels[i].post_mu = g.value(post_mu[i]);
    s.levels[i].post_logvar = g.value(post_logvar[i]);
    s.levels[i].prior_mu = g.value(prior_mu[i]);
    s.levels[i].prior_logvar = g.value(prior_logvar[i]);
    s.levels[i].z = g.value(z[i]);
  }
  return s;
}

template <typename T>
NetworkBuild<T> build_forward(Graph<T>& g, const ArchConfig& cfg, const ParamMap<T>& params,
                              const Tensor<T>& input, bool train_mode, Rng* sampler,
                              bool params_need_grad) {
  cfg.validate();
  const int D = cfg.grid_size;
  std::vector<int> want{cfg.input_frames, D, D, D};
  if (input.shape != want)
    throw DimensionError("network input must be [input_frames, D, D, D]");
  if (train_mode && sampler == nullptr)
    throw InvalidArgumentError("train mode requires a latent sampler");

  NetworkBuild<T> nb;
  std::size_t depth = static_cast<std::size_t>(cfg.depth);
  nb.spatial.assign(depth, -1);
  nb.st_xy.assign(depth, -1);
  nb.st_yz.assign(depth, -1);
  nb.st_zx.assign(depth, -1);
  nb.fuse_gate.assign(depth, -1);
  nb.fused.assign(depth, -1);

  Builder<T> b{g, cfg, params, nb, params_need_grad};
  nb.input = g.leaf(input, false);

  b.encode_spatial(nb.input);

  if (cfg.has_st_encoders()) {
    const auto need = fused_levels_needed(cfg);
    b.encode_st(nb.input, kStRoles[0], need, nb.st_xy);
    b.encode_st(nb.input, kStRoles[1], need, nb.st_yz);
    b.encode_st(nb.input, kStRoles[2], need, nb.st_zx);
    for (int l = 1; l <= cfg.depth; ++l) {
      std::size_t li = static_cast<std::size_t>(l) - 1;
      if (!need[li]) continue;
      nb.fused[li] = b.fuse(l, nb.spatial[li], nb.st_xy[li], nb.st_yz[li], nb.st_zx[li]);
    }
  } else {
    nb.fused = nb.spatial;
  }

  int decoded = b.lvae(nb.fused[depth - 1], train_mode, sampler);
  b.decode(decoded);
  return nb;
}

template <typename T>
Tensor<T> frames_to_tensor(const VoxelModel4D& m) {
  m.validate();
  const int X = static_cast<int>(m.dims[0]);
  const int Y = static_cast<int>(m.dims[1]);
  const int Z = static_cast<int>(m.dims[2]);
  const int F = static_cast<int>(m.dims[3]);
  Tensor<T> t({F, X, Y, Z});
  for (int f = 0; f < F; ++f)
    for (int x = 0; x < X; ++x)
      for (int y = 0; y < Y; ++y)
        for (int z = 0; z < Z; ++z)
          t.at4(f, x, y, z) = static_cast<T>(
              m.at(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y),
                   static_cast<std::uint32_t>(z), static_cast<std::uint32_t>(f)));
  return t;
}

template <typename T>
VoxelModel4D tensor_to_model(const Tensor<T>& t, VoxelKind kind) {
  if (t.rank() != 4) throw DimensionError("frame tensor must be rank 4");
  const int F = t.shape[0], X = t.shape[1], Y = t.shape[2], Z = t.shape[3];
  VoxelModel4D m = VoxelModel4D::zeros(
      {static_cast<std::uint32_t>(X), static_cast<std::uint32_t>(Y),
       static_cast<std::uint32_t>(Z), static_cast<std::uint32_t>(F)},
      kind);
  for (int f = 0; f < F; ++f)
    for (int x = 0; x < X; ++x)
      for (int y = 0; y < Y; ++y)
        for (int z = 0; z < Z; ++z)
          m.at(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y),
               static_cast<std::uint32_t>(z), static_cast<std::uint32_t>(f)) =
              static_cast<float>(t.at4(f, x, y, z));
  return m;
}

VoxelModel4D infer(const NetworkParams& net, const VoxelModel4D& lfr, LatentState* latents) {
  const ArchConfig& cfg = net.arch;
  cfg.validate();
  const std::uint32_t d = static_cast<std::uint32_t>(cfg.grid_size);
  if (lfr.dims[0] != d || lfr.dims[1] != d || lfr.dims[2] != d ||
      lfr.dims[3] != static_cast<std::uint32_t>(cfg.input_frames))
    throw DimensionError("input model dimensions do not match the architecture");
  Graph<float> g;
  NetworkBuild<float> nb =
      build_forward<float>(g, cfg, net.tensors, frames_to_tensor<float>(lfr), false, nullptr,
                           false);
  if (latents != nullptr) *latents = nb.latents(g);
  return tensor_to_model(g.tensor(nb.output), VoxelKind::probabilistic);
}

template struct NetworkBuild<float>;
template struct NetworkBuild<double>;
template NetworkBuild<float> build_forward<float>(Graph<float>&, const ArchConfig&,
                                                  const ParamMap<float>&, const Tensor<float>&,
                                                  bool, Rng*, bool);
template NetworkBuild<double> build_forward<double>(Graph<double>&, const ArchConfig&,
                                                    const ParamMap<double>&,
                                                    const Tensor<double>&, bool, Rng*, bool);
template Tensor<float> frames_to_tensor<float>(const VoxelModel4D&);
template Tensor<double> frames_to_tensor<double>(const VoxelModel4D&);
template VoxelModel4D tensor_to_model<float>(const Tensor<float>&, VoxelKind);
template VoxelModel4D tensor_to_model<double>(const Tensor<double>&, VoxelKind);

}  // namespace fnet
