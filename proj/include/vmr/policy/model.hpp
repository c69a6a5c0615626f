#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vmr/policy/features.hpp"
#include "vmr/util/errors.hpp"
#include "vmr/util/rng.hpp"

namespace vmr {

struct ModelDims {
  int embed = 64;   // token width
  int heads = 4;
  int blocks = 2;
  int ff = 128;     // dense layer width
  bool operator==(const ModelDims&) const = default;

  int head_dim() const { return embed / heads; }
};

template <typename T>
struct LinearP {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  Mat w;  // in x out
  Mat b;  // 1 x out
};

template <typename T>
struct AttnP {
  LinearP<T> q, k, v, o;
};

template <typename T>
struct LayerNormP {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  Mat gamma;  // 1 x d
  Mat beta;   // 1 x d
};

// One attention block of the VM actor: tree-local attention over all
// machines, self-attention per machine kind, VM->PM cross attention, then
// a shared two-layer dense head with layer norms after each sublayer.
template <typename T>
struct BlockP {
  AttnP<T> tree, vm_self, pm_self, cross;
  LinearP<T> ff1, ff2;
  LayerNormP<T> ln_tree, ln_vm, ln_pm, ln_cross, ln_ff;
};

// Every learnable weight of the two actors and the critic. The parameter
// count depends only on the dims, never on the cluster size.
template <typename T>
struct PolicyParams {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

  ModelDims dims;
  NormStats norm;

  LinearP<T> vm_embed1, vm_embed2;  // 14 -> d -> d
  LinearP<T> pm_embed1, pm_embed2;  // 8 -> d -> d
  std::vector<BlockP<T>> blocks;
  LinearP<T> vm_logit;              // d -> 1, zero-initialized

  // Destination actor: one-token encoder over the chosen VM embedding and
  // a decoder over the PM embeddings with cross attention to that token.
  AttnP<T> enc_self;
  LinearP<T> enc_ff1, enc_ff2;
  LayerNormP<T> enc_ln1, enc_ln2;
  AttnP<T> dec_self, dec_cross;
  LinearP<T> dec_ff1, dec_ff2;
  LayerNormP<T> dec_ln1, dec_ln2, dec_ln3;
  LinearP<T> pm_logit;              // d -> 1, zero-initialized
  Mat inject_scale;                 // 1 x 1 gate on the injected scores

  LinearP<T> critic1;               // 2d -> ff
  LinearP<T> critic2;               // ff -> 1

  // Visits every parameter matrix in a stable order.
  template <typename Fn>
  void visit(Fn&& fn) {
    auto lin = [&](const std::string& name, LinearP<T>& l) {
      fn(name + ".w", l.w);
      fn(name + ".b", l.b);
    };
    auto attn = [&](const std::string& name, AttnP<T>& a) {
      lin(name + ".q", a.q);
      lin(name + ".k", a.k);
      lin(name + ".v", a.v);
      lin(name + ".o", a.o);
    };
    auto ln = [&](const std::string& name, LayerNormP<T>& l) {
      fn(name + ".gamma", l.gamma);
      fn(name + ".beta", l.beta);
    };
    lin("vm_embed1", vm_embed1);
    lin("vm_embed2", vm_embed2);
    lin("pm_embed1", pm_embed1);
    lin("pm_embed2", pm_embed2);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = "block" + std::to_string(i);
      attn(p + ".tree", blocks[i].tree);
      attn(p + ".vm_self", blocks[i].vm_self);
      attn(p + ".pm_self", blocks[i].pm_self);
      attn(p + ".cross", blocks[i].cross);
      lin(p + ".ff1", blocks[i].ff1);
      lin(p + ".ff2", blocks[i].ff2);
      ln(p + ".ln_tree", blocks[i].ln_tree);
      ln(p + ".ln_vm", blocks[i].ln_vm);
      ln(p + ".ln_pm", blocks[i].ln_pm);
      ln(p + ".ln_cross", blocks[i].ln_cross);
      ln(p + ".ln_ff", blocks[i].ln_ff);
    }
    lin("vm_logit", vm_logit);
    attn("enc_self", enc_self);
    lin("enc_ff1", enc_ff1);
    lin("enc_ff2", enc_ff2);
    ln("enc_ln1", enc_ln1);
    ln("enc_ln2", enc_ln2);
    attn("dec_self", dec_self);
    attn("dec_cross", dec_cross);
    lin("dec_ff1", dec_ff1);
    lin("dec_ff2", dec_ff2);
    ln("dec_ln1", dec_ln1);
    ln("dec_ln2", dec_ln2);
    ln("dec_ln3", dec_ln3);
    lin("pm_logit", pm_logit);
    fn("inject_scale", inject_scale);
    lin("critic1", critic1);
    lin("critic2", critic2);
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    visit([&](const std::string&, Mat& m) { n += m.size(); });
    return n;
  }
};

namespace detail {

template <typename T>
void init_linear(LinearP<T>& l, int in, int out, Rng& rng, bool zero = false) {
  l.w.resize(in, out);
  l.b = LinearP<T>::Mat::Zero(1, out);
  if (zero) {
    l.w.setZero();
    return;
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  for (int i = 0; i < in; ++i)
    for (int j = 0; j < out; ++j) {
      // Box-Muller on engine-native uniforms keeps init reproducible.
      const double u1 = std::max(uniform_real(rng), 1e-12);
      const double u2 = uniform_real(rng);
      const double z = std::sqrt(-2.0 * std::log(u1)) *
                       std::cos(2.0 * 3.14159265358979323846 * u2);
      l.w(i, j) = static_cast<T>(z * scale);
    }
}

template <typename T>
void init_attn(AttnP<T>& a, int d, Rng& rng) {
  init_linear(a.q, d, d, rng);
  init_linear(a.k, d, d, rng);
  init_linear(a.v, d, d, rng);
  init_linear(a.o, d, d, rng);
}

template <typename T>
void init_ln(LayerNormP<T>& l, int d) {
  l.gamma = LayerNormP<T>::Mat::Ones(1, d);
  l.beta = LayerNormP<T>::Mat::Zero(1, d);
}

}  // namespace detail

// Fresh parameters: fan-in-scaled random weights, zero logit projections
// (near-uniform initial policies), unit layer norms.
template <typename T>
PolicyParams<T> init_policy_params(const ModelDims& dims, const NormStats& norm,
                                   std::uint64_t seed) {
  if (dims.embed % dims.heads != 0)
    throw InvalidParameter("embed width must be divisible by heads");
  Rng rng = make_rng(seed);
  PolicyParams<T> p;
  p.dims = dims;
  p.norm = norm;
  const int d = dims.embed;
  detail::init_linear(p.vm_embed1, kVmFeatureDim, d, rng);
  detail::init_linear(p.vm_embed2, d, d, rng);
  detail::init_linear(p.pm_embed1, kPmFeatureDim, d, rng);
  detail::init_linear(p.pm_embed2, d, d, rng);
  p.blocks.resize(dims.blocks);
  for (auto& b : p.blocks) {
    detail::init_attn(b.tree, d, rng);
    detail::init_attn(b.vm_self, d, rng);
    detail::init_attn(b.pm_self, d, rng);
    detail::init_attn(b.cross, d, rng);
    detail::init_linear(b.ff1, d, dims.ff, rng);
    detail::init_linear(b.ff2, dims.ff, d, rng);
    detail::init_ln(b.ln_tree, d);
    detail::init_ln(b.ln_vm, d);
    detail::init_ln(b.ln_pm, d);
    detail::init_ln(b.ln_cross, d);
    detail::init_ln(b.ln_ff, d);
  }
  detail::init_linear(p.vm_logit, d, 1, rng, /*zero=*/true);
  detail::init_attn(p.enc_self, d, rng);
  detail::init_linear(p.enc_ff1, d, dims.ff, rng);
  detail::init_linear(p.enc_ff2, dims.ff, d, rng);
  detail::init_ln(p.enc_ln1, d);
  detail::init_ln(p.enc_ln2, d);
  detail::init_attn(p.dec_self, d, rng);
  detail::init_attn(p.dec_cross, d, rng);
  detail::init_linear(p.dec_ff1, d, dims.ff, rng);
  detail::init_linear(p.dec_ff2, dims.ff, d, rng);
  detail::init_ln(p.dec_ln1, d);
  detail::init_ln(p.dec_ln2, d);
  detail::init_ln(p.dec_ln3, d);
  detail::init_linear(p.pm_logit, d, 1, rng, /*zero=*/true);
  p.inject_scale = PolicyParams<T>::Mat::Zero(1, 1);
  detail::init_linear(p.critic1, 2 * d, dims.ff, rng);
  detail::init_linear(p.critic2, dims.ff, 1, rng);
  return p;
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic, little-endian u64 header length, JSON header
// (dims, dtype, group shapes, extra-section names), then raw matrix bytes
// in declared order. Loading restores the exact bytes, so save -> load ->
// save reproduces the file bit for bit.

inline constexpr char kCheckpointMagic[8] = {'V', 'M', 'R', 'C',
                                             'K', 'P', '0', '1'};

template <typename T>
struct Checkpoint {
  PolicyParams<T> params;
  // Optional named sections (optimizer moments, rng state, counters).
  std::map<std::string, std::vector<typename PolicyParams<T>::Mat>> extra;
  std::map<std::string, std::string> meta;
};

namespace detail {

template <typename T>
const char* dtype_name() {
  if constexpr (sizeof(T) == 4)
    return "f32";
  else
    return "f64";
}

template <typename T>
void write_mat(std::ofstream& out,
               const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& m) {
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(T) * m.size()));
}

template <typename T>
void read_mat(std::ifstream& in,
              Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& m, int rows,
              int cols) {
  m.resize(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(T) * m.size()));
}

inline nlohmann::json norm_to_json(const NormStats& n) {
  nlohmann::json j;
  j["x"] = n.x;
  j["pm_min"] = n.pm_min;
  j["pm_max"] = n.pm_max;
  j["vm_min"] = n.vm_min;
  j["vm_max"] = n.vm_max;
  return j;
}

inline NormStats norm_from_json(const nlohmann::json& j) {
  NormStats n;
  n.x = j["x"].get<int>();
  auto fill = [&](const char* key, auto& arr) {
    auto v = j[key].get<std::vector<double>>();
    std::copy(v.begin(), v.end(), arr.begin());
  };
  fill("pm_min", n.pm_min);
  fill("pm_max", n.pm_max);
  fill("vm_min", n.vm_min);
  fill("vm_max", n.vm_max);
  return n;
}

}  // namespace detail

template <typename T>
void save_checkpoint(Checkpoint<T>& ck, const std::string& path) {
  nlohmann::json header;
  header["format_version"] = 1;
  header["dtype"] = detail::dtype_name<T>();
  header["dims"] = {{"embed", ck.params.dims.embed},
                    {"heads", ck.params.dims.heads},
                    {"blocks", ck.params.dims.blocks},
                    {"ff", ck.params.dims.ff}};
  header["norm"] = detail::norm_to_json(ck.params.norm);
  header["meta"] = ck.meta;

  nlohmann::json groups = nlohmann::json::array();
  ck.params.visit([&](const std::string& name, auto& m) {
    groups.push_back({{"name", name},
                      {"rows", static_cast<int>(m.rows())},
                      {"cols", static_cast<int>(m.cols())}});
  });
  header["groups"] = groups;

  nlohmann::json extras = nlohmann::json::array();
  for (auto& [name, mats] : ck.extra) {
    nlohmann::json shapes = nlohmann::json::array();
    for (auto& m : mats)
      shapes.push_back({{"rows", static_cast<int>(m.rows())},
                        {"cols", static_cast<int>(m.cols())}});
    extras.push_back({{"name", name}, {"shapes", shapes}});
  }
  header["extra"] = extras;

  const std::string header_str = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::uint64_t len = header_str.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(header_str.data(), static_cast<std::streamsize>(len));
  ck.params.visit(
      [&](const std::string&, auto& m) { detail::write_mat<T>(out, m); });
  for (auto& [name, mats] : ck.extra)
    for (auto& m : mats) detail::write_mat<T>(out, m);
  if (!out) throw Error("short write to " + path);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw ParseError(path + ": not a checkpoint file");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  std::string header_str(len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(len));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": bad checkpoint header: " + e.what());
  }
  if (header["dtype"].get<std::string>() != detail::dtype_name<T>())
    throw ParseError(path + ": checkpoint dtype is " +
                     header["dtype"].get<std::string>() + ", expected " +
                     detail::dtype_name<T>());

  Checkpoint<T> ck;
  ck.params.dims.embed = header["dims"]["embed"].get<int>();
  ck.params.dims.heads = header["dims"]["heads"].get<int>();
  ck.params.dims.blocks = header["dims"]["blocks"].get<int>();
  ck.params.dims.ff = header["dims"]["ff"].get<int>();
  ck.params.norm = detail::norm_from_json(header["norm"]);
  if (header.contains("meta"))
    ck.meta = header["meta"].get<std::map<std::string, std::string>>();

  // Allocate parameters with a dummy init, then overwrite from the file in
  // the declared group order.
  ck.params.blocks.resize(ck.params.dims.blocks);
  {
    PolicyParams<T> shape =
        init_policy_params<T>(ck.params.dims, ck.params.norm, 0);
    ck.params = std::move(shape);
  }
  std::size_t gi = 0;
  const auto& groups = header["groups"];
  ck.params.visit([&](const std::string& name, auto& m) {
    const auto& g = groups[gi++];
    if (g["name"].get<std::string>() != name)
      throw ParseError(path + ": group order mismatch at " + name);
    detail::read_mat<T>(in, m, g["rows"].get<int>(), g["cols"].get<int>());
  });
  for (const auto& e : header["extra"]) {
    auto& mats = ck.extra[e["name"].get<std::string>()];
    for (const auto& shape : e["shapes"]) {
      typename PolicyParams<T>::Mat m;
      detail::read_mat<T>(in, m, shape["rows"].get<int>(),
                          shape["cols"].get<int>());
      mats.push_back(std::move(m));
    }
  }
  if (!in) throw ParseError(path + ": truncated checkpoint");
  return ck;
}

}  // namespace vmr
