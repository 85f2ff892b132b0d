// Copyright 2026 The mocolsk Authors
// SPDX-License-Identifier: Apache-2.0

// Full downscaling network: guidance branch, LST branch with one fusion
// module per stage, reconstruction module and bicubic residual. Checkpoints
// are an index.json plus a flat float32 blob.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "mocolsk/blocks.hpp"
#include "mocolsk/mocolsk.hpp"
#include "mocolsk/params.hpp"
#include "mocolsk/raster.hpp"

namespace mocolsk {

using json = nlohmann::json;

struct NetworkConfig {
  int scale = 2;
  int stages = 4;
  int base_dim = 32;
  int guidance_channels = raster::kGuidanceChannels;
  int blocks_per_group = 4;
  int groups_per_stage = 2;
  int recon_groups = 2;
  int attention_reduction = 4;
  KernelSpec kernel_spec = default_kernel_spec();
  int dconv_kernel = 3;
  DmlpConfig dmlp;
  std::vector<std::string> variants;  // one tag per stage; empty means all "S"
  Pooling pooling = Pooling::kPyramid;
  bool dynamic = true;
  bool modality_fusion = true;
  std::uint64_t seed = 0;

  std::vector<std::string> resolved_variants() const {
    return variants.empty() ? std::vector<std::string>(static_cast<std::size_t>(std::max(stages, 0)), "S") : variants;
  }

  void validate() const {
    require_scale(scale);
    if (stages < 1) throw ValidationError("stages must be >= 1");
    if (base_dim < 1) throw ValidationError("base_dim must be >= 1");
    if (base_dim < attention_reduction)
      throw ValidationError("base_dim " + std::to_string(base_dim) + " is smaller than attention_reduction " +
                            std::to_string(attention_reduction));
    if (guidance_channels < 1) throw ValidationError("guidance_channels must be >= 1");
    if (blocks_per_group < 1 || groups_per_stage < 1 || recon_groups < 0)
      throw ValidationError("block/group counts must be positive");
    if (!variants.empty() && static_cast<int>(variants.size()) != stages)
      throw ValidationError("variant sequence has " + std::to_string(variants.size()) + " entries for " +
                            std::to_string(stages) + " stages");
    for (const auto& v : resolved_variants()) parse_variant(v);
    validate_kernel_spec(kernel_spec);
  }

  int stage_channels(int i) const { return base_dim * (i + 1); }
  int stage_out_channels(int i) const { return base_dim * std::min(i + 2, stages); }
};

// ---------------------------------------------------------------------------
// Enum/string helpers and config JSON.

inline const char* pooling_name(Pooling p) {
  switch (p) {
    case Pooling::kAvg:
      return "avg";
    case Pooling::kMax:
      return "max";
    case Pooling::kAvgMax:
      return "avgmax";
    case Pooling::kPyramid:
      return "ppm";
  }
  return "ppm";
}

inline Pooling parse_pooling(const std::string& s) {
  if (s == "avg") return Pooling::kAvg;
  if (s == "max") return Pooling::kMax;
  if (s == "avgmax") return Pooling::kAvgMax;
  if (s == "ppm") return Pooling::kPyramid;
  throw ValidationError("unknown pooling '" + s + "' (expected avg, max, avgmax, ppm)");
}

inline const char* dmlp_version_name(DmlpVersion v) {
  switch (v) {
    case DmlpVersion::kA:
      return "A";
    case DmlpVersion::kB:
      return "B";
    case DmlpVersion::kC:
      return "C";
  }
  return "A";
}

inline DmlpVersion parse_dmlp_version(const std::string& s) {
  if (s == "A") return DmlpVersion::kA;
  if (s == "B") return DmlpVersion::kB;
  if (s == "C") return DmlpVersion::kC;
  throw ValidationError("unknown DMLP version '" + s + "' (expected A, B, C)");
}

namespace detail {
inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, _] : j.items())
    if (!ok.count(k)) throw ValidationError("unknown key '" + k + "' in " + where);
}

template <typename V>
void read_opt(const json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception&) {
    throw ValidationError(where + "." + key + " has the wrong type");
  }
}
}  // namespace detail

inline json kernel_spec_to_json(const KernelSpec& spec) {
  json a = json::array();
  for (const auto& s : spec) a.push_back({s.kernel, s.dilation});
  return a;
}

inline KernelSpec kernel_spec_from_json(const json& j) {
  if (!j.is_array()) throw ValidationError("kernel_spec must be a list of [kernel, dilation] pairs");
  KernelSpec spec;
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer())
      throw ValidationError("kernel_spec entries must be [kernel, dilation] integer pairs");
    spec.push_back({e[0].get<int>(), e[1].get<int>()});
  }
  return spec;
}

inline json to_json(const NetworkConfig& c) {
  return {{"scale", c.scale},
          {"stages", c.stages},
          {"base_dim", c.base_dim},
          {"guidance_channels", c.guidance_channels},
          {"blocks_per_group", c.blocks_per_group},
          {"groups_per_stage", c.groups_per_stage},
          {"recon_groups", c.recon_groups},
          {"attention_reduction", c.attention_reduction},
          {"kernel_spec", kernel_spec_to_json(c.kernel_spec)},
          {"dconv_kernel", c.dconv_kernel},
          {"dmlp", {{"version", dmlp_version_name(c.dmlp.version)}, {"layers", c.dmlp.layers}, {"hidden", c.dmlp.hidden}}},
          {"variants", c.resolved_variants()},
          {"pooling", pooling_name(c.pooling)},
          {"dynamic", c.dynamic},
          {"modality_fusion", c.modality_fusion},
          {"seed", c.seed}};
}

inline NetworkConfig network_config_from_json(const json& j, NetworkConfig c = {}) {
  const std::string w = "network";
  detail::check_keys(j,
                     {"scale", "stages", "base_dim", "guidance_channels", "blocks_per_group", "groups_per_stage",
                      "recon_groups", "attention_reduction", "kernel_spec", "dconv_kernel", "dmlp", "variants",
                      "pooling", "dynamic", "modality_fusion", "seed"},
                     w);
  detail::read_opt(j, "scale", c.scale, w);
  detail::read_opt(j, "stages", c.stages, w);
  detail::read_opt(j, "base_dim", c.base_dim, w);
  detail::read_opt(j, "guidance_channels", c.guidance_channels, w);
  detail::read_opt(j, "blocks_per_group", c.blocks_per_group, w);
  detail::read_opt(j, "groups_per_stage", c.groups_per_stage, w);
  detail::read_opt(j, "recon_groups", c.recon_groups, w);
  detail::read_opt(j, "attention_reduction", c.attention_reduction, w);
  detail::read_opt(j, "dconv_kernel", c.dconv_kernel, w);
  detail::read_opt(j, "variants", c.variants, w);
  detail::read_opt(j, "dynamic", c.dynamic, w);
  detail::read_opt(j, "modality_fusion", c.modality_fusion, w);
  detail::read_opt(j, "seed", c.seed, w);
  if (j.contains("kernel_spec")) c.kernel_spec = kernel_spec_from_json(j["kernel_spec"]);
  if (j.contains("pooling")) {
    if (!j["pooling"].is_string()) throw ValidationError("network.pooling must be a string");
    c.pooling = parse_pooling(j["pooling"].get<std::string>());
  }
  if (j.contains("dmlp")) {
    const json& d = j["dmlp"];
    detail::check_keys(d, {"version", "layers", "hidden"}, "network.dmlp");
    std::string v = dmlp_version_name(c.dmlp.version);
    detail::read_opt(d, "version", v, "network.dmlp");
    c.dmlp.version = parse_dmlp_version(v);
    detail::read_opt(d, "layers", c.dmlp.layers, "network.dmlp");
    detail::read_opt(d, "hidden", c.dmlp.hidden, "network.dmlp");
  }
  c.validate();
  return c;
}

/// Hash of everything that determines parameter shapes and wiring (the seed
/// only affects initial values, so it is left out).
inline std::uint64_t config_hash(const NetworkConfig& c) {
  json j = to_json(c);
  j.erase("seed");
  return fnv1a(j.dump());
}

// ---------------------------------------------------------------------------

template <typename T>
class Network {
 public:
  explicit Network(NetworkConfig cfg) : cfg_(std::move(cfg)), store_(std::make_unique<ParamStore<T>>(cfg_.seed)) {
    cfg_.validate();
    const Scope<T> root{store_.get(), ""};
    const int N = cfg_.stages, base = cfg_.base_dim;
    auto block_cfg = [&](int channels) {
      BlockConfig b;
      b.channels = channels;
      b.blocks_per_group = cfg_.blocks_per_group;
      b.attention_reduction = cfg_.attention_reduction;
      b.scale = cfg_.scale;
      b.validate();
      return b;
    };

    guid_stem_ = make_conv_stem(root.sub("guid.stem"), cfg_.guidance_channels, base);
    lst_stem_ = make_conv_stem(root.sub("lst.stem"), 1, base);
    const auto variants = cfg_.resolved_variants();
    for (int i = 0; i < N; ++i) {
      const std::string tag = "stage" + std::to_string(i + 1);
      std::vector<ResidualGroup<T>> g, l;
      for (int r = 0; r < cfg_.groups_per_stage; ++r) {
        g.emplace_back(root.sub("guid." + tag + ".group" + std::to_string(r)), block_cfg(base));
        l.emplace_back(root.sub("lst." + tag + ".group" + std::to_string(r)), block_cfg(cfg_.stage_channels(i)));
      }
      guid_groups_.push_back(std::move(g));
      lst_groups_.push_back(std::move(l));

      MoCoLSKConfig m;
      m.lst_channels = cfg_.stage_channels(i);
      m.guid_channels = base;
      m.out_channels = cfg_.stage_out_channels(i);
      m.scale = cfg_.scale;
      m.kernel_spec = cfg_.kernel_spec;
      m.dconv_kernel = cfg_.dconv_kernel;
      m.dmlp = cfg_.dmlp;
      m.variant = parse_variant(variants[i]);
      m.pooling = cfg_.pooling;
      m.dynamic = cfg_.dynamic;
      m.modality_fusion = cfg_.modality_fusion;
      m.attention_reduction = cfg_.attention_reduction;
      fusion_.push_back(build_fusion_variant(root.sub("lst." + tag + ".fusion"), m));
    }

    const int rc = N * base;
    for (int r = 0; r < cfg_.recon_groups; ++r)
      recon_groups_.emplace_back(root.sub("recon.group" + std::to_string(r)), block_cfg(rc));
    recon_up_ = UpProjection<T>(root.sub("recon.up"), rc, cfg_.scale);
    head1_ = Conv2d<T>::same(root.sub("recon.head1"), rc, base, 3);
    head2_ = Conv2d<T>::same(root.sub("recon.head2"), base, 1, 3);
  }

  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  const NetworkConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return *store_; }
  const ParamStore<T>& params() const { return *store_; }
  std::vector<FusionModule<T>>& fusion_modules() { return fusion_; }

  /// lst_lr (B,1,H,W), guid_hr (B,K,sH,sW), both already normalized ->
  /// (B,1,sH,sW) in the same units as lst_lr.
  Var<T> forward(const Var<T>& lst_lr, const Var<T>& guid_hr) const {
    require_rank(lst_lr.shape(), 4, "lst_lr");
    require_rank(guid_hr.shape(), 4, "guid_hr");
    const int s = cfg_.scale;
    if (lst_lr.dim(1) != 1) throw ShapeError("lst_lr must have 1 channel, got " + to_string(lst_lr.shape()));
    if (guid_hr.dim(1) != cfg_.guidance_channels)
      throw ShapeError("guidance has " + std::to_string(guid_hr.dim(1)) + " channels, network expects " +
                       std::to_string(cfg_.guidance_channels));
    if (guid_hr.dim(0) != lst_lr.dim(0) || guid_hr.dim(2) != s * lst_lr.dim(2) || guid_hr.dim(3) != s * lst_lr.dim(3))
      throw ShapeError("guidance " + to_string(guid_hr.shape()) + " is not x" + std::to_string(s) + " of LST " +
                       to_string(lst_lr.shape()));

    Var<T> g = guid_stem_(guid_hr);
    Var<T> t = lst_stem_(lst_lr);
    for (int i = 0; i < cfg_.stages; ++i) {
      for (const auto& grp : guid_groups_[i]) g = grp(g);
      for (const auto& grp : lst_groups_[i]) t = grp(t);
      try {
        t = fusion_[i](t, g);
      } catch (const ValidationError& e) {
        throw ShapeError("stage " + std::to_string(i + 1) + ": " + e.what());
      }
      if (!t.value().all_finite()) throw NumericError("non-finite activation after stage " + std::to_string(i + 1));
    }
    for (const auto& grp : recon_groups_) t = grp(t);
    Var<T> h = recon_up_(t);
    h = head2_(ops::leaky_relu(head1_(h), static_cast<T>(0.2)));
    Var<T> out = ops::add(h, ops::bicubic_upsample(lst_lr, s));
    if (!out.value().all_finite()) throw NumericError("non-finite activation in reconstruction");
    return out;
  }

  Tensor<T> predict(const Tensor<T>& lst_lr, const Tensor<T>& guid_hr) const {
    NoGradGuard ng;
    return forward(Var<T>(lst_lr), Var<T>(guid_hr)).value();
  }

  /// Zeroes the last head convolution; the output is then the bicubic term.
  void zero_projection_head() {
    std::fill(head2_.weight.mutable_value().data.begin(), head2_.weight.mutable_value().data.end(), T(0));
    if (head2_.bias.defined()) std::fill(head2_.bias.mutable_value().data.begin(), head2_.bias.mutable_value().data.end(), T(0));
  }

  void set_zero_modality_weights(bool on) {
    for (auto& f : fusion_) f.set_zero_modality_weights(on);
  }

 private:
  NetworkConfig cfg_;
  std::unique_ptr<ParamStore<T>> store_;
  Conv2d<T> guid_stem_, lst_stem_;
  std::vector<std::vector<ResidualGroup<T>>> guid_groups_, lst_groups_;
  std::vector<FusionModule<T>> fusion_;
  std::vector<ResidualGroup<T>> recon_groups_;
  UpProjection<T> recon_up_;
  Conv2d<T> head1_, head2_;
};

template <typename T>
Network<T> build_network(const NetworkConfig& cfg) {
  return Network<T>(cfg);
}

// ---------------------------------------------------------------------------
// Checkpoints.

struct Checkpoint {
  NetworkConfig config;
  std::int64_t step = 0;
  std::optional<raster::NormalizationStats> stats;
  raster::Strategy strategy = raster::Strategy::kZScore;
  raster::Strategy guidance_strategy = raster::Strategy::kZScore;
  std::vector<std::pair<std::string, Tensor<float>>> params;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const Network<T>& net, std::int64_t step,
                     const std::optional<raster::NormalizationStats>& stats, raster::Strategy strategy,
                     raster::Strategy guidance_strategy) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  json index;
  index["format"] = "mocolsk-checkpoint";
  index["version"] = 1;
  index["config"] = to_json(net.config());
  index["config_hash"] = config_hash(net.config());
  index["step"] = step;
  index["normalization"] = strategy_name(strategy);
  index["guidance_normalization"] = strategy_name(guidance_strategy);
  index["stats"] = stats ? raster::stats_to_json(*stats) : json(nullptr);
  index["params"] = json::array();

  std::ofstream blob(dir / "params.f32", std::ios::binary | std::ios::trunc);
  if (!blob) throw IoError("cannot write " + (dir / "params.f32").string());
  std::uint64_t offset = 0;
  for (const auto& [name, p] : net.params().entries()) {
    Tensor<float> f = p.value().template cast<float>();
    const std::uint64_t bytes = f.size() * sizeof(float);
    static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");
    blob.write(reinterpret_cast<const char*>(f.data.data()), static_cast<std::streamsize>(bytes));
    index["params"].push_back({{"name", name}, {"shape", p.shape()}, {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
  }
  if (!blob) throw IoError("write failed: " + (dir / "params.f32").string());
  std::ofstream os(dir / "index.json", std::ios::trunc);
  if (!os) throw IoError("cannot write " + (dir / "index.json").string());
  os << index.dump(2) << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::ifstream is(dir / "index.json");
  if (!is) throw IoError("no index.json in " + dir.string());
  json index;
  try {
    is >> index;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint index is not valid JSON: ") + e.what());
  }
  Checkpoint ck;
  try {
    if (index.value("format", std::string()) != "mocolsk-checkpoint") throw ValidationError("not a mocolsk checkpoint");
    ck.config = network_config_from_json(index.at("config"));
    if (index.at("config_hash").get<std::uint64_t>() != config_hash(ck.config))
      throw ValidationError("checkpoint config hash does not match its stored config");
    ck.step = index.at("step").get<std::int64_t>();
    ck.strategy = raster::parse_strategy(index.value("normalization", std::string("zscore")));
    ck.guidance_strategy = raster::parse_strategy(index.value("guidance_normalization", std::string("zscore")));
    if (index.contains("stats") && !index["stats"].is_null()) ck.stats = raster::stats_from_json(index["stats"]);

    const fs::path blob_path = dir / "params.f32";
    std::error_code ec;
    const auto blob_size = fs::file_size(blob_path, ec);
    if (ec) throw IoError("cannot stat " + blob_path.string());
    std::ifstream blob(blob_path, std::ios::binary);
    for (const auto& e : index.at("params")) {
      const auto offset = e.at("offset").get<std::uint64_t>();
      const auto bytes = e.at("bytes").get<std::uint64_t>();
      Shape shape = e.at("shape").get<Shape>();
      if (bytes != numel(shape) * sizeof(float)) throw ValidationError("checkpoint entry size disagrees with shape");
      if (offset + bytes > blob_size) throw IoError("checkpoint blob is truncated");
      Tensor<float> t(shape);
      blob.seekg(static_cast<std::streamoff>(offset));
      blob.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(bytes));
      if (!blob) throw IoError("short read in checkpoint blob");
      if (!t.all_finite()) throw NumericError("non-finite parameter " + e.at("name").get<std::string>());
      ck.params.emplace_back(e.at("name").get<std::string>(), std::move(t));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed checkpoint index: ") + e.what());
  }
  return ck;
}

/// Copies checkpoint parameters into `net`; the wiring must match.
template <typename T>
void apply_checkpoint(Network<T>& net, const Checkpoint& ck) {
  if (config_hash(net.config()) != config_hash(ck.config))
    throw ValidationError("config hash mismatch: checkpoint was trained with a different network config");
  const auto& entries = net.params().entries();
  if (entries.size() != ck.params.size()) throw ValidationError("checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& [name, p] = entries[i];
    const auto& [cname, t] = ck.params[i];
    if (name != cname || p.shape() != t.shape) throw ValidationError("checkpoint parameter mismatch at " + name);
    Var<T> v = p;
    v.mutable_value() = t.template cast<T>();
  }
}

}  // namespace mocolsk
