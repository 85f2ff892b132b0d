// Copyright 2026 The mocolsk Authors
// SPDX-License-Identifier: Apache-2.0

// Raster data: paired LR/HR LST scenes with an HR guidance stack, Wald
// degradation, the train/val/test split, normalization statistics and the
// on-disk dataset layout.
//
// Dataset directory:
//   manifest.json
//   <id>/lst_hr.f32   (1, sH, sW)
//   <id>/lst_lr.f32   (1, H, W)
//   <id>/guid_hr.f32  (K, sH, sW)
// Binary files are headerless little-endian float32, row-major, channel-major.

#pragma once

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mocolsk/params.hpp"
#include "mocolsk/tensor.hpp"

namespace mocolsk::raster {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int kGuidanceChannels = 10;

struct RasterSample {
  std::string sample_id;
  Tensor<float> lst_hr;       // (1, sH, sW) kelvin
  Tensor<float> lst_lr;       // (1, H, W) kelvin
  Tensor<float> guidance_hr;  // (K, sH, sW)
  int scale = 2;
  double resolution_m = 30.0;

  void validate() const {
    require_rank(lst_hr.shape, 3, "lst_hr");
    require_rank(lst_lr.shape, 3, "lst_lr");
    require_rank(guidance_hr.shape, 3, "guidance_hr");
    if (lst_hr.dim(1) != scale * lst_lr.dim(1) || lst_hr.dim(2) != scale * lst_lr.dim(2))
      throw ShapeError("sample " + sample_id + ": HR LST " + to_string(lst_hr.shape) + " is not x" +
                       std::to_string(scale) + " of LR " + to_string(lst_lr.shape));
    if (guidance_hr.dim(1) != lst_hr.dim(1) || guidance_hr.dim(2) != lst_hr.dim(2))
      throw ShapeError("sample " + sample_id + ": guidance grid does not match HR LST grid");
    for (const Tensor<float>* t : {&lst_hr, &lst_lr, &guidance_hr})
      if (!t->all_finite()) throw ValidationError("sample " + sample_id + ": non-finite values");
    for (const Tensor<float>* t : {&lst_hr, &lst_lr})
      for (float v : t->data)
        if (!(v > 0.0f)) throw ValidationError("sample " + sample_id + ": LST must be strictly positive kelvin");
  }
};

enum class Split { kTrain, kVal, kTest, kNone };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
    case Split::kNone:
      return "none";
  }
  return "none";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  if (s == "none") return Split::kNone;
  throw ValidationError("unknown split '" + s + "' (expected train, val, test)");
}

enum class Strategy { kNone, kZScore, kMinMax };

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kNone:
      return "none";
    case Strategy::kZScore:
      return "zscore";
    case Strategy::kMinMax:
      return "minmax";
  }
  return "none";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "none") return Strategy::kNone;
  if (s == "zscore") return Strategy::kZScore;
  if (s == "minmax") return Strategy::kMinMax;
  throw ValidationError("unknown normalization strategy '" + s + "' (expected none, zscore, minmax)");
}

struct ChannelStats {
  double mean = 0, std = 1, min = 0, max = 1;
  std::string role;
};

/// Channel 0 describes LST; channels 1..K describe the guidance stack.
struct NormalizationStats {
  std::vector<ChannelStats> channels;

  const ChannelStats& lst() const { return channels.at(0); }
  std::span<const ChannelStats> guidance() const { return std::span<const ChannelStats>(channels).subspan(1); }
  std::span<const ChannelStats> lst_span() const { return std::span<const ChannelStats>(channels).first(1); }

  void validate() const {
    if (channels.empty()) throw ValidationError("normalization stats are empty");
    for (const auto& c : channels) {
      if (!(c.std > 0)) throw DegenerateInput("channel '" + c.role + "' has zero variance");
      if (!(c.max > c.min)) throw DegenerateInput("channel '" + c.role + "' has max <= min");
    }
  }
};

struct SampleRecord {
  std::string id;
  Shape lst_hr, lst_lr, guid_hr;
  Split split = Split::kNone;
};

struct DatasetManifest {
  int scale = 2;
  double resolution_m = 30.0;
  std::vector<SampleRecord> samples;
  std::optional<std::uint64_t> split_seed;
  std::optional<NormalizationStats> stats;
  json generator;  // parameters of synthetic generation, if any

  std::vector<const SampleRecord*> in_split(Split s) const {
    std::vector<const SampleRecord*> out;
    for (const auto& r : samples)
      if (r.split == s) out.push_back(&r);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Wald degradation.

/// Area averaging over scale x scale blocks of the two trailing (spatial) dims.
template <typename T>
Tensor<T> wald_downsample(const Tensor<T>& hr, int scale) {
  if (hr.rank() < 2) throw ShapeError("wald_downsample needs at least 2 dims");
  if (scale < 1) throw ValidationError("scale must be >= 1");
  const int H = hr.shape[hr.rank() - 2], W = hr.shape[hr.rank() - 1];
  if (H % scale || W % scale)
    throw ValidationError("wald_downsample: grid " + std::to_string(H) + "x" + std::to_string(W) +
                          " not divisible by scale " + std::to_string(scale));
  Shape os = hr.shape;
  os[os.size() - 2] = H / scale;
  os[os.size() - 1] = W / scale;
  Tensor<T> out(os);
  const std::size_t planes = hr.size() / (static_cast<std::size_t>(H) * W);
  const int h = H / scale, w = W / scale;
  const double inv = 1.0 / (static_cast<double>(scale) * scale);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = hr.data.data() + p * H * W;
    T* dst = out.data.data() + p * h * w;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        double acc = 0;
        for (int a = 0; a < scale; ++a)
          for (int b = 0; b < scale; ++b) acc += src[(i * scale + a) * W + j * scale + b];
        dst[i * w + j] = static_cast<T>(acc * inv);
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic scenes.

/// Zero-mean, unit-variance random field whose power spectrum falls as
/// |k|^exponent, synthesised in the Fourier domain.
inline std::vector<double> power_law_field(int n, double exponent, std::mt19937_64& rng) {
  const int nc = n / 2 + 1;
  std::vector<fftw_complex> spec(static_cast<std::size_t>(n) * nc);
  for (int i = 0; i < n; ++i) {
    const int ki = i <= n / 2 ? i : i - n;
    for (int j = 0; j < nc; ++j) {
      const double k = std::sqrt(static_cast<double>(ki) * ki + static_cast<double>(j) * j);
      const double amp = k > 0 ? std::pow(k, exponent / 2.0) : 0.0;
      const double re = standard_normal(rng), im = standard_normal(rng);
      spec[static_cast<std::size_t>(i) * nc + j][0] = amp * re;
      spec[static_cast<std::size_t>(i) * nc + j][1] = amp * im;
    }
  }
  std::vector<double> field(static_cast<std::size_t>(n) * n);
  fftw_plan plan = fftw_plan_dft_c2r_2d(n, n, spec.data(), field.data(), FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);
  double mean = 0;
  for (double v : field) mean += v;
  mean /= static_cast<double>(field.size());
  double var = 0;
  for (double v : field) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(field.size()));
  for (double& v : field) v = sd > 0 ? (v - mean) / sd : 0.0;
  return field;
}

namespace detail {
inline void rescale(std::vector<double>& f, double lo, double hi) {
  const auto [mn, mx] = std::minmax_element(f.begin(), f.end());
  const double a = *mn, b = *mx;
  for (double& v : f) v = b > a ? lo + (hi - lo) * (v - a) / (b - a) : 0.5 * (lo + hi);
}

inline std::vector<double> gradient_magnitude(const std::vector<double>& f, int n) {
  std::vector<double> g(f.size());
  auto at = [&](int i, int j) { return f[static_cast<std::size_t>(std::clamp(i, 0, n - 1)) * n + std::clamp(j, 0, n - 1)]; };
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double gx = 0.5 * (at(i, j + 1) - at(i, j - 1));
      const double gy = 0.5 * (at(i + 1, j) - at(i - 1, j));
      g[static_cast<std::size_t>(i) * n + j] = std::sqrt(gx * gx + gy * gy);
    }
  return g;
}

// Guidance channel roles and the physical range each one is mapped into.
struct ChannelRole {
  const char* name;
  double lo, hi;
};

inline constexpr ChannelRole kGuidanceRoles[kGuidanceChannels] = {
    {"band_blue", 0.02, 0.25},   {"band_green", 0.03, 0.30}, {"band_red", 0.02, 0.35},
    {"ndvi", -0.2, 0.9},         {"ndwi", -0.6, 0.5},        {"dem", 1400.0, 3200.0},
    {"band_deepblue", 0.01, 0.2}, {"band_vre", 0.05, 0.4},    {"band_nir", 0.1, 0.5},
    {"ndbi", -0.5, 0.4},
};
}  // namespace detail

inline const char* guidance_role(int c) { return detail::kGuidanceRoles[c].name; }

/// One synthetic scene. LST is a power-law field (exponent -3) mixing two
/// latent fields; guidance channels 0-5 are nonlinear transforms of the
/// latents, channels 6-9 are independent fields, all with additive noise.
inline RasterSample synth_sample(const std::string& id, int hr_size, int scale, std::uint64_t seed) {
  std::mt19937_64 rng(splitmix64(seed));
  const int n = hr_size;
  auto a = power_law_field(n, -3.0, rng);
  auto b = power_law_field(n, -3.0, rng);

  std::vector<double> lst(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) lst[i] = a[i] + 0.5 * b[i];
  detail::rescale(lst, 270.0, 320.0);

  std::vector<std::vector<double>> guid(kGuidanceChannels);
  guid[0].resize(a.size());
  guid[1].resize(a.size());
  guid[3].resize(a.size());
  guid[4].resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    guid[0][i] = a[i] * a[i];
    guid[1][i] = std::tanh(a[i]);
    guid[3][i] = std::tanh(0.8 * b[i]);
    guid[4][i] = b[i] * std::abs(b[i]);
  }
  guid[2] = detail::gradient_magnitude(a, n);
  guid[5] = b;
  for (int c = 6; c < kGuidanceChannels; ++c) guid[c] = power_law_field(n, -2.0, rng);
  for (int c = 0; c < kGuidanceChannels; ++c) {
    for (double& v : guid[c]) v += 0.02 * standard_normal(rng);
    detail::rescale(guid[c], detail::kGuidanceRoles[c].lo, detail::kGuidanceRoles[c].hi);
  }

  RasterSample s;
  s.sample_id = id;
  s.scale = scale;
  s.lst_hr = Tensor<float>({1, n, n});
  for (std::size_t i = 0; i < lst.size(); ++i) s.lst_hr.data[i] = static_cast<float>(lst[i]);
  s.guidance_hr = Tensor<float>({kGuidanceChannels, n, n});
  for (int c = 0; c < kGuidanceChannels; ++c)
    for (std::size_t i = 0; i < a.size(); ++i)
      s.guidance_hr.data[static_cast<std::size_t>(c) * a.size() + i] = static_cast<float>(guid[c][i]);
  s.lst_lr = wald_downsample(s.lst_hr, scale);
  return s;
}

inline std::string sample_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "s%04d", index);
  return buf;
}

// ---------------------------------------------------------------------------
// Binary IO.

inline void write_f32(const fs::path& path, const Tensor<float>& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  } else {
    for (float v : t.data) {
      auto u = std::bit_cast<std::uint32_t>(v);
      u = __builtin_bswap32(u);
      os.write(reinterpret_cast<const char*>(&u), 4);
    }
  }
  if (!os) throw IoError("write failed: " + path.string());
}

inline Tensor<float> read_f32(const fs::path& path, const Shape& shape) {
  std::error_code ec;
  const auto bytes = fs::file_size(path, ec);
  if (ec) throw IoError("cannot stat " + path.string());
  const std::size_t expect = numel(shape) * sizeof(float);
  if (bytes != expect)
    throw ShapeError(path.string() + ": shape mismatch, expected " + std::to_string(expect) + " bytes for " +
                     to_string(shape) + ", file has " + std::to_string(bytes));
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  Tensor<float> t(shape);
  is.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(expect));
  if (!is) throw IoError("short read: " + path.string());
  if constexpr (std::endian::native != std::endian::little)
    for (float& v : t.data) v = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(v)));
  for (float v : t.data)
    if (!std::isfinite(v)) throw ValidationError(path.string() + ": non-finite value in file");
  return t;
}

inline void save_sample(const fs::path& root, const RasterSample& s) {
  const fs::path dir = root / s.sample_id;
  fs::create_directories(dir);
  write_f32(dir / "lst_hr.f32", s.lst_hr);
  write_f32(dir / "lst_lr.f32", s.lst_lr);
  write_f32(dir / "guid_hr.f32", s.guidance_hr);
}

inline RasterSample load_sample(const fs::path& root, const SampleRecord& rec, int scale, double resolution_m = 30.0) {
  RasterSample s;
  s.sample_id = rec.id;
  s.scale = scale;
  s.resolution_m = resolution_m;
  const fs::path dir = root / rec.id;
  s.lst_hr = read_f32(dir / "lst_hr.f32", rec.lst_hr);
  s.lst_lr = read_f32(dir / "lst_lr.f32", rec.lst_lr);
  s.guidance_hr = read_f32(dir / "guid_hr.f32", rec.guid_hr);
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Manifest (de)serialisation.

inline json stats_to_json(const NormalizationStats& st) {
  json arr = json::array();
  for (const auto& c : st.channels)
    arr.push_back({{"role", c.role}, {"mean", c.mean}, {"std", c.std}, {"min", c.min}, {"max", c.max}});
  return arr;
}

inline NormalizationStats stats_from_json(const json& j) {
  NormalizationStats st;
  for (const auto& c : j) {
    ChannelStats cs;
    cs.role = c.at("role").get<std::string>();
    cs.mean = c.at("mean").get<double>();
    cs.std = c.at("std").get<double>();
    cs.min = c.at("min").get<double>();
    cs.max = c.at("max").get<double>();
    st.channels.push_back(cs);
  }
  st.validate();
  return st;
}

inline json manifest_to_json(const DatasetManifest& m) {
  json j;
  j["format"] = "mocolsk-dataset";
  j["version"] = 1;
  j["scale"] = m.scale;
  j["resolution_m"] = m.resolution_m;
  j["generator"] = m.generator.is_null() ? json::object() : m.generator;
  j["split_seed"] = m.split_seed ? json(*m.split_seed) : json(nullptr);
  j["samples"] = json::array();
  for (const auto& r : m.samples)
    j["samples"].push_back(
        {{"id", r.id}, {"lst_hr", r.lst_hr}, {"lst_lr", r.lst_lr}, {"guid_hr", r.guid_hr}, {"split", split_name(r.split)}});
  j["stats"] = m.stats ? stats_to_json(*m.stats) : json(nullptr);
  return j;
}

inline DatasetManifest manifest_from_json(const json& j) {
  try {
    if (j.value("format", std::string()) != "mocolsk-dataset") throw ValidationError("not a mocolsk dataset manifest");
    DatasetManifest m;
    m.scale = j.at("scale").get<int>();
    m.resolution_m = j.value("resolution_m", 30.0);
    if (j.contains("generator")) m.generator = j["generator"];
    if (j.contains("split_seed") && !j["split_seed"].is_null()) m.split_seed = j["split_seed"].get<std::uint64_t>();
    for (const auto& r : j.at("samples")) {
      SampleRecord rec;
      rec.id = r.at("id").get<std::string>();
      rec.lst_hr = r.at("lst_hr").get<Shape>();
      rec.lst_lr = r.at("lst_lr").get<Shape>();
      rec.guid_hr = r.at("guid_hr").get<Shape>();
      rec.split = parse_split(r.value("split", std::string("none")));
      m.samples.push_back(std::move(rec));
    }
    if (j.contains("stats") && !j["stats"].is_null()) m.stats = stats_from_json(j["stats"]);
    return m;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed manifest: ") + e.what());
  }
}

inline void write_manifest(const fs::path& root, const DatasetManifest& m) {
  fs::create_directories(root);
  std::ofstream os(root / "manifest.json", std::ios::trunc);
  if (!os) throw IoError("cannot write manifest in " + root.string());
  os << manifest_to_json(m).dump(2) << '\n';
}

inline DatasetManifest read_manifest(const fs::path& root) {
  std::ifstream is(root / "manifest.json");
  if (!is) throw IoError("no manifest.json in " + root.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("manifest is not valid JSON: ") + e.what());
  }
  return manifest_from_json(j);
}

inline SampleRecord record_for(const RasterSample& s, Split split = Split::kNone) {
  return {s.sample_id, s.lst_hr.shape, s.lst_lr.shape, s.guidance_hr.shape, split};
}

// ---------------------------------------------------------------------------
// Operations.

/// Writes `count` synthetic scenes plus a manifest (no split, no stats).
inline DatasetManifest synth_generate(const fs::path& root, int count, int hr_size, int scale, std::uint64_t seed) {
  if (scale != 2 && scale != 4 && scale != 8)
    throw ValidationError("invalid scale " + std::to_string(scale) + " (expected 2, 4 or 8)");
  if (count < 1) throw ValidationError("count must be >= 1");
  if (hr_size < 1 || hr_size % scale)
    throw ValidationError("hr_size " + std::to_string(hr_size) + " is non-divisible by scale " + std::to_string(scale));
  DatasetManifest m;
  m.scale = scale;
  m.generator = {{"count", count}, {"hr_size", hr_size}, {"scale", scale}, {"seed", seed}};
  for (int i = 0; i < count; ++i) {
    RasterSample s = synth_sample(sample_id(i), hr_size, scale, splitmix64(seed) ^ static_cast<std::uint64_t>(i));
    save_sample(root, s);
    m.samples.push_back(record_for(s));
  }
  write_manifest(root, m);
  return m;
}

/// Seeded shuffle, then contiguous 6:1:3 assignment; train takes the
/// rounding remainder.
inline DatasetManifest split_dataset(DatasetManifest m, std::uint64_t seed) {
  const std::size_t n = m.samples.size();
  if (n < 10) throw ValidationError("split needs at least 10 samples for a 6:1:3 ratio, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(splitmix64(seed));
  for (std::size_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(i + 1));
    std::swap(order[i], order[std::min(j, i)]);
  }
  const std::size_t n_val = n / 10, n_test = n * 3 / 10, n_train = n - n_val - n_test;
  for (std::size_t k = 0; k < n; ++k) {
    auto& rec = m.samples[order[k]];
    rec.split = k < n_train ? Split::kTrain : (k < n_train + n_val ? Split::kVal : Split::kTest);
  }
  m.split_seed = seed;
  return m;
}

/// Accumulates per-channel moments; visiting order does not change the
/// result because callers feed samples sorted by id.
class StatsAccumulator {
 public:
  explicit StatsAccumulator(std::vector<std::string> roles) : roles_(std::move(roles)) {
    sum_.assign(roles_.size(), 0.0);
    sq_.assign(roles_.size(), 0.0);
    count_.assign(roles_.size(), 0);
    min_.assign(roles_.size(), std::numeric_limits<double>::infinity());
    max_.assign(roles_.size(), -std::numeric_limits<double>::infinity());
  }

  /// grid: (C, H, W); channel c of the grid feeds accumulator slot offset+c.
  void add(const Tensor<float>& grid, std::size_t offset) {
    const std::size_t plane = static_cast<std::size_t>(grid.dim(1)) * grid.dim(2);
    for (int c = 0; c < grid.dim(0); ++c) {
      const std::size_t k = offset + c;
      for (std::size_t i = 0; i < plane; ++i) {
        const double v = grid.data[c * plane + i];
        sum_[k] += v;
        min_[k] = std::min(min_[k], v);
        max_[k] = std::max(max_[k], v);
      }
      count_[k] += plane;
    }
  }

  // Second pass for the variance, around the final mean.
  void add_deviation(const Tensor<float>& grid, std::size_t offset) {
    const std::size_t plane = static_cast<std::size_t>(grid.dim(1)) * grid.dim(2);
    for (int c = 0; c < grid.dim(0); ++c) {
      const std::size_t k = offset + c;
      const double mu = sum_[k] / static_cast<double>(count_[k]);
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = grid.data[c * plane + i] - mu;
        sq_[k] += d * d;
      }
    }
  }

  NormalizationStats finish() const {
    NormalizationStats st;
    for (std::size_t k = 0; k < roles_.size(); ++k) {
      if (count_[k] == 0) throw ValidationError("no pixels accumulated for channel " + roles_[k]);
      ChannelStats c;
      c.role = roles_[k];
      c.mean = sum_[k] / static_cast<double>(count_[k]);
      c.std = std::sqrt(sq_[k] / static_cast<double>(count_[k]));
      c.min = min_[k];
      c.max = max_[k];
      if (!(c.std > 0) || !(c.max > c.min)) throw DegenerateInput("channel '" + c.role + "' has zero variance");
      st.channels.push_back(c);
    }
    return st;
  }

 private:
  std::vector<std::string> roles_;
  std::vector<double> sum_, sq_, min_, max_;
  std::vector<std::size_t> count_;
};

inline std::vector<std::string> stat_roles(int guidance_channels) {
  std::vector<std::string> roles{"lst"};
  for (int c = 0; c < guidance_channels; ++c)
    roles.push_back(c < kGuidanceChannels ? guidance_role(c) : "guidance" + std::to_string(c));
  return roles;
}

/// Global per-channel mean/std/min/max over the given samples (LST from the
/// HR grids, then each guidance channel).
inline NormalizationStats compute_stats(std::vector<const RasterSample*> samples) {
  if (samples.empty()) throw ValidationError("compute_stats: split is empty");
  std::sort(samples.begin(), samples.end(),
            [](const RasterSample* a, const RasterSample* b) { return a->sample_id < b->sample_id; });
  StatsAccumulator acc(stat_roles(samples.front()->guidance_hr.dim(0)));
  for (const auto* s : samples) {
    acc.add(s->lst_hr, 0);
    acc.add(s->guidance_hr, 1);
  }
  for (const auto* s : samples) {
    acc.add_deviation(s->lst_hr, 0);
    acc.add_deviation(s->guidance_hr, 1);
  }
  return acc.finish();
}

/// Loads the requested split from disk and computes its statistics.
inline NormalizationStats compute_stats(const fs::path& root, const DatasetManifest& m, Split split = Split::kTrain) {
  std::vector<RasterSample> loaded;
  for (const auto* rec : m.in_split(split)) loaded.push_back(load_sample(root, *rec, m.scale, m.resolution_m));
  std::vector<const RasterSample*> ptrs;
  for (const auto& s : loaded) ptrs.push_back(&s);
  return compute_stats(ptrs);
}

// ---------------------------------------------------------------------------
// Normalization. Channel dim is 0 for rank-3 grids and 1 for rank-4 batches;
// channel c uses stats[c].

namespace detail {
template <typename T, typename F>
Tensor<T> per_channel(const Tensor<T>& x, std::span<const ChannelStats> stats, F f) {
  if (x.rank() != 3 && x.rank() != 4) throw ShapeError("normalize expects (C,H,W) or (B,C,H,W)");
  const int cdim = x.rank() == 3 ? 0 : 1;
  const int C = x.shape[cdim];
  if (static_cast<int>(stats.size()) != C)
    throw ShapeError("normalize: " + std::to_string(stats.size()) + " channel stats for " + std::to_string(C) +
                     " channels");
  const std::size_t plane = static_cast<std::size_t>(x.shape[cdim + 1]) * x.shape[cdim + 2];
  const int B = x.rank() == 3 ? 1 : x.shape[0];
  Tensor<T> out(x.shape);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const std::size_t off = (static_cast<std::size_t>(b) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) out.data[off + i] = f(x.data[off + i], stats[c]);
    }
  return out;
}
}  // namespace detail

template <typename T>
Tensor<T> normalize(const Tensor<T>& x, std::span<const ChannelStats> stats, Strategy strategy) {
  switch (strategy) {
    case Strategy::kNone:
      return x;
    case Strategy::kZScore:
      return detail::per_channel(x, stats, [](T v, const ChannelStats& s) {
        return static_cast<T>((static_cast<double>(v) - s.mean) / s.std);
      });
    case Strategy::kMinMax:
      return detail::per_channel(x, stats, [](T v, const ChannelStats& s) {
        return static_cast<T>((static_cast<double>(v) - s.min) / (s.max - s.min));
      });
  }
  return x;
}

template <typename T>
Tensor<T> denormalize(const Tensor<T>& x, std::span<const ChannelStats> stats, Strategy strategy) {
  switch (strategy) {
    case Strategy::kNone:
      return x;
    case Strategy::kZScore:
      return detail::per_channel(x, stats, [](T v, const ChannelStats& s) {
        return static_cast<T>(static_cast<double>(v) * s.std + s.mean);
      });
    case Strategy::kMinMax:
      return detail::per_channel(x, stats, [](T v, const ChannelStats& s) {
        return static_cast<T>(static_cast<double>(v) * (s.max - s.min) + s.min);
      });
  }
  return x;
}

/// (scale, offset) such that kelvin = scale * normalized + offset for LST.
inline std::pair<double, double> lst_affine(const NormalizationStats& st, Strategy strategy) {
  const auto& c = st.lst();
  switch (strategy) {
    case Strategy::kNone:
      return {1.0, 0.0};
    case Strategy::kZScore:
      return {c.std, c.mean};
    case Strategy::kMinMax:
      return {c.max - c.min, c.min};
  }
  return {1.0, 0.0};
}

// ---------------------------------------------------------------------------
// In-memory dataset for training and evaluation.

struct LoadedDataset {
  DatasetManifest manifest;
  std::vector<RasterSample> samples;

  std::vector<const RasterSample*> in_split(Split s) const {
    std::vector<const RasterSample*> out;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (manifest.samples[i].split == s) out.push_back(&samples[i]);
    return out;
  }
};

inline LoadedDataset load_dataset(const fs::path& root) {
  LoadedDataset d;
  d.manifest = read_manifest(root);
  for (const auto& rec : d.manifest.samples) d.samples.push_back(load_sample(root, rec, d.manifest.scale, d.manifest.resolution_m));
  return d;
}

}  // namespace mocolsk::raster
