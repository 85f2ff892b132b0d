// Copyright 2026 The mocolsk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mocolsk/tensor.hpp"

namespace mocolsk {

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Uniform double in [0,1) from a 64-bit engine; bit-stable across standard
/// libraries, unlike std::uniform_real_distribution.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double standard_normal(std::mt19937_64& rng) {
  double u1 = unit_uniform(rng);
  while (u1 <= 0.0) u1 = unit_uniform(rng);
  const double u2 = unit_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

enum class Init {
  kKaiming,  // uniform, negative slope sqrt(5): bound 1/sqrt(fan_in)
  kBias,     // uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
  kZeros,
  kConstant,
};

/// Ordered, named collection of trainable parameters. Each parameter is
/// initialised from its own stream seeded by (seed, name), so the initial
/// value of a parameter does not depend on what else the network contains.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  Var<T> create(const std::string& name, Shape shape, Init init, int fan_in, double constant = 0.0) {
    if (index_.count(name)) throw ValidationError("duplicate parameter name: " + name);
    Tensor<T> t(std::move(shape));
    std::mt19937_64 rng(splitmix64(seed_ ^ fnv1a(name)));
    const double gain = std::sqrt(2.0 / (1.0 + 5.0));
    const double fan = std::max(fan_in, 1);
    switch (init) {
      case Init::kKaiming: {
        const double bound = gain * std::sqrt(3.0 / fan);
        for (auto& v : t.data) v = static_cast<T>((2.0 * unit_uniform(rng) - 1.0) * bound);
        break;
      }
      case Init::kBias: {
        const double bound = 1.0 / std::sqrt(fan);
        for (auto& v : t.data) v = static_cast<T>((2.0 * unit_uniform(rng) - 1.0) * bound);
        break;
      }
      case Init::kZeros:
        break;
      case Init::kConstant:
        for (auto& v : t.data) v = static_cast<T>(constant);
        break;
    }
    Var<T> p(std::move(t), true);
    index_[name] = entries_.size();
    entries_.emplace_back(name, p);
    return p;
  }

  const std::vector<std::pair<std::string, Var<T>>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  Var<T> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("no parameter named " + name);
    return entries_[it->second].second;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : entries_) n += p.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, p] : entries_) p.zero_grad();
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::vector<std::pair<std::string, Var<T>>> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Name prefix plus the store it writes to; passed down while building modules.
template <typename T>
struct Scope {
  ParamStore<T>* store;
  std::string prefix;

  Scope sub(const std::string& name) const { return {store, prefix.empty() ? name : prefix + "." + name}; }
  Var<T> param(const std::string& name, Shape shape, Init init, int fan_in, double constant = 0.0) const {
    return store->create(prefix.empty() ? name : prefix + "." + name, std::move(shape), init, fan_in, constant);
  }
};

}  // namespace mocolsk
