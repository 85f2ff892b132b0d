// Copyright 2026 The mocolsk Authors
// SPDX-License-Identifier: Apache-2.0

// Reconstruction metrics in kelvin: RMSE, MAE, BIAS, CC and RSD, per sample
// and aggregated as the unweighted mean over samples.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "mocolsk/error.hpp"

namespace mocolsk::metrics {

namespace detail {
inline void check(std::span<const double> sr, std::span<const double> hr, const char* what) {
  if (sr.size() != hr.size())
    throw ShapeError(std::string(what) + ": size mismatch " + std::to_string(sr.size()) + " vs " +
                     std::to_string(hr.size()));
  if (sr.empty()) throw ValidationError(std::string(what) + ": empty input");
}

inline double mean(std::span<const double> x) {
  double s = 0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

// Sample standard deviation (N-1).
inline double sample_std(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double s = 0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size() - 1));
}
}  // namespace detail

inline double rmse(std::span<const double> sr, std::span<const double> hr) {
  detail::check(sr, hr, "rmse");
  double s = 0;
  for (std::size_t i = 0; i < sr.size(); ++i) s += (sr[i] - hr[i]) * (sr[i] - hr[i]);
  return std::sqrt(s / static_cast<double>(sr.size()));
}

inline double mae(std::span<const double> sr, std::span<const double> hr) {
  detail::check(sr, hr, "mae");
  double s = 0;
  for (std::size_t i = 0; i < sr.size(); ++i) s += std::abs(sr[i] - hr[i]);
  return s / static_cast<double>(sr.size());
}

inline double bias(std::span<const double> sr, std::span<const double> hr) {
  detail::check(sr, hr, "bias");
  double s = 0;
  for (std::size_t i = 0; i < sr.size(); ++i) s += sr[i] - hr[i];
  return s / static_cast<double>(sr.size());
}

/// Pearson correlation; zero variance on either side is DegenerateInput.
inline double cc(std::span<const double> sr, std::span<const double> hr) {
  detail::check(sr, hr, "cc");
  const double ms = detail::mean(sr), mh = detail::mean(hr);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < sr.size(); ++i) {
    const double a = sr[i] - ms, b = hr[i] - mh;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (!(sxx > 0) || !(syy > 0)) throw DegenerateInput("cc: zero variance input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// |sigma_sr - sigma_hr| / sigma_hr with N-1 standard deviations.
inline double rsd(std::span<const double> sr, std::span<const double> hr) {
  detail::check(sr, hr, "rsd");
  const double sh = detail::sample_std(hr);
  if (!(sh > 0)) throw DegenerateInput("rsd: reference has zero variance");
  return std::abs(detail::sample_std(sr) - sh) / sh;
}

struct SampleMetrics {
  std::string sample_id;
  double rmse = 0, mae = 0, bias = 0, cc = NAN, rsd = NAN;
  bool degenerate = false;
};

struct MetricReport {
  std::vector<SampleMetrics> samples;
  SampleMetrics aggregate;
  int degenerate_count = 0;
  int scale = 0;
};

inline SampleMetrics sample_metrics(const std::string& id, std::span<const double> sr, std::span<const double> hr) {
  SampleMetrics m;
  m.sample_id = id;
  m.rmse = rmse(sr, hr);
  m.mae = mae(sr, hr);
  m.bias = bias(sr, hr);
  try {
    m.cc = cc(sr, hr);
    m.rsd = rsd(sr, hr);
  } catch (const DegenerateInput&) {
    m.degenerate = true;
    m.cc = NAN;
    m.rsd = NAN;
  }
  return m;
}

/// Unweighted mean over samples; degenerate samples are left out of the cc
/// and rsd means and counted.
inline MetricReport aggregate(std::vector<SampleMetrics> samples, int scale = 0) {
  MetricReport r;
  r.scale = scale;
  r.samples = std::move(samples);
  r.aggregate.sample_id = "mean";
  if (r.samples.empty()) return r;
  double s_rmse = 0, s_mae = 0, s_bias = 0, s_cc = 0, s_rsd = 0;
  int n_ok = 0;
  // Summed in id order so the aggregate does not depend on row order.
  std::vector<const SampleMetrics*> order;
  for (const auto& m : r.samples) order.push_back(&m);
  std::sort(order.begin(), order.end(),
            [](const SampleMetrics* a, const SampleMetrics* b) { return a->sample_id < b->sample_id; });
  for (const SampleMetrics* mp : order) {
    const auto& m = *mp;
    s_rmse += m.rmse;
    s_mae += m.mae;
    s_bias += m.bias;
    if (m.degenerate) {
      ++r.degenerate_count;
    } else {
      s_cc += m.cc;
      s_rsd += m.rsd;
      ++n_ok;
    }
  }
  const double n = static_cast<double>(r.samples.size());
  r.aggregate.rmse = s_rmse / n;
  r.aggregate.mae = s_mae / n;
  r.aggregate.bias = s_bias / n;
  r.aggregate.cc = n_ok ? s_cc / n_ok : NAN;
  r.aggregate.rsd = n_ok ? s_rsd / n_ok : NAN;
  return r;
}

inline std::string format_row(const SampleMetrics& m) {
  auto f = [](double v) {
    if (std::isnan(v)) return std::string("nan");
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf);
  };
  return m.sample_id + "," + f(m.rmse) + "," + f(m.mae) + "," + f(m.bias) + "," + f(m.cc) + "," + f(m.rsd);
}

inline void write_csv(const std::filesystem::path& path, const MetricReport& r) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "sample_id,rmse,mae,bias,cc,rsd\n";
  for (const auto& m : r.samples) os << format_row(m) << '\n';
  os << format_row(r.aggregate) << '\n';
}

}  // namespace mocolsk::metrics
