// Copyright 2026 The mocolsk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include "mocolsk/raster.hpp"

namespace mocolsk::testing {

/// Synthetic dataset with a 6:1:3 split and train-split stats, as the CLI writes it.
inline raster::DatasetManifest make_split_dataset(const std::filesystem::path& root, int count, int hr_size, int scale,
                                                  std::uint64_t seed) {
  auto m = raster::synth_generate(root, count, hr_size, scale, seed);
  m = raster::split_dataset(std::move(m), seed);
  m.stats = raster::compute_stats(root, m, raster::Split::kTrain);
  raster::write_manifest(root, m);
  return m;
}

}  // namespace mocolsk::testing
