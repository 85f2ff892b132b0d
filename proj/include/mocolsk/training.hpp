// Copyright 2026 The mocolsk Authors
// SPDX-License-Identifier: Apache-2.0

// Training protocol: data preparation, AdamW, cosine annealing with warm
// restarts, the training loop with periodic validation, and evaluation in
// kelvin.

#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mocolsk/losses.hpp"
#include "mocolsk/metrics.hpp"
#include "mocolsk/network.hpp"
#include "mocolsk/raster.hpp"

namespace mocolsk {

struct OptimSpec {
  double lr = 1e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int iterations = 500;
  int batch = 4;
  int t0 = 0;  // 0: iterations / 4
  int t_mult = 2;
  double lr_min = 1e-6;
  int val_every = 100;

  int cycle_length() const { return t0 > 0 ? t0 : std::max(1, iterations / 4); }

  void validate() const {
    if (!(lr >= 0)) throw ValidationError("lr must be >= 0");
    if (!(weight_decay >= 0)) throw ValidationError("weight_decay must be >= 0");
    if (iterations < 1) throw ValidationError("iterations must be >= 1");
    if (batch < 1) throw ValidationError("batch must be >= 1");
    if (t0 < 0 || t_mult < 1) throw ValidationError("scheduler needs t0 >= 0 and t_mult >= 1");
    if (!(lr_min >= 0) || lr_min > lr) throw ValidationError("lr_min must be in [0, lr]");
    if (val_every < 1) throw ValidationError("val_every must be >= 1");
  }
};

/// Cosine annealing with warm restarts; cycle j lasts T0 * Tmult^j steps.
inline double lr_schedule(long step, const OptimSpec& o) {
  if (step < 0) throw ValidationError("lr_schedule: negative step");
  long t = step, tj = o.cycle_length();
  while (t >= tj) {
    t -= tj;
    tj *= o.t_mult;
  }
  return o.lr_min + (o.lr - o.lr_min) * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / tj)) / 2.0;
}

/// Decoupled weight decay Adam over every parameter of a store.
template <typename T>
class AdamW {
 public:
  AdamW(ParamStore<T>& store, const OptimSpec& o) : store_(&store), o_(o) {
    for (const auto& [_, p] : store.entries()) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(o_.beta1, t_), bc2 = 1.0 - std::pow(o_.beta2, t_);
    const auto& entries = store_->entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      Var<T> p = entries[i].second;
      const auto* node = p.node();
      if (node->grad.empty()) continue;
      auto& val = p.mutable_value().data;
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < val.size(); ++j) {
        const double g = node->grad[j];
        m[j] = o_.beta1 * m[j] + (1 - o_.beta1) * g;
        v[j] = o_.beta2 * v[j] + (1 - o_.beta2) * g * g;
        double w = val[j];
        w -= lr * o_.weight_decay * w;
        w -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + o_.eps);
        val[j] = static_cast<T>(w);
      }
    }
  }

 private:
  ParamStore<T>* store_;
  OptimSpec o_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

// ---------------------------------------------------------------------------
// Normalized, batch-ready samples.

struct PreparedSample {
  std::string id;
  Tensor<float> lr, guid, hr;  // normalized, each with a leading batch dim of 1
  Tensor<double> hr_kelvin, lr_kelvin;
};

struct Normalizer {
  raster::NormalizationStats stats;
  raster::Strategy strategy = raster::Strategy::kZScore;           // LST
  raster::Strategy guidance_strategy = raster::Strategy::kZScore;  // guidance stack

  KelvinMap kelvin_map() const {
    const auto [a, b] = raster::lst_affine(stats, strategy);
    return {a, b, stats.lst().max - stats.lst().min};
  }
};

inline Tensor<float> with_batch(Tensor<float> t) {
  t.shape.insert(t.shape.begin(), 1);
  return t;
}

inline std::vector<PreparedSample> prepare(const std::vector<const raster::RasterSample*>& samples, const Normalizer& n) {
  std::vector<PreparedSample> out;
  for (const auto* s : samples) {
    PreparedSample p;
    p.id = s->sample_id;
    p.lr = with_batch(raster::normalize(s->lst_lr, n.stats.lst_span(), n.strategy));
    p.hr = with_batch(raster::normalize(s->lst_hr, n.stats.lst_span(), n.strategy));
    p.guid = with_batch(raster::normalize(s->guidance_hr, n.stats.guidance(), n.guidance_strategy));
    p.hr_kelvin = s->lst_hr.cast<double>();
    p.lr_kelvin = s->lst_lr.cast<double>();
    out.push_back(std::move(p));
  }
  return out;
}

/// Concatenates samples along the batch dimension.
inline Tensor<float> stack(const std::vector<const Tensor<float>*>& parts) {
  Shape s = parts.front()->shape;
  for (const auto* p : parts)
    if (p->shape != s) throw ShapeError("cannot batch samples of different shapes");
  s[0] = static_cast<int>(parts.size());
  Tensor<float> out(s);
  std::size_t off = 0;
  for (const auto* p : parts) {
    std::copy(p->data.begin(), p->data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += p->size();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation.

/// Maps a normalized prediction back to kelvin.
inline std::vector<double> to_kelvin(const Tensor<float>& pred, const Normalizer& n) {
  const auto [a, b] = raster::lst_affine(n.stats, n.strategy);
  std::vector<double> out(pred.size());
  if (n.strategy == raster::Strategy::kNone) {
    for (std::size_t i = 0; i < pred.size(); ++i) out[i] = pred.data[i];
  } else {
    for (std::size_t i = 0; i < pred.size(); ++i) out[i] = a * static_cast<double>(pred.data[i]) + b;
  }
  return out;
}

template <typename T>
metrics::MetricReport evaluate(const Network<T>& net, const std::vector<PreparedSample>& samples, const Normalizer& n) {
  std::vector<metrics::SampleMetrics> rows;
  for (const auto& s : samples) {
    const Tensor<T> pred = net.predict(s.lr.template cast<T>(), s.guid.template cast<T>());
    const auto k = to_kelvin(pred.template cast<float>(), n);
    rows.push_back(metrics::sample_metrics(s.id, k, s.hr_kelvin.data));
  }
  return metrics::aggregate(std::move(rows), net.config().scale);
}

/// Reference: bicubic upsampling of the LR LST, scored in kelvin.
inline metrics::MetricReport evaluate_bicubic(const std::vector<PreparedSample>& samples, int scale) {
  std::vector<metrics::SampleMetrics> rows;
  for (const auto& s : samples) {
    Tensor<double> lr = s.lr_kelvin;
    lr.shape.insert(lr.shape.begin(), 1);
    const Tensor<double> up = bicubic_resize(lr, scale);
    rows.push_back(metrics::sample_metrics(s.id, up.data, s.hr_kelvin.data));
  }
  return metrics::aggregate(std::move(rows), scale);
}

// ---------------------------------------------------------------------------
// Training loop.

struct HistoryRow {
  long step = 0;
  double loss = 0, lr = 0;
  std::optional<double> val_rmse;
};

struct TrainResult {
  std::vector<HistoryRow> history;
  long steps = 0;
};

inline std::string format_history_row(const HistoryRow& r) {
  char buf[128];
  if (r.val_rmse)
    std::snprintf(buf, sizeof buf, "%ld,%.9g,%.9g,%.9g", r.step, r.loss, r.lr, *r.val_rmse);
  else
    std::snprintf(buf, sizeof buf, "%ld,%.9g,%.9g,", r.step, r.loss, r.lr);
  return buf;
}

inline void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& h) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "step,loss,lr,val_rmse\n";
  for (const auto& r : h) os << format_history_row(r) << '\n';
}

struct TrainOptions {
  OptimSpec optim;
  LossSpec loss;
  std::uint64_t seed = 0;
  std::function<void(const HistoryRow&)> on_step;  // optional progress hook
};

template <typename T>
TrainResult train(Network<T>& net, const std::vector<PreparedSample>& train_set, const std::vector<PreparedSample>& val_set,
                  const Normalizer& norm, const TrainOptions& opt) {
  opt.optim.validate();
  opt.loss.validate();
  if (train_set.empty()) throw ValidationError("training split is empty");
  const KelvinMap kmap = norm.kelvin_map();
  const int batch = std::min<int>(opt.optim.batch, static_cast<int>(train_set.size()));
  AdamW<T> adam(net.params(), opt.optim);
  std::mt19937_64 rng(splitmix64(opt.seed ^ 0x7261696eULL));

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  TrainResult result;
  for (long step = 0; step < opt.optim.iterations; ++step) {
    if (cursor + batch > order.size()) {
      for (std::size_t i = order.size() - 1; i > 0; --i) {
        const auto j = static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(i + 1));
        std::swap(order[i], order[std::min(j, i)]);
      }
      cursor = 0;
    }
    std::vector<const Tensor<float>*> lr, guid, hr;
    for (int b = 0; b < batch; ++b) {
      const auto& s = train_set[order[cursor + b]];
      lr.push_back(&s.lr);
      guid.push_back(&s.guid);
      hr.push_back(&s.hr);
    }
    cursor += batch;

    const double rate = lr_schedule(step, opt.optim);
    net.params().zero_grad();
    double loss_value;
    {
      Var<T> pred = net.forward(Var<T>(stack(lr).template cast<T>()), Var<T>(stack(guid).template cast<T>()));
      Var<T> loss = combined_loss(pred, Var<T>(stack(hr).template cast<T>()), opt.loss, kmap);
      loss_value = static_cast<double>(loss.item());
      if (!std::isfinite(loss_value)) throw NumericError("non-finite loss at step " + std::to_string(step));
      backward(loss);
    }
    adam.step(rate);

    HistoryRow row{step, loss_value, rate, std::nullopt};
    const bool last = step + 1 == opt.optim.iterations;
    if (!val_set.empty() && ((step + 1) % opt.optim.val_every == 0 || last))
      row.val_rmse = evaluate(net, val_set, norm).aggregate.rmse;
    result.history.push_back(row);
    if (opt.on_step) opt.on_step(row);
  }
  net.params().zero_grad();
  result.steps = opt.optim.iterations;
  return result;
}

}  // namespace mocolsk
