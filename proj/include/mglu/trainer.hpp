// Copyright (c) 2026 The MGLU Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mglu/autograd.hpp"
#include "mglu/layer.hpp"
#include "mglu/masks.hpp"
#include "mglu/reference.hpp"
#include "mglu/tensor.hpp"

namespace mglu {

enum class Schedule { constant, cosine };
enum class MaskMode { learned, fixed };
enum class VariantKind { glu, mglu, ablation, topk };

constexpr std::string_view to_string(Schedule s) { return s == Schedule::constant ? "constant" : "cosine"; }
constexpr std::string_view to_string(MaskMode m) { return m == MaskMode::learned ? "learned" : "fixed"; }
constexpr std::string_view to_string(VariantKind v) {
  switch (v) {
    case VariantKind::glu: return "glu";
    case VariantKind::mglu: return "mglu";
    case VariantKind::ablation: return "ablation";
    case VariantKind::topk: return "topk";
  }
  return "unknown";
}

struct TrainVariant {
  VariantKind kind = VariantKind::mglu;
  AblationVariant ablation = AblationVariant::no_masks;  // used when kind == ablation
  std::size_t top_k = 1;                                 // used when kind == topk

  friend bool operator==(const TrainVariant&, const TrainVariant&) = default;
};

struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t steps = 2000;
  std::size_t batch_size = 64;
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 0.1;
  double warmup_fraction = 0.1;
  double min_lr_ratio = 0.1;
  Schedule schedule = Schedule::cosine;
  MaskMode mask_mode = MaskMode::learned;
  double mask_lr_multiplier = 1.0;  // 10 turns on the boosted mask rate
  std::optional<std::size_t> freeze_masks_at;
  TrainVariant variant;
  std::size_t n_m = 1;
  Activation activation = Activation::swish;
  std::size_t h = 32;
  std::size_t d = 128;
  std::size_t out = 32;
  // Synthetic teacher task.
  std::size_t samples = 2048;
  std::size_t teacher_n_m = 2;
  std::size_t teacher_d = 0;  // 0 means d
  double noise = 0.01;
  std::uint64_t task_seed = 1234;
  std::size_t log_every = 50;
  std::size_t eval_samples = 512;  // leading dataset rows scored at each checkpoint

  void validate() const {
    require(lr >= 0.0 && std::isfinite(lr), Errc::invalid_argument, "lr must be finite and >= 0");
    require(warmup_fraction >= 0.0 && warmup_fraction <= 1.0, Errc::out_of_range, "warmup_fraction outside [0, 1]");
    require(min_lr_ratio >= 0.0 && min_lr_ratio <= 1.0, Errc::out_of_range, "min_lr_ratio outside [0, 1]");
    require(steps >= 1 && batch_size >= 1 && samples >= 1 && log_every >= 1 && eval_samples >= 1,
            Errc::invalid_argument, "steps, batch_size, samples, log_every and eval_samples must be >= 1");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, Errc::out_of_range, "betas outside [0, 1)");
    require(eps > 0.0 && weight_decay >= 0.0 && mask_lr_multiplier >= 0.0, Errc::invalid_argument,
            "eps must be > 0, weight_decay and mask_lr_multiplier >= 0");
    require(h >= 1 && d >= 1, Errc::invalid_argument, "h and d must be >= 1");
    require(out == h, Errc::invalid_argument, "out must equal h: W_o maps back to the hidden size");
    check_mask_count(n_m);
    check_mask_count(teacher_n_m);
    require(noise >= 0.0, Errc::invalid_argument, "noise must be >= 0");
    if (variant.kind == VariantKind::topk)
      require(variant.top_k >= 1 && variant.top_k <= n_m, Errc::out_of_range, "top_k outside 1..n_m");
  }
};

struct TrainReport {
  std::vector<std::size_t> steps;               // step index of each checkpoint
  std::vector<double> loss_curve;               // loss on the fixed probe rows at each checkpoint
  std::vector<double> train_loss_curve;         // mean batch loss since the previous checkpoint
  std::vector<std::vector<double>> mask_stats;  // gate ratio per mask at each checkpoint
  double final_loss = 0.0;                      // loss over the whole dataset after training
  std::size_t loss_spikes = 0;
  bool diverged = false;
  std::string error;
  double wall_time_s = 0.0;
};

struct Dataset {
  std::size_t h = 0;
  std::size_t out = 0;
  DenseMatrix<double> inputs;   // n x h
  DenseMatrix<double> targets;  // n x out
  std::size_t size() const noexcept { return inputs.rows(); }
};

// Teacher: an MGLU layer with fixed random Bernoulli(0.5) masks and W_o.
template <class T, class Rng>
MgluLayer<T> make_teacher(std::size_t h, std::size_t d, std::size_t n_m, Activation act, Rng& rng) {
  MgluLayer<T> t;
  t.weight = random_normal<T>(h, d, rng, 1.0 / std::sqrt(static_cast<double>(h)));
  t.masks = fixed_bernoulli_logits<T>(n_m, h, d, rng);
  t.activation = act;
  t.output_proj = random_normal<T>(d, h, rng, 1.0 / std::sqrt(static_cast<double>(d)));
  return t;
}

// Inputs are standard normal; targets are teacher(x) plus noise * N(0, 1).
inline Dataset make_synthetic_task(std::uint64_t seed, std::size_t n_samples, std::size_t h, std::size_t out,
                                   std::size_t d = 128, std::size_t teacher_n_m = 2, double noise = 0.01,
                                   Activation act = Activation::swish) {
  require(n_samples >= 1, Errc::invalid_argument, "n_samples must be >= 1");
  require(out == h, Errc::invalid_argument, "teacher output size must equal h");
  std::mt19937_64 rng(seed);
  const auto teacher = make_teacher<double>(h, d, teacher_n_m, act, rng);
  Dataset ds{h, out, DenseMatrix<double>(n_samples, h), DenseMatrix<double>(n_samples, out)};
  std::normal_distribution<double> n01(0.0, 1.0);
  for (auto& v : ds.inputs.values()) v = n01(rng);
  for (std::size_t s = 0; s < n_samples; ++s) {
    const auto y = reference::ffn_forward<double>(ds.inputs.row(s), teacher);
    auto row = ds.targets.row(s);
    for (std::size_t q = 0; q < out; ++q) row[q] = y[q] + noise * n01(rng);
  }
  return ds;
}

// Fraction of ones in each binarized mask.
template <class T>
std::vector<double> mask_gate_ratio(const MgluLayer<T>& layer) {
  const auto hard = layer.hard_masks();
  return ones_fraction(hard);
}

// Linear warmup to lr, then constant or cosine decay to min_lr_ratio * lr.
inline double scheduled_lr(const TrainConfig& c, std::size_t step) {
  const auto warm = static_cast<std::size_t>(std::llround(c.warmup_fraction * static_cast<double>(c.steps)));
  if (step < warm) return c.lr * static_cast<double>(step + 1) / static_cast<double>(warm);
  if (c.schedule == Schedule::constant) return c.lr;
  const double span = static_cast<double>(std::max<std::size_t>(1, c.steps - warm));
  const double progress = std::min(1.0, static_cast<double>(step - warm) / span);
  const double floor = c.min_lr_ratio * c.lr;
  return floor + 0.5 * (c.lr - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

// AdamW state for one parameter block. Weight decay is decoupled and applied
// only when `decay` is set.
class AdamBlock {
 public:
  explicit AdamBlock(std::size_t n = 0) : m_(n, 0.0), v_(n, 0.0) {}

  template <class T>
  void step(std::span<T> p, std::span<const T> g, const TrainConfig& c, double lr, std::size_t t, bool decay) {
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = static_cast<double>(g[k]);
      m_[k] = c.beta1 * m_[k] + (1.0 - c.beta1) * gk;
      v_[k] = c.beta2 * v_[k] + (1.0 - c.beta2) * gk * gk;
      double pk = static_cast<double>(p[k]);
      if (decay) pk -= lr * c.weight_decay * pk;
      pk -= lr * (m_[k] / bc1) / (std::sqrt(v_[k] / bc2) + c.eps);
      p[k] = static_cast<T>(pk);
    }
  }

 private:
  std::vector<double> m_;
  std::vector<double> v_;
};

struct GluModel {
  DenseMatrix<double> w_gate, w_value, w_out;
};

namespace detail {

inline double sq_error(std::span<const double> pred, std::span<const double> target, std::vector<double>& grad,
                       double scale) {
  double loss = 0.0;
  grad.resize(pred.size());
  for (std::size_t q = 0; q < pred.size(); ++q) {
    const double e = pred[q] - target[q];
    loss += e * e;
    grad[q] = 2.0 * e * scale;
  }
  return loss / static_cast<double>(pred.size());
}

// Counts a spike when the batch loss exceeds twice its running average.
struct SpikeMeter {
  double ema = 0.0;
  bool primed = false;
  std::size_t count = 0;
  void observe(double loss) {
    if (primed && loss > 2.0 * ema) ++count;
    ema = primed ? 0.9 * ema + 0.1 * loss : loss;
    primed = true;
  }
};

inline std::optional<AblationVariant> ablation_of(const TrainVariant& v) {
  if (v.kind == VariantKind::ablation) return v.ablation;
  return std::nullopt;
}

}  // namespace detail

template <class T = double>
MgluLayer<T> make_student(const TrainConfig& c, std::mt19937_64& rng) {
  LayerInit init;
  init.output_proj = true;
  if (c.variant.kind == VariantKind::topk) init.router_k = c.variant.top_k;
  auto layer = make_random_layer<T>(c.h, c.d, c.n_m, c.activation, rng, init);
  if (c.mask_mode == MaskMode::fixed) layer.masks = fixed_bernoulli_logits<T>(c.n_m, c.h, c.d, rng);
  return layer;
}

template <class T = double>
double dataset_loss(const MgluLayer<T>& layer, const Dataset& ds, std::optional<AblationVariant> ablation,
                    std::size_t rows = SIZE_MAX) {
  MgluTape<T> tape(layer, ablation);
  typename MgluTape<T>::Cache cache;
  double total = 0.0;
  std::vector<double> unused;
  rows = std::min(rows, ds.size());
  for (std::size_t s = 0; s < rows; ++s) {
    tape.forward(ds.inputs.row(s), cache);
    total += detail::sq_error(cache.out, ds.targets.row(s), unused, 0.0);
  }
  return total / static_cast<double>(rows);
}

inline double dataset_loss(const GluModel& m, const Dataset& ds, Activation act, std::size_t rows = SIZE_MAX) {
  double total = 0.0;
  std::vector<double> unused;
  rows = std::min(rows, ds.size());
  for (std::size_t s = 0; s < rows; ++s) {
    const auto y = reference::glu_forward<double>(ds.inputs.row(s), m.w_gate, m.w_value, act);
    const auto o = reference::matvec<double>(y, m.w_out);
    total += detail::sq_error(o, ds.targets.row(s), unused, 0.0);
  }
  return total / static_cast<double>(rows);
}

struct TrainResult {
  TrainReport report;
  std::optional<MgluLayer<double>> layer;
  std::optional<GluModel> glu;
};

// Mean-squared-error training on the synthetic teacher task. Batches are drawn
// with replacement from the dataset by a generator seeded from `seed`.
inline TrainResult train_on(const TrainConfig& c, const Dataset& ds) {
  c.validate();
  require(ds.h == c.h && ds.out == c.out, Errc::dimension_mismatch, "dataset dims differ from config");
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(c.seed);
  std::uniform_int_distribution<std::size_t> pick(0, ds.size() - 1);
  TrainResult res;
  TrainReport& rep = res.report;
  detail::SpikeMeter spikes;
  const auto ablation = detail::ablation_of(c.variant);
  const double scale = 1.0 / static_cast<double>(c.batch_size * c.out);
  std::vector<double> grad_out;
  double window = 0.0;
  std::size_t window_n = 0;

  std::size_t done = 0;
  auto checkpoint = [&](std::size_t step, double probe, std::vector<double> ratios) {
    rep.steps.push_back(step);
    rep.loss_curve.push_back(probe);
    rep.train_loss_curve.push_back(window_n ? window / static_cast<double>(window_n) : probe);
    rep.mask_stats.push_back(std::move(ratios));
    window = 0.0;
    window_n = 0;
  };
  auto diverge = [&](std::size_t step) {
    rep.diverged = true;
    rep.error = "non-finite loss at step " + std::to_string(step);
  };

  if (c.variant.kind == VariantKind::glu) {
    GluModel m;
    const double ws = 1.0 / std::sqrt(static_cast<double>(c.h));
    m.w_gate = random_normal<double>(c.h, c.d, rng, ws);
    m.w_value = random_normal<double>(c.h, c.d, rng, ws);
    m.w_out = random_normal<double>(c.d, c.h, rng, 1.0 / std::sqrt(static_cast<double>(c.d)));
    AdamBlock ag(m.w_gate.size()), av(m.w_value.size()), ao(m.w_out.size());
    for (std::size_t step = 0; step < c.steps; ++step) {
      DenseMatrix<double> gg(c.h, c.d), gv(c.h, c.d), go(c.d, c.h);
      double loss = 0.0;
      for (std::size_t b = 0; b < c.batch_size; ++b) {
        const std::size_t s = pick(rng);
        auto x = ds.inputs.row(s);
        const auto y = reference::glu_forward<double>(x, m.w_gate, m.w_value, c.activation);
        const auto o = reference::matvec<double>(y, m.w_out);
        loss += detail::sq_error(o, ds.targets.row(s), grad_out, scale);
        DenseVector<double> dy(c.d, 0.0);
        for (std::size_t j = 0; j < c.d; ++j)
          for (std::size_t q = 0; q < c.h; ++q) {
            dy[j] += m.w_out(j, q) * grad_out[q];
            go(j, q) += y[j] * grad_out[q];
          }
        const auto g = glu_backward<double>(x, m.w_gate, m.w_value, c.activation, dy);
        for (std::size_t k = 0; k < gg.size(); ++k) {
          gg.values()[k] += g.d_W_g.values()[k];
          gv.values()[k] += g.d_W_v.values()[k];
        }
      }
      loss /= static_cast<double>(c.batch_size);
      if (!std::isfinite(loss)) {
        diverge(step);
        break;
      }
      spikes.observe(loss);
      window += loss;
      ++window_n;
      const double lr = scheduled_lr(c, step);
      ag.step<double>(m.w_gate.values(), gg.values(), c, lr, step + 1, true);
      av.step<double>(m.w_value.values(), gv.values(), c, lr, step + 1, true);
      ao.step<double>(m.w_out.values(), go.values(), c, lr, step + 1, true);
      done = step + 1;
      if (done % c.log_every == 0 || done == c.steps)
        checkpoint(done, dataset_loss(m, ds, c.activation, c.eval_samples), {});
    }
    rep.final_loss = rep.diverged ? std::numeric_limits<double>::quiet_NaN() : dataset_loss(m, ds, c.activation);
    res.glu = std::move(m);
  } else {
    auto layer = make_student<double>(c, rng);
    AdamBlock aw(layer.weight.size()), ao(layer.output_proj->size());
    AdamBlock ar(layer.router ? layer.router->weight.size() : 0);
    std::vector<AdamBlock> al(c.n_m, AdamBlock(c.h * c.d));
    for (std::size_t step = 0; step < c.steps; ++step) {
      MgluTape<double> tape(layer, ablation);
      auto acc = tape.make_accumulator();
      typename MgluTape<double>::Cache cache;
      double loss = 0.0;
      for (std::size_t b = 0; b < c.batch_size; ++b) {
        const std::size_t s = pick(rng);
        auto x = ds.inputs.row(s);
        tape.forward(x, cache);
        loss += detail::sq_error(cache.out, ds.targets.row(s), grad_out, scale);
        tape.backward(x, cache, grad_out, acc, false);
      }
      loss /= static_cast<double>(c.batch_size);
      if (!std::isfinite(loss)) {
        diverge(step);
        break;
      }
      spikes.observe(loss);
      window += loss;
      ++window_n;
      const auto g = tape.finish(acc);
      const double lr = scheduled_lr(c, step);
      const std::size_t t = step + 1;
      aw.step<double>(layer.weight.values(), g.d_W.values(), c, lr, t, true);
      ao.step<double>(layer.output_proj->values(), g.d_W_o->values(), c, lr, t, true);
      if (layer.router) ar.step<double>(layer.router->weight.values(), g.d_W_r->values(), c, lr, t, true);
      const bool masks_live = c.mask_mode == MaskMode::learned && (!c.freeze_masks_at || step < *c.freeze_masks_at);
      if (masks_live)
        for (std::size_t i = 0; i < c.n_m; ++i)
          al[i].step<double>(layer.logits()[i].values(), g.d_logits[i].values(), c, lr * c.mask_lr_multiplier, t,
                             false);
      done = step + 1;
      if (done % c.log_every == 0 || done == c.steps)
        checkpoint(done, dataset_loss(layer, ds, ablation, c.eval_samples), mask_gate_ratio(layer));
    }
    rep.final_loss = rep.diverged ? std::numeric_limits<double>::quiet_NaN() : dataset_loss(layer, ds, ablation);
    res.layer = std::move(layer);
  }
  rep.loss_spikes = spikes.count;
  rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

inline Dataset make_task_for(const TrainConfig& c) {
  return make_synthetic_task(c.task_seed, c.samples, c.h, c.out, c.teacher_d ? c.teacher_d : c.d, c.teacher_n_m,
                             c.noise, c.activation);
}

inline TrainReport train(const TrainConfig& c) {
  c.validate();
  return train_on(c, make_task_for(c)).report;
}

}  // namespace mglu
