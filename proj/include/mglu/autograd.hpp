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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mglu/activation.hpp"
#include "mglu/layer.hpp"
#include "mglu/masks.hpp"
#include "mglu/reference.hpp"
#include "mglu/tensor.hpp"

namespace mglu {

using reference::AblationVariant;

// Gate and value masks as affine functions of M: gate uses (a M + b) .* W,
// value uses (c M + e) .* W. The full MGLU is (1, 0, -1, 1).
struct StreamCoeffs {
  double a, b, c, e;
};

constexpr StreamCoeffs stream_coeffs(std::optional<AblationVariant> v) {
  if (!v) return {1, 0, -1, 1};
  switch (*v) {
    case AblationVariant::no_gate_mask: return {0, 1, -1, 1};
    case AblationVariant::no_value_mask: return {1, 0, 0, 1};
    case AblationVariant::no_masks: return {0, 1, 0, 1};
  }
  return {1, 0, -1, 1};
}

template <class T>
struct GradBundle {
  DenseVector<T> d_x;
  DenseMatrix<T> d_W;
  MaskLogits<T> d_logits;
  std::optional<DenseMatrix<T>> d_W_o;
  std::optional<DenseMatrix<T>> d_W_r;
};

// Forward with the hard masks, then a rank-1 accumulation of everything the
// backward needs. Gradients for a batch are the sum of per-sample calls to
// backward() followed by one finish().
template <class T>
class MgluTape {
 public:
  struct Cache {
    DenseVector<T> t;                   // x W
    std::vector<DenseVector<T>> s;      // x (M_i .* W), empty when skipped
    DenseVector<T> route;               // per-mask weight, 1 without a router
    DenseVector<T> router_logits;
    DenseVector<T> y;                   // intermediate, length d
    DenseVector<T> out;                 // y W_o when W_o is present, else y
  };

  struct Accumulator {
    DenseMatrix<T> outer_t;               // sum of x (x) dt
    std::vector<DenseMatrix<T>> outer_s;  // sum of x (x) ds_i
    DenseMatrix<T> d_W_o;
    DenseMatrix<T> d_W_r;
    DenseVector<T> d_x;                   // last sample only
  };

  explicit MgluTape(const MgluLayer<T>& layer, std::optional<AblationVariant> ablation = std::nullopt)
      : layer_(layer), coeffs_(stream_coeffs(ablation)) {
    layer.validate();
    require(!(ablation && layer.router), Errc::invalid_argument, "ablations are not routed");
    const auto hard = layer.hard_masks();
    for (const auto& m : hard) {
      masks_.push_back(mask_as_real<T>(m));
      DenseMatrix<T> mw(layer.h(), layer.d());
      auto w = layer.weight.values();
      auto mv = masks_.back().values();
      auto dst = mw.values();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = mv[k] * w[k];
      masked_.push_back(std::move(mw));
    }
  }

  const MgluLayer<T>& layer() const noexcept { return layer_; }
  std::size_t out_size() const noexcept { return layer_.output_proj ? layer_.h() : layer_.d(); }

  void forward(std::span<const T> x, Cache& c) const {
    require(x.size() == layer_.h(), Errc::dimension_mismatch, "input length != h");
    const std::size_t n_m = masks_.size();
    c.route.assign(n_m, T(1));
    if (layer_.router) {
      c.router_logits = reference::matvec(x, layer_.router->weight);
      c.route = reference::topk_softmax<T>(c.router_logits, layer_.router->top_k);
    }
    c.t = reference::matvec(x, layer_.weight);
    c.s.assign(n_m, {});
    c.y.assign(layer_.d(), T(0));
    const bool need_s = coeffs_.a != 0 || coeffs_.c != 0;
    for (std::size_t i = 0; i < n_m; ++i) {
      if (c.route[i] == T(0)) continue;
      c.s[i] = need_s ? reference::matvec(x, masked_[i]) : DenseVector<T>(layer_.d(), T(0));
      for (std::size_t j = 0; j < c.y.size(); ++j) {
        const T a = gate_of(c.s[i][j], c.t[j]);
        const T b = value_of(c.s[i][j], c.t[j]);
        c.y[j] += c.route[i] * (activate(layer_.activation, a) * b);
      }
    }
    c.out = layer_.output_proj ? reference::matvec<T>(c.y, *layer_.output_proj) : c.y;
  }

  Accumulator make_accumulator() const {
    Accumulator acc;
    acc.outer_t = DenseMatrix<T>(layer_.h(), layer_.d());
    acc.outer_s.assign(masks_.size(), DenseMatrix<T>(layer_.h(), layer_.d()));
    if (layer_.output_proj) acc.d_W_o = DenseMatrix<T>(layer_.d(), layer_.h());
    if (layer_.router) acc.d_W_r = DenseMatrix<T>(layer_.h(), masks_.size());
    return acc;
  }

  // Adds this sample's contribution for upstream gradient `u` (length
  // out_size()). d_x is overwritten when want_dx is set.
  void backward(std::span<const T> x, const Cache& c, std::span<const T> u, Accumulator& acc,
                bool want_dx = true) const {
    require(u.size() == out_size(), Errc::dimension_mismatch, "upstream length mismatch");
    const std::size_t h = layer_.h();
    const std::size_t d = layer_.d();
    const std::size_t n_m = masks_.size();
    const Activation g = layer_.activation;

    DenseVector<T> dy(d, T(0));
    if (layer_.output_proj) {
      const auto& wo = *layer_.output_proj;
      for (std::size_t j = 0; j < d; ++j) {
        const T* row = wo.row(j).data();
        T* grow = acc.d_W_o.row(j).data();
        T sum = T(0);
        for (std::size_t q = 0; q < h; ++q) {
          sum += row[q] * u[q];
          grow[q] += c.y[j] * u[q];
        }
        dy[j] = sum;
      }
    } else {
      std::copy(u.begin(), u.end(), dy.begin());
    }

    DenseVector<T> dt(d, T(0));
    std::vector<DenseVector<T>> ds(n_m);
    DenseVector<T> droute(n_m, T(0));
    const T ca = static_cast<T>(coeffs_.a), cb = static_cast<T>(coeffs_.b);
    const T cc = static_cast<T>(coeffs_.c), ce = static_cast<T>(coeffs_.e);
    for (std::size_t i = 0; i < n_m; ++i) {
      if (c.route[i] == T(0)) continue;
      ds[i].assign(d, T(0));
      for (std::size_t j = 0; j < d; ++j) {
        const T a = gate_of(c.s[i][j], c.t[j]);
        const T b = value_of(c.s[i][j], c.t[j]);
        const T ga = activate(g, a);
        droute[i] += dy[j] * ga * b;
        const T da = c.route[i] * dy[j] * activate_derivative(g, a) * b;
        const T db = c.route[i] * dy[j] * ga;
        ds[i][j] = ca * da + cc * db;
        dt[j] += cb * da + ce * db;
      }
    }

    DenseVector<T> dl;
    if (layer_.router) {
      // Softmax Jacobian over the selected set; the selection itself is constant.
      T dot = T(0);
      for (std::size_t i = 0; i < n_m; ++i) dot += c.route[i] * droute[i];
      dl.assign(n_m, T(0));
      for (std::size_t i = 0; i < n_m; ++i)
        if (c.route[i] != T(0)) dl[i] = c.route[i] * (droute[i] - dot);
      for (std::size_t p = 0; p < h; ++p) {
        T* row = acc.d_W_r.row(p).data();
        for (std::size_t i = 0; i < n_m; ++i) row[i] += x[p] * dl[i];
      }
    }

    for (std::size_t p = 0; p < h; ++p) {
      const T xp = x[p];
      T* ot = acc.outer_t.row(p).data();
      for (std::size_t j = 0; j < d; ++j) ot[j] += xp * dt[j];
      for (std::size_t i = 0; i < n_m; ++i) {
        if (ds[i].empty()) continue;
        T* os = acc.outer_s[i].row(p).data();
        const T* dsi = ds[i].data();
        for (std::size_t j = 0; j < d; ++j) os[j] += xp * dsi[j];
      }
    }

    if (want_dx) {
      acc.d_x.assign(h, T(0));
      for (std::size_t p = 0; p < h; ++p) {
        const T* w = layer_.weight.row(p).data();
        T sum = T(0);
        for (std::size_t j = 0; j < d; ++j) sum += w[j] * dt[j];
        for (std::size_t i = 0; i < n_m; ++i) {
          if (ds[i].empty()) continue;
          const T* mw = masked_[i].row(p).data();
          for (std::size_t j = 0; j < d; ++j) sum += mw[j] * ds[i][j];
        }
        if (layer_.router) {
          const T* wr = layer_.router->weight.row(p).data();
          for (std::size_t i = 0; i < n_m; ++i) sum += wr[i] * dl[i];
        }
        acc.d_x[p] = sum;
      }
    }
  }

  // d_W = outer_t + sum_i M_i .* outer_s_i; d_logits_i = W .* outer_s_i.
  GradBundle<T> finish(const Accumulator& acc) const {
    GradBundle<T> g;
    g.d_x = acc.d_x;
    g.d_W = acc.outer_t;
    std::vector<DenseMatrix<T>> dl;
    auto dw = g.d_W.values();
    auto w = layer_.weight.values();
    for (std::size_t i = 0; i < masks_.size(); ++i) {
      auto os = acc.outer_s[i].values();
      auto m = masks_[i].values();
      DenseMatrix<T> li(layer_.h(), layer_.d());
      auto lv = li.values();
      for (std::size_t k = 0; k < dw.size(); ++k) {
        dw[k] += m[k] * os[k];
        lv[k] = w[k] * os[k];
      }
      dl.push_back(std::move(li));
    }
    g.d_logits = MaskLogits<T>(std::move(dl));
    if (layer_.output_proj) g.d_W_o = acc.d_W_o;
    if (layer_.router) g.d_W_r = acc.d_W_r;
    return g;
  }

 private:
  T gate_of(T s, T t) const { return static_cast<T>(coeffs_.a) * s + static_cast<T>(coeffs_.b) * t; }
  T value_of(T s, T t) const { return static_cast<T>(coeffs_.c) * s + static_cast<T>(coeffs_.e) * t; }

  const MgluLayer<T>& layer_;
  StreamCoeffs coeffs_;
  std::vector<DenseMatrix<T>> masks_;
  std::vector<DenseMatrix<T>> masked_;
};

// Gradients of <upstream, forward(x)> for one sample. `upstream` has length h
// when the layer carries W_o, else d. d_logits is the straight-through
// gradient: the relaxed-forward gradient taken at soft mask = hard mask.
template <class T>
GradBundle<T> mglu_backward(std::span<const T> x, const MgluLayer<T>& layer, std::span<const T> upstream,
                            std::optional<AblationVariant> ablation = std::nullopt) {
  MgluTape<T> tape(layer, ablation);
  typename MgluTape<T>::Cache cache;
  tape.forward(x, cache);
  auto acc = tape.make_accumulator();
  tape.backward(x, cache, upstream, acc, true);
  return tape.finish(acc);
}

// Continuous surrogate: mask i enters the gate as S_i and the value as 1 - S_i
// (or the ablation's affine forms). `route` scales each term; empty means 1.
template <class T>
DenseVector<T> relaxed_mglu_forward(std::span<const T> x, const DenseMatrix<T>& w,
                                    std::span<const DenseMatrix<T>> soft, Activation kind,
                                    std::optional<AblationVariant> ablation = std::nullopt,
                                    std::span<const T> route = {}) {
  require(!soft.empty(), Errc::invalid_argument, "at least one soft mask is required");
  require(route.empty() || route.size() == soft.size(), Errc::dimension_mismatch, "route weights != masks");
  const StreamCoeffs k = stream_coeffs(ablation);
  DenseVector<T> out(w.cols(), T(0));
  for (std::size_t i = 0; i < soft.size(); ++i) {
    require(soft[i].same_shape(w), Errc::dimension_mismatch, "soft mask dims differ from W");
    const T r = route.empty() ? T(1) : route[i];
    if (r == T(0)) continue;
    DenseMatrix<T> wg(w.rows(), w.cols());
    DenseMatrix<T> wv(w.rows(), w.cols());
    for (std::size_t p = 0; p < w.rows(); ++p)
      for (std::size_t j = 0; j < w.cols(); ++j) {
        const T sv = soft[i](p, j);
        wg(p, j) = (static_cast<T>(k.a) * sv + static_cast<T>(k.b)) * w(p, j);
        wv(p, j) = (static_cast<T>(k.c) * sv + static_cast<T>(k.e)) * w(p, j);
      }
    const auto y = reference::glu_forward(x, wg, wv, kind);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += r * y[j];
  }
  return out;
}

// The hard forward the analytic gradients refer to, built from the reference
// module: routed, ablated or plain MGLU, then W_o when present.
template <class T>
DenseVector<T> hard_forward(std::span<const T> x, const MgluLayer<T>& layer,
                            std::optional<AblationVariant> ablation = std::nullopt) {
  DenseVector<T> y;
  if (layer.router) {
    y = reference::mglu_topk_forward(x, layer);
  } else if (ablation) {
    y.assign(layer.d(), T(0));
    for (const auto& m : layer.hard_masks()) {
      const auto term = reference::mglu_ablation_forward(x, layer.weight, m, *ablation, layer.activation);
      for (std::size_t j = 0; j < y.size(); ++j) y[j] += term[j];
    }
  } else {
    y = reference::mglu_forward_naive(x, layer);
  }
  return layer.output_proj ? reference::output_projection<T>(y, layer) : y;
}

// Central differences (f(p + eps e_j) - f(p - eps e_j)) / (2 eps) for every
// coordinate of `params`, which is restored afterwards.
template <class F>
std::vector<double> finite_diff_grad(F&& f, std::span<double> params, double eps = 1e-5) {
  require(eps > 0.0, Errc::invalid_argument, "finite-difference step must be positive");
  std::vector<double> grad(params.size());
  for (std::size_t j = 0; j < params.size(); ++j) {
    const double keep = params[j];
    params[j] = keep + eps;
    const double up = f();
    params[j] = keep - eps;
    const double down = f();
    params[j] = keep;
    require(std::isfinite(up) && std::isfinite(down), Errc::non_finite,
            "objective is not finite at coordinate " + std::to_string(j));
    grad[j] = (up - down) / (2.0 * eps);
  }
  return grad;
}

struct BlockCheck {
  std::string block;
  double max_abs = 0.0;
  double max_rel = 0.0;
  std::size_t skipped = 0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<BlockCheck> blocks;
  double tolerance = 0.0;
  bool pass = true;

  const BlockCheck* find(std::string_view name) const {
    for (const auto& b : blocks)
      if (b.block == name) return &b;
    return nullptr;
  }
};

struct GradCheckOptions {
  std::optional<double> tolerance;  // default 1e-6 double, 1e-4 single
  double eps = 1e-5;
  std::optional<AblationVariant> ablation;
};

template <class T>
constexpr double default_grad_tolerance() {
  return std::is_same_v<T, double> ? 1e-6 : 1e-4;
}

// Compares mglu_backward (computed in T) with double-precision central
// differences for every parameter block of `layer`. `tamper` edits the
// analytic bundle before comparison, for fault-injection tests.
template <class T>
GradCheckReport check_gradients(const MgluLayer<T>& layer, std::uint64_t seed, const GradCheckOptions& opt = {},
                                const std::function<void(GradBundle<T>&)>& tamper = {}) {
  std::mt19937_64 rng(seed);
  const std::size_t out_n = layer.output_proj ? layer.h() : layer.d();
  const auto x = random_normal_vector<double>(layer.h(), rng);
  const auto u = random_normal_vector<double>(out_n, rng);

  auto analytic = mglu_backward<T>(cast_vector<T, double>(x), layer, cast_vector<T, double>(u), opt.ablation);
  if (tamper) tamper(analytic);

  // Oracle copy of the layer in double with the hard masks frozen.
  MgluLayer<double> ref;
  ref.weight = cast_matrix<double>(layer.weight);
  ref.masks = pack_masks(layer.hard_masks());
  ref.activation = layer.activation;
  if (layer.output_proj) ref.output_proj = cast_matrix<double>(*layer.output_proj);
  if (layer.router) ref.router = Router<double>{cast_matrix<double>(layer.router->weight), layer.router->top_k};

  auto dx = x;
  auto objective = [&]() {
    const auto out = hard_forward<double>(dx, ref, opt.ablation);
    double sum = 0.0;
    for (std::size_t k = 0; k < out.size(); ++k) sum += u[k] * out[k];
    return sum;
  };

  GradCheckReport report;
  report.tolerance = opt.tolerance.value_or(default_grad_tolerance<T>());
  auto add = [&](std::string name, std::span<const T> got, const std::vector<double>& want, std::size_t skipped = 0) {
    BlockCheck b{std::move(name)};
    b.skipped = skipped;
    b.max_abs = max_abs_error<T, double>(got, want);
    b.max_rel = max_relative_error<T, double>(got, want);
    b.pass = std::isfinite(b.max_rel) && b.max_rel <= report.tolerance;
    report.pass = report.pass && b.pass;
    report.blocks.push_back(std::move(b));
  };

  add("x", analytic.d_x, finite_diff_grad(objective, std::span<double>(dx), opt.eps));
  add("W", analytic.d_W.values(), finite_diff_grad(objective, ref.weight.values(), opt.eps));
  if (ref.output_proj)
    add("W_o", analytic.d_W_o->values(), finite_diff_grad(objective, ref.output_proj->values(), opt.eps));
  if (ref.router)
    add("W_r", analytic.d_W_r->values(), finite_diff_grad(objective, ref.router->weight.values(), opt.eps));

  // Mask gradients against the relaxed surrogate at soft = hard.
  std::vector<DenseMatrix<double>> soft;
  for (const auto& m : ref.hard_masks()) soft.push_back(mask_as_real<double>(m));
  DenseVector<double> route;
  if (ref.router) route = reference::topk_gate<double>(x, ref.router->weight, ref.router->top_k);
  auto relaxed = [&]() {
    auto y = relaxed_mglu_forward<double>(x, ref.weight, soft, ref.activation, opt.ablation, route);
    if (ref.output_proj) y = reference::output_projection<double>(y, ref);
    double sum = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) sum += u[k] * y[k];
    return sum;
  };
  // Under relu an empty gate column leaves the surrogate at its kink; those
  // coordinates have no derivative to compare against and are skipped.
  const StreamCoeffs k = stream_coeffs(opt.ablation);
  std::vector<double> want;
  std::vector<T> got;
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < soft.size(); ++i) {
    const auto gi = finite_diff_grad(relaxed, soft[i].values(), opt.eps);
    const auto ai = analytic.d_logits[i];
    for (std::size_t j = 0; j < ref.d(); ++j) {
      bool kink = false;
      if (ref.activation == Activation::relu && (route.empty() || route[i] != 0.0)) {
        double z = 0.0;
        for (std::size_t p = 0; p < ref.h(); ++p) z += x[p] * (k.a * soft[i](p, j) + k.b) * ref.weight(p, j);
        kink = z == 0.0;
      }
      for (std::size_t p = 0; p < ref.h(); ++p) {
        if (kink) {
          ++skipped;
          continue;
        }
        want.push_back(gi[p * ref.d() + j]);
        got.push_back(ai(p, j));
      }
    }
  }
  add("logits", got, want, skipped);
  return report;
}

// Plain GLU y = g(x W_g) .* (x W_v) and its gradients.
template <class T>
struct GluGrads {
  DenseVector<T> d_x;
  DenseMatrix<T> d_W_g;
  DenseMatrix<T> d_W_v;
};

template <class T>
GluGrads<T> glu_backward(std::span<const T> x, const DenseMatrix<T>& w_g, const DenseMatrix<T>& w_v, Activation kind,
                         std::span<const T> upstream) {
  require(upstream.size() == w_g.cols(), Errc::dimension_mismatch, "upstream length != d");
  const auto a = reference::matvec(x, w_g);
  const auto b = reference::matvec(x, w_v);
  GluGrads<T> g{DenseVector<T>(x.size(), T(0)), DenseMatrix<T>(w_g.rows(), w_g.cols()),
                DenseMatrix<T>(w_v.rows(), w_v.cols())};
  DenseVector<T> da(a.size()), db(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) {
    da[j] = upstream[j] * activate_derivative(kind, a[j]) * b[j];
    db[j] = upstream[j] * activate(kind, a[j]);
  }
  for (std::size_t p = 0; p < x.size(); ++p) {
    T sum = T(0);
    for (std::size_t j = 0; j < a.size(); ++j) {
      g.d_W_g(p, j) = x[p] * da[j];
      g.d_W_v(p, j) = x[p] * db[j];
      sum += w_g(p, j) * da[j] + w_v(p, j) * db[j];
    }
    g.d_x[p] = sum;
  }
  return g;
}

}  // namespace mglu
