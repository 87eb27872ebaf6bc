#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "symq/errors.hpp"
#include "symq/expr.hpp"
#include "symq/points.hpp"
#include "symq/rng.hpp"

namespace symq {

struct ModelDims {
  int k_p = 64;     // points-embedding width
  int k_t = 64;     // tree-embedding width
  int hidden = 128;
  int layers = 2;   // hidden layers in the Q-head
  int max_len = kDefaultMaxLen;

  bool operator==(const ModelDims&) const = default;
};

/// Paper-scale preset; kept for reference runs, not used by the tests.
inline ModelDims paper_scale_dims() { return ModelDims{512, 512, 512, 4, kDefaultMaxLen}; }

struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<double> v;

  std::size_t size() const { return v.size(); }
};

using GradBundle = std::vector<std::vector<double>>;

namespace detail {

// Parameters are kept on the float32 grid so checkpoints (stored as f32)
// round-trip bit-exactly.
inline double q32(double x) { return static_cast<double>(static_cast<float>(x)); }

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline double gelu_grad(double x) {
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) +
         x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

// out[r] = sum_c W[r*cols+c] x[c] + b[r]
inline void affine(std::span<const double> w, std::span<const double> b,
                   std::span<const double> x, std::span<double> out,
                   int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    double acc = b[static_cast<std::size_t>(r)];
    const double* wr = w.data() + static_cast<std::size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) acc += wr[c] * x[static_cast<std::size_t>(c)];
    out[static_cast<std::size_t>(r)] = acc;
  }
}

// accumulate gradients of an affine layer; dx may be null
inline void affine_backward(std::span<const double> w,
                            std::span<const double> x,
                            std::span<const double> dout,
                            std::span<double> dw, std::span<double> db,
                            double* dx, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    double g = dout[static_cast<std::size_t>(r)];
    db[static_cast<std::size_t>(r)] += g;
    double* dwr = dw.data() + static_cast<std::size_t>(r) * cols;
    const double* wr = w.data() + static_cast<std::size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) {
      dwr[c] += g * x[static_cast<std::size_t>(c)];
      if (dx) dx[c] += g * wr[c];
    }
  }
}

inline std::uint32_t crc32(const unsigned char* data, std::size_t len,
                           std::uint32_t crc = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc = ~crc;
  for (std::size_t i = 0; i < len; ++i) {
    crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
  }
  return ~crc;
}

}  // namespace detail

/// Loss configuration for QModel::backward.
struct LossSpec {
  double alpha = 0.0;       // contrastive weight
  double tau = 0.07;        // contrastive temperature
  bool use_contrastive = false;
};

/// One cross-entropy term: the decision demonstrated at the state
/// (points[points_idx], prefix). weight scales this term's contribution
/// (used by the risk-seeking online update).
struct DecisionItem {
  int points_idx = 0;
  std::vector<int> prefix;
  int target = 0;
  double weight = 1.0;
};

struct Batch {
  std::vector<const PointSet*> points;
  std::vector<int> labels;  // per points entry; same label = positive pair
  std::vector<DecisionItem> items;
};

struct LossBreakdown {
  double total = 0.0;
  double offline = 0.0;
  double contrastive = 0.0;
};

class QModel {
 public:
  QModel() = default;

  QModel(const ModelDims& dims, std::uint64_t seed) : dims_(dims) {
    const int h = dims.hidden;
    const int kp = dims.k_p;
    const int kt = dims.k_t;
    add("p_w1", {h, 3});
    add("p_b1", {h});
    add("p_w2", {h, h});
    add("p_b2", {h});
    add("p_w3", {kp, h});
    add("p_b3", {kp});
    add("t_emb", {kNumActions, h});
    add("t_pos", {dims.max_len, h});
    add("t_start", {h});
    add("t_w1", {h, h});
    add("t_b1", {h});
    add("t_w2", {kt, h});
    add("t_b2", {kt});
    add("f_w", {h, kp + kt});
    add("f_b", {h});
    for (int l = 0; l < dims.layers; ++l) {
      add("h_w" + std::to_string(l), {h, h});
      add("h_b" + std::to_string(l), {h});
    }
    add("o_w", {kNumActions, h});
    add("o_b", {kNumActions});
    init_params(seed);
  }

  const ModelDims& dims() const { return dims_; }
  const std::vector<Tensor>& params() const { return params_; }
  std::vector<Tensor>& mutable_params() { return params_; }
  std::uint64_t train_step = 0;  // persisted for --resume

  std::size_t n_parameters() const {
    std::size_t n = 0;
    for (const Tensor& t : params_) n += t.size();
    return n;
  }

  GradBundle zero_grads() const {
    GradBundle g(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      g[i].assign(params_[i].size(), 0.0);
    }
    return g;
  }

  double get_param(std::size_t tensor, std::size_t idx) const {
    return params_[tensor].v[idx];
  }
  void set_param(std::size_t tensor, std::size_t idx, double value) {
    params_[tensor].v[idx] = value;
  }

  // ---- points encoder -----------------------------------------------------

  struct PointsCache {
    int n = 0;
    std::vector<double> in;                 // n x 3
    std::vector<double> a1, h1, a2, h2;     // n x H
    std::vector<double> pooled;             // H
    std::vector<double> zp;                 // Kp
  };

  PointsCache points_forward(const PointSet& pts) const {
    if (pts.empty()) throw NonFiniteInputError("encode_points: empty point set");
    const int h = dims_.hidden;
    const int n = static_cast<int>(pts.size());
    PointsCache c;
    c.n = n;
    c.in.resize(static_cast<std::size_t>(n) * 3);
    for (int i = 0; i < n; ++i) {
      const Point& p = pts[static_cast<std::size_t>(i)];
      if (!std::isfinite(p.x1) || !std::isfinite(p.x2) || !std::isfinite(p.y)) {
        throw NonFiniteInputError("encode_points: non-finite point");
      }
      c.in[static_cast<std::size_t>(i) * 3 + 0] = p.x1;
      c.in[static_cast<std::size_t>(i) * 3 + 1] = p.x2;
      c.in[static_cast<std::size_t>(i) * 3 + 2] = p.y;
    }
    c.a1.resize(static_cast<std::size_t>(n) * h);
    c.h1.resize(static_cast<std::size_t>(n) * h);
    c.a2.resize(static_cast<std::size_t>(n) * h);
    c.h2.resize(static_cast<std::size_t>(n) * h);
    for (int i = 0; i < n; ++i) {
      auto in_i = std::span<const double>(c.in).subspan(static_cast<std::size_t>(i) * 3, 3);
      auto a1_i = std::span<double>(c.a1).subspan(static_cast<std::size_t>(i) * h, static_cast<std::size_t>(h));
      detail::affine(t("p_w1").v, t("p_b1").v, in_i, a1_i, h, 3);
      for (int d = 0; d < h; ++d) {
        c.h1[static_cast<std::size_t>(i) * h + d] = detail::gelu(a1_i[static_cast<std::size_t>(d)]);
      }
      auto h1_i = std::span<const double>(c.h1).subspan(static_cast<std::size_t>(i) * h, static_cast<std::size_t>(h));
      auto a2_i = std::span<double>(c.a2).subspan(static_cast<std::size_t>(i) * h, static_cast<std::size_t>(h));
      detail::affine(t("p_w2").v, t("p_b2").v, h1_i, a2_i, h, h);
      for (int d = 0; d < h; ++d) {
        c.h2[static_cast<std::size_t>(i) * h + d] = detail::gelu(a2_i[static_cast<std::size_t>(d)]);
      }
    }
    // Mean pooling with the per-dimension contributions summed in sorted
    // order, so the result is bit-identical under any point permutation.
    c.pooled.assign(static_cast<std::size_t>(h), 0.0);
    std::vector<double> column(static_cast<std::size_t>(n));
    for (int d = 0; d < h; ++d) {
      for (int i = 0; i < n; ++i) column[static_cast<std::size_t>(i)] = c.h2[static_cast<std::size_t>(i) * h + d];
      std::sort(column.begin(), column.end());
      double acc = 0.0;
      for (double v : column) acc += v;
      c.pooled[static_cast<std::size_t>(d)] = acc / n;
    }
    c.zp.resize(static_cast<std::size_t>(dims_.k_p));
    detail::affine(t("p_w3").v, t("p_b3").v, c.pooled, c.zp, dims_.k_p, h);
    return c;
  }

  std::vector<double> encode_points(const PointSet& pts) const {
    return points_forward(pts).zp;
  }

  void points_backward(const PointsCache& c, std::span<const double> dzp,
                       GradBundle& g) const {
    const int h = dims_.hidden;
    std::vector<double> dpooled(static_cast<std::size_t>(h), 0.0);
    detail::affine_backward(t("p_w3").v, c.pooled, dzp, g[idx("p_w3")],
                            g[idx("p_b3")], dpooled.data(), dims_.k_p, h);
    std::vector<double> dh2(static_cast<std::size_t>(h));
    std::vector<double> da2(static_cast<std::size_t>(h));
    std::vector<double> dh1(static_cast<std::size_t>(h));
    std::vector<double> da1(static_cast<std::size_t>(h));
    for (int i = 0; i < c.n; ++i) {
      for (int d = 0; d < h; ++d) {
        dh2[static_cast<std::size_t>(d)] = dpooled[static_cast<std::size_t>(d)] / c.n;
        da2[static_cast<std::size_t>(d)] =
            dh2[static_cast<std::size_t>(d)] *
            detail::gelu_grad(c.a2[static_cast<std::size_t>(i) * h + d]);
      }
      std::fill(dh1.begin(), dh1.end(), 0.0);
      auto h1_i = std::span<const double>(c.h1).subspan(static_cast<std::size_t>(i) * h, static_cast<std::size_t>(h));
      detail::affine_backward(t("p_w2").v, h1_i, da2, g[idx("p_w2")],
                              g[idx("p_b2")], dh1.data(), h, h);
      for (int d = 0; d < h; ++d) {
        da1[static_cast<std::size_t>(d)] =
            dh1[static_cast<std::size_t>(d)] *
            detail::gelu_grad(c.a1[static_cast<std::size_t>(i) * h + d]);
      }
      auto in_i = std::span<const double>(c.in).subspan(static_cast<std::size_t>(i) * 3, 3);
      detail::affine_backward(t("p_w1").v, in_i, da1, g[idx("p_w1")],
                              g[idx("p_b1")], nullptr, h, 3);
    }
  }

  // ---- tree encoder -------------------------------------------------------

  struct TreeCache {
    std::vector<int> acts;
    std::vector<double> s;       // H: start + sum of action+position embeddings
    std::vector<double> a1, h1;  // H
    std::vector<double> zt;      // Kt
  };

  TreeCache tree_forward(std::span<const int> actions) const {
    if (static_cast<int>(actions.size()) > dims_.max_len) {
      throw TooLongError("tree_forward: sequence longer than max_len");
    }
    const int h = dims_.hidden;
    TreeCache c;
    c.acts.assign(actions.begin(), actions.end());
    c.s.assign(t("t_start").v.begin(), t("t_start").v.end());
    const auto& emb = t("t_emb").v;
    const auto& pos = t("t_pos").v;
    for (std::size_t step = 0; step < actions.size(); ++step) {
      const int a = actions[step];
      if (a < 0 || a >= kNumActions) throw UnknownOpError("bad action id");
      for (int d = 0; d < h; ++d) {
        c.s[static_cast<std::size_t>(d)] +=
            emb[static_cast<std::size_t>(a) * h + d] + pos[step * static_cast<std::size_t>(h) + d];
      }
    }
    c.a1.resize(static_cast<std::size_t>(h));
    detail::affine(t("t_w1").v, t("t_b1").v, c.s, c.a1, h, h);
    c.h1.resize(static_cast<std::size_t>(h));
    for (int d = 0; d < h; ++d) c.h1[static_cast<std::size_t>(d)] = detail::gelu(c.a1[static_cast<std::size_t>(d)]);
    c.zt.resize(static_cast<std::size_t>(dims_.k_t));
    detail::affine(t("t_w2").v, t("t_b2").v, c.h1, c.zt, dims_.k_t, h);
    return c;
  }

  std::vector<double> encode_tree(const TreeMatrix& m) const {
    if (m.max_len > dims_.max_len) {
      throw TooLongError("encode_tree: matrix wider than model max_len");
    }
    return tree_forward(m.actions).zt;
  }

  void tree_backward(const TreeCache& c, std::span<const double> dzt,
                     GradBundle& g) const {
    const int h = dims_.hidden;
    std::vector<double> dh1(static_cast<std::size_t>(h), 0.0);
    detail::affine_backward(t("t_w2").v, c.h1, dzt, g[idx("t_w2")],
                            g[idx("t_b2")], dh1.data(), dims_.k_t, h);
    std::vector<double> da1(static_cast<std::size_t>(h));
    for (int d = 0; d < h; ++d) {
      da1[static_cast<std::size_t>(d)] =
          dh1[static_cast<std::size_t>(d)] * detail::gelu_grad(c.a1[static_cast<std::size_t>(d)]);
    }
    std::vector<double> ds(static_cast<std::size_t>(h), 0.0);
    detail::affine_backward(t("t_w1").v, c.s, da1, g[idx("t_w1")],
                            g[idx("t_b1")], ds.data(), h, h);
    auto& d_start = g[idx("t_start")];
    auto& d_emb = g[idx("t_emb")];
    auto& d_pos = g[idx("t_pos")];
    for (int d = 0; d < h; ++d) d_start[static_cast<std::size_t>(d)] += ds[static_cast<std::size_t>(d)];
    for (std::size_t step = 0; step < c.acts.size(); ++step) {
      const int a = c.acts[step];
      for (int d = 0; d < h; ++d) {
        d_emb[static_cast<std::size_t>(a) * h + d] += ds[static_cast<std::size_t>(d)];
        d_pos[step * static_cast<std::size_t>(h) + d] += ds[static_cast<std::size_t>(d)];
      }
    }
  }

  // ---- fusion + Q-head ----------------------------------------------------

  struct HeadCache {
    std::vector<double> zin;              // Kp + Kt
    std::vector<double> af, hf;           // H
    std::vector<std::vector<double>> a;   // layers x H (pre-activation)
    std::vector<std::vector<double>> h;   // layers x H
    std::vector<double> q;                // 30
  };

  HeadCache head_forward(std::span<const double> zp,
                         std::span<const double> zt) const {
    const int h = dims_.hidden;
    HeadCache c;
    c.zin.reserve(zp.size() + zt.size());
    c.zin.insert(c.zin.end(), zp.begin(), zp.end());
    c.zin.insert(c.zin.end(), zt.begin(), zt.end());
    c.af.resize(static_cast<std::size_t>(h));
    detail::affine(t("f_w").v, t("f_b").v, c.zin, c.af, h, dims_.k_p + dims_.k_t);
    c.hf.resize(static_cast<std::size_t>(h));
    for (int d = 0; d < h; ++d) c.hf[static_cast<std::size_t>(d)] = detail::gelu(c.af[static_cast<std::size_t>(d)]);
    const std::vector<double>* prev = &c.hf;
    for (int l = 0; l < dims_.layers; ++l) {
      std::vector<double> a(static_cast<std::size_t>(h));
      detail::affine(t("h_w" + std::to_string(l)).v, t("h_b" + std::to_string(l)).v,
                     *prev, a, h, h);
      std::vector<double> hh(static_cast<std::size_t>(h));
      for (int d = 0; d < h; ++d) hh[static_cast<std::size_t>(d)] = detail::gelu(a[static_cast<std::size_t>(d)]);
      c.a.push_back(std::move(a));
      c.h.push_back(std::move(hh));
      prev = &c.h.back();
    }
    c.q.resize(kNumActions);
    detail::affine(t("o_w").v, t("o_b").v, *prev, c.q, kNumActions, h);
    return c;
  }

  std::vector<double> q_values(std::span<const double> zp,
                               std::span<const double> zt) const {
    return head_forward(zp, zt).q;
  }

  std::vector<double> q_values(const PointSet& pts,
                               std::span<const int> actions) const {
    PointsCache pc = points_forward(pts);
    TreeCache tc = tree_forward(actions);
    return q_values(pc.zp, tc.zt);
  }

  void head_backward(const HeadCache& c, std::span<const double> dq,
                     GradBundle& g, std::span<double> dzp,
                     std::span<double> dzt) const {
    const int h = dims_.hidden;
    const std::vector<double>* last_h = dims_.layers > 0 ? &c.h.back() : &c.hf;
    std::vector<double> dh(static_cast<std::size_t>(h), 0.0);
    detail::affine_backward(t("o_w").v, *last_h, dq, g[idx("o_w")],
                            g[idx("o_b")], dh.data(), kNumActions, h);
    std::vector<double> da(static_cast<std::size_t>(h));
    for (int l = dims_.layers - 1; l >= 0; --l) {
      for (int d = 0; d < h; ++d) {
        da[static_cast<std::size_t>(d)] =
            dh[static_cast<std::size_t>(d)] *
            detail::gelu_grad(c.a[static_cast<std::size_t>(l)][static_cast<std::size_t>(d)]);
      }
      const std::vector<double>& input =
          (l == 0) ? c.hf : c.h[static_cast<std::size_t>(l) - 1];
      std::fill(dh.begin(), dh.end(), 0.0);
      detail::affine_backward(t("h_w" + std::to_string(l)).v, input, da,
                              g[idx("h_w" + std::to_string(l))],
                              g[idx("h_b" + std::to_string(l))], dh.data(), h, h);
    }
    for (int d = 0; d < h; ++d) {
      da[static_cast<std::size_t>(d)] =
          dh[static_cast<std::size_t>(d)] * detail::gelu_grad(c.af[static_cast<std::size_t>(d)]);
    }
    std::vector<double> dzin(static_cast<std::size_t>(dims_.k_p + dims_.k_t), 0.0);
    detail::affine_backward(t("f_w").v, c.zin, da, g[idx("f_w")], g[idx("f_b")],
                            dzin.data(), h, dims_.k_p + dims_.k_t);
    for (int d = 0; d < dims_.k_p; ++d) dzp[static_cast<std::size_t>(d)] += dzin[static_cast<std::size_t>(d)];
    for (int d = 0; d < dims_.k_t; ++d) dzt[static_cast<std::size_t>(d)] += dzin[static_cast<std::size_t>(dims_.k_p + d)];
  }

  // ---- combined loss ------------------------------------------------------

  /// Computes the batch loss and its exact gradient w.r.t. every parameter.
  /// Cross-entropy terms are mean-reduced over items (scaled by their
  /// weights); the contrastive term on the points embeddings enters with
  /// factor alpha.
  LossBreakdown backward(const Batch& batch, const LossSpec& spec,
                         GradBundle& grads) const {
    if (batch.items.empty()) throw Error("backward: empty batch");
    const std::size_t n_points = batch.points.size();
    std::vector<PointsCache> pcaches;
    pcaches.reserve(n_points);
    for (const PointSet* p : batch.points) pcaches.push_back(points_forward(*p));
    std::vector<std::vector<double>> dzp(
        n_points, std::vector<double>(static_cast<std::size_t>(dims_.k_p), 0.0));

    LossBreakdown loss;
    const double inv_n = 1.0 / static_cast<double>(batch.items.size());
    std::vector<double> dzt(static_cast<std::size_t>(dims_.k_t));
    for (std::size_t it = 0; it < batch.items.size(); ++it) {
      const DecisionItem& item = batch.items[it];
      TreeCache tc = tree_forward(item.prefix);
      HeadCache hc = head_forward(pcaches[static_cast<std::size_t>(item.points_idx)].zp, tc.zt);
      // stable log-softmax cross-entropy
      double qmax = *std::max_element(hc.q.begin(), hc.q.end());
      double z = 0.0;
      for (double q : hc.q) z += std::exp(q - qmax);
      double logz = std::log(z) + qmax;
      double ce = logz - hc.q[static_cast<std::size_t>(item.target)];
      if (!std::isfinite(ce)) {
        throw NonFiniteLossError("non-finite loss at batch item " + std::to_string(it));
      }
      loss.offline += item.weight * ce * inv_n;
      if (item.weight != 0.0) {
        std::vector<double> dq(kNumActions);
        for (int a = 0; a < kNumActions; ++a) {
          double p = std::exp(hc.q[static_cast<std::size_t>(a)] - logz);
          dq[static_cast<std::size_t>(a)] =
              item.weight * inv_n * (p - (a == item.target ? 1.0 : 0.0));
        }
        std::fill(dzt.begin(), dzt.end(), 0.0);
        head_backward(hc, dq, grads, dzp[static_cast<std::size_t>(item.points_idx)], dzt);
        tree_backward(tc, dzt, grads);
      }
    }

    if (spec.use_contrastive && spec.alpha != 0.0) {
      loss.contrastive = contrastive_backward(batch, spec, pcaches, dzp);
    }

    for (std::size_t i = 0; i < n_points; ++i) {
      points_backward(pcaches[i], dzp[i], grads);
    }
    loss.total = loss.offline + spec.alpha * loss.contrastive;
    if (!std::isfinite(loss.total)) throw NonFiniteLossError("non-finite total loss");
    return loss;
  }

  // ---- checkpointing ------------------------------------------------------

  static constexpr std::uint32_t kCheckpointVersion = 1;

  void save(const std::string& path) const {
    std::vector<unsigned char> buf;
    auto put = [&buf](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      buf.insert(buf.end(), b, b + n);
    };
    auto put_u32 = [&](std::uint32_t v) { put(&v, 4); };
    auto put_i32 = [&](std::int32_t v) { put(&v, 4); };
    auto put_u64 = [&](std::uint64_t v) { put(&v, 8); };
    put("SYMQ", 4);
    put_u32(kCheckpointVersion);
    put_i32(dims_.k_p);
    put_i32(dims_.k_t);
    put_i32(dims_.hidden);
    put_i32(dims_.layers);
    put_i32(dims_.max_len);
    put_u64(train_step);
    put_u32(static_cast<std::uint32_t>(params_.size()));
    for (const Tensor& tn : params_) {
      put_u32(static_cast<std::uint32_t>(tn.name.size()));
      put(tn.name.data(), tn.name.size());
      put_u32(static_cast<std::uint32_t>(tn.shape.size()));
      for (int d : tn.shape) put_i32(d);
      put_u64(tn.size());
      for (double v : tn.v) {
        float f = static_cast<float>(v);
        put(&f, 4);
      }
    }
    std::uint32_t crc = detail::crc32(buf.data(), buf.size());
    put_u32(crc);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open checkpoint for writing: " + path);
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size()));
  }

  static QModel load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open checkpoint: " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
    if (buf.size() < 8 + 4) throw CorruptCheckpointError("checkpoint too short");
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
    if (detail::crc32(buf.data(), buf.size() - 4) != stored_crc) {
      throw CorruptCheckpointError("checksum mismatch: " + path);
    }
    std::size_t pos = 0;
    auto get = [&](void* p, std::size_t n) {
      if (pos + n > buf.size() - 4) throw CorruptCheckpointError("truncated checkpoint");
      std::memcpy(p, buf.data() + pos, n);
      pos += n;
    };
    char magic[4];
    get(magic, 4);
    if (std::memcmp(magic, "SYMQ", 4) != 0) {
      throw CorruptCheckpointError("bad magic bytes");
    }
    std::uint32_t version;
    get(&version, 4);
    if (version != kCheckpointVersion) {
      throw VersionMismatchError("checkpoint version " + std::to_string(version) +
                                 ", expected " + std::to_string(kCheckpointVersion));
    }
    QModel m;
    std::int32_t v32;
    get(&v32, 4); m.dims_.k_p = v32;
    get(&v32, 4); m.dims_.k_t = v32;
    get(&v32, 4); m.dims_.hidden = v32;
    get(&v32, 4); m.dims_.layers = v32;
    get(&v32, 4); m.dims_.max_len = v32;
    get(&m.train_step, 8);
    std::uint32_t n_tensors;
    get(&n_tensors, 4);
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
      Tensor tn;
      std::uint32_t name_len;
      get(&name_len, 4);
      tn.name.resize(name_len);
      get(tn.name.data(), name_len);
      std::uint32_t ndim;
      get(&ndim, 4);
      std::size_t count_from_shape = 1;
      for (std::uint32_t d = 0; d < ndim; ++d) {
        get(&v32, 4);
        tn.shape.push_back(v32);
        count_from_shape *= static_cast<std::size_t>(v32);
      }
      std::uint64_t count;
      get(&count, 8);
      if (count != count_from_shape) throw CorruptCheckpointError("shape/count mismatch");
      tn.v.resize(count);
      for (std::uint64_t k = 0; k < count; ++k) {
        float f;
        get(&f, 4);
        tn.v[k] = static_cast<double>(f);
      }
      m.index_[tn.name] = m.params_.size();
      m.params_.push_back(std::move(tn));
    }
    return m;
  }

  std::size_t idx(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("no such parameter tensor: " + name);
    return it->second;
  }

  const Tensor& t(const std::string& name) const { return params_[idx(name)]; }

 private:
  void add(const std::string& name, std::vector<int> shape) {
    Tensor tn;
    tn.name = name;
    tn.shape = std::move(shape);
    std::size_t count = 1;
    for (int d : tn.shape) count *= static_cast<std::size_t>(d);
    tn.v.assign(count, 0.0);
    index_[name] = params_.size();
    params_.push_back(std::move(tn));
  }

  void init_params(std::uint64_t seed) {
    std::mt19937_64 rng = make_rng(seed, 0x10D31ULL);
    for (Tensor& tn : params_) {
      if (tn.shape.size() < 2) continue;  // biases and start vector stay zero
      double fan_out = tn.shape[0];
      double fan_in = tn.shape[1];
      double bound = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (double& v : tn.v) v = detail::q32(u(rng));
    }
  }

  double contrastive_backward(const Batch& batch, const LossSpec& spec,
                              const std::vector<PointsCache>& pcaches,
                              std::vector<std::vector<double>>& dzp) const;

  ModelDims dims_;
  std::vector<Tensor> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---- gradient utilities ----------------------------------------------------

inline double grad_norm(const GradBundle& g) {
  double s = 0.0;
  for (const auto& t : g) {
    for (double v : t) s += v * v;
  }
  return std::sqrt(s);
}

inline void clip_grads(GradBundle& g, double max_norm) {
  double n = grad_norm(g);
  if (n > max_norm && n > 0.0) {
    double scale = max_norm / n;
    for (auto& t : g) {
      for (double& v : t) v *= scale;
    }
  }
}

inline void sgd_step(QModel& m, const GradBundle& g, double lr) {
  auto& params = m.mutable_params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t k = 0; k < params[i].v.size(); ++k) {
      params[i].v[k] = detail::q32(params[i].v[k] - lr * g[i][k]);
    }
  }
}

// ---- supervised contrastive term -------------------------------------------

inline double QModel::contrastive_backward(
    const Batch& batch, const LossSpec& spec,
    const std::vector<PointsCache>& pcaches,
    std::vector<std::vector<double>>& dzp) const {
  const std::size_t n = batch.points.size();
  if (batch.labels.size() != n) {
    throw Error("contrastive loss requires one label per points entry");
  }
  const int kp = dims_.k_p;
  // L2-normalized embeddings
  std::vector<std::vector<double>> u(n);
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<double>& e = pcaches[i].zp;
    double nm = 0.0;
    for (double v : e) nm += v * v;
    nm = std::sqrt(nm);
    norms[i] = std::max(nm, 1e-12);
    u[i].resize(static_cast<std::size_t>(kp));
    for (int d = 0; d < kp; ++d) u[i][static_cast<std::size_t>(d)] = e[static_cast<std::size_t>(d)] / norms[i];
  }
  std::vector<std::vector<std::size_t>> positives(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && batch.labels[j] == batch.labels[i]) positives[i].push_back(j);
    }
    if (positives[i].empty()) {
      throw NoPositivesError("contrastive batch entry " + std::to_string(i) +
                             " has no positives");
    }
  }
  // similarity matrix and per-row softmax over j != i
  std::vector<std::vector<double>> sim(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double dot = 0.0;
      for (int d = 0; d < kp; ++d) dot += u[i][static_cast<std::size_t>(d)] * u[j][static_cast<std::size_t>(d)];
      sim[i][j] = dot / spec.tau;
    }
  }
  double loss = 0.0;
  std::vector<std::vector<double>> dsim(n, std::vector<double>(n, 0.0));
  const double inv_batch = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    double smax = -1e300;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) smax = std::max(smax, sim[i][j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) z += std::exp(sim[i][j] - smax);
    }
    double logz = std::log(z) + smax;
    const double inv_pos = 1.0 / static_cast<double>(positives[i].size());
    for (std::size_t p : positives[i]) {
      loss += inv_batch * inv_pos * (logz - sim[i][p]);
      dsim[i][p] -= inv_batch * inv_pos;
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) dsim[i][j] += inv_batch * std::exp(sim[i][j] - logz);
    }
  }
  // through the similarities and the normalization
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> du(static_cast<std::size_t>(kp), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double w = (dsim[i][j] + dsim[j][i]) / spec.tau;
      for (int d = 0; d < kp; ++d) du[static_cast<std::size_t>(d)] += w * u[j][static_cast<std::size_t>(d)];
    }
    double du_dot_u = 0.0;
    for (int d = 0; d < kp; ++d) du_dot_u += du[static_cast<std::size_t>(d)] * u[i][static_cast<std::size_t>(d)];
    for (int d = 0; d < kp; ++d) {
      dzp[i][static_cast<std::size_t>(d)] +=
          spec.alpha * (du[static_cast<std::size_t>(d)] - du_dot_u * u[i][static_cast<std::size_t>(d)]) / norms[i];
    }
  }
  return loss;
}

}  // namespace symq
