#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "minigen/error.hpp"
#include "minigen/kernels.hpp"
#include "minigen/rng.hpp"
#include "minigen/tensor.hpp"

namespace minigen {

// Opt-in debug mode: every op forward (and every backward step) scans for
// NaN/Inf and halts naming the offending op.
inline std::atomic<bool> g_nonfinite_checks{false};
inline void set_nonfinite_checks(bool on) { g_nonfinite_checks = on; }
inline bool nonfinite_checks() { return g_nonfinite_checks.load(); }

inline constexpr double kLayerNormEps = 1e-5;

// Reverse-mode tape over dense tensors. Nodes are recorded in creation order,
// which is a valid topological order; backward replays them once in reverse.
// Leaves wrap external tensors (parameters, inputs) and their grads accumulate
// additively across backward calls; the optimizer owns zeroing.
template <typename T>
class Tape {
 public:
  using NodeId = int;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // External tensor; set t->requires_grad before calling for parameters.
  NodeId leaf(TensorPtr<T> t) {
    return push(std::move(t), {}, "leaf", nullptr);
  }

  // Tape-owned value that never receives gradient (masks, constants).
  NodeId constant(Tensor<T> t) {
    auto p = std::make_shared<Tensor<T>>(std::move(t));
    p->requires_grad = false;
    return push(std::move(p), {}, "constant", nullptr);
  }

  const Tensor<T>& value(NodeId id) const { return *nodes_[check(id)].t; }
  TensorPtr<T> tensor(NodeId id) { return nodes_[check(id)].t; }
  std::size_t size() const { return nodes_.size(); }

  // ---- recorded primitives ----

  NodeId matmul(NodeId a, NodeId b) {
    const auto& ta = value(a);
    const auto& tb = value(b);
    if (ta.ndim() != 2 || tb.ndim() != 2 || ta.shape[1] != tb.shape[0])
      throw PreconditionError("matmul: inner extents disagree: " +
                              shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    const idx m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
    auto out = make_tensor<T>({m, n});
    kernels::matmul_nn(ta.data.data(), tb.data.data(), out->data.data(), m, k, n);
    return push(out, {a, b}, "matmul", [this, a, b](NodeId self) {
      auto& na = *nodes_[a].t;
      auto& nb = *nodes_[b].t;
      const auto& g = nodes_[self].t->grad;
      const idx m = na.shape[0], k = na.shape[1], n = nb.shape[1];
      if (needs(a))
        kernels::matmul_nt(g.data(), nb.data.data(), na.grad.data(), m, n, k, true);
      if (needs(b))
        kernels::matmul_tn(na.data.data(), g.data(), nb.grad.data(), k, m, n, true);
    });
  }

  // a @ b^T without materializing the transpose; used by the tied output head.
  NodeId matmul_nt(NodeId a, NodeId b) {
    const auto& ta = value(a);
    const auto& tb = value(b);
    if (ta.ndim() != 2 || tb.ndim() != 2 || ta.shape[1] != tb.shape[1])
      throw PreconditionError("matmul_nt: inner extents disagree: " +
                              shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    const idx m = ta.shape[0], k = ta.shape[1], n = tb.shape[0];
    auto out = make_tensor<T>({m, n});
    kernels::matmul_nt(ta.data.data(), tb.data.data(), out->data.data(), m, k, n);
    return push(out, {a, b}, "matmul_nt", [this, a, b](NodeId self) {
      auto& na = *nodes_[a].t;
      auto& nb = *nodes_[b].t;
      const auto& g = nodes_[self].t->grad;
      const idx m = na.shape[0], k = na.shape[1], n = nb.shape[0];
      // y = a b^T: da = g b, db = g^T a
      if (needs(a))
        kernels::matmul_nn(g.data(), nb.data.data(), na.grad.data(), m, n, k, true);
      if (needs(b))
        kernels::matmul_tn(g.data(), na.data.data(), nb.grad.data(), n, m, k, true);
    });
  }

  // Same shape, or b broadcast as a row vector over the rows of a.
  NodeId add(NodeId a, NodeId b) {
    const auto& ta = value(a);
    const auto& tb = value(b);
    const bool same = ta.shape == tb.shape;
    const bool row_bcast =
        ta.ndim() == 2 &&
        ((tb.ndim() == 1 && tb.shape[0] == ta.shape[1]) ||
         (tb.ndim() == 2 && tb.shape[0] == 1 && tb.shape[1] == ta.shape[1]));
    if (!same && !row_bcast)
      throw PreconditionError("add: incompatible shapes " + shape_str(ta.shape) +
                              " vs " + shape_str(tb.shape));
    auto out = make_tensor<T>(ta.shape);
    if (same) {
      for (idx i = 0; i < ta.numel(); ++i) out->data[i] = ta.data[i] + tb.data[i];
    } else {
      const idx m = ta.shape[0], n = ta.shape[1];
      for (idx i = 0; i < m; ++i)
        for (idx j = 0; j < n; ++j)
          out->data[i * n + j] = ta.data[i * n + j] + tb.data[j];
    }
    return push(out, {a, b}, "add", [this, a, b, same](NodeId self) {
      auto& na = *nodes_[a].t;
      auto& nb = *nodes_[b].t;
      const auto& g = nodes_[self].t->grad;
      if (needs(a))
        for (idx i = 0; i < na.numel(); ++i) na.grad[i] += g[i];
      if (needs(b)) {
        if (same) {
          for (idx i = 0; i < nb.numel(); ++i) nb.grad[i] += g[i];
        } else {
          const idx m = na.shape[0], n = na.shape[1];
          for (idx i = 0; i < m; ++i)
            for (idx j = 0; j < n; ++j) nb.grad[j] += g[i * n + j];
        }
      }
    });
  }

  NodeId mul(NodeId a, NodeId b) {
    const auto& ta = value(a);
    const auto& tb = value(b);
    if (ta.shape != tb.shape)
      throw PreconditionError("mul: shape mismatch " + shape_str(ta.shape) +
                              " vs " + shape_str(tb.shape));
    auto out = make_tensor<T>(ta.shape);
    for (idx i = 0; i < ta.numel(); ++i) out->data[i] = ta.data[i] * tb.data[i];
    return push(out, {a, b}, "mul", [this, a, b](NodeId self) {
      auto& na = *nodes_[a].t;
      auto& nb = *nodes_[b].t;
      const auto& g = nodes_[self].t->grad;
      if (needs(a))
        for (idx i = 0; i < na.numel(); ++i) na.grad[i] += g[i] * nb.data[i];
      if (needs(b))
        for (idx i = 0; i < nb.numel(); ++i) nb.grad[i] += g[i] * na.data[i];
    });
  }

  NodeId scale(NodeId a, T s) {
    const auto& ta = value(a);
    auto out = make_tensor<T>(ta.shape);
    for (idx i = 0; i < ta.numel(); ++i) out->data[i] = s * ta.data[i];
    return push(out, {a}, "scale", [this, a, s](NodeId self) {
      auto& na = *nodes_[a].t;
      const auto& g = nodes_[self].t->grad;
      if (needs(a))
        for (idx i = 0; i < na.numel(); ++i) na.grad[i] += s * g[i];
    });
  }

  NodeId softmax(NodeId a, int axis) {
    const auto& ta = value(a);
    if (ta.ndim() == 1) {
      if (axis != 0 && axis != -1)
        throw PreconditionError("softmax: invalid axis " + std::to_string(axis) +
                                " for 1-d input");
      axis = 1;  // treat as a single row below
    } else if (ta.ndim() == 2) {
      if (axis == -1) axis = 1;
      if (axis != 0 && axis != 1)
        throw PreconditionError("softmax: invalid axis " + std::to_string(axis));
    } else {
      throw PreconditionError("softmax: expected 1-d or 2-d input");
    }
    auto out = make_tensor<T>(ta.shape);
    const idx rows = ta.ndim() == 1 ? 1 : ta.shape[0];
    const idx cols = ta.ndim() == 1 ? ta.shape[0] : ta.shape[1];
    if (axis == 1) {
      kernels::softmax_rows(ta.data.data(), out->data.data(), rows, cols);
    } else {
      for (idx j = 0; j < cols; ++j) {
        T mx = ta.data[j];
        for (idx i = 1; i < rows; ++i) mx = std::max(mx, ta.data[i * cols + j]);
        T sum = 0;
        for (idx i = 0; i < rows; ++i) {
          out->data[i * cols + j] = std::exp(ta.data[i * cols + j] - mx);
          sum += out->data[i * cols + j];
        }
        for (idx i = 0; i < rows; ++i) out->data[i * cols + j] /= sum;
      }
    }
    return push(out, {a}, "softmax", [this, a, axis, rows, cols](NodeId self) {
      if (!needs(a)) return;
      auto& na = *nodes_[a].t;
      const auto& p = nodes_[self].t->data;
      const auto& g = nodes_[self].t->grad;
      if (axis == 1) {
        for (idx r = 0; r < rows; ++r) {
          T dot = 0;
          for (idx j = 0; j < cols; ++j) dot += g[r * cols + j] * p[r * cols + j];
          for (idx j = 0; j < cols; ++j)
            na.grad[r * cols + j] += p[r * cols + j] * (g[r * cols + j] - dot);
        }
      } else {
        for (idx j = 0; j < cols; ++j) {
          T dot = 0;
          for (idx i = 0; i < rows; ++i) dot += g[i * cols + j] * p[i * cols + j];
          for (idx i = 0; i < rows; ++i)
            na.grad[i * cols + j] += p[i * cols + j] * (g[i * cols + j] - dot);
        }
      }
    });
  }

  // Normalizes over the last dimension with learned gain and bias.
  NodeId layer_norm(NodeId x, NodeId gain, NodeId bias) {
    const auto& tx = value(x);
    const auto& tg = value(gain);
    const auto& tb = value(bias);
    const idx d = tx.ndim() == 1 ? tx.shape[0] : tx.shape[tx.ndim() - 1];
    if (tx.ndim() > 2 || tg.ndim() != 1 || tb.ndim() != 1 || tg.shape[0] != d ||
        tb.shape[0] != d)
      throw PreconditionError("layer_norm: gain/bias must be [d] with d=" +
                              std::to_string(d));
    const idx rows = tx.numel() / d;
    auto out = make_tensor<T>(tx.shape);
    auto xhat = std::make_shared<Tensor<T>>(tx.shape);  // saved for backward
    auto inv_sigma = std::make_shared<std::vector<T>>(rows);
    for (idx r = 0; r < rows; ++r) {
      const T* xr = tx.data.data() + r * d;
      T mu = 0;
      for (idx j = 0; j < d; ++j) mu += xr[j];
      mu /= T(d);
      T var = 0;
      for (idx j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
      var /= T(d);
      const T s = T(1) / std::sqrt(var + T(kLayerNormEps));
      (*inv_sigma)[r] = s;
      for (idx j = 0; j < d; ++j) {
        const T xh = (xr[j] - mu) * s;
        xhat->data[r * d + j] = xh;
        out->data[r * d + j] = tg.data[j] * xh + tb.data[j];
      }
    }
    return push(out, {x, gain, bias},
                "layer_norm", [this, x, gain, bias, xhat, inv_sigma, rows, d](NodeId self) {
      auto& nx = *nodes_[x].t;
      auto& ng = *nodes_[gain].t;
      auto& nb = *nodes_[bias].t;
      const auto& g = nodes_[self].t->grad;
      for (idx r = 0; r < rows; ++r) {
        const T* gr = g.data() + r * d;
        const T* xh = xhat->data.data() + r * d;
        if (needs(gain))
          for (idx j = 0; j < d; ++j) ng.grad[j] += gr[j] * xh[j];
        if (needs(bias))
          for (idx j = 0; j < d; ++j) nb.grad[j] += gr[j];
        if (needs(x)) {
          T mean_dxh = 0, mean_dxh_xh = 0;
          for (idx j = 0; j < d; ++j) {
            const T dxh = gr[j] * ng.data[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
          }
          mean_dxh /= T(d);
          mean_dxh_xh /= T(d);
          const T s = (*inv_sigma)[r];
          for (idx j = 0; j < d; ++j) {
            const T dxh = gr[j] * ng.data[j];
            nx.grad[r * d + j] += s * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
          }
        }
      }
    });
  }

  NodeId gelu(NodeId a) {
    const auto& ta = value(a);
    auto out = make_tensor<T>(ta.shape);
    for (idx i = 0; i < ta.numel(); ++i) {
      const double xv = static_cast<double>(ta.data[i]);
      out->data[i] = static_cast<T>(0.5 * xv * (1.0 + std::erf(xv * M_SQRT1_2)));
    }
    return push(out, {a}, "gelu", [this, a](NodeId self) {
      if (!needs(a)) return;
      auto& na = *nodes_[a].t;
      const auto& g = nodes_[self].t->grad;
      constexpr double inv_sqrt_2pi = 0.3989422804014327;
      for (idx i = 0; i < na.numel(); ++i) {
        const double xv = static_cast<double>(na.data[i]);
        const double d = 0.5 * (1.0 + std::erf(xv * M_SQRT1_2)) +
                         xv * inv_sqrt_2pi * std::exp(-0.5 * xv * xv);
        na.grad[i] += g[i] * static_cast<T>(d);
      }
    });
  }

  NodeId embedding_gather(NodeId table, std::vector<int> ids) {
    const auto& tt = value(table);
    if (tt.ndim() != 2)
      throw PreconditionError("embedding_gather: table must be 2-d");
    const idx v = tt.shape[0], d = tt.shape[1];
    for (int id : ids)
      if (id < 0 || id >= v)
        throw PreconditionError("embedding_gather: id " + std::to_string(id) +
                                " out of range [0," + std::to_string(v) + ")");
    const idx t = static_cast<idx>(ids.size());
    auto out = make_tensor<T>({t, d});
    for (idx i = 0; i < t; ++i)
      std::copy_n(tt.data.data() + idx(ids[i]) * d, d, out->data.data() + i * d);
    return push(out, {table}, "embedding_gather",
                [this, table, ids = std::move(ids), d](NodeId self) {
      if (!needs(table)) return;
      auto& nt = *nodes_[table].t;
      const auto& g = nodes_[self].t->grad;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        T* row = nt.grad.data() + idx(ids[i]) * d;
        const T* gr = g.data() + idx(i) * d;
        for (idx j = 0; j < d; ++j) row[j] += gr[j];
      }
    });
  }

  NodeId transpose(NodeId a) {
    const auto& ta = value(a);
    if (ta.ndim() != 2) throw PreconditionError("transpose: expected 2-d input");
    const idx m = ta.shape[0], n = ta.shape[1];
    auto out = make_tensor<T>({n, m});
    for (idx i = 0; i < m; ++i)
      for (idx j = 0; j < n; ++j) out->data[j * m + i] = ta.data[i * n + j];
    return push(out, {a}, "transpose", [this, a, m, n](NodeId self) {
      if (!needs(a)) return;
      auto& na = *nodes_[a].t;
      const auto& g = nodes_[self].t->grad;
      for (idx i = 0; i < m; ++i)
        for (idx j = 0; j < n; ++j) na.grad[i * n + j] += g[j * m + i];
    });
  }

  NodeId reshape(NodeId a, std::vector<idx> shape) {
    const auto& ta = value(a);
    if (numel_of(shape) != ta.numel())
      throw PreconditionError("reshape: cannot reshape " + shape_str(ta.shape) +
                              " to " + shape_str(shape));
    auto out = make_tensor<T>(shape);
    out->data = ta.data;
    return push(out, {a}, "reshape", [this, a](NodeId self) {
      if (!needs(a)) return;
      auto& na = *nodes_[a].t;
      const auto& g = nodes_[self].t->grad;
      for (idx i = 0; i < na.numel(); ++i) na.grad[i] += g[i];
    });
  }

  NodeId concat(NodeId a, NodeId b, int axis) {
    const auto& ta = value(a);
    const auto& tb = value(b);
    if (ta.ndim() != tb.ndim() || ta.ndim() < 1 || ta.ndim() > 2)
      throw PreconditionError("concat: rank mismatch");
    if (ta.ndim() == 1) {
      if (axis != 0) throw PreconditionError("concat: invalid axis for 1-d");
      auto out = make_tensor<T>({ta.shape[0] + tb.shape[0]});
      std::copy(ta.data.begin(), ta.data.end(), out->data.begin());
      std::copy(tb.data.begin(), tb.data.end(), out->data.begin() + ta.numel());
      return push(out, {a, b}, "concat", [this, a, b](NodeId self) {
        auto& na = *nodes_[a].t;
        auto& nb = *nodes_[b].t;
        const auto& g = nodes_[self].t->grad;
        if (needs(a))
          for (idx i = 0; i < na.numel(); ++i) na.grad[i] += g[i];
        if (needs(b))
          for (idx i = 0; i < nb.numel(); ++i) nb.grad[i] += g[na.numel() + i];
      });
    }
    if (axis != 0 && axis != 1) throw PreconditionError("concat: invalid axis");
    const int other = 1 - axis;
    if (ta.shape[other] != tb.shape[other])
      throw PreconditionError("concat: shapes " + shape_str(ta.shape) + " and " +
                              shape_str(tb.shape) + " disagree off-axis");
    std::vector<idx> shape = ta.shape;
    shape[axis] += tb.shape[axis];
    auto out = make_tensor<T>(shape);
    const idx on = shape[1];
    if (axis == 0) {
      std::copy(ta.data.begin(), ta.data.end(), out->data.begin());
      std::copy(tb.data.begin(), tb.data.end(), out->data.begin() + ta.numel());
    } else {
      for (idx i = 0; i < shape[0]; ++i) {
        std::copy_n(ta.data.data() + i * ta.shape[1], ta.shape[1],
                    out->data.data() + i * on);
        std::copy_n(tb.data.data() + i * tb.shape[1], tb.shape[1],
                    out->data.data() + i * on + ta.shape[1]);
      }
    }
    return push(out, {a, b}, "concat", [this, a, b, axis](NodeId self) {
      auto& na = *nodes_[a].t;
      auto& nb = *nodes_[b].t;
      const auto& g = nodes_[self].t->grad;
      if (axis == 0) {
        if (needs(a))
          for (idx i = 0; i < na.numel(); ++i) na.grad[i] += g[i];
        if (needs(b))
          for (idx i = 0; i < nb.numel(); ++i) nb.grad[i] += g[na.numel() + i];
      } else {
        const idx rows = na.shape[0], ca = na.shape[1], cb = nb.shape[1];
        for (idx i = 0; i < rows; ++i) {
          if (needs(a))
            for (idx j = 0; j < ca; ++j)
              na.grad[i * ca + j] += g[i * (ca + cb) + j];
          if (needs(b))
            for (idx j = 0; j < cb; ++j)
              nb.grad[i * cb + j] += g[i * (ca + cb) + ca + j];
        }
      }
    });
  }

  NodeId slice_cols(NodeId a, idx start, idx len) {
    const auto& ta = value(a);
    if (ta.ndim() != 2 || start < 0 || len < 1 || start + len > ta.shape[1])
      throw PreconditionError("slice_cols: range [" + std::to_string(start) + "," +
                              std::to_string(start + len) + ") invalid for " +
                              shape_str(ta.shape));
    const idx m = ta.shape[0], n = ta.shape[1];
    auto out = make_tensor<T>({m, len});
    for (idx i = 0; i < m; ++i)
      std::copy_n(ta.data.data() + i * n + start, len, out->data.data() + i * len);
    return push(out, {a}, "slice_cols", [this, a, start, len](NodeId self) {
      if (!needs(a)) return;
      auto& na = *nodes_[a].t;
      const auto& g = nodes_[self].t->grad;
      const idx m = na.shape[0], n = na.shape[1];
      for (idx i = 0; i < m; ++i)
        for (idx j = 0; j < len; ++j)
          na.grad[i * n + start + j] += g[i * len + j];
    });
  }

  // Inverted dropout; rate 0 is an exact identity.
  NodeId dropout(NodeId a, double rate, std::mt19937_64& gen) {
    if (rate < 0.0 || rate >= 1.0)
      throw PreconditionError("dropout: rate must be in [0,1)");
    const auto& ta = value(a);
    auto out = make_tensor<T>(ta.shape);
    if (rate == 0.0) {
      out->data = ta.data;
      return push(out, {a}, "dropout", [this, a](NodeId self) {
        if (!needs(a)) return;
        auto& na = *nodes_[a].t;
        const auto& g = nodes_[self].t->grad;
        for (idx i = 0; i < na.numel(); ++i) na.grad[i] += g[i];
      });
    }
    auto mask = std::make_shared<std::vector<std::uint8_t>>(ta.numel());
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    for (idx i = 0; i < ta.numel(); ++i) {
      const bool keep = rng::uniform01(gen) >= rate;
      (*mask)[i] = keep;
      out->data[i] = keep ? ta.data[i] * keep_scale : T(0);
    }
    return push(out, {a}, "dropout", [this, a, mask, keep_scale](NodeId self) {
      if (!needs(a)) return;
      auto& na = *nodes_[a].t;
      const auto& g = nodes_[self].t->grad;
      for (idx i = 0; i < na.numel(); ++i)
        if ((*mask)[i]) na.grad[i] += g[i] * keep_scale;
    });
  }

  // Mean over masked positions of -log softmax(logits)[t, target_t].
  // Gradient at mask-0 rows is exactly zero (those rows are never touched).
  NodeId masked_cross_entropy(NodeId logits, const std::vector<int>& targets,
                              const std::vector<std::uint8_t>& mask) {
    const auto& tl = value(logits);
    if (tl.ndim() != 2)
      throw PreconditionError("masked_cross_entropy: logits must be [T x V]");
    const idx t = tl.shape[0], v = tl.shape[1];
    if (static_cast<idx>(targets.size()) != t ||
        static_cast<idx>(mask.size()) != t)
      throw PreconditionError(
          "masked_cross_entropy: targets/mask length must equal T=" +
          std::to_string(t));
    idx n_masked = 0;
    for (idx i = 0; i < t; ++i) {
      if (!mask[i]) continue;
      ++n_masked;
      if (targets[i] < 0 || targets[i] >= v)
        throw PreconditionError("masked_cross_entropy: target " +
                                std::to_string(targets[i]) + " out of range [0," +
                                std::to_string(v) + ")");
    }
    if (n_masked == 0)
      throw DegenerateInputError("masked_cross_entropy: all-zero mask");

    auto probs = std::make_shared<Tensor<T>>(std::vector<idx>{t, v});
    kernels::softmax_rows(tl.data.data(), probs->data.data(), t, v);
    double loss = 0;
    for (idx i = 0; i < t; ++i) {
      if (!mask[i]) continue;
      // log p recomputed from the stabilized row for accuracy
      const T* row = tl.data.data() + i * v;
      T mx = row[0];
      for (idx j = 1; j < v; ++j) mx = std::max(mx, row[j]);
      double lse = 0;
      for (idx j = 0; j < v; ++j) lse += std::exp(double(row[j] - mx));
      loss += std::log(lse) + double(mx) - double(row[targets[i]]);
    }
    auto out = make_tensor<T>({1});
    out->data[0] = static_cast<T>(loss / double(n_masked));
    return push(out, {logits}, "masked_cross_entropy",
                [this, logits, targets, mask, probs, n_masked, t, v](NodeId self) {
      if (!needs(logits)) return;
      auto& nl = *nodes_[logits].t;
      const T g = nodes_[self].t->grad[0];
      const T inv = g / static_cast<T>(n_masked);
      for (idx i = 0; i < t; ++i) {
        if (!mask[i]) continue;
        const T* p = probs->data.data() + i * v;
        T* gr = nl.grad.data() + i * v;
        for (idx j = 0; j < v; ++j) gr[j] += inv * p[j];
        gr[targets[i]] -= inv;
      }
    });
  }

  NodeId sum(NodeId a) {
    const auto& ta = value(a);
    auto out = make_tensor<T>({1});
    T s = 0;
    for (T x : ta.data) s += x;
    out->data[0] = s;
    return push(out, {a}, "sum", [this, a](NodeId self) {
      if (!needs(a)) return;
      auto& na = *nodes_[a].t;
      const T g = nodes_[self].t->grad[0];
      for (idx i = 0; i < na.numel(); ++i) na.grad[i] += g;
    });
  }

  // Reverse replay from a scalar loss. Each recorded op is visited exactly
  // once; leaf grads accumulate (call at most once per tape).
  void backward(NodeId loss) {
    if (value(loss).numel() != 1)
      throw PreconditionError("backward: loss must be scalar, got " +
                              shape_str(value(loss).shape));
    if (backward_done_)
      throw PreconditionError("backward: tape already replayed");
    backward_done_ = true;
    for (auto& n : nodes_)
      if (n.t->requires_grad) n.t->ensure_grad();
    nodes_[loss].t->grad[0] += T(1);
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      auto& n = nodes_[i];
      if (!n.backward || !n.t->requires_grad) continue;
      n.backward(i);
      if (nonfinite_checks()) check_inputs_finite(i);
    }
  }

 private:
  struct Node {
    TensorPtr<T> t;
    std::vector<NodeId> inputs;
    const char* op;
    std::function<void(NodeId)> backward;
  };

  NodeId check(NodeId id) const {
    if (id < 0 || id >= static_cast<NodeId>(nodes_.size()))
      throw PreconditionError("bad node id " + std::to_string(id));
    return id;
  }

  bool needs(NodeId id) const { return nodes_[id].t->requires_grad; }

  NodeId push(TensorPtr<T> t, std::vector<NodeId> inputs, const char* op,
              std::function<void(NodeId)> bw) {
    if (bw) {
      bool any = false;
      for (NodeId i : inputs) any = any || nodes_[i].t->requires_grad;
      t->requires_grad = any;
    }
    if (nonfinite_checks() && !t->all_finite())
      throw NumericsError(std::string("non-finite value in forward of op '") +
                          op + "'");
    nodes_.push_back(Node{std::move(t), std::move(inputs), op, std::move(bw)});
    return static_cast<NodeId>(nodes_.size()) - 1;
  }

  void check_inputs_finite(NodeId id) const {
    for (NodeId i : nodes_[id].inputs) {
      const auto& t = *nodes_[i].t;
      if (!t.requires_grad) continue;
      for (T v : t.grad)
        if (!std::isfinite(static_cast<double>(v)))
          throw NumericsError(std::string("non-finite gradient in backward of op '") +
                              nodes_[id].op + "'");
    }
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace minigen
