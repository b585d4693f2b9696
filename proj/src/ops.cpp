#include "dtq/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "dtq/errors.hpp"

namespace dtq {

PadMask PadMask::repeat_each(std::size_t factor) const {
  PadMask out(batch, length * factor);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < length; ++i) {
      for (std::size_t f = 0; f < factor; ++f) out.set(b, i * factor + f, at(b, i));
    }
  }
  return out;
}

std::size_t PadMask::count_unpadded() const {
  return static_cast<std::size_t>(std::count(padded.begin(), padded.end(), 0));
}

namespace ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;

CMap as_matrix(std::span<const double> data, std::size_t rows, std::size_t cols) {
  return CMap(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

// dst (+)= a * b, computed on aligned copies. Eigen's vectorized kernels pick
// their summation order from operand addresses, and heap addresses differ
// between otherwise identical runs.
template <class A, class B>
void product_into(std::span<double> dst, const A& a, const B& b, bool accumulate) {
  const RowMat la = a, lb = b;
  RowMat c;
  c.noalias() = la * lb;
  const double* src = c.data();
  if (accumulate) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  } else {
    std::copy(src, src + dst.size(), dst.begin());
  }
}

Tensor finish(Tensor result, std::initializer_list<const Tensor*> inputs, BackwardFn backward) {
  if (!any_tracked(inputs)) return result;
  std::vector<const Tensor*> list(inputs);
  return Tape::active()->record(std::move(result), list, std::move(backward));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(a.shape()));
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros({m, n});
  product_into(out.mutable_data(), as_matrix(a.data(), m, k), as_matrix(b.data(), k, n), false);
  return finish(std::move(out), {&a, &b}, [a, b, m, k, n](std::span<const double> g, std::span<GradSpan> grads) {
    const CMap gm = as_matrix(g, m, n);
    if (!grads[0].empty()) product_into(grads[0], gm, as_matrix(b.data(), k, n).transpose(), true);
    if (!grads[1].empty()) product_into(grads[1], as_matrix(a.data(), m, k).transpose(), gm, true);
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor* bias) {
  require_rank(weight, 2, "linear");
  if (x.rank() == 0) throw DimensionError("linear: input has no axes");
  const std::size_t in = weight.dim(1), out_features = weight.dim(0);
  if (x.shape().back() != in) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
  }
  if (bias && bias->shape() != Shape{out_features}) {
    throw DimensionError("linear: bias " + shape_str(bias->shape()) + " does not match weight " +
                         shape_str(weight.shape()));
  }
  const std::size_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_features;
  Tensor out = Tensor::zeros(out_shape);
  const std::span<double> y = out.mutable_data();
  product_into(y, as_matrix(x.data(), rows, in), as_matrix(weight.data(), out_features, in).transpose(), false);
  if (bias) {
    const auto bv = bias->data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t o = 0; o < out_features; ++o) y[r * out_features + o] += bv[o];
  }

  const Tensor empty;
  return finish(std::move(out), {&x, &weight, bias ? bias : &empty},
                [x, weight, rows, in, out_features](std::span<const double> g, std::span<GradSpan> grads) {
                  const CMap gm = as_matrix(g, rows, out_features);
                  if (!grads[0].empty()) {
                    product_into(grads[0], gm, as_matrix(weight.data(), out_features, in), true);
                  }
                  if (!grads[1].empty()) {
                    product_into(grads[1], gm.transpose(), as_matrix(x.data(), rows, in), true);
                  }
                  if (grads.size() > 2 && !grads[2].empty()) {
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t o = 0; o < out_features; ++o) grads[2][o] += g[r * out_features + o];
                  }
                });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return finish(Tensor(a.shape(), std::move(out)), {&a, &b}, [](std::span<const double> g, std::span<GradSpan> grads) {
    for (GradSpan gs : grads) {
      if (gs.empty()) continue;
      for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return finish(Tensor(a.shape(), std::move(out)), {&a, &b}, [](std::span<const double> g, std::span<GradSpan> grads) {
    if (!grads[0].empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i];
    }
    if (!grads[1].empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) grads[1][i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return finish(Tensor(a.shape(), std::move(out)), {&a, &b}, [a, b](std::span<const double> g, std::span<GradSpan> grads) {
    const auto x = a.data(), y = b.data();
    if (!grads[0].empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i] * y[i];
    }
    if (!grads[1].empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) grads[1][i] += g[i] * x[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return finish(Tensor(a.shape(), std::move(out)), {&a}, [factor](std::span<const double> g, std::span<GradSpan> grads) {
    for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i] * factor;
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double x : a.data()) total += x;
  return finish(Tensor::scalar(total), {&a}, [](std::span<const double> g, std::span<GradSpan> grads) {
    for (double& gi : grads[0]) gi += g[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  // Copying keeps the value semantics simple; reshapes are not on a hot path.
  Tensor out(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()));
  return finish(std::move(out), {&a}, [](std::span<const double> g, std::span<GradSpan> grads) {
    for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i];
  });
}

Tensor slice_last(const Tensor& a, std::size_t start, std::size_t len) {
  if (a.rank() == 0) throw DimensionError("slice_last: tensor has no axes");
  const std::size_t width = a.shape().back();
  if (len == 0 || start + len > width) {
    throw DimensionError("slice_last: [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") outside last axis of " + shape_str(a.shape()));
  }
  const std::size_t rows = a.numel() / width;
  Shape shape = a.shape();
  shape.back() = len;
  std::vector<double> out(rows * len);
  const auto x = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(r * width + start), len,
                out.begin() + static_cast<std::ptrdiff_t>(r * len));
  }
  return finish(Tensor(std::move(shape), std::move(out)), {&a},
                [rows, width, start, len](std::span<const double> g, std::span<GradSpan> grads) {
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < len; ++c) grads[0][r * width + start + c] += g[r * len + c];
                  }
                });
}

Tensor swap_axes_12(const Tensor& a) {
  require_rank(a, 4, "swap_axes_12");
  const std::size_t n0 = a.dim(0), n1 = a.dim(1), n2 = a.dim(2), n3 = a.dim(3);
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < n0; ++i) {
    for (std::size_t j = 0; j < n1; ++j) {
      for (std::size_t k = 0; k < n2; ++k) {
        std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(((i * n1 + j) * n2 + k) * n3), n3,
                    out.begin() + static_cast<std::ptrdiff_t>(((i * n2 + k) * n1 + j) * n3));
      }
    }
  }
  return finish(Tensor({n0, n2, n1, n3}, std::move(out)), {&a},
                [n0, n1, n2, n3](std::span<const double> g, std::span<GradSpan> grads) {
                  for (std::size_t i = 0; i < n0; ++i) {
                    for (std::size_t j = 0; j < n1; ++j) {
                      for (std::size_t k = 0; k < n2; ++k) {
                        const double* src = g.data() + ((i * n2 + k) * n1 + j) * n3;
                        double* dst = grads[0].data() + ((i * n1 + j) * n2 + k) * n3;
                        for (std::size_t l = 0; l < n3; ++l) dst[l] += src[l];
                      }
                    }
                  }
                });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm: tensor has no axes");
  const std::size_t d = x.shape().back();
  if (d == 0) throw DimensionError("layer_norm: empty normalization axis");
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                         shape_str(bias.shape()) + " do not match input " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> rstd(rows);
  const auto xs = x.data(), gs = gain.data(), bs = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xs.data() + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    rstd[r] = inv;
    for (std::size_t i = 0; i < d; ++i) {
      const double h = (row[i] - mu) * inv;
      xhat[r * d + i] = h;
      out[r * d + i] = h * gs[i] + bs[i];
    }
  }
  if (!any_tracked({&x, &gain, &bias})) return Tensor(x.shape(), std::move(out));
  return finish(Tensor(x.shape(), std::move(out)), {&x, &gain, &bias},
                [gain, xhat = std::move(xhat), rstd = std::move(rstd), rows, d](std::span<const double> g,
                                                                                std::span<GradSpan> grads) {
                  const auto gs = gain.data();
                  std::vector<double> dxhat(d);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double* gr = g.data() + r * d;
                    const double* hr = xhat.data() + r * d;
                    if (!grads[1].empty()) {
                      for (std::size_t i = 0; i < d; ++i) grads[1][i] += gr[i] * hr[i];
                    }
                    if (!grads[2].empty()) {
                      for (std::size_t i = 0; i < d; ++i) grads[2][i] += gr[i];
                    }
                    if (grads[0].empty()) continue;
                    double mean_dxhat = 0.0, mean_dxhat_h = 0.0;
                    for (std::size_t i = 0; i < d; ++i) {
                      dxhat[i] = gr[i] * gs[i];
                      mean_dxhat += dxhat[i];
                      mean_dxhat_h += dxhat[i] * hr[i];
                    }
                    mean_dxhat /= static_cast<double>(d);
                    mean_dxhat_h /= static_cast<double>(d);
                    double* out_row = grads[0].data() + r * d;
                    for (std::size_t i = 0; i < d; ++i) {
                      out_row[i] += rstd[r] * (dxhat[i] - mean_dxhat - hr[i] * mean_dxhat_h);
                    }
                  }
                });
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xs[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  return finish(Tensor(x.shape(), std::move(out)), {&x}, [x](std::span<const double> g, std::span<GradSpan> grads) {
    const auto xs = x.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xs[i];
      const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      grads[0][i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
    }
  });
}

Tensor tanh(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xs[i]);
  Tensor result(x.shape(), std::move(out));
  if (!any_tracked({&x})) return result;
  const Tensor saved = result.detach();
  return finish(std::move(result), {&x}, [saved](std::span<const double> g, std::span<GradSpan> grads) {
    const auto ys = saved.data();
    for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i] * (1.0 - ys[i] * ys[i]);
  });
}

namespace {

struct AttentionDims {
  std::size_t batch, heads, length, dk;
};

AttentionDims check_attention(const Tensor& q, const Tensor& k, const Tensor* v, const PadMask& mask) {
  require_rank(q, 4, "causal_softmax_attention");
  require_same_shape(q, k, "causal_softmax_attention");
  if (v) require_same_shape(q, *v, "causal_softmax_attention");
  AttentionDims dims{q.dim(0), q.dim(1), q.dim(2), q.dim(3)};
  if (mask.batch != dims.batch || mask.length != dims.length || mask.padded.size() != dims.batch * dims.length) {
    throw DimensionError("causal_softmax_attention: pad mask [" + std::to_string(mask.batch) + ", " +
                         std::to_string(mask.length) + "] does not match q " + shape_str(q.shape()));
  }
  return dims;
}

// Fills probs[b,h,i,0..i]; entries above the diagonal stay zero.
void attention_probs(const AttentionDims& dims, std::span<const double> q, std::span<const double> k,
                     const PadMask& mask, std::vector<double>& probs) {
  const std::size_t L = dims.length, dk = dims.dk;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  probs.assign(dims.batch * dims.heads * L * L, 0.0);
  for (std::size_t b = 0; b < dims.batch; ++b) {
    for (std::size_t h = 0; h < dims.heads; ++h) {
      const std::size_t base = (b * dims.heads + h) * L;
      for (std::size_t i = 0; i < L; ++i) {
        double* row = probs.data() + (base + i) * L;
        const double* qi = q.data() + (base + i) * dk;
        bool any_visible = false;
        for (std::size_t j = 0; j <= i; ++j) any_visible = any_visible || !mask.at(b, j);
        double max_logit = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          const bool visible = any_visible ? !mask.at(b, j) : j == i;
          if (!visible) continue;
          const double* kj = k.data() + (base + j) * dk;
          double dot = 0.0;
          for (std::size_t c = 0; c < dk; ++c) dot += qi[c] * kj[c];
          row[j] = dot * scale;
          max_logit = std::max(max_logit, row[j]);
        }
        double denom = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          const bool visible = any_visible ? !mask.at(b, j) : j == i;
          if (!visible) continue;
          row[j] = std::exp(row[j] - max_logit);
          denom += row[j];
        }
        for (std::size_t j = 0; j <= i; ++j) row[j] /= denom;
      }
    }
  }
}

}  // namespace

std::vector<double> attention_weights(const Tensor& q, const Tensor& k, const PadMask& pad_mask) {
  const AttentionDims dims = check_attention(q, k, nullptr, pad_mask);
  std::vector<double> probs;
  attention_probs(dims, q.data(), k.data(), pad_mask, probs);
  return probs;
}

Tensor causal_softmax_attention(const Tensor& q, const Tensor& k, const Tensor& v, const PadMask& pad_mask) {
  const AttentionDims dims = check_attention(q, k, &v, pad_mask);
  std::vector<double> probs;
  attention_probs(dims, q.data(), k.data(), pad_mask, probs);
  const std::size_t L = dims.length, dk = dims.dk;
  std::vector<double> out(q.numel(), 0.0);
  const auto vs = v.data();
  for (std::size_t bh = 0; bh < dims.batch * dims.heads; ++bh) {
    for (std::size_t i = 0; i < L; ++i) {
      const double* p = probs.data() + (bh * L + i) * L;
      double* o = out.data() + (bh * L + i) * dk;
      for (std::size_t j = 0; j <= i; ++j) {
        if (p[j] == 0.0) continue;
        const double* vj = vs.data() + (bh * L + j) * dk;
        for (std::size_t c = 0; c < dk; ++c) o[c] += p[j] * vj[c];
      }
    }
  }
  return finish(Tensor(q.shape(), std::move(out)), {&q, &k, &v},
                [q, k, v, dims, probs = std::move(probs)](std::span<const double> g, std::span<GradSpan> grads) {
                  const std::size_t L = dims.length, dk = dims.dk;
                  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
                  const auto qs = q.data(), ks = k.data(), vs = v.data();
                  std::vector<double> dp(L);
                  for (std::size_t bh = 0; bh < dims.batch * dims.heads; ++bh) {
                    for (std::size_t i = 0; i < L; ++i) {
                      const double* p = probs.data() + (bh * L + i) * L;
                      const double* go = g.data() + (bh * L + i) * dk;
                      double weighted = 0.0;
                      for (std::size_t j = 0; j <= i; ++j) {
                        const double* vj = vs.data() + (bh * L + j) * dk;
                        double dot = 0.0;
                        for (std::size_t c = 0; c < dk; ++c) dot += go[c] * vj[c];
                        dp[j] = dot;
                        weighted += p[j] * dot;
                        if (!grads[2].empty() && p[j] != 0.0) {
                          double* dv = grads[2].data() + (bh * L + j) * dk;
                          for (std::size_t c = 0; c < dk; ++c) dv[c] += p[j] * go[c];
                        }
                      }
                      for (std::size_t j = 0; j <= i; ++j) {
                        const double ds = p[j] * (dp[j] - weighted) * scale;
                        if (ds == 0.0) continue;
                        if (!grads[0].empty()) {
                          double* dq = grads[0].data() + (bh * L + i) * dk;
                          const double* kj = ks.data() + (bh * L + j) * dk;
                          for (std::size_t c = 0; c < dk; ++c) dq[c] += ds * kj[c];
                        }
                        if (!grads[1].empty()) {
                          double* dkj = grads[1].data() + (bh * L + j) * dk;
                          const double* qi = qs.data() + (bh * L + i) * dk;
                          for (std::size_t c = 0; c < dk; ++c) dkj[c] += ds * qi[c];
                        }
                      }
                    }
                  }
                });
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> indices) {
  require_rank(table, 2, "embedding");
  const std::size_t n = table.dim(0), d = table.dim(1);
  if (indices.empty()) throw DimensionError("embedding: no indices");
  std::vector<double> out(indices.size() * d);
  const auto ts = table.data();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= n) {
      throw RangeError("embedding: index " + std::to_string(indices[r]) + " outside table of " +
                       std::to_string(n) + " rows");
    }
    std::copy_n(ts.begin() + static_cast<std::ptrdiff_t>(indices[r] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  std::vector<std::size_t> saved(indices.begin(), indices.end());
  return finish(Tensor({indices.size(), d}, std::move(out)), {&table},
                [saved = std::move(saved), d](std::span<const double> g, std::span<GradSpan> grads) {
                  for (std::size_t r = 0; r < saved.size(); ++r) {
                    double* dst = grads[0].data() + saved[r] * d;
                    for (std::size_t c = 0; c < d; ++c) dst[c] += g[r * d + c];
                  }
                });
}

Tensor gather_positions(const Tensor& x, std::span<const std::size_t> positions) {
  require_rank(x, 3, "gather_positions");
  const std::size_t B = x.dim(0), L = x.dim(1), d = x.dim(2), P = positions.size();
  if (P == 0) throw DimensionError("gather_positions: no positions");
  for (std::size_t p : positions) {
    if (p >= L) throw RangeError("gather_positions: position " + std::to_string(p) + " >= " + std::to_string(L));
  }
  std::vector<double> out(B * P * d);
  const auto xs = x.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < P; ++i) {
      std::copy_n(xs.begin() + static_cast<std::ptrdiff_t>((b * L + positions[i]) * d), d,
                  out.begin() + static_cast<std::ptrdiff_t>((b * P + i) * d));
    }
  }
  std::vector<std::size_t> saved(positions.begin(), positions.end());
  return finish(Tensor({B, P, d}, std::move(out)), {&x},
                [saved = std::move(saved), B, L, d](std::span<const double> g, std::span<GradSpan> grads) {
                  const std::size_t P = saved.size();
                  for (std::size_t b = 0; b < B; ++b) {
                    for (std::size_t i = 0; i < P; ++i) {
                      double* dst = grads[0].data() + (b * L + saved[i]) * d;
                      const double* src = g.data() + (b * P + i) * d;
                      for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
                    }
                  }
                });
}

Tensor interleave(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("interleave: no inputs");
  for (const Tensor& p : parts) {
    require_rank(p, 3, "interleave");
    require_same_shape(parts[0], p, "interleave");
  }
  const std::size_t n = parts.size();
  const std::size_t B = parts[0].dim(0), K = parts[0].dim(1), d = parts[0].dim(2);
  std::vector<double> out(B * n * K * d);
  for (std::size_t j = 0; j < n; ++j) {
    const auto src = parts[j].data();
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t t = 0; t < K; ++t) {
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>((b * K + t) * d), d,
                    out.begin() + static_cast<std::ptrdiff_t>((b * n * K + t * n + j) * d));
      }
    }
  }
  Tensor result({B, n * K, d}, std::move(out));
  Tape* tape = Tape::active();
  bool tracked = false;
  for (const Tensor& p : parts) tracked = tracked || (tape && tape->tracks(p));
  if (!tracked) return result;
  std::vector<const Tensor*> inputs;
  for (const Tensor& p : parts) inputs.push_back(&p);
  return tape->record(std::move(result), inputs, [n, B, K, d](std::span<const double> g, std::span<GradSpan> grads) {
    for (std::size_t j = 0; j < n; ++j) {
      if (grads[j].empty()) continue;
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t t = 0; t < K; ++t) {
          const double* src = g.data() + (b * n * K + t * n + j) * d;
          double* dst = grads[j].data() + (b * K + t) * d;
          for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
        }
      }
    }
  });
}

}  // namespace ops
}  // namespace dtq
