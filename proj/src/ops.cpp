// Copyright 2026 The clinenc Authors.
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

#include "clinenc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace clinenc {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace kernels {

template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  std::vector<T> bt(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  gemm_nn(m, k, n, a, bt.data(), c);
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T api = arow[i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
    }
  }
}

template void gemm_nn<float>(std::size_t, std::size_t, std::size_t, const float*, const float*, float*);
template void gemm_nn<double>(std::size_t, std::size_t, std::size_t, const double*, const double*, double*);
template void gemm_nt<float>(std::size_t, std::size_t, std::size_t, const float*, const float*, float*);
template void gemm_nt<double>(std::size_t, std::size_t, std::size_t, const double*, const double*, double*);
template void gemm_tn<float>(std::size_t, std::size_t, std::size_t, const float*, const float*, float*);
template void gemm_tn<double>(std::size_t, std::size_t, std::size_t, const double*, const double*, double*);

}  // namespace kernels

namespace ops {
namespace {

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                              shape_string(b));
}

template <typename T>
void require_rank2(const char* op, const Tensor<T>& t) {
  if (t.rank() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected rank-2 tensor, got " +
                                shape_string(t.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  if (a.dim(1) != b.dim(0)) shape_mismatch("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out({m, n});
  kernels::gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data().data());
  if (tape.wants({&a, &b})) {
    tape.record(out, [a, b, out, m, k, n]() mutable {
      const T* dout = out.grad().data();
      if (a.requires_grad()) kernels::gemm_nt(m, n, k, dout, b.data().data(), a.grad().data());
      if (b.requires_grad()) kernels::gemm_tn(k, m, n, a.data().data(), dout, b.grad().data());
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_mismatch("add", a.shape(), b.shape());
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (tape.wants({&a, &b})) {
    tape.record(out, [a, b, out]() mutable {
      auto g = out.grad();
      for (const Tensor<T>* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto tg = t->grad();
        for (std::size_t i = 0; i < g.size(); ++i) tg[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_bias(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& bias) {
  require_rank2("add_bias", x);
  if (bias.numel() != x.dim(1)) shape_mismatch("add_bias", x.shape(), bias.shape());
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto xv = x.data();
  auto bv = bias.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) o[i * n + j] = xv[i * n + j] + bv[j];
  }
  if (tape.wants({&x, &bias})) {
    tape.record(out, [x, bias, out, m, n]() mutable {
      auto g = out.grad();
      if (x.requires_grad()) {
        auto xg = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto bg = bias.grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) bg[j] += g[i * n + j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_mismatch("mul", a.shape(), b.shape());
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (tape.wants({&a, &b})) {
    tape.record(out, [a, b, out]() mutable {
      auto g = out.grad();
      auto x = a.data();
      auto y = b.data();
      if (a.requires_grad()) {
        auto ag = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ag[i] += g[i] * y[i];
      }
      if (b.requires_grad()) {
        auto bg = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) bg[i] += g[i] * x[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T factor) {
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor;
  if (tape.wants({&a})) {
    tape.record(out, [a, out, factor]() mutable {
      auto g = out.grad();
      auto ag = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ag[i] += g[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& a) {
  T total = 0;
  for (T v : a.data()) total += v;
  Tensor<T> out(Shape{}, std::vector<T>{total});
  if (tape.wants({&a})) {
    tape.record(out, [a, out]() mutable {
      const T g = out.grad()[0];
      for (T& v : a.grad()) v += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> gelu(Tape<T>& tape, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto xv = x.data();
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = T(0.5) * xv[i] * (T(1) + std::erf(xv[i] * inv_sqrt2));
  }
  if (tape.wants({&x})) {
    tape.record(out, [x, out, inv_sqrt2]() mutable {
      auto g = out.grad();
      auto xv = x.data();
      auto xg = x.grad();
      const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * T(M_PI));
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T v = xv[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
        xg[i] += g[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax_rows(Tape<T>& tape, const Tensor<T>& x) {
  const std::size_t m = x.rows(), n = x.cols();
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = xv.data() + i * n;
    T* orow = o.data() + i * n;
    const T mx = *std::max_element(row, row + n);
    T z = 0;
    for (std::size_t j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      z += orow[j];
    }
    for (std::size_t j = 0; j < n; ++j) orow[j] /= z;
  }
  if (tape.wants({&x})) {
    tape.record(out, [x, out, m, n]() mutable {
      auto g = out.grad();
      auto y = out.data();
      auto xg = x.grad();
      for (std::size_t i = 0; i < m; ++i) {
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
        for (std::size_t j = 0; j < n; ++j) xg[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps) {
  require_rank2("layer_norm", x);
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gamma.numel() != n) shape_mismatch("layer_norm", x.shape(), gamma.shape());
  if (beta.numel() != n) shape_mismatch("layer_norm", x.shape(), beta.shape());
  Tensor<T> out(x.shape());
  std::vector<T> xhat(m * n), rstd(m);
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  auto o = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = xv.data() + i * n;
    T mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= T(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= T(n);
    const T r = T(1) / std::sqrt(var + eps);
    rstd[i] = r;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (row[j] - mean) * r;
      xhat[i * n + j] = h;
      o[i * n + j] = h * gv[j] + bv[j];
    }
  }
  if (tape.wants({&x, &gamma, &beta})) {
    tape.record(out, [x, gamma, beta, out, xhat = std::move(xhat), rstd = std::move(rstd), m,
                      n]() mutable {
      auto g = out.grad();
      auto gv = gamma.data();
      if (gamma.requires_grad()) {
        auto gg = gamma.grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * xhat[i * n + j];
        }
      }
      if (beta.requires_grad()) {
        auto bg = beta.grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) bg[j] += g[i * n + j];
        }
      }
      if (x.requires_grad()) {
        auto xg = x.grad();
        for (std::size_t i = 0; i < m; ++i) {
          T mean_d = 0, mean_dx = 0;
          for (std::size_t j = 0; j < n; ++j) {
            const T d = g[i * n + j] * gv[j];
            mean_d += d;
            mean_dx += d * xhat[i * n + j];
          }
          mean_d /= T(n);
          mean_dx /= T(n);
          for (std::size_t j = 0; j < n; ++j) {
            const T d = g[i * n + j] * gv[j];
            xg[i * n + j] += rstd[i] * (d - mean_d - xhat[i * n + j] * mean_dx);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> embedding_lookup(Tape<T>& tape, const Tensor<T>& table,
                           std::span<const std::int32_t> ids) {
  require_rank2("embedding_lookup", table);
  const std::size_t v = table.dim(0), d = table.dim(1);
  Tensor<T> out({ids.size(), d});
  auto o = out.data();
  auto tv = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw std::out_of_range("embedding_lookup: id " + std::to_string(ids[i]) + " at position " +
                              std::to_string(i) + " outside vocabulary of " + std::to_string(v));
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, o.data() + i * d);
  }
  if (tape.wants({&table})) {
    std::vector<std::int32_t> saved(ids.begin(), ids.end());
    tape.record(out, [table, out, saved = std::move(saved), d]() mutable {
      auto g = out.grad();
      auto tg = table.grad();
      for (std::size_t i = 0; i < saved.size(); ++i) {
        T* dst = tg.data() + static_cast<std::size_t>(saved[i]) * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += g[i * d + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> gather_rows(Tape<T>& tape, const Tensor<T>& x, std::span<const std::size_t> rows) {
  require_rank2("gather_rows", x);
  const std::size_t n = x.dim(1);
  Tensor<T> out({rows.size(), n});
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.dim(0)) {
      throw std::out_of_range("gather_rows: row " + std::to_string(rows[i]) + " of " +
                              shape_string(x.shape()));
    }
    std::copy_n(xv.data() + rows[i] * n, n, o.data() + i * n);
  }
  if (tape.wants({&x})) {
    std::vector<std::size_t> saved(rows.begin(), rows.end());
    tape.record(out, [x, out, saved = std::move(saved), n]() mutable {
      auto g = out.grad();
      auto xg = x.grad();
      for (std::size_t i = 0; i < saved.size(); ++i) {
        for (std::size_t j = 0; j < n; ++j) xg[saved[i] * n + j] += g[i * n + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> cross_entropy_with_ignore(Tape<T>& tape, const Tensor<T>& logits,
                                    std::span<const std::int32_t> targets, std::int32_t ignore) {
  require_rank2("cross_entropy_with_ignore", logits);
  const std::size_t m = logits.dim(0), c = logits.dim(1);
  if (targets.size() != m) {
    shape_mismatch("cross_entropy_with_ignore", logits.shape(), Shape{targets.size()});
  }
  auto lv = logits.data();
  std::vector<T> probs;
  const bool record = tape.wants({&logits});
  if (record) probs.assign(m * c, T(0));
  std::size_t count = 0;
  T total = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] == ignore) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= c) {
      throw std::out_of_range("cross_entropy_with_ignore: target " + std::to_string(targets[i]) +
                              " at row " + std::to_string(i) + " outside " + std::to_string(c) +
                              " classes");
    }
    const T* row = lv.data() + i * c;
    const T mx = *std::max_element(row, row + c);
    T z = 0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const T lse = mx + std::log(z);
    total += lse - row[targets[i]];
    if (record) {
      for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - lse);
    }
    ++count;
  }
  if (count == 0) {
    throw std::invalid_argument("cross_entropy_with_ignore: every target is ignored; mean undefined");
  }
  Tensor<T> out(Shape{}, std::vector<T>{total / T(count)});
  if (record) {
    std::vector<std::int32_t> saved(targets.begin(), targets.end());
    tape.record(out, [logits, out, probs = std::move(probs), saved = std::move(saved), m, c,
                      count, ignore]() mutable {
      const T g = out.grad()[0] / T(count);
      auto lg = logits.grad();
      for (std::size_t i = 0; i < m; ++i) {
        if (saved[i] == ignore) continue;
        for (std::size_t j = 0; j < c; ++j) lg[i * c + j] += g * probs[i * c + j];
        lg[i * c + static_cast<std::size_t>(saved[i])] -= g;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> bce_with_logits(Tape<T>& tape, const Tensor<T>& logits,
                          std::span<const std::uint8_t> targets) {
  if (targets.size() != logits.numel()) {
    shape_mismatch("bce_with_logits", logits.shape(), Shape{targets.size()});
  }
  if (logits.numel() == 0) throw std::invalid_argument("bce_with_logits: empty input");
  auto lv = logits.data();
  T total = 0;
  for (std::size_t i = 0; i < lv.size(); ++i) {
    const T x = lv[i];
    const T t = targets[i] ? T(1) : T(0);
    total += std::max(x, T(0)) - x * t + std::log1p(std::exp(-std::abs(x)));
  }
  const std::size_t n = lv.size();
  Tensor<T> out(Shape{}, std::vector<T>{total / T(n)});
  if (tape.wants({&logits})) {
    std::vector<std::uint8_t> saved(targets.begin(), targets.end());
    tape.record(out, [logits, out, saved = std::move(saved), n]() mutable {
      const T g = out.grad()[0] / T(n);
      auto lv = logits.data();
      auto lg = logits.grad();
      for (std::size_t i = 0; i < n; ++i) {
        const T s = T(1) / (T(1) + std::exp(-lv[i]));
        lg[i] += g * (s - (saved[i] ? T(1) : T(0)));
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> dropout(Tape<T>& tape, const Tensor<T>& x, double p, bool training, Rng& rng) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  const T keep_scale = T(1.0 / (1.0 - p));
  std::vector<T> mask(x.numel());
  for (T& v : mask) v = rng.uniform() < p ? T(0) : keep_scale;
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] * mask[i];
  if (tape.wants({&x})) {
    tape.record(out, [x, out, mask = std::move(mask)]() mutable {
      auto g = out.grad();
      auto xg = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i] * mask[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> detach(const Tensor<T>& x) {
  return x.clone();
}

#define CLINENC_INSTANTIATE_OPS(T)                                                             \
  template Tensor<T> matmul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> add(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> add_bias(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> mul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> scale(Tape<T>&, const Tensor<T>&, T);                                     \
  template Tensor<T> sum(Tape<T>&, const Tensor<T>&);                                          \
  template Tensor<T> gelu(Tape<T>&, const Tensor<T>&);                                         \
  template Tensor<T> softmax_rows(Tape<T>&, const Tensor<T>&);                                 \
  template Tensor<T> layer_norm(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                T);                                                            \
  template Tensor<T> embedding_lookup(Tape<T>&, const Tensor<T>&,                              \
                                      std::span<const std::int32_t>);                          \
  template Tensor<T> gather_rows(Tape<T>&, const Tensor<T>&, std::span<const std::size_t>);    \
  template Tensor<T> cross_entropy_with_ignore(Tape<T>&, const Tensor<T>&,                     \
                                               std::span<const std::int32_t>, std::int32_t);   \
  template Tensor<T> bce_with_logits(Tape<T>&, const Tensor<T>&,                               \
                                     std::span<const std::uint8_t>);                           \
  template Tensor<T> dropout(Tape<T>&, const Tensor<T>&, double, bool, Rng&);                  \
  template Tensor<T> detach(const Tensor<T>&);

CLINENC_INSTANTIATE_OPS(float)
CLINENC_INSTANTIATE_OPS(double)

#undef CLINENC_INSTANTIATE_OPS

}  // namespace ops
}  // namespace clinenc
