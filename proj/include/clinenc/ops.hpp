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

#pragma once

#include <cstdint>
#include <limits>
#include <span>

#include "clinenc/rng.hpp"
#include "clinenc/tensor.hpp"

// Differentiable primitives. Each op computes its forward value eagerly and,
// when the tape is recording and an input requires grad, appends a closure
// that accumulates input gradients during the reverse sweep.
//
// Instantiated for float (training, inference) and double (gradient checks).

namespace clinenc::ops {

/// Target value that cross_entropy_with_ignore skips.
inline constexpr std::int32_t kIgnoreIndex = std::numeric_limits<std::int32_t>::max();

template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

/// x[M,N] + bias[N] broadcast over rows; the only broadcast supported.
template <typename T>
Tensor<T> add_bias(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& bias);

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T factor);

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& a);

/// Exact (erf) GELU.
template <typename T>
Tensor<T> gelu(Tape<T>& tape, const Tensor<T>& x);

template <typename T>
Tensor<T> softmax_rows(Tape<T>& tape, const Tensor<T>& x);

template <typename T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5));

template <typename T>
Tensor<T> embedding_lookup(Tape<T>& tape, const Tensor<T>& table,
                           std::span<const std::int32_t> ids);

/// Selects rows of a rank-2 tensor (e.g. the CLS position of each sequence).
template <typename T>
Tensor<T> gather_rows(Tape<T>& tape, const Tensor<T>& x, std::span<const std::size_t> rows);

/// Mean negative log-likelihood over rows whose target is not `ignore`.
/// Throws when every target is ignored.
template <typename T>
Tensor<T> cross_entropy_with_ignore(Tape<T>& tape, const Tensor<T>& logits,
                                    std::span<const std::int32_t> targets,
                                    std::int32_t ignore = kIgnoreIndex);

/// Mean binary cross-entropy on logits; targets are 0/1 with the logits' shape.
template <typename T>
Tensor<T> bce_with_logits(Tape<T>& tape, const Tensor<T>& logits,
                          std::span<const std::uint8_t> targets);

/// Inverted dropout. Identity (and no rng draws) when !training or p == 0.
template <typename T>
Tensor<T> dropout(Tape<T>& tape, const Tensor<T>& x, double p, bool training, Rng& rng);

/// Copy that is cut off from the tape.
template <typename T>
Tensor<T> detach(const Tensor<T>& x);

}  // namespace clinenc::ops

namespace clinenc::kernels {

// Raw row-major kernels shared by ops and attention. All accumulate (+=) into C.

/// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c);

/// C[M,N] += A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c);

/// C[M,N] += A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c);

}  // namespace clinenc::kernels
