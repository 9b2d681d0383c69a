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
#include <span>
#include <vector>

#include "clinenc/tensor.hpp"

namespace clinenc {

using TokenIds = std::vector<std::int32_t>;

/// Unpadded batch: every document's tokens back to back.
///
/// Sequence i spans [cu_seqlens[i], cu_seqlens[i+1]); positions restart at 0
/// for each sequence. No PAD id appears anywhere.
struct PackedBatch {
  TokenIds token_ids;
  std::vector<std::int32_t> cu_seqlens{0};
  std::int32_t max_seqlen = 0;
  std::vector<std::int32_t> positions;

  std::size_t num_seqs() const { return cu_seqlens.size() - 1; }
  std::size_t num_tokens() const { return token_ids.size(); }
  std::size_t seq_begin(std::size_t i) const { return static_cast<std::size_t>(cu_seqlens[i]); }
  std::size_t seq_length(std::size_t i) const {
    return static_cast<std::size_t>(cu_seqlens[i + 1] - cu_seqlens[i]);
  }
};

/// Rectangular batch of n_docs rows of padded_len slots, PAD-filled.
struct PaddedBatch {
  TokenIds token_ids;
  std::vector<std::uint8_t> valid;
  std::size_t n_docs = 0;
  std::size_t padded_len = 0;

  std::size_t slots() const { return n_docs * padded_len; }
  std::size_t real_tokens() const;
};

/// Packs documents in order. Throws DataError naming the first empty,
/// over-length (> max_len), or PAD-containing document. max_len == 0 disables
/// the length check.
PackedBatch pack(std::span<const TokenIds> docs, std::size_t max_len = 0);

/// Checks every PackedBatch invariant; throws DataError describing the first
/// violation.
void validate(const PackedBatch& batch);

/// Splits per-token rows back into per-document blocks. With `validate_batch`
/// set the batch invariants are checked first.
template <typename T>
std::vector<Tensor<T>> unpack(const PackedBatch& batch, const Tensor<T>& per_token,
                              bool validate_batch = true);

/// Pads documents to the longest one, or to `pad_to` when that is larger.
PaddedBatch pad(std::span<const TokenIds> docs, std::size_t pad_to = 0);

/// Groups document indices into batches of at most `token_capacity` tokens in
/// arrival order, never splitting a document. A document longer than the
/// capacity gets a batch of its own.
std::vector<std::vector<std::size_t>> batch_by_tokens(std::span<const TokenIds> docs,
                                                      std::size_t token_capacity);

}  // namespace clinenc
