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

#include "clinenc/packing.hpp"

#include <algorithm>
#include <string>

#include "clinenc/error.hpp"
#include "clinenc/tokenizer.hpp"

namespace clinenc {

std::size_t PaddedBatch::real_tokens() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

PackedBatch pack(std::span<const TokenIds> docs, std::size_t max_len) {
  PackedBatch batch;
  std::size_t total = 0;
  for (const auto& d : docs) total += d.size();
  batch.token_ids.reserve(total);
  batch.positions.reserve(total);
  batch.cu_seqlens.reserve(docs.size() + 1);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const auto& doc = docs[i];
    if (doc.empty()) throw DataError("pack: document " + std::to_string(i) + " is empty");
    if (max_len != 0 && doc.size() > max_len) {
      throw DataError("pack: document " + std::to_string(i) + " has " + std::to_string(doc.size()) +
                      " tokens, limit is " + std::to_string(max_len));
    }
    if (std::find(doc.begin(), doc.end(), Vocab::kPad) != doc.end()) {
      throw DataError("pack: document " + std::to_string(i) + " contains PAD");
    }
    batch.token_ids.insert(batch.token_ids.end(), doc.begin(), doc.end());
    for (std::size_t p = 0; p < doc.size(); ++p) batch.positions.push_back(static_cast<std::int32_t>(p));
    batch.cu_seqlens.push_back(static_cast<std::int32_t>(batch.token_ids.size()));
    batch.max_seqlen = std::max(batch.max_seqlen, static_cast<std::int32_t>(doc.size()));
  }
  return batch;
}

void validate(const PackedBatch& batch) {
  const auto& cu = batch.cu_seqlens;
  if (cu.empty() || cu.front() != 0) throw DataError("packed batch: cu_seqlens must start at 0");
  if (static_cast<std::size_t>(cu.back()) != batch.token_ids.size()) {
    throw DataError("packed batch: cu_seqlens ends at " + std::to_string(cu.back()) + " but batch has " +
                    std::to_string(batch.token_ids.size()) + " tokens");
  }
  if (batch.positions.size() != batch.token_ids.size()) {
    throw DataError("packed batch: positions and token ids differ in length");
  }
  std::int32_t longest = 0;
  for (std::size_t s = 0; s + 1 < cu.size(); ++s) {
    if (cu[s + 1] <= cu[s]) {
      throw DataError("packed batch: cu_seqlens not strictly increasing at sequence " +
                      std::to_string(s));
    }
    longest = std::max(longest, cu[s + 1] - cu[s]);
    for (auto t = cu[s]; t < cu[s + 1]; ++t) {
      if (batch.positions[static_cast<std::size_t>(t)] != t - cu[s]) {
        throw DataError("packed batch: position at token " + std::to_string(t) +
                        " does not restart from sequence " + std::to_string(s) + " boundary");
      }
    }
  }
  if (longest != batch.max_seqlen) {
    throw DataError("packed batch: max_seqlen " + std::to_string(batch.max_seqlen) +
                    " but longest sequence is " + std::to_string(longest));
  }
  if (std::find(batch.token_ids.begin(), batch.token_ids.end(), Vocab::kPad) !=
      batch.token_ids.end()) {
    throw DataError("packed batch: PAD id present");
  }
}

template <typename T>
std::vector<Tensor<T>> unpack(const PackedBatch& batch, const Tensor<T>& per_token,
                              bool validate_batch) {
  if (validate_batch) validate(batch);
  if (per_token.rows() != batch.num_tokens()) {
    throw DataError("unpack: " + std::to_string(per_token.rows()) + " value rows for " +
                    std::to_string(batch.num_tokens()) + " tokens");
  }
  const std::size_t width = per_token.cols();
  std::vector<Tensor<T>> out;
  out.reserve(batch.num_seqs());
  auto src = per_token.data();
  for (std::size_t s = 0; s < batch.num_seqs(); ++s) {
    const std::size_t len = batch.seq_length(s);
    std::vector<T> values(src.begin() + static_cast<std::ptrdiff_t>(batch.seq_begin(s) * width),
                          src.begin() + static_cast<std::ptrdiff_t>((batch.seq_begin(s) + len) * width));
    out.emplace_back(Shape{len, width}, std::move(values));
  }
  return out;
}

template std::vector<Tensor<float>> unpack(const PackedBatch&, const Tensor<float>&, bool);
template std::vector<Tensor<double>> unpack(const PackedBatch&, const Tensor<double>&, bool);

PaddedBatch pad(std::span<const TokenIds> docs, std::size_t pad_to) {
  PaddedBatch batch;
  batch.n_docs = docs.size();
  std::size_t longest = 0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (docs[i].empty()) throw DataError("pad: document " + std::to_string(i) + " is empty");
    longest = std::max(longest, docs[i].size());
  }
  if (pad_to != 0 && pad_to < longest) {
    throw DataError("pad: pad_to " + std::to_string(pad_to) + " shorter than longest document (" +
                    std::to_string(longest) + ")");
  }
  batch.padded_len = std::max(longest, pad_to);
  batch.token_ids.assign(batch.slots(), Vocab::kPad);
  batch.valid.assign(batch.slots(), 0);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    std::copy(docs[i].begin(), docs[i].end(), batch.token_ids.begin() +
                                                  static_cast<std::ptrdiff_t>(i * batch.padded_len));
    std::fill_n(batch.valid.begin() + static_cast<std::ptrdiff_t>(i * batch.padded_len),
                docs[i].size(), std::uint8_t{1});
  }
  return batch;
}

std::vector<std::vector<std::size_t>> batch_by_tokens(std::span<const TokenIds> docs,
                                                      std::size_t token_capacity) {
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> current;
  std::size_t used = 0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (!current.empty() && used + docs[i].size() > token_capacity) {
      batches.push_back(std::move(current));
      current.clear();
      used = 0;
    }
    current.push_back(i);
    used += docs[i].size();
  }
  if (!current.empty()) batches.push_back(std::move(current));
  return batches;
}

}  // namespace clinenc
