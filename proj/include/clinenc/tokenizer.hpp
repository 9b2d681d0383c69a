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
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace clinenc {

/// Byte-level subword vocabulary.
///
/// Words are whitespace-delimited byte strings terminated by an end-of-word
/// marker, held internally as a trailing ' ' (whitespace never occurs inside a
/// word, so the marker cannot collide with text). Merges never cross words.
///
/// Reserved ids, lowest first: PAD, UNK, CLS, SEP, MASK, and the bare
/// end-of-word marker. Then the base byte alphabet in byte order, then merged
/// tokens in merge order.
class Vocab {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;
  static constexpr std::int32_t kCls = 2;
  static constexpr std::int32_t kSep = 3;
  static constexpr std::int32_t kMask = 4;
  static constexpr std::int32_t kEndOfWord = 5;
  static constexpr std::int32_t kNumReserved = 6;
  static constexpr std::uint32_t kFormatVersion = 1;

  Vocab() = default;

  std::size_t size() const { return id_to_token_.size(); }
  std::size_t target_size() const { return target_size_; }

  /// Internal token string for an id (reserved ids return their display name).
  const std::string& token(std::int32_t id) const { return id_to_token_.at(static_cast<std::size_t>(id)); }

  /// Id of a non-reserved token, or -1.
  std::int32_t find(std::string_view token) const;

  std::size_t max_token_bytes() const { return max_token_bytes_; }

  static bool is_special(std::int32_t id) { return id >= 0 && id < kEndOfWord; }

  std::vector<std::int32_t> encode(std::string_view text, bool add_cls_sep) const;

  /// Encodes one whitespace-free word (used for word-aligned NER inputs).
  std::vector<std::int32_t> encode_word(std::string_view word) const;

  std::string decode(std::span<const std::int32_t> ids) const;

  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.id_to_token_ == b.id_to_token_ && a.target_size_ == b.target_size_;
  }

  friend Vocab train_vocab(std::span<const std::string> corpus, std::size_t target_size);

 private:
  void add_token(std::string token);
  void rebuild_index();

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, std::int32_t> token_to_id_;
  std::size_t target_size_ = 0;
  std::size_t max_token_bytes_ = 0;
};

/// Trains a byte-pair vocabulary of exactly `target_size` entries.
///
/// The most frequent adjacent pair is merged first; equal counts go to the
/// lexicographically smaller (left, right) pair. Throws DataError on an empty
/// corpus, a target below the reserved-plus-alphabet floor, or a corpus with
/// too few distinct pairs to reach the target.
Vocab train_vocab(std::span<const std::string> corpus, std::size_t target_size);

/// Smallest valid target size for a corpus: reserved ids plus distinct
/// non-whitespace bytes.
std::size_t vocab_floor(std::span<const std::string> corpus);

/// Collapses whitespace runs to single spaces and trims both ends.
std::string normalize_whitespace(std::string_view text);

std::vector<std::string_view> split_words(std::string_view text);

}  // namespace clinenc
