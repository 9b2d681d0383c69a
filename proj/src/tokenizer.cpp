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

#include "clinenc/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "clinenc/error.hpp"

namespace clinenc {
namespace {

constexpr std::array<const char*, Vocab::kEndOfWord> kSpecialNames = {"[PAD]", "[UNK]", "[CLS]",
                                                                      "[SEP]", "[MASK]"};
constexpr char kEow = ' ';
// U+2581 LOWER ONE EIGHTH BLOCK, the on-disk spelling of the end-of-word marker.
constexpr std::string_view kEowDisplay = "\xE2\x96\x81";

bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

std::string escape_token(const std::string& token) {
  std::string out;
  for (unsigned char c : token) {
    if (c == static_cast<unsigned char>(kEow)) {
      out += kEowDisplay;
    } else if (c == '\\') {
      out += "\\\\";
    } else if (c < 0x21 || c >= 0x7f) {
      char buf[5];
      std::snprintf(buf, sizeof(buf), "\\x%02X", c);
      out += buf;
    } else {
      out += static_cast<char>(c);
    }
  }
  return out;
}

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  return -1;
}

std::string unescape_token(std::string_view line, std::size_t line_no) {
  std::string out;
  for (std::size_t i = 0; i < line.size();) {
    if (line.substr(i, kEowDisplay.size()) == kEowDisplay) {
      out += kEow;
      i += kEowDisplay.size();
    } else if (line[i] == '\\') {
      if (i + 1 < line.size() && line[i + 1] == '\\') {
        out += '\\';
        i += 2;
      } else if (i + 3 < line.size() && line[i + 1] == 'x' && hex_value(line[i + 2]) >= 0 &&
                 hex_value(line[i + 3]) >= 0) {
        out += static_cast<char>(hex_value(line[i + 2]) * 16 + hex_value(line[i + 3]));
        i += 4;
      } else {
        throw DataError("vocab line " + std::to_string(line_no) + ": bad escape sequence");
      }
    } else {
      out += line[i++];
    }
  }
  return out;
}

}  // namespace

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  for (auto w : split_words(text)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

std::vector<std::string_view> split_words(std::string_view text) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) words.push_back(text.substr(start, i - start));
  }
  return words;
}

std::int32_t Vocab::find(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? -1 : it->second;
}

void Vocab::add_token(std::string token) {
  max_token_bytes_ = std::max(max_token_bytes_, token.size());
  const auto id = static_cast<std::int32_t>(id_to_token_.size());
  if (id >= kEndOfWord) token_to_id_.emplace(token, id);
  id_to_token_.push_back(std::move(token));
}

void Vocab::rebuild_index() {
  token_to_id_.clear();
  max_token_bytes_ = 0;
  for (std::size_t i = kEndOfWord; i < id_to_token_.size(); ++i) {
    const auto& t = id_to_token_[i];
    if (!token_to_id_.emplace(t, static_cast<std::int32_t>(i)).second) {
      throw DataError("vocab: duplicate token at id " + std::to_string(i));
    }
    max_token_bytes_ = std::max(max_token_bytes_, t.size());
  }
}

std::vector<std::int32_t> Vocab::encode_word(std::string_view word) const {
  std::string s(word);
  s += kEow;
  std::vector<std::int32_t> ids;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const std::size_t longest = std::min(max_token_bytes_, s.size() - pos);
    std::int32_t hit = -1;
    std::size_t hit_len = 1;
    for (std::size_t len = longest; len >= 1; --len) {
      auto it = token_to_id_.find(s.substr(pos, len));
      if (it != token_to_id_.end()) {
        hit = it->second;
        hit_len = len;
        break;
      }
    }
    ids.push_back(hit >= 0 ? hit : kUnk);
    pos += hit_len;
  }
  return ids;
}

std::vector<std::int32_t> Vocab::encode(std::string_view text, bool add_cls_sep) const {
  std::vector<std::int32_t> ids;
  if (add_cls_sep) ids.push_back(kCls);
  for (auto w : split_words(text)) {
    auto piece = encode_word(w);
    ids.insert(ids.end(), piece.begin(), piece.end());
  }
  if (add_cls_sep) ids.push_back(kSep);
  return ids;
}

std::string Vocab::decode(std::span<const std::int32_t> ids) const {
  std::string out;
  for (auto id : ids) {
    if (id == kPad || id == kCls || id == kSep) continue;
    if (id == kUnk) {
      out += "\xEF\xBF\xBD";
    } else if (id == kMask) {
      out += "[MASK]";
    } else {
      out += token(id);
    }
  }
  return normalize_whitespace(out);
}

std::size_t vocab_floor(std::span<const std::string> corpus) {
  std::array<bool, 256> seen{};
  for (const auto& doc : corpus) {
    for (unsigned char c : doc) {
      if (!is_space(c)) seen[c] = true;
    }
  }
  return Vocab::kNumReserved +
         static_cast<std::size_t>(std::count(seen.begin(), seen.end(), true));
}

Vocab train_vocab(std::span<const std::string> corpus, std::size_t target_size) {
  if (corpus.empty()) throw DataError("train_vocab: empty corpus");
  const std::size_t floor = vocab_floor(corpus);
  if (target_size < floor) {
    throw DataError("train_vocab: target size " + std::to_string(target_size) +
                    " below floor " + std::to_string(floor) +
                    " (reserved ids + distinct bytes)");
  }

  Vocab vocab;
  vocab.target_size_ = target_size;
  for (const char* name : kSpecialNames) vocab.add_token(name);
  vocab.add_token(std::string(1, kEow));

  std::map<std::string, std::int64_t> word_counts;
  std::array<bool, 256> seen{};
  for (const auto& doc : corpus) {
    for (auto w : split_words(doc)) {
      ++word_counts[std::string(w)];
      for (unsigned char c : w) seen[c] = true;
    }
  }
  for (int c = 0; c < 256; ++c) {
    if (seen[static_cast<std::size_t>(c)]) vocab.add_token(std::string(1, static_cast<char>(c)));
  }

  struct Word {
    std::vector<std::int32_t> symbols;
    std::int64_t count;
  };
  std::vector<Word> words;
  words.reserve(word_counts.size());
  for (const auto& [w, n] : word_counts) {
    Word word{{}, n};
    for (char c : w) word.symbols.push_back(vocab.find(std::string(1, c)));
    word.symbols.push_back(Vocab::kEndOfWord);
    words.push_back(std::move(word));
  }

  using Pair = std::pair<std::int32_t, std::int32_t>;
  while (vocab.size() < target_size) {
    std::map<Pair, std::int64_t> pair_counts;
    for (const auto& w : words) {
      for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) {
        pair_counts[{w.symbols[i], w.symbols[i + 1]}] += w.count;
      }
    }
    if (pair_counts.empty()) {
      throw DataError("train_vocab: corpus supports only " + std::to_string(vocab.size()) +
                      " entries, target is " + std::to_string(target_size));
    }
    const Pair* best = nullptr;
    std::int64_t best_count = 0;
    for (const auto& [p, n] : pair_counts) {
      if (best == nullptr || n > best_count) {
        best = &p;
        best_count = n;
        continue;
      }
      if (n < best_count) continue;
      const auto key = [&](const Pair& q) {
        return std::tie(vocab.token(q.first), vocab.token(q.second));
      };
      if (key(p) < key(*best)) best = &p;
    }
    const Pair merge = *best;
    const std::string merged = vocab.token(merge.first) + vocab.token(merge.second);
    std::int32_t merged_id = vocab.find(merged);
    if (merged_id < 0) {
      merged_id = static_cast<std::int32_t>(vocab.size());
      vocab.add_token(merged);
    }
    for (auto& w : words) {
      std::vector<std::int32_t> next;
      next.reserve(w.symbols.size());
      for (std::size_t i = 0; i < w.symbols.size(); ++i) {
        if (i + 1 < w.symbols.size() && w.symbols[i] == merge.first &&
            w.symbols[i + 1] == merge.second) {
          next.push_back(merged_id);
          ++i;
        } else {
          next.push_back(w.symbols[i]);
        }
      }
      w.symbols = std::move(next);
    }
  }
  return vocab;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocab file " + path.string());
  out << "#clinenc-vocab version=" << kFormatVersion << " target_size=" << target_size_
      << " size=" << size() << '\n';
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
    if (i < static_cast<std::size_t>(kEndOfWord)) {
      out << id_to_token_[i] << '\n';
    } else {
      out << escape_token(id_to_token_[i]) << '\n';
    }
  }
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read vocab file " + path.string());
  std::string header;
  std::getline(in, header);
  unsigned version = 0;
  std::size_t target = 0, size = 0;
  if (std::sscanf(header.c_str(), "#clinenc-vocab version=%u target_size=%zu size=%zu", &version,
                  &target, &size) != 3) {
    throw DataError("vocab file " + path.string() + ": missing or malformed header");
  }
  if (version != kFormatVersion) {
    throw DataError("vocab file " + path.string() + ": unsupported version " +
                    std::to_string(version));
  }
  Vocab vocab;
  vocab.target_size_ = target;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t id = vocab.id_to_token_.size();
    if (id < static_cast<std::size_t>(kEndOfWord)) {
      if (line != kSpecialNames[id]) {
        throw DataError("vocab line " + std::to_string(line_no) + ": expected " + kSpecialNames[id]);
      }
      vocab.id_to_token_.push_back(line);
    } else {
      vocab.id_to_token_.push_back(unescape_token(line, line_no));
    }
  }
  if (vocab.id_to_token_.size() != size || size < static_cast<std::size_t>(kNumReserved) ||
      vocab.id_to_token_[kEndOfWord] != std::string(1, kEow)) {
    throw DataError("vocab file " + path.string() + ": token count or reserved block mismatch");
  }
  vocab.rebuild_index();
  return vocab;
}

}  // namespace clinenc
