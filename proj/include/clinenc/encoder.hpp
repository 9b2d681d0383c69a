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
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "clinenc/packing.hpp"
#include "clinenc/rng.hpp"
#include "clinenc/tensor.hpp"

namespace clinenc {

/// Architecture and positional-encoding hyperparameters.
///
/// Layer l uses global attention iff l % global_period == 0; every other layer
/// attends within |i - j| <= window / 2 of its own sequence. global_period 1
/// gives an all-global (BERT-style) encoder.
struct ModelConfig {
  int n_layers = 2;
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 256;
  int vocab_size = 512;
  int max_seq_len = 512;
  int window = 128;
  int global_period = 3;
  double rope_theta_global = 160000.0;
  double rope_theta_local = 10000.0;
  double dropout = 0.1;
  double init_std = 0.02;

  /// Throws ConfigError listing every violated constraint.
  void validate() const;

  int head_dim() const { return d_model / n_heads; }
  bool is_global(int layer) const { return layer % global_period == 0; }
  int num_global_layers() const;
  double rope_theta(int layer) const { return is_global(layer) ? rope_theta_global : rope_theta_local; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Named configurations: "preset-tiny", "preset-small" (desk scale),
/// "bert-analog" (all-global, 512 context), "modernbert-base" and
/// "modernbert-large" (full-scale shapes, for FLOP accounting).
ModelConfig model_preset(std::string_view name);

enum class HeadKind { single_label, multi_label, token_label };

struct HeadSpec {
  HeadKind kind = HeadKind::single_label;
  int num_classes = 2;
  std::string name = "task";
};

template <typename T>
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
    bool decay;
  };

  Tensor<T>& add(std::string name, Tensor<T> tensor, bool decay);
  Tensor<T>& at(std::string_view name);
  const Tensor<T>& at(std::string_view name) const;
  bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t numel() const;

  ParameterSet clone() const;
  void zero_grad();

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Bidirectional encoder with an MLM head and optional task heads.
template <typename T>
class EncoderModel {
 public:
  EncoderModel() = default;

  /// Randomly initialized model: N(0, init_std) weights, zero biases, unit norms.
  EncoderModel(const ModelConfig& config, std::uint64_t seed);

  /// Adopts existing parameters; throws if names or shapes disagree with the config.
  EncoderModel(const ModelConfig& config, ParameterSet<T> params,
               std::map<std::string, HeadSpec> heads = {});

  const ModelConfig& config() const { return config_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }

  void attach_head(const HeadSpec& head, std::uint64_t seed);
  const HeadSpec& head(std::string_view name) const;
  const std::map<std::string, HeadSpec>& heads() const { return heads_; }

  EncoderModel clone() const { return EncoderModel(config_, params_.clone(), heads_); }

  template <typename U>
  EncoderModel<U> cast() const {
    ParameterSet<U> out;
    for (const auto& e : params_.entries()) {
      std::vector<U> values(e.tensor.data().begin(), e.tensor.data().end());
      Tensor<U> t(e.tensor.shape(), std::move(values));
      t.set_requires_grad(true);
      out.add(e.name, std::move(t), e.decay);
    }
    return EncoderModel<U>(config_, std::move(out), heads_);
  }

 private:
  void check_shapes() const;

  ModelConfig config_;
  ParameterSet<T> params_;
  std::map<std::string, HeadSpec> heads_;
};

/// Attention geometry of a flat token stream: sequence boundaries, positions,
/// and (for padded execution) which slots may be attended to.
struct AttentionLayout {
  std::vector<std::int32_t> cu_seqlens;
  std::vector<std::int32_t> positions;
  std::vector<std::uint8_t> key_valid;  // empty: every slot is valid

  std::size_t num_tokens() const { return positions.size(); }
};

AttentionLayout make_layout(const PackedBatch& batch);
AttentionLayout make_layout(const PaddedBatch& batch);

/// Keys [first, second) reachable from `token` in sequence `seq`: the whole
/// sequence for global layers, |i - j| <= half_window for local ones.
/// Padding slots inside the range are additionally skipped via key_valid.
std::pair<std::size_t, std::size_t> key_range(const AttentionLayout& layout, std::size_t token,
                                              std::size_t seq, bool global, int half_window);

struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;  // dropout source; required when training with dropout > 0
};

/// Rotates consecutive pairs (2i, 2i+1) of each head by pos * theta^(-2i/head_dim).
/// x is [tokens, n_heads * head_dim]. Throws on odd head_dim.
template <typename T>
Tensor<T> rope_rotate(Tape<T>& tape, const Tensor<T>& x, std::span<const std::int32_t> positions,
                      int n_heads, double theta);

/// Scaled dot-product attention restricted to each token's key range.
/// q, k, v are [tokens, d_model]; half_window < 0 means global. Scores are
/// recomputed row by row in the backward pass, so memory stays linear in the
/// number of tokens.
template <typename T>
Tensor<T> masked_attention(Tape<T>& tape, const Tensor<T>& q, const Tensor<T>& k,
                           const Tensor<T>& v, const AttentionLayout& layout, int n_heads,
                           int half_window);

/// Dense [tokens, tokens] attention weights of one head, for inspection.
template <typename T>
std::vector<T> attention_probabilities(const Tensor<T>& q, const Tensor<T>& k,
                                       const AttentionLayout& layout, int n_heads, int head,
                                       int half_window);

/// Attention sublayer of layer `layer_index`: projections, RoPE, masked
/// attention, output projection. Output shape equals input shape.
template <typename T>
Tensor<T> attention_layer(Tape<T>& tape, const EncoderModel<T>& model, const Tensor<T>& x,
                          int layer_index, const AttentionLayout& layout,
                          const ForwardOptions& opts = {});

/// Final-normed hidden states, one row per token of `ids`.
template <typename T>
Tensor<T> encode(Tape<T>& tape, const EncoderModel<T>& model, std::span<const std::int32_t> ids,
                 const AttentionLayout& layout, const ForwardOptions& opts = {});

/// MLM logits [tokens, vocab_size].
template <typename T>
Tensor<T> forward_mlm(Tape<T>& tape, const EncoderModel<T>& model, const PackedBatch& batch,
                      const ForwardOptions& opts = {});

/// Padded-execution twin of forward_mlm: one logit row per slot, PAD slots
/// included (their rows are meaningless).
template <typename T>
Tensor<T> forward_mlm_padded(Tape<T>& tape, const EncoderModel<T>& model,
                             const PaddedBatch& batch, const ForwardOptions& opts = {});

/// Task logits. Sequence heads read each sequence's first (CLS) token and
/// return [num_seqs, k]; token heads return [tokens, k].
template <typename T>
Tensor<T> forward_classify(Tape<T>& tape, const EncoderModel<T>& model, const PackedBatch& batch,
                           const HeadSpec& head, const ForwardOptions& opts = {});

struct LayerFlops {
  int layer = 0;
  bool global = false;
  double attention = 0;  // QK^T and PV
  double dense = 0;      // projections and feed-forward
};

struct FlopReport {
  std::vector<LayerFlops> layers;
  int global_layers = 0;
  int local_layers = 0;
  double attention_total = 0;
  double dense_total = 0;
  double total() const { return attention_total + dense_total; }
};

/// Analytic forward FLOPs for one sequence of seq_len tokens. Global layers
/// cost 4 * S^2 * d in attention scores, local layers 4 * S * min(W, S) * d.
FlopReport count_attention_flops(const ModelConfig& config, int seq_len);

}  // namespace clinenc
