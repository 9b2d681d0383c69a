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

#include "clinenc/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "clinenc/error.hpp"
#include "clinenc/ops.hpp"
#include "clinenc/tokenizer.hpp"

namespace clinenc {

// ---------------------------------------------------------------------------
// Configuration

void ModelConfig::validate() const {
  std::vector<std::string> errors;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) errors.push_back(what);
  };
  check(n_layers >= 1, "n_layers must be >= 1");
  check(d_model >= 1, "d_model must be >= 1");
  check(n_heads >= 1, "n_heads must be >= 1");
  check(n_heads >= 1 && d_model % n_heads == 0, "n_heads must divide d_model");
  check(n_heads >= 1 && d_model % n_heads == 0 && head_dim() % 2 == 0,
        "head_dim (d_model / n_heads) must be even for RoPE");
  check(d_ff >= 1, "d_ff must be >= 1");
  check(vocab_size > Vocab::kNumReserved, "vocab_size must exceed the reserved ids");
  check(max_seq_len >= 1, "max_seq_len must be >= 1");
  check(window >= 0 && window % 2 == 0, "window must be a non-negative even number");
  check(window <= max_seq_len, "window must not exceed max_seq_len");
  check(global_period >= 1, "global_period must be >= 1");
  check(rope_theta_global > 0 && rope_theta_local > 0, "rope thetas must be positive");
  check(dropout >= 0 && dropout < 1, "dropout must lie in [0, 1)");
  check(init_std > 0, "init_std must be positive");
  if (!errors.empty()) {
    std::ostringstream os;
    os << "invalid model config: ";
    for (std::size_t i = 0; i < errors.size(); ++i) os << (i ? "; " : "") << errors[i];
    throw ConfigError(os.str());
  }
}

int ModelConfig::num_global_layers() const {
  int n = 0;
  for (int l = 0; l < n_layers; ++l) n += is_global(l) ? 1 : 0;
  return n;
}

ModelConfig model_preset(std::string_view name) {
  ModelConfig c;
  if (name == "preset-tiny") return c;
  if (name == "preset-small") {
    c.n_layers = 4;
    c.d_model = 128;
    c.d_ff = 512;
    c.vocab_size = 1024;
    c.max_seq_len = 1024;
    return c;
  }
  if (name == "bert-analog") {
    c.global_period = 1;
    c.window = c.max_seq_len;
    return c;
  }
  // Shapes of the public ModernBERT checkpoints; used for FLOP accounting only.
  if (name == "modernbert-base" || name == "modernbert-large") {
    const bool large = name == "modernbert-large";
    c.n_layers = large ? 28 : 22;
    c.d_model = large ? 1024 : 768;
    c.n_heads = large ? 16 : 12;
    c.d_ff = large ? 2624 : 1152;
    c.vocab_size = 50368;
    c.max_seq_len = 8192;
    c.window = 128;
    c.dropout = 0.0;
    return c;
  }
  throw ConfigError("unknown model preset '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Parameters

template <typename T>
Tensor<T>& ParameterSet<T>::add(std::string name, Tensor<T> tensor, bool decay) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name " + name);
  tensor.set_requires_grad(true);
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{std::move(name), std::move(tensor), decay});
  return entries_.back().tensor;
}

template <typename T>
Tensor<T>& ParameterSet<T>::at(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + std::string(name));
  return entries_[it->second].tensor;
}

template <typename T>
const Tensor<T>& ParameterSet<T>::at(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + std::string(name));
  return entries_[it->second].tensor;
}

template <typename T>
std::size_t ParameterSet<T>::numel() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

template <typename T>
ParameterSet<T> ParameterSet<T>::clone() const {
  ParameterSet out;
  for (const auto& e : entries_) out.add(e.name, e.tensor.clone(), e.decay);
  return out;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

namespace {

enum class Init { normal, zeros, ones };

struct ParamSpec {
  std::string name;
  Shape shape;
  bool decay;
  Init init;
};

std::vector<ParamSpec> parameter_layout(const ModelConfig& c) {
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto f = static_cast<std::size_t>(c.d_ff);
  const auto v = static_cast<std::size_t>(c.vocab_size);
  std::vector<ParamSpec> specs;
  auto norm = [&](const std::string& prefix) {
    specs.push_back({prefix + ".weight", {d}, false, Init::ones});
    specs.push_back({prefix + ".bias", {d}, false, Init::zeros});
  };
  auto linear = [&](const std::string& w, const std::string& b, std::size_t in, std::size_t out) {
    specs.push_back({w, {in, out}, true, Init::normal});
    specs.push_back({b, {out}, false, Init::zeros});
  };
  specs.push_back({"embeddings.token", {v, d}, true, Init::normal});
  norm("embeddings.norm");
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    norm(p + "attn_norm");
    for (const char* m : {"q", "k", "v", "o"}) {
      linear(p + "attn.w" + m, p + "attn.b" + m, d, d);
    }
    norm(p + "mlp_norm");
    linear(p + "mlp.w1", p + "mlp.b1", d, f);
    linear(p + "mlp.w2", p + "mlp.b2", f, d);
  }
  norm("final_norm");
  linear("mlm.dense.weight", "mlm.dense.bias", d, d);
  norm("mlm.norm");
  linear("mlm.decoder.weight", "mlm.decoder.bias", d, v);
  return specs;
}

template <typename T>
Tensor<T> make_param(const Shape& shape, Init init, double std_dev, Rng& rng) {
  Tensor<T> t(shape);
  for (T& x : t.data()) {
    switch (init) {
      case Init::normal: x = static_cast<T>(rng.normal() * std_dev); break;
      case Init::zeros: x = T(0); break;
      case Init::ones: x = T(1); break;
    }
  }
  return t;
}

std::string head_prefix(const std::string& name) { return "heads." + name; }

}  // namespace

template <typename T>
EncoderModel<T>::EncoderModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  for (const auto& spec : parameter_layout(config_)) {
    params_.add(spec.name, make_param<T>(spec.shape, spec.init, config_.init_std, rng), spec.decay);
  }
}

template <typename T>
EncoderModel<T>::EncoderModel(const ModelConfig& config, ParameterSet<T> params,
                              std::map<std::string, HeadSpec> heads)
    : config_(config), params_(std::move(params)), heads_(std::move(heads)) {
  config_.validate();
  check_shapes();
}

template <typename T>
void EncoderModel<T>::check_shapes() const {
  for (const auto& spec : parameter_layout(config_)) {
    if (!params_.contains(spec.name)) throw DataError("model is missing parameter " + spec.name);
    const auto& t = params_.at(spec.name);
    if (t.shape() != spec.shape) {
      throw DataError("parameter " + spec.name + " has shape " + shape_string(t.shape()) +
                      ", config expects " + shape_string(spec.shape));
    }
  }
  for (const auto& [name, head] : heads_) {
    const Shape w{static_cast<std::size_t>(config_.d_model), static_cast<std::size_t>(head.num_classes)};
    if (!params_.contains(head_prefix(name) + ".weight") ||
        params_.at(head_prefix(name) + ".weight").shape() != w) {
      throw DataError("head " + name + " parameters missing or misshaped");
    }
  }
}

template <typename T>
void EncoderModel<T>::attach_head(const HeadSpec& head, std::uint64_t seed) {
  if (head.num_classes < 1) throw std::invalid_argument("head needs at least one class");
  if (heads_.count(head.name)) throw std::invalid_argument("head " + head.name + " already attached");
  Rng rng(seed);
  const auto d = static_cast<std::size_t>(config_.d_model);
  const auto k = static_cast<std::size_t>(head.num_classes);
  params_.add(head_prefix(head.name) + ".weight",
              make_param<T>({d, k}, Init::normal, config_.init_std, rng), true);
  params_.add(head_prefix(head.name) + ".bias", make_param<T>({k}, Init::zeros, 0, rng), false);
  heads_.emplace(head.name, head);
}

template <typename T>
const HeadSpec& EncoderModel<T>::head(std::string_view name) const {
  auto it = heads_.find(std::string(name));
  if (it == heads_.end()) throw std::out_of_range("no head named " + std::string(name));
  return it->second;
}

// ---------------------------------------------------------------------------
// Attention geometry

AttentionLayout make_layout(const PackedBatch& batch) {
  return AttentionLayout{batch.cu_seqlens, batch.positions, {}};
}

AttentionLayout make_layout(const PaddedBatch& batch) {
  AttentionLayout layout;
  layout.cu_seqlens.reserve(batch.n_docs + 1);
  for (std::size_t i = 0; i <= batch.n_docs; ++i) {
    layout.cu_seqlens.push_back(static_cast<std::int32_t>(i * batch.padded_len));
  }
  layout.positions.reserve(batch.slots());
  for (std::size_t i = 0; i < batch.n_docs; ++i) {
    for (std::size_t p = 0; p < batch.padded_len; ++p) {
      layout.positions.push_back(static_cast<std::int32_t>(p));
    }
  }
  layout.key_valid = batch.valid;
  return layout;
}

std::pair<std::size_t, std::size_t> key_range(const AttentionLayout& layout, std::size_t token,
                                              std::size_t seq, bool global, int half_window) {
  const auto begin = static_cast<std::size_t>(layout.cu_seqlens[seq]);
  const auto end = static_cast<std::size_t>(layout.cu_seqlens[seq + 1]);
  if (global || half_window < 0) return {begin, end};
  const auto hw = static_cast<std::size_t>(half_window);
  const std::size_t lo = token >= begin + hw ? token - hw : begin;
  const std::size_t hi = std::min(end, token + hw + 1);
  return {lo, hi};
}

namespace {

// Normalized attention weights of query row `qi` over keys [lo, hi) of one
// head, written to probs[0 .. hi - lo). Returns false when no key is valid.
template <typename T>
bool softmax_row(const T* qi, const T* kbase, std::size_t stride, std::size_t hd, std::size_t lo,
                 std::size_t hi, const std::uint8_t* valid, T scale, T* probs) {
  // PAD keys get an additive -inf bias, as in a dense padded kernel; only the
  // packed layout avoids scoring them.
  constexpr T kNegInf = -std::numeric_limits<T>::infinity();
  T mx = kNegInf;
  for (std::size_t j = lo; j < hi; ++j) {
    const T* kj = kbase + j * stride;
    T s = 0;
    for (std::size_t d = 0; d < hd; ++d) s += qi[d] * kj[d];
    s = s * scale + (valid && !valid[j] ? kNegInf : T(0));
    probs[j - lo] = s;
    mx = std::max(mx, s);
  }
  if (mx == kNegInf) {
    std::fill(probs, probs + (hi - lo), T(0));
    return false;
  }
  T z = 0;
  for (std::size_t j = lo; j < hi; ++j) {
    probs[j - lo] = std::exp(probs[j - lo] - mx);
    z += probs[j - lo];
  }
  const T inv = T(1) / z;
  for (std::size_t j = lo; j < hi; ++j) probs[j - lo] *= inv;
  return true;
}

}  // namespace

template <typename T>
Tensor<T> rope_rotate(Tape<T>& tape, const Tensor<T>& x, std::span<const std::int32_t> positions,
                      int n_heads, double theta) {
  if (x.rank() != 2 || n_heads < 1 || x.dim(1) % static_cast<std::size_t>(n_heads) != 0) {
    throw std::invalid_argument("rope_rotate: shape " + shape_string(x.shape()) +
                                " incompatible with " + std::to_string(n_heads) + " heads");
  }
  const std::size_t n = x.dim(0), width = x.dim(1);
  const std::size_t hd = width / static_cast<std::size_t>(n_heads);
  if (hd % 2 != 0) throw std::invalid_argument("rope_rotate: head_dim " + std::to_string(hd) + " is odd");
  if (positions.size() != n) {
    throw std::invalid_argument("rope_rotate: " + std::to_string(positions.size()) +
                                " positions for " + std::to_string(n) + " tokens");
  }
  if (!(theta > 0)) throw std::invalid_argument("rope_rotate: theta must be positive");
  const std::size_t half = hd / 2;
  std::vector<double> inv_freq(half);
  for (std::size_t i = 0; i < half; ++i) {
    inv_freq[i] = std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
  }
  std::vector<T> cs(n * half), sn(n * half);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t i = 0; i < half; ++i) {
      const double angle = static_cast<double>(positions[t]) * inv_freq[i];
      cs[t * half + i] = static_cast<T>(std::cos(angle));
      sn[t * half + i] = static_cast<T>(std::sin(angle));
    }
  }
  Tensor<T> out(x.shape());
  auto xv = x.data();
  auto o = out.data();
  const auto heads = static_cast<std::size_t>(n_heads);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t base = t * width + h * hd;
      for (std::size_t i = 0; i < half; ++i) {
        const T c = cs[t * half + i], s = sn[t * half + i];
        const T a = xv[base + 2 * i], b = xv[base + 2 * i + 1];
        o[base + 2 * i] = a * c - b * s;
        o[base + 2 * i + 1] = a * s + b * c;
      }
    }
  }
  if (tape.wants({&x})) {
    tape.record(out, [x, out, cs = std::move(cs), sn = std::move(sn), n, width, hd, half,
                      heads]() mutable {
      auto g = out.grad();
      auto xg = x.grad();
      for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t base = t * width + h * hd;
          for (std::size_t i = 0; i < half; ++i) {
            const T c = cs[t * half + i], s = sn[t * half + i];
            const T ga = g[base + 2 * i], gb = g[base + 2 * i + 1];
            xg[base + 2 * i] += ga * c + gb * s;
            xg[base + 2 * i + 1] += -ga * s + gb * c;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> masked_attention(Tape<T>& tape, const Tensor<T>& q, const Tensor<T>& k,
                           const Tensor<T>& v, const AttentionLayout& layout, int n_heads,
                           int half_window) {
  if (q.shape() != k.shape() || q.shape() != v.shape() || q.rank() != 2) {
    throw std::invalid_argument("masked_attention: q/k/v shapes " + shape_string(q.shape()) + ", " +
                                shape_string(k.shape()) + ", " + shape_string(v.shape()));
  }
  const std::size_t n = q.dim(0), width = q.dim(1);
  if (n != layout.num_tokens()) {
    throw std::invalid_argument("masked_attention: " + std::to_string(n) + " rows for layout of " +
                                std::to_string(layout.num_tokens()) + " tokens");
  }
  const auto heads = static_cast<std::size_t>(n_heads);
  const std::size_t hd = width / heads;
  const bool global = half_window < 0;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  const std::uint8_t* valid = layout.key_valid.empty() ? nullptr : layout.key_valid.data();
  const std::size_t n_seqs = layout.cu_seqlens.size() - 1;

  Tensor<T> out(q.shape());
  auto o = out.data();
  const T* qd = q.data().data();
  const T* kd = k.data().data();
  const T* vd = v.data().data();
  std::vector<T> probs;
  for (std::size_t s = 0; s < n_seqs; ++s) {
    for (auto i = static_cast<std::size_t>(layout.cu_seqlens[s]);
         i < static_cast<std::size_t>(layout.cu_seqlens[s + 1]); ++i) {
      const auto [lo, hi] = key_range(layout, i, s, global, half_window);
      probs.resize(hi - lo);
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * hd;
        if (!softmax_row(qd + i * width + off, kd + off, width, hd, lo, hi, valid, scale,
                         probs.data())) {
          continue;
        }
        T* oi = o.data() + i * width + off;
        for (std::size_t j = lo; j < hi; ++j) {
          const T p = probs[j - lo];
          if (p == T(0) && !valid) continue;
          const T* vj = vd + j * width + off;
          for (std::size_t d = 0; d < hd; ++d) oi[d] += p * vj[d];
        }
      }
    }
  }

  if (tape.wants({&q, &k, &v})) {
    tape.record(out, [q, k, v, out, layout, heads, hd, width, global, half_window, scale, n_seqs,
                      valid_on = valid != nullptr]() mutable {
      const std::uint8_t* valid = valid_on ? layout.key_valid.data() : nullptr;
      const T* qd = q.data().data();
      const T* kd = k.data().data();
      const T* vd = v.data().data();
      const T* od = out.data().data();
      const T* g = out.grad().data();
      T* dq = q.grad().data();
      T* dk = k.grad().data();
      T* dv = v.grad().data();
      std::vector<T> probs;
      for (std::size_t s = 0; s < n_seqs; ++s) {
        for (auto i = static_cast<std::size_t>(layout.cu_seqlens[s]);
             i < static_cast<std::size_t>(layout.cu_seqlens[s + 1]); ++i) {
          const auto [lo, hi] = key_range(layout, i, s, global, half_window);
          probs.resize(hi - lo);
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * hd;
            const T* qi = qd + i * width + off;
            if (!softmax_row(qi, kd + off, width, hd, lo, hi, valid, scale, probs.data())) continue;
            const T* gi = g + i * width + off;
            const T* oi = od + i * width + off;
            T* dqi = dq + i * width + off;
            T dterm = 0;
            for (std::size_t d = 0; d < hd; ++d) dterm += gi[d] * oi[d];
            for (std::size_t j = lo; j < hi; ++j) {
              const T p = probs[j - lo];
              if (p == T(0)) continue;
              const T* vj = vd + j * width + off;
              const T* kj = kd + j * width + off;
              T* dvj = dv + j * width + off;
              T* dkj = dk + j * width + off;
              T dp = 0;
              for (std::size_t d = 0; d < hd; ++d) {
                dvj[d] += p * gi[d];
                dp += gi[d] * vj[d];
              }
              const T ds = p * (dp - dterm) * scale;
              for (std::size_t d = 0; d < hd; ++d) {
                dqi[d] += ds * kj[d];
                dkj[d] += ds * qi[d];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
std::vector<T> attention_probabilities(const Tensor<T>& q, const Tensor<T>& k,
                                       const AttentionLayout& layout, int n_heads, int head,
                                       int half_window) {
  const std::size_t n = q.dim(0), width = q.dim(1);
  const std::size_t hd = width / static_cast<std::size_t>(n_heads);
  const std::size_t off = static_cast<std::size_t>(head) * hd;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  const std::uint8_t* valid = layout.key_valid.empty() ? nullptr : layout.key_valid.data();
  std::vector<T> dense(n * n, T(0));
  std::vector<T> probs;
  for (std::size_t s = 0; s + 1 < layout.cu_seqlens.size(); ++s) {
    for (auto i = static_cast<std::size_t>(layout.cu_seqlens[s]);
         i < static_cast<std::size_t>(layout.cu_seqlens[s + 1]); ++i) {
      const auto [lo, hi] = key_range(layout, i, s, half_window < 0, half_window);
      probs.resize(hi - lo);
      softmax_row(q.data().data() + i * width + off, k.data().data() + off, width, hd, lo, hi, valid,
                  scale, probs.data());
      std::copy(probs.begin(), probs.end(), dense.begin() + static_cast<std::ptrdiff_t>(i * n + lo));
    }
  }
  return dense;
}

// ---------------------------------------------------------------------------
// Model forward

namespace {

template <typename T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return ops::add_bias(tape, ops::matmul(tape, x, w), b);
}

template <typename T>
Tensor<T> norm(Tape<T>& tape, const EncoderModel<T>& m, const std::string& prefix, const Tensor<T>& x) {
  return ops::layer_norm(tape, x, m.params().at(prefix + ".weight"), m.params().at(prefix + ".bias"));
}

template <typename T>
Tensor<T> maybe_dropout(Tape<T>& tape, const EncoderModel<T>& m, const Tensor<T>& x,
                        const ForwardOptions& opts) {
  if (!opts.training || m.config().dropout <= 0) return x;
  if (opts.rng == nullptr) throw std::invalid_argument("training forward with dropout needs an rng");
  return ops::dropout(tape, x, m.config().dropout, true, *opts.rng);
}

}  // namespace

template <typename T>
Tensor<T> attention_layer(Tape<T>& tape, const EncoderModel<T>& model, const Tensor<T>& x,
                          int layer_index, const AttentionLayout& layout, const ForwardOptions&) {
  const auto& c = model.config();
  if (layer_index < 0 || layer_index >= c.n_layers) {
    throw std::out_of_range("attention_layer: layer " + std::to_string(layer_index) + " of " +
                            std::to_string(c.n_layers));
  }
  const auto& p = model.params();
  const std::string pre = "layers." + std::to_string(layer_index) + ".attn.";
  auto q = linear(tape, x, p.at(pre + "wq"), p.at(pre + "bq"));
  auto k = linear(tape, x, p.at(pre + "wk"), p.at(pre + "bk"));
  auto v = linear(tape, x, p.at(pre + "wv"), p.at(pre + "bv"));
  const double theta = c.rope_theta(layer_index);
  q = rope_rotate(tape, q, layout.positions, c.n_heads, theta);
  k = rope_rotate(tape, k, layout.positions, c.n_heads, theta);
  const int half_window = c.is_global(layer_index) ? -1 : c.window / 2;
  auto a = masked_attention(tape, q, k, v, layout, c.n_heads, half_window);
  return linear(tape, a, p.at(pre + "wo"), p.at(pre + "bo"));
}

template <typename T>
Tensor<T> encode(Tape<T>& tape, const EncoderModel<T>& model, std::span<const std::int32_t> ids,
                 const AttentionLayout& layout, const ForwardOptions& opts) {
  if (ids.size() != layout.num_tokens()) {
    throw std::invalid_argument("encode: " + std::to_string(ids.size()) + " ids for layout of " +
                                std::to_string(layout.num_tokens()) + " tokens");
  }
  const auto& c = model.config();
  const auto& p = model.params();
  auto h = ops::embedding_lookup(tape, p.at("embeddings.token"), ids);
  h = norm(tape, model, "embeddings.norm", h);
  h = maybe_dropout(tape, model, h, opts);
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    auto a = norm(tape, model, pre + "attn_norm", h);
    a = attention_layer(tape, model, a, l, layout, opts);
    h = ops::add(tape, h, maybe_dropout(tape, model, a, opts));
    auto f = norm(tape, model, pre + "mlp_norm", h);
    f = ops::gelu(tape, linear(tape, f, p.at(pre + "mlp.w1"), p.at(pre + "mlp.b1")));
    f = linear(tape, f, p.at(pre + "mlp.w2"), p.at(pre + "mlp.b2"));
    h = ops::add(tape, h, maybe_dropout(tape, model, f, opts));
  }
  return norm(tape, model, "final_norm", h);
}

namespace {

template <typename T>
Tensor<T> mlm_head(Tape<T>& tape, const EncoderModel<T>& model, const Tensor<T>& h) {
  const auto& p = model.params();
  auto t = ops::gelu(tape, linear(tape, h, p.at("mlm.dense.weight"), p.at("mlm.dense.bias")));
  t = norm(tape, model, "mlm.norm", t);
  return linear(tape, t, p.at("mlm.decoder.weight"), p.at("mlm.decoder.bias"));
}

}  // namespace

template <typename T>
Tensor<T> forward_mlm(Tape<T>& tape, const EncoderModel<T>& model, const PackedBatch& batch,
                      const ForwardOptions& opts) {
  if (batch.num_tokens() == 0) throw DataError("forward_mlm: empty batch");
  auto h = encode(tape, model, batch.token_ids, make_layout(batch), opts);
  return mlm_head(tape, model, h);
}

template <typename T>
Tensor<T> forward_mlm_padded(Tape<T>& tape, const EncoderModel<T>& model,
                             const PaddedBatch& batch, const ForwardOptions& opts) {
  if (batch.slots() == 0) throw DataError("forward_mlm_padded: empty batch");
  auto h = encode(tape, model, batch.token_ids, make_layout(batch), opts);
  return mlm_head(tape, model, h);
}

template <typename T>
Tensor<T> forward_classify(Tape<T>& tape, const EncoderModel<T>& model, const PackedBatch& batch,
                           const HeadSpec& head, const ForwardOptions& opts) {
  const HeadSpec& attached = model.head(head.name);
  if (attached.kind != head.kind || attached.num_classes != head.num_classes) {
    throw std::invalid_argument("forward_classify: head '" + head.name + "' has " +
                                std::to_string(attached.num_classes) + " classes of a different kind than requested (" +
                                std::to_string(head.num_classes) + ")");
  }
  if (batch.num_tokens() == 0) throw DataError("forward_classify: empty batch");
  auto h = encode(tape, model, batch.token_ids, make_layout(batch), opts);
  const auto& p = model.params();
  const auto& w = p.at(head_prefix(head.name) + ".weight");
  const auto& b = p.at(head_prefix(head.name) + ".bias");
  if (head.kind == HeadKind::token_label) return linear(tape, h, w, b);
  std::vector<std::size_t> cls(batch.num_seqs());
  for (std::size_t s = 0; s < cls.size(); ++s) cls[s] = batch.seq_begin(s);
  return linear(tape, ops::gather_rows(tape, h, std::span<const std::size_t>(cls)), w, b);
}

FlopReport count_attention_flops(const ModelConfig& config, int seq_len) {
  if (seq_len < 1 || seq_len > config.max_seq_len) {
    throw std::invalid_argument("count_attention_flops: seq_len " + std::to_string(seq_len) +
                                " outside [1, " + std::to_string(config.max_seq_len) + "]");
  }
  const double s = seq_len, d = config.d_model, f = config.d_ff;
  const double w = std::min(config.window, seq_len);
  FlopReport r;
  for (int l = 0; l < config.n_layers; ++l) {
    LayerFlops lf;
    lf.layer = l;
    lf.global = config.is_global(l);
    lf.attention = lf.global ? 4.0 * s * s * d : 4.0 * s * w * d;
    lf.dense = s * (8.0 * d * d + 4.0 * d * f);
    (lf.global ? r.global_layers : r.local_layers) += 1;
    r.attention_total += lf.attention;
    r.dense_total += lf.dense;
    r.layers.push_back(lf);
  }
  return r;
}

#define CLINENC_INSTANTIATE_ENCODER(T)                                                          \
  template class ParameterSet<T>;                                                               \
  template class EncoderModel<T>;                                                               \
  template Tensor<T> rope_rotate(Tape<T>&, const Tensor<T>&, std::span<const std::int32_t>, int, \
                                 double);                                                       \
  template Tensor<T> masked_attention(Tape<T>&, const Tensor<T>&, const Tensor<T>&,             \
                                      const Tensor<T>&, const AttentionLayout&, int, int);      \
  template std::vector<T> attention_probabilities(const Tensor<T>&, const Tensor<T>&,           \
                                                  const AttentionLayout&, int, int, int);       \
  template Tensor<T> attention_layer(Tape<T>&, const EncoderModel<T>&, const Tensor<T>&, int,   \
                                     const AttentionLayout&, const ForwardOptions&);            \
  template Tensor<T> encode(Tape<T>&, const EncoderModel<T>&, std::span<const std::int32_t>,    \
                            const AttentionLayout&, const ForwardOptions&);                     \
  template Tensor<T> forward_mlm(Tape<T>&, const EncoderModel<T>&, const PackedBatch&,          \
                                 const ForwardOptions&);                                        \
  template Tensor<T> forward_mlm_padded(Tape<T>&, const EncoderModel<T>&, const PaddedBatch&,   \
                                        const ForwardOptions&);                                 \
  template Tensor<T> forward_classify(Tape<T>&, const EncoderModel<T>&, const PackedBatch&,     \
                                      const HeadSpec&, const ForwardOptions&);

CLINENC_INSTANTIATE_ENCODER(float)
CLINENC_INSTANTIATE_ENCODER(double)

#undef CLINENC_INSTANTIATE_ENCODER

}  // namespace clinenc
