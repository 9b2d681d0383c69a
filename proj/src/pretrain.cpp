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


#include "clinenc/pretrain.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "clinenc/config_io.hpp"
#include "clinenc/error.hpp"
#include "clinenc/ops.hpp"

namespace clinenc {

// ---------------------------------------------------------------------------
// Masking

void MaskingSpec::validate() const {
  if (!(mlm_probability > 0.0 && mlm_probability < 1.0)) {
    throw ConfigError("masking: mlm_probability must be in (0, 1), got " +
                      format_double(mlm_probability));
  }
  if (mask_fraction < 0 || random_fraction < 0 || keep_fraction < 0) {
    throw ConfigError("masking: corruption fractions must be non-negative");
  }
  const double total = mask_fraction + random_fraction + keep_fraction;
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("masking: corruption fractions sum to " + format_double(total) +
                      ", expected 1");
  }
}

MaskedBatch apply_masking(const PackedBatch& batch, const MaskingSpec& spec, int vocab_size,
                          Rng& rng) {
  spec.validate();
  if (vocab_size <= Vocab::kNumReserved) {
    throw std::invalid_argument("masking: vocab_size " + std::to_string(vocab_size) +
                                " leaves no non-reserved ids");
  }
  MaskedBatch out;
  out.batch = batch;
  out.targets.assign(batch.num_tokens(), ops::kIgnoreIndex);
  const auto n_random = static_cast<std::uint64_t>(vocab_size - Vocab::kNumReserved);
  auto& ids = out.batch.token_ids;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::int32_t id = ids[i];
    if (id == Vocab::kCls || id == Vocab::kSep || id == Vocab::kPad) continue;
    ++out.eligible;
    if (rng.uniform() >= spec.mlm_probability) continue;
    ++out.selected;
    out.targets[i] = id;
    const double r = rng.uniform();
    if (r < spec.mask_fraction) {
      ids[i] = Vocab::kMask;
      ++out.masked;
    } else if (r < spec.mask_fraction + spec.random_fraction) {
      ids[i] = Vocab::kNumReserved + static_cast<std::int32_t>(rng.below(n_random));
      ++out.randomized;
    } else {
      ++out.kept;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scheduler

namespace {

std::int64_t constant_steps(const SchedulerSpec& s) {
  if (s.decay_kind != DecayKind::constant_then_one_minus_sqrt || s.decay_steps == 0) return 0;
  const auto c = static_cast<std::int64_t>(std::llround(s.constant_fraction * s.decay_steps));
  return std::clamp<std::int64_t>(c, 0, s.decay_steps - 1);
}

}  // namespace

void SchedulerSpec::validate() const {
  std::vector<std::string> errors;
  if (!(peak_lr >= 0.0) || !std::isfinite(peak_lr)) errors.push_back("peak_lr must be >= 0");
  if (warmup_steps < 0) errors.push_back("warmup_steps must be >= 0");
  if (stable_steps < 0) errors.push_back("stable_steps must be >= 0");
  if (decay_steps < 0) errors.push_back("decay_steps must be >= 0");
  if (decay_kind == DecayKind::constant_then_one_minus_sqrt &&
      !(constant_fraction >= 0.0 && constant_fraction < 1.0)) {
    errors.push_back("constant_fraction must be in [0, 1)");
  }
  if (!errors.empty()) {
    std::string msg = "scheduler:";
    for (const auto& e : errors) msg += " " + e + ";";
    throw ConfigError(msg);
  }
}

double lr_at(const SchedulerSpec& spec, std::int64_t step) {
  spec.validate();
  if (step < 0 || step > spec.total_steps()) {
    throw std::out_of_range("lr_at: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(spec.total_steps()) + "]");
  }
  if (step < spec.warmup_steps) {
    return spec.peak_lr * static_cast<double>(step) / static_cast<double>(spec.warmup_steps);
  }
  const std::int64_t into_stable = step - spec.warmup_steps;
  if (into_stable <= spec.stable_steps) return spec.peak_lr;
  const std::int64_t d = into_stable - spec.stable_steps;
  const std::int64_t c = constant_steps(spec);
  if (d <= c) return spec.peak_lr;
  const double frac = static_cast<double>(d - c) / static_cast<double>(spec.decay_steps - c);
  return spec.peak_lr * (1.0 - std::sqrt(frac));
}

SchedulerSpec stable_schedule(double peak_lr, std::int64_t steps) {
  SchedulerSpec s;
  s.peak_lr = peak_lr;
  s.stable_steps = steps;
  return s;
}

SchedulerSpec full_decay_schedule(double peak_lr, std::int64_t steps) {
  SchedulerSpec s;
  s.peak_lr = peak_lr;
  s.decay_steps = steps;
  return s;
}

SchedulerSpec constant_then_decay_schedule(double peak_lr, std::int64_t steps,
                                           double constant_fraction) {
  SchedulerSpec s = full_decay_schedule(peak_lr, steps);
  s.decay_kind = DecayKind::constant_then_one_minus_sqrt;
  s.constant_fraction = constant_fraction;
  return s;
}

// ---------------------------------------------------------------------------
// Mixture

std::size_t Corpus::num_tokens() const {
  std::size_t n = 0;
  for (const auto& d : docs) n += d.size();
  return n;
}

MixtureIterator::MixtureIterator(std::vector<MixtureSource> sources, std::size_t batch_tokens,
                                 std::uint64_t seed)
    : batch_tokens_(batch_tokens), rng_(seed) {
  if (sources.empty()) throw ConfigError("mixture: no sources");
  if (batch_tokens == 0) throw ConfigError("mixture: batch_tokens must be positive");
  for (auto& src : sources) {
    if (!src.corpus) throw DataError("mixture: null corpus");
    const std::string& id = src.corpus->id;
    if (src.corpus->docs.empty() || src.corpus->num_tokens() == 0) {
      throw DataError("mixture: corpus '" + id + "' is empty");
    }
    for (std::size_t i = 0; i < src.corpus->docs.size(); ++i) {
      if (src.corpus->docs[i].empty()) {
        throw DataError("mixture: corpus '" + id + "' document " + std::to_string(i) +
                        " is empty");
      }
    }
    State s;
    s.budget = src.token_budget > 0
                   ? src.token_budget
                   : static_cast<std::int64_t>(
                         std::llround(src.epochs * static_cast<double>(src.corpus->num_tokens())));
    if (s.budget <= 0) throw ConfigError("mixture: source '" + id + "' has no token budget");
    s.source = std::move(src);
    states_.push_back(std::move(s));
  }
}

std::optional<TokenIds> MixtureIterator::next_doc(State& s) {
  if (s.consumed >= s.budget) return std::nullopt;
  if (s.cursor == s.order.size()) {
    s.order.resize(s.source.corpus->docs.size());
    for (std::size_t i = 0; i < s.order.size(); ++i) s.order[i] = i;
    rng_.shuffle(s.order);
    s.cursor = 0;
  }
  return s.source.corpus->docs[s.order[s.cursor]];
}

std::optional<MixtureBatch> MixtureIterator::next() {
  double total = 0;
  for (const auto& s : states_) total += static_cast<double>(std::max<std::int64_t>(0, s.budget - s.consumed));
  if (total <= 0) return std::nullopt;

  double u = rng_.uniform() * total;
  std::size_t pick = states_.size();
  for (std::size_t i = 0; i < states_.size(); ++i) {
    const double rem = static_cast<double>(std::max<std::int64_t>(0, states_[i].budget - states_[i].consumed));
    if (rem <= 0) continue;
    pick = i;
    if (u < rem) break;
    u -= rem;
  }
  State& s = states_[pick];

  std::vector<TokenIds> docs;
  std::size_t tokens = 0;
  while (auto doc = next_doc(s)) {
    if (!docs.empty() && tokens + doc->size() > batch_tokens_) break;
    tokens += doc->size();
    s.consumed += static_cast<std::int64_t>(doc->size());
    ++s.cursor;
    docs.push_back(std::move(*doc));
  }
  ++emitted_;
  return MixtureBatch{s.source.corpus->id, pack(docs)};
}

void MixtureIterator::skip(std::int64_t batches) {
  for (std::int64_t i = 0; i < batches; ++i) {
    if (!next()) {
      throw DataError("mixture: cannot skip " + std::to_string(batches) +
                      " batches, stream ends after " + std::to_string(emitted_));
    }
  }
}

std::map<std::string, std::int64_t> MixtureIterator::tokens_by_source() const {
  std::map<std::string, std::int64_t> out;
  for (const auto& s : states_) out[s.source.corpus->id] += s.consumed;
  return out;
}

std::int64_t MixtureIterator::count_batches(const std::vector<MixtureSource>& sources,
                                            std::size_t batch_tokens, std::uint64_t seed) {
  MixtureIterator it(sources, batch_tokens, seed);
  while (it.next()) {
  }
  return it.batches_emitted();
}

// ---------------------------------------------------------------------------
// Optimizer

void optimizer_step(const std::string& name, std::span<float> param, std::span<const float> grad,
                    double lr, double weight_decay, Moments& moments, std::int64_t step,
                    const AdamWConfig& config) {
  if (param.size() != grad.size()) {
    throw std::invalid_argument("optimizer: parameter " + name + " has " +
                                std::to_string(param.size()) + " values but " +
                                std::to_string(grad.size()) + " gradients");
  }
  if (step < 1) throw std::invalid_argument("optimizer: step is 1-based");
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      throw NumericError("non-finite gradient in parameter " + name + " at index " +
                         std::to_string(i));
    }
  }
  if (moments.m.empty()) {
    moments.m.assign(param.size(), 0.0f);
    moments.v.assign(param.size(), 0.0f);
  }
  if (moments.m.size() != param.size() || moments.v.size() != param.size()) {
    throw std::invalid_argument("optimizer: moment size mismatch for parameter " + name);
  }
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    double p = param[i];
    const double g = grad[i];
    p -= lr * weight_decay * p;
    const double m = b1 * moments.m[i] + (1.0 - b1) * g;
    const double v = b2 * moments.v[i] + (1.0 - b2) * g * g;
    moments.m[i] = static_cast<float>(m);
    moments.v[i] = static_cast<float>(v);
    p -= lr * (m / c1) / (std::sqrt(v / c2) + config.eps);
    param[i] = static_cast<float>(p);
  }
}

void AdamW::step(ParameterSet<float>& params, double lr) {
  ++t_;
  for (auto& e : params.entries()) {
    if (!e.tensor.has_grad()) continue;
    optimizer_step(e.name, e.tensor.data(), e.tensor.grad(), lr,
                   e.decay ? config_.weight_decay : 0.0, moments_[e.name], t_, config_);
  }
  params.zero_grad();
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

constexpr char kMagic[4] = {'B', 'C', 'M', 'B'};

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  void bytes(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 4);
  }
  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 8);
  }
  void str32(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void str64(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void tensor(const NamedTensor& t) {
    str32(t.name);
    u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto e : t.shape) u64(e);
    for (float f : t.values) u32(std::bit_cast<std::uint32_t>(f));
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  Reader(std::istream& is, std::string what) : is_(is), what_(std::move(what)) {}
  void bytes(void* p, std::size_t n) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) fail("truncated file");
  }
  std::uint32_t u32() {
    unsigned char b[4];
    bytes(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    unsigned char b[8];
    bytes(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  std::string str(std::uint64_t n) {
    if (n > (std::uint64_t{1} << 32)) fail("implausible length " + std::to_string(n));
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  NamedTensor tensor() {
    NamedTensor t;
    t.name = str(u32());
    const std::uint32_t rank = u32();
    if (rank > 8) fail("tensor " + t.name + " has implausible rank " + std::to_string(rank));
    std::uint64_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint64_t e = u64();
      if (e > (std::uint64_t{1} << 32)) fail("tensor " + t.name + " has implausible extent");
      t.shape.push_back(static_cast<std::size_t>(e));
      n *= e;
    }
    if (n > (std::uint64_t{1} << 34)) fail("tensor " + t.name + " is implausibly large");
    t.values.resize(n);
    for (auto& f : t.values) f = std::bit_cast<float>(u32());
    return t;
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw DataError("checkpoint " + what_ + ": " + msg);
  }

 private:
  std::istream& is_;
  std::string what_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write checkpoint " + tmp);
    Writer w(os);
    w.bytes(kMagic, 4);
    w.u32(Checkpoint::kFormatVersion);
    nlohmann::json meta = {{"model", model_config_to_json(ckpt.config)},
                           {"phase", ckpt.phase},
                           {"global_step", ckpt.global_step},
                           {"phase_step", ckpt.phase_step},
                           {"optimizer_steps", ckpt.optimizer_steps}};
    w.str64(meta.dump());
    w.u32(static_cast<std::uint32_t>(ckpt.params.size()));
    for (const auto& t : ckpt.params) w.tensor(t);
    w.u32(static_cast<std::uint32_t>(ckpt.optimizer.size()));
    for (const auto& t : ckpt.optimizer) w.tensor(t);
    w.str64(ckpt.rng_state);
    os.flush();
    if (!os) throw DataError("failed writing checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  Reader r(is, path.string());
  char magic[4];
  r.bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kMagic)) r.fail("bad magic (not a checkpoint file)");
  const std::uint32_t version = r.u32();
  if (version != Checkpoint::kFormatVersion) {
    r.fail("unsupported format version " + std::to_string(version));
  }
  Checkpoint c;
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.str(r.u64()));
    c.config = model_config_from_json(meta.at("model"));
    c.phase = meta.at("phase").get<int>();
    c.global_step = meta.at("global_step").get<std::int64_t>();
    c.phase_step = meta.at("phase_step").get<std::int64_t>();
    c.optimizer_steps = meta.at("optimizer_steps").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("bad metadata block: ") + e.what());
  } catch (const ConfigError& e) {
    r.fail(std::string("bad model config: ") + e.what());
  }
  const std::uint32_t n_params = r.u32();
  for (std::uint32_t i = 0; i < n_params; ++i) c.params.push_back(r.tensor());
  const std::uint32_t n_opt = r.u32();
  for (std::uint32_t i = 0; i < n_opt; ++i) c.optimizer.push_back(r.tensor());
  c.rng_state = r.str(r.u64());
  if (is.peek() != std::char_traits<char>::eof()) r.fail("trailing bytes after RNG state");
  return c;
}

// ---------------------------------------------------------------------------
// Train state

TrainState TrainState::fresh(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  return TrainState{EncoderModel<float>(config, mix_seed(seed, 0)), AdamW{}, Rng(mix_seed(seed, 1))};
}

TrainState TrainState::from_checkpoint(const Checkpoint& ckpt, AdamWConfig adamw) {
  ckpt.config.validate();
  // A throwaway model provides names, shapes and decay flags.
  EncoderModel<float> layout(ckpt.config, 0);
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : ckpt.params) {
    if (!by_name.emplace(t.name, &t).second) {
      throw DataError("checkpoint: duplicate parameter " + t.name);
    }
  }
  ParameterSet<float> params;
  for (const auto& e : layout.params().entries()) {
    auto it = by_name.find(e.name);
    if (it == by_name.end()) throw DataError("checkpoint: missing parameter " + e.name);
    if (it->second->shape != e.tensor.shape()) {
      throw DataError("checkpoint: parameter " + e.name + " has shape " +
                      shape_string(it->second->shape) + ", config expects " +
                      shape_string(e.tensor.shape()));
    }
    params.add(e.name, Tensor<float>(it->second->shape, it->second->values), e.decay);
    by_name.erase(it);
  }
  if (!by_name.empty()) {
    throw DataError("checkpoint: unexpected parameter " + by_name.begin()->first);
  }

  std::map<std::string, Moments> moments;
  for (const auto& t : ckpt.optimizer) {
    const bool is_m = t.name.starts_with("m/");
    if (!is_m && !t.name.starts_with("v/")) {
      throw DataError("checkpoint: unexpected optimizer tensor " + t.name);
    }
    const std::string pname = t.name.substr(2);
    if (!params.contains(pname) || params.at(pname).numel() != t.values.size()) {
      throw DataError("checkpoint: optimizer tensor " + t.name + " does not match a parameter");
    }
    (is_m ? moments[pname].m : moments[pname].v) = t.values;
  }
  for (const auto& [name, m] : moments) {
    if (m.m.size() != m.v.size()) {
      throw DataError("checkpoint: optimizer moments of " + name + " are incomplete");
    }
  }

  TrainState s{EncoderModel<float>(ckpt.config, std::move(params)), AdamW(adamw), Rng()};
  s.optimizer.restore(ckpt.optimizer_steps, std::move(moments));
  s.rng.deserialize(ckpt.rng_state);
  s.phase = ckpt.phase;
  s.global_step = ckpt.global_step;
  s.phase_step = ckpt.phase_step;
  return s;
}

Checkpoint TrainState::to_checkpoint() const {
  Checkpoint c;
  c.config = model.config();
  c.phase = phase;
  c.global_step = global_step;
  c.phase_step = phase_step;
  c.optimizer_steps = optimizer.steps_taken();
  for (const auto& e : model.params().entries()) {
    c.params.push_back(
        {e.name, e.tensor.shape(), {e.tensor.data().begin(), e.tensor.data().end()}});
  }
  for (const auto& [name, m] : optimizer.moments()) {
    const Shape shape = model.params().at(name).shape();
    c.optimizer.push_back({"m/" + name, shape, m.m});
    c.optimizer.push_back({"v/" + name, shape, m.v});
  }
  c.rng_state = rng.serialize();
  return c;
}

// ---------------------------------------------------------------------------
// Phases

SchedulerSpec PhaseSchedule::resolve(std::int64_t total_steps) const {
  SchedulerSpec s;
  s.peak_lr = peak_lr;
  s.warmup_steps = std::min(warmup_steps, total_steps);
  const std::int64_t rest = total_steps - s.warmup_steps;
  switch (kind) {
    case ScheduleKind::stable:
      s.stable_steps = rest;
      break;
    case ScheduleKind::one_minus_sqrt:
      s.decay_steps = rest;
      break;
    case ScheduleKind::constant_then_one_minus_sqrt:
      s.decay_steps = rest;
      s.decay_kind = DecayKind::constant_then_one_minus_sqrt;
      s.constant_fraction = constant_fraction;
      break;
  }
  return s;
}

void PhasePlan::validate() const {
  std::vector<std::string> errors;
  try {
    model.validate();
  } catch (const ConfigError& e) {
    errors.push_back(e.what());
  }
  if (phases.empty()) errors.push_back("plan has no phases");
  for (std::size_t i = 0; i < phases.size(); ++i) {
    const auto& p = phases[i];
    const std::string where = "phase " + std::to_string(i + 1) + ": ";
    if (p.sources.empty()) errors.push_back(where + "no sources");
    for (const auto& s : p.sources) {
      if (s.corpus_id.empty()) errors.push_back(where + "source with empty corpus id");
      if (s.token_budget < 0) errors.push_back(where + s.corpus_id + ": negative token budget");
      if (s.token_budget == 0 && !(s.epochs > 0)) {
        errors.push_back(where + s.corpus_id + ": epochs must be positive");
      }
    }
    try {
      p.masking.validate();
    } catch (const ConfigError& e) {
      errors.push_back(where + e.what());
    }
    if (!(p.schedule.peak_lr > 0)) errors.push_back(where + "peak_lr must be positive");
    if (p.schedule.warmup_steps < 0) errors.push_back(where + "warmup_steps must be >= 0");
    if (p.schedule.kind == ScheduleKind::constant_then_one_minus_sqrt &&
        !(p.schedule.constant_fraction >= 0 && p.schedule.constant_fraction < 1)) {
      errors.push_back(where + "constant_fraction must be in [0, 1)");
    }
    if (p.batch_tokens == 0) errors.push_back(where + "batch_tokens must be positive");
    if (p.weight_decay < 0) errors.push_back(where + "weight_decay must be >= 0");
    if (p.log_interval < 1) errors.push_back(where + "log_interval must be >= 1");
    if (p.checkpoint_interval < 0) errors.push_back(where + "checkpoint_interval must be >= 0");
    if (p.start_from.kind == StartFrom::Kind::checkpoint && p.start_from.path.empty()) {
      errors.push_back(where + "start_from checkpoint needs a path");
    }
    if (i == 0 && p.start_from.kind == StartFrom::Kind::previous) {
      errors.push_back(where + "the first phase cannot start from a previous phase");
    }
  }
  if (!errors.empty()) {
    std::string msg = "invalid pretraining plan:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
}

namespace {

std::vector<MixtureSource> resolve_sources(const PhaseSpec& phase, const CorpusSet& corpora) {
  std::vector<MixtureSource> out;
  for (const auto& s : phase.sources) {
    auto it = corpora.find(s.corpus_id);
    if (it == corpora.end()) throw DataError("corpus '" + s.corpus_id + "' was not provided");
    out.push_back({it->second, s.epochs, s.token_budget});
  }
  return out;
}

}  // namespace

PhaseResult run_phase(const PhasePlan& plan, std::size_t phase_index, TrainState& state,
                      const CorpusSet& corpora, const RunOptions& options) {
  plan.validate();
  if (phase_index >= plan.phases.size()) {
    throw std::out_of_range("run_phase: phase index " + std::to_string(phase_index) +
                            " but plan has " + std::to_string(plan.phases.size()) + " phases");
  }
  if (!(state.model.config() == plan.model)) {
    throw ConfigError("run_phase: model config of the training state does not match the plan");
  }
  const PhaseSpec& phase = plan.phases[phase_index];
  const int phase_id = static_cast<int>(phase_index) + 1;

  const auto sources = resolve_sources(phase, corpora);
  const std::uint64_t data_seed = mix_seed(plan.seed, 100 + phase_index);
  const std::int64_t total = MixtureIterator::count_batches(sources, phase.batch_tokens, data_seed);
  const SchedulerSpec sched = phase.schedule.resolve(total);

  MixtureIterator it(sources, phase.batch_tokens, data_seed);
  if (state.phase == phase_id && state.phase_step > 0) {
    if (state.phase_step > total) {
      throw DataError("run_phase: checkpoint is at phase step " + std::to_string(state.phase_step) +
                      " but the phase has only " + std::to_string(total) + " steps");
    }
    it.skip(state.phase_step);
  } else {
    state.phase = phase_id;
    state.phase_step = 0;
  }
  state.optimizer.set_weight_decay(phase.weight_decay);

  PhaseResult result;
  const int vocab = plan.model.vocab_size;
  while (state.phase_step < total) {
    if (options.stop_at_phase_step >= 0 && state.phase_step >= options.stop_at_phase_step) break;
    auto mb = it.next();
    if (!mb) throw DataError("run_phase: data stream ended early");

    MaskedBatch masked = apply_masking(mb->batch, phase.masking, vocab, state.rng);
    while (masked.selected == 0) {
      masked = apply_masking(mb->batch, phase.masking, vocab, state.rng);
    }

    const double lr = lr_at(sched, state.phase_step);
    Tape<float> tape;
    ForwardOptions fo{true, &state.rng};
    Tensor<float> logits = forward_mlm(tape, state.model, masked.batch, fo);
    Tensor<float> loss = ops::cross_entropy_with_ignore(tape, logits, masked.targets);
    const double loss_value = loss.item();
    if (!std::isfinite(loss_value)) {
      throw NumericError("non-finite loss at global step " + std::to_string(state.global_step + 1));
    }
    tape.backward(loss);
    state.optimizer.step(state.model.params(), lr);
    ++state.phase_step;
    ++state.global_step;
    ++result.steps;

    if (state.phase_step % phase.log_interval == 0 || state.phase_step == total) {
      result.log.push_back({state.global_step, phase_id, lr, loss_value, mb->source});
    }
    if (phase.checkpoint_interval > 0 && state.phase_step % phase.checkpoint_interval == 0 &&
        state.phase_step != total && options.on_checkpoint) {
      options.on_checkpoint(state.to_checkpoint());
    }
  }
  result.checkpoint = state.to_checkpoint();
  if (options.on_checkpoint) options.on_checkpoint(result.checkpoint);
  return result;
}

double evaluate_mlm_loss(const EncoderModel<float>& model, const std::vector<TokenIds>& docs,
                         const MaskingSpec& masking, std::uint64_t seed,
                         std::size_t batch_tokens) {
  Rng rng(seed);
  double total = 0;
  std::size_t count = 0;
  for (const auto& group : batch_by_tokens(docs, batch_tokens)) {
    std::vector<TokenIds> subset;
    for (auto i : group) subset.push_back(docs[i]);
    MaskedBatch masked = apply_masking(pack(subset), masking, model.config().vocab_size, rng);
    if (masked.selected == 0) continue;
    Tape<float> tape(false);
    Tensor<float> logits = forward_mlm(tape, model, masked.batch);
    Tensor<float> loss = ops::cross_entropy_with_ignore(tape, logits, masked.targets);
    total += static_cast<double>(loss.item()) * static_cast<double>(masked.selected);
    count += masked.selected;
  }
  if (count == 0) throw DataError("evaluate_mlm_loss: no token was selected for prediction");
  return total / static_cast<double>(count);
}

CorpusSet read_corpus_jsonl(const std::filesystem::path& path, const Vocab& vocab,
                            std::size_t max_len) {
  if (max_len < 3) throw ConfigError("read_corpus_jsonl: max_len must be at least 3");
  std::ifstream is(path);
  if (!is) throw DataError("cannot open corpus " + path.string());
  std::map<std::string, std::shared_ptr<Corpus>> building;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where + "invalid JSON (" + e.what() + ")");
    }
    if (!rec.is_object() || !rec.contains("text") || !rec["text"].is_string() ||
        !rec.contains("source") || !rec["source"].is_string()) {
      throw DataError(where + "record needs string fields 'text' and 'source'");
    }
    TokenIds ids = vocab.encode(rec["text"].get<std::string>(), true);
    if (ids.size() <= 2) continue;
    if (ids.size() > max_len) {
      ids.resize(max_len);
      ids.back() = Vocab::kSep;
    }
    const std::string source = rec["source"].get<std::string>();
    auto& c = building[source];
    if (!c) {
      c = std::make_shared<Corpus>();
      c->id = source;
    }
    c->docs.push_back(std::move(ids));
  }
  CorpusSet out;
  for (auto& [k, v] : building) out.emplace(k, std::move(v));
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string loss_log_csv(const std::vector<LossRow>& rows, bool header) {
  std::string out;
  if (header) out += "step,phase,lr,loss,source\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step) + "," + std::to_string(r.phase) + "," + format_double(r.lr) +
           "," + format_double(r.loss) + "," + r.source + "\n";
  }
  return out;
}

}  // namespace clinenc
