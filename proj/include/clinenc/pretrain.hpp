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
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "clinenc/encoder.hpp"
#include "clinenc/packing.hpp"
#include "clinenc/rng.hpp"
#include "clinenc/tokenizer.hpp"

namespace clinenc {

// ---------------------------------------------------------------------------
// Masking

/// Dynamic MLM corruption policy. Each eligible token (anything but CLS, SEP
/// and PAD) is selected with probability mlm_probability; a selected token
/// becomes MASK, a uniformly random non-reserved id, or stays unchanged
/// according to the three fractions.
struct MaskingSpec {
  double mlm_probability = 0.30;
  double mask_fraction = 0.8;
  double random_fraction = 0.1;
  double keep_fraction = 0.1;

  void validate() const;
};

struct MaskedBatch {
  PackedBatch batch;                  // corrupted inputs
  std::vector<std::int32_t> targets;  // original id at selected positions, kIgnoreIndex elsewhere
  std::size_t eligible = 0;
  std::size_t selected = 0;
  std::size_t masked = 0;
  std::size_t randomized = 0;
  std::size_t kept = 0;
};

MaskedBatch apply_masking(const PackedBatch& batch, const MaskingSpec& spec, int vocab_size,
                          Rng& rng);

// ---------------------------------------------------------------------------
// Warmup-stable-decay learning rate

enum class DecayKind { one_minus_sqrt, constant_then_one_minus_sqrt };

/// Linear warmup from 0, constant peak, then a 1-sqrt decay to exactly 0.
///
/// With constant_then_one_minus_sqrt the decay stage holds the peak for its
/// first round(constant_fraction * decay_steps) steps and applies the same
/// 1-sqrt formula over the remaining steps.
/// decay_steps == 0 describes a stable-only run (no terminal decay).
struct SchedulerSpec {
  double peak_lr = 3e-4;
  std::int64_t warmup_steps = 0;
  std::int64_t stable_steps = 0;
  std::int64_t decay_steps = 0;
  DecayKind decay_kind = DecayKind::one_minus_sqrt;
  double constant_fraction = 0.0;

  std::int64_t total_steps() const { return warmup_steps + stable_steps + decay_steps; }
  void validate() const;
};

/// Learning rate at `step` in [0, total_steps]; throws std::out_of_range otherwise.
double lr_at(const SchedulerSpec& spec, std::int64_t step);

/// Peak learning rates and document batch sizes of the two full-scale recipes.
struct RecipePreset {
  double peak_lr;
  int batch_docs;
};
inline constexpr RecipePreset kBaseRecipe{3e-4, 72};
inline constexpr RecipePreset kLargeRecipe{5e-5, 77};

/// Stable-stage continuation (no warmup, no decay).
SchedulerSpec stable_schedule(double peak_lr, std::int64_t steps);
/// Decay over every step (base-model second phase).
SchedulerSpec full_decay_schedule(double peak_lr, std::int64_t steps);
/// Constant for the first `constant_fraction` of steps, then 1-sqrt (large-model second phase).
SchedulerSpec constant_then_decay_schedule(double peak_lr, std::int64_t steps,
                                           double constant_fraction = 2.0 / 3.0);

// ---------------------------------------------------------------------------
// Source mixing

struct Corpus {
  std::string id;
  std::vector<TokenIds> docs;

  std::size_t num_tokens() const;
};

struct MixtureSource {
  std::shared_ptr<const Corpus> corpus;
  double epochs = 1.0;
  std::int64_t token_budget = 0;  // overrides epochs when > 0
};

struct MixtureBatch {
  std::string source;
  PackedBatch batch;
};

/// Interleaves several corpora into single-source batches.
///
/// Each source is streamed through reshuffled passes until its budget
/// (epochs * corpus tokens, or an explicit token budget) is used up; the next
/// batch's source is drawn with probability proportional to the remaining
/// budgets. Batches hold whole documents up to `batch_tokens` tokens.
class MixtureIterator {
 public:
  MixtureIterator(std::vector<MixtureSource> sources, std::size_t batch_tokens,
                  std::uint64_t seed);

  std::optional<MixtureBatch> next();
  void skip(std::int64_t batches);
  std::int64_t batches_emitted() const { return emitted_; }

  /// Tokens emitted so far per source id.
  std::map<std::string, std::int64_t> tokens_by_source() const;

  /// Number of batches a fresh iterator with these arguments would emit.
  static std::int64_t count_batches(const std::vector<MixtureSource>& sources,
                                    std::size_t batch_tokens, std::uint64_t seed);

 private:
  struct State {
    MixtureSource source;
    std::int64_t budget = 0;
    std::int64_t consumed = 0;
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
  };
  std::optional<TokenIds> next_doc(State& s);

  std::vector<State> states_;
  std::size_t batch_tokens_;
  Rng rng_;
  std::int64_t emitted_ = 0;
};

// ---------------------------------------------------------------------------
// Optimizer

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-6;
  double weight_decay = 0.0;
};

struct Moments {
  std::vector<float> m;
  std::vector<float> v;
};

/// One AdamW update of a single parameter. Decoupled decay p -= lr * wd * p is
/// applied before the bias-corrected adaptive step. `step` is 1-based.
/// Throws NumericError naming the parameter if any gradient is non-finite.
void optimizer_step(const std::string& name, std::span<float> param, std::span<const float> grad,
                    double lr, double weight_decay, Moments& moments, std::int64_t step,
                    const AdamWConfig& config = {});

class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  /// Updates every parameter that has a gradient, then clears gradients.
  /// Parameters flagged without decay skip the decoupled weight decay.
  void step(ParameterSet<float>& params, double lr);

  const AdamWConfig& config() const { return config_; }
  void set_weight_decay(double wd) { config_.weight_decay = wd; }
  std::int64_t steps_taken() const { return t_; }
  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }
  void restore(std::int64_t t, std::map<std::string, Moments> moments) {
    t_ = t;
    moments_ = std::move(moments);
  }

 private:
  AdamWConfig config_;
  std::int64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

// ---------------------------------------------------------------------------
// Checkpoints

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// Persisted training state. File layout: magic "BCMB", u32 format version,
/// u64-length-prefixed JSON block (model config and step bookkeeping), the
/// parameter tensors, the optimizer tensors, then a length-prefixed RNG blob.
/// Each tensor section is a u32 count followed by (u32 name length, name,
/// u32 rank, u64 extents, little-endian float32 payload).
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  ModelConfig config;
  int phase = 1;
  std::int64_t global_step = 0;
  std::int64_t phase_step = 0;
  std::int64_t optimizer_steps = 0;
  std::vector<NamedTensor> params;
  std::vector<NamedTensor> optimizer;  // "m/<param>" and "v/<param>"
  std::string rng_state;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Everything that evolves during pretraining.
struct TrainState {
  EncoderModel<float> model;
  AdamW optimizer;
  Rng rng;
  int phase = 1;
  std::int64_t global_step = 0;
  std::int64_t phase_step = 0;

  static TrainState fresh(const ModelConfig& config, std::uint64_t seed);
  static TrainState from_checkpoint(const Checkpoint& ckpt, AdamWConfig adamw = {});
  Checkpoint to_checkpoint() const;
};

// ---------------------------------------------------------------------------
// Phases

struct SourceRef {
  std::string corpus_id;
  double epochs = 1.0;
  std::int64_t token_budget = 0;
};

enum class ScheduleKind { stable, one_minus_sqrt, constant_then_one_minus_sqrt };

/// Learning-rate shape of a phase; concrete step counts are resolved once the
/// phase's batch count is known.
struct PhaseSchedule {
  double peak_lr = 3e-4;
  std::int64_t warmup_steps = 0;
  ScheduleKind kind = ScheduleKind::stable;
  double constant_fraction = 2.0 / 3.0;

  SchedulerSpec resolve(std::int64_t total_steps) const;
};

struct StartFrom {
  enum class Kind { fresh, previous, checkpoint } kind = Kind::previous;
  std::filesystem::path path;
};

struct PhaseSpec {
  std::string name;
  std::vector<SourceRef> sources;
  MaskingSpec masking;
  PhaseSchedule schedule;
  StartFrom start_from;
  std::size_t batch_tokens = 4096;
  double weight_decay = 0.0;
  std::int64_t log_interval = 1;
  std::int64_t checkpoint_interval = 0;  // 0: only at phase end
};

struct PhasePlan {
  ModelConfig model;
  std::uint64_t seed = 0;
  std::vector<PhaseSpec> phases;

  /// Throws ConfigError listing every inconsistency.
  void validate() const;
};

struct LossRow {
  std::int64_t step;
  int phase;
  double lr;
  double loss;
  std::string source;
};

struct PhaseResult {
  Checkpoint checkpoint;
  std::vector<LossRow> log;
  std::int64_t steps = 0;
};

struct RunOptions {
  /// Stop once the phase step reaches this value (negative: run to completion).
  std::int64_t stop_at_phase_step = -1;
  /// Called with every interval checkpoint (and the final one).
  std::function<void(const Checkpoint&)> on_checkpoint;
};

using CorpusSet = std::map<std::string, std::shared_ptr<const Corpus>>;

/// Runs (or resumes) phase `phase_index` (0-based) of the plan on `state`.
///
/// If state.phase already equals this phase and state.phase_step > 0 the run
/// resumes mid-phase, replaying the data stream up to that step.
PhaseResult run_phase(const PhasePlan& plan, std::size_t phase_index, TrainState& state,
                      const CorpusSet& corpora, const RunOptions& options = {});

/// Mean masked-token loss over `docs` with masking drawn from `seed`, eval mode.
double evaluate_mlm_loss(const EncoderModel<float>& model, const std::vector<TokenIds>& docs,
                         const MaskingSpec& masking, std::uint64_t seed,
                         std::size_t batch_tokens = 4096);

/// Reads newline-delimited JSON records {"text": ..., "source": ...} and
/// tokenizes them into one corpus per source (CLS/SEP added, truncated to
/// max_len). Blank lines are skipped; malformed records throw DataError with
/// the line number.
CorpusSet read_corpus_jsonl(const std::filesystem::path& path, const Vocab& vocab,
                            std::size_t max_len);

std::string loss_log_csv(const std::vector<LossRow>& rows, bool header = true);

/// Formats a double with round-trip precision (shortest representation).
std::string format_double(double v);

}  // namespace clinenc
