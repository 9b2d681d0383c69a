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
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "clinenc/encoder.hpp"
#include "clinenc/packing.hpp"
#include "clinenc/tokenizer.hpp"

namespace clinenc {

// ---------------------------------------------------------------------------
// Metrics

/// Inclusive token span [start, end] of one entity.
struct EntitySpan {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string label;

  friend auto operator<=>(const EntitySpan&, const EntitySpan&) = default;
};

/// Chunks a BIO tag sequence with seqeval's default (lenient) rules: B-t
/// always opens a chunk; I-t opens one after O, at the start, or after a chunk
/// of another type; consecutive I-t of the same type extend it. Throws
/// DataError naming the position of a malformed tag.
std::vector<EntitySpan> bio_extract(std::span<const std::string> tags);

struct PrecisionRecallF1 {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

/// Micro-averaged exact-match (span and type) scores over all sequences.
/// Ratios with a zero denominator are 0.
PrecisionRecallF1 entity_f1(const std::vector<std::vector<std::string>>& true_tags,
                            const std::vector<std::vector<std::string>>& pred_tags);

/// Support-weighted mean of per-class F1. Classes that occur in neither
/// vector are ignored; 0 when there is no true support at all.
double weighted_f1(std::span<const int> y_true, std::span<const int> y_pred);

/// Multi-label variant: each label is a binary problem weighted by its
/// positive support.
double weighted_f1_multilabel(const std::vector<std::vector<std::uint8_t>>& y_true,
                              const std::vector<std::vector<std::uint8_t>>& y_pred);

/// Middle value, or the mean of the two middle values. Throws on empty input.
double median(std::vector<double> values);

// ---------------------------------------------------------------------------
// Tasks and data

enum class TaskKind { single_label, multi_label, token_bio };

std::string_view task_kind_name(TaskKind kind);
TaskKind parse_task_kind(std::string_view name);

struct TaskSpec {
  std::string name = "task";
  TaskKind kind = TaskKind::single_label;
  int num_classes = 2;                 // label count (token_bio: size of tag_names)
  std::vector<std::string> tag_names;  // token_bio only; "O" first
  std::vector<double> lr_grid{5e-5};
  int epochs = 10;
  int batch_size = 16;
  double weight_decay = 1e-5;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  int patience = 3;

  /// Throws ConfigError listing every problem.
  void validate() const;
  std::string metric_name() const;
};

/// Selected fine-tuning learning rates per task and model size
/// ("base" or "large"); tasks: chemprot, phenotype, cos, social_history, deid.
double finetune_lr_preset(std::string_view task, std::string_view size);

struct Example {
  TokenIds ids;                            // CLS ... SEP
  int label = -1;                          // single_label
  std::vector<std::uint8_t> labels;        // multi_label
  std::vector<std::int32_t> token_targets; // token_bio: tag id on first subwords, ignore elsewhere
  std::vector<std::size_t> word_starts;    // token_bio: token index of each word's first subword
  std::vector<std::string> gold_tags;      // token_bio: word-level tags
};

struct DatasetSplits {
  std::vector<Example> train;
  std::vector<Example> val;
  std::vector<Example> test;
};

/// Sorted tag inventory with "O" first, built from word-level tag sequences.
std::vector<std::string> make_tagset(const std::vector<std::vector<std::string>>& tag_seqs);

/// Tokenizes a word-level NER record. Words that do not fit in max_len are
/// dropped from the end (their gold tags too).
Example align_ner_example(const Vocab& vocab, const std::vector<std::string>& words,
                          const std::vector<std::string>& tags,
                          const std::vector<std::string>& tagset, std::size_t max_len);

Example make_classification_example(const Vocab& vocab, std::string_view text, int label,
                                    std::vector<std::uint8_t> labels, std::size_t max_len);

struct NerRecord {
  std::vector<std::string> tokens;
  std::vector<std::string> tags;
};

std::vector<NerRecord> read_ner_jsonl(const std::filesystem::path& path);

/// Reads `text` plus `label` (single_label) or `labels` (multi_label) records.
std::vector<Example> read_classification_jsonl(const std::filesystem::path& path,
                                               const Vocab& vocab, TaskKind kind,
                                               int num_classes, std::size_t max_len);

// ---------------------------------------------------------------------------
// Fine-tuning

struct RunResult {
  double lr = 0;
  std::uint64_t seed = 0;
  double best_val = 0;
  double test = 0;
  int best_epoch = 0;
  int epochs_run = 0;
  std::vector<double> val_history;
};

/// Trains a fresh copy of `base` with a new head for one (lr, seed), early
/// stopping on the validation metric, and scores the best epoch on test.
RunResult train_and_evaluate(const EncoderModel<float>& base, const TaskSpec& task,
                             const DatasetSplits& data, double lr, std::uint64_t seed);

/// Task metric of `model` (head name = task.name) on examples.
double evaluate_task(const EncoderModel<float>& model, const TaskSpec& task,
                     const std::vector<Example>& examples);

struct MetricReport {
  std::string task;
  std::string model;
  std::string metric;
  double chosen_lr = 0;
  std::vector<std::pair<double, double>> grid;  // (lr, seed-0 validation score)
  std::vector<RunResult> runs;                  // one per seed at chosen_lr
  double median = 0;
};

/// Grid search on the first seed's validation score, then every seed at the
/// chosen learning rate; reports per-seed test scores and their median.
MetricReport finetune(const EncoderModel<float>& base, const TaskSpec& task,
                      const DatasetSplits& data, const std::string& model_name = "model");

/// CSV `task,model,lr,seed,metric,value` with a final `median` row.
std::string report_csv(const MetricReport& report, bool header = true);

}  // namespace clinenc
