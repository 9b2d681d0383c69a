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
#include <string>
#include <string_view>
#include <vector>

#include "clinenc/bench.hpp"
#include "clinenc/finetune.hpp"
#include "clinenc/pretrain.hpp"
#include "json.hpp"

namespace clinenc {

struct TokenizerSection {
  std::filesystem::path corpus;  // JSONL {"text", "source"}; also the pretraining corpus
  std::size_t vocab_size = 0;    // 0: model vocab_size
  std::filesystem::path vocab;   // empty: <output_dir>/vocab.bin
  std::size_t max_doc_len = 0;   // 0: model max_seq_len
};

struct TaskSection {
  TaskSpec spec;
  std::filesystem::path train, val, test;
  std::size_t max_len = 0;               // 0: model max_seq_len
  std::filesystem::path base_checkpoint;  // empty: last pretraining checkpoint
};

struct BenchModel {
  std::string label;
  ModelConfig config;
};

struct BenchSection {
  std::vector<WorkloadSpec> workloads;
  std::vector<BenchModel> models;  // empty: the run's model
  std::vector<ExecMode> modes{ExecMode::unpadded, ExecMode::padded};
  MeasureOptions options;
};

struct RunConfig {
  nlohmann::json document;  // the validated input, overrides applied
  std::string model_size = "base";
  TokenizerSection tokenizer;
  PhasePlan plan;
  std::vector<std::int64_t> max_steps;  // per phase; negative: unlimited
  std::vector<TaskSection> tasks;
  BenchSection bench;
  std::filesystem::path output_dir = "clinenc-out";
  std::uint64_t global_seed = 0;

  std::filesystem::path vocab_path() const;
  std::filesystem::path checkpoint_path(std::size_t phase_index) const;

  /// Makes relative input paths (corpus, vocab, task data, checkpoints to
  /// start from) relative to `dir`, normally the config file's directory.
  void resolve_inputs(const std::filesystem::path& dir);
};

/// Validates a run document and converts it. Unknown keys and every other
/// violation are collected and thrown together as one ConfigError.
RunConfig parse_run_config(const nlohmann::json& document);

/// Applies one `a.b.0.c=value` override. The value is parsed as JSON when
/// possible and taken as a string otherwise. Missing objects on the path are
/// created; array indices must exist.
void apply_override(nlohmann::json& document, std::string_view assignment);

/// Accepted keys per section, as published in configs/run_config.schema.json.
const std::vector<std::string>& run_config_keys(std::string_view section);

}  // namespace clinenc
