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
#include <string>
#include <string_view>
#include <vector>

#include "clinenc/encoder.hpp"
#include "clinenc/packing.hpp"

namespace clinenc {

enum class LengthMode { fixed, normal };
enum class ExecMode { padded, unpadded };

std::string_view length_mode_name(LengthMode m);
std::string_view exec_mode_name(ExecMode m);
LengthMode parse_length_mode(std::string_view s);
ExecMode parse_exec_mode(std::string_view s);

/// Synthetic inference workload. Fixed mode gives every document max_len
/// tokens. Normal mode draws round(N(mean, sd)) clipped to [1, max_len]; mean
/// defaults to max_len / 2 and sd to mean / 4.
struct WorkloadSpec {
  std::string workload_class = "short";  // column label: short, medium, long
  std::size_t n_docs = 8192;
  LengthMode length_mode = LengthMode::fixed;
  std::size_t max_len = 512;
  double mean = 0;  // 0: max_len / 2
  double sd = -1;   // < 0: mean / 4
  std::uint64_t seed = 0;

  double resolved_mean() const { return mean > 0 ? mean : static_cast<double>(max_len) / 2.0; }
  double resolved_sd() const { return sd >= 0 ? sd : resolved_mean() / 4.0; }
  void validate() const;
};

/// Token ids are uniform over the non-reserved ids of a vocab_size vocabulary.
std::vector<TokenIds> generate_workload(const WorkloadSpec& spec, int vocab_size);

struct MeasureOptions {
  int runs = 10;
  int warmup_runs = 1;
  std::size_t batch_docs = 8;
};

struct ThroughputResult {
  std::string model;
  std::string workload_class;
  LengthMode length_mode = LengthMode::fixed;
  ExecMode mode = ExecMode::unpadded;
  double ktok_per_s = 0;              // mean of per_run
  std::vector<double> per_run;        // kTok/s of each timed run
  int runs = 0;
  double sd_tokens = 0;               // length sd of the workload (0 for fixed)
  std::size_t real_tokens = 0;        // per run
  std::size_t processed_slots = 0;    // per run, PAD slots included
  double prep_seconds = 0;            // packing / padding, outside the timer
  double seconds_per_token() const { return ktok_per_s > 0 ? 1.0 / (1000.0 * ktok_per_s) : 0.0; }
};

/// Times forward encoder passes over the workload in batches of
/// `batch_docs` documents. Padded mode pads every batch to `pad_to` (0: the
/// longest document of the workload). Only real tokens count toward
/// throughput. Throws ConfigError when a document exceeds the model context.
ThroughputResult measure(const EncoderModel<float>& model, const std::string& model_name,
                         const std::vector<TokenIds>& docs, const WorkloadSpec& spec,
                         ExecMode mode, const MeasureOptions& options = {},
                         std::size_t pad_to = 0);

/// Long-form CSV `model,workload_class,length_mode,mode,ktok_per_s,runs,sd_tokens`.
std::string bench_csv(const std::vector<ThroughputResult>& results, bool header = true);

struct TableRow {
  std::string label;       // model (and mode)
  int max_context = 0;     // classes beyond it print as a dash
};

/// Table with one row per label and one column per (class, length mode) in
/// `classes` order ({short, medium, long} x {fixed, variable} by default).
std::string bench_table_csv(const std::vector<ThroughputResult>& results,
                            const std::vector<TableRow>& rows,
                            const std::vector<std::pair<std::string, std::size_t>>& classes = {
                                {"short", 512}, {"medium", 4096}, {"long", 8192}});

}  // namespace clinenc
