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


#include "clinenc/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>

#include "clinenc/error.hpp"
#include "clinenc/pretrain.hpp"
#include "clinenc/rng.hpp"
#include "clinenc/tokenizer.hpp"

namespace clinenc {

std::string_view length_mode_name(LengthMode m) { return m == LengthMode::fixed ? "fixed" : "variable"; }
std::string_view exec_mode_name(ExecMode m) { return m == ExecMode::padded ? "padded" : "unpadded"; }

LengthMode parse_length_mode(std::string_view s) {
  if (s == "fixed") return LengthMode::fixed;
  if (s == "variable" || s == "normal") return LengthMode::normal;
  throw ConfigError("unknown length mode '" + std::string(s) + "' (expected fixed or variable)");
}

ExecMode parse_exec_mode(std::string_view s) {
  if (s == "padded") return ExecMode::padded;
  if (s == "unpadded") return ExecMode::unpadded;
  throw ConfigError("unknown execution mode '" + std::string(s) + "' (expected padded or unpadded)");
}

void WorkloadSpec::validate() const {
  std::vector<std::string> errors;
  if (n_docs == 0) errors.push_back("n_docs must be positive");
  if (max_len == 0) errors.push_back("max_len must be positive");
  if (mean < 0) errors.push_back("mean must be >= 0");
  if (workload_class.empty()) errors.push_back("workload_class is empty");
  if (!errors.empty()) {
    std::string msg = "invalid workload:";
    for (const auto& e : errors) msg += " " + e + ";";
    throw ConfigError(msg);
  }
}

std::vector<TokenIds> generate_workload(const WorkloadSpec& spec, int vocab_size) {
  spec.validate();
  if (vocab_size <= Vocab::kNumReserved) throw ConfigError("workload: vocab has no regular ids");
  Rng rng(spec.seed);
  const auto n_ids = static_cast<std::uint64_t>(vocab_size - Vocab::kNumReserved);
  const double mean = spec.resolved_mean(), sd = spec.resolved_sd();
  const auto max_len = static_cast<long>(spec.max_len);
  std::vector<TokenIds> docs(spec.n_docs);
  for (auto& d : docs) {
    long len = max_len;
    if (spec.length_mode == LengthMode::normal) {
      len = std::clamp<long>(std::lround(mean + sd * rng.normal()), 1, max_len);
    }
    d.resize(static_cast<std::size_t>(len));
    for (auto& t : d) t = Vocab::kNumReserved + static_cast<std::int32_t>(rng.below(n_ids));
  }
  return docs;
}

ThroughputResult measure(const EncoderModel<float>& model, const std::string& model_name,
                         const std::vector<TokenIds>& docs, const WorkloadSpec& spec,
                         ExecMode mode, const MeasureOptions& options, std::size_t pad_to) {
  if (options.runs < 1) throw ConfigError("measure: runs must be >= 1");
  if (options.warmup_runs < 0) throw ConfigError("measure: warmup_runs must be >= 0");
  if (options.batch_docs == 0) throw ConfigError("measure: batch_docs must be positive");
  if (docs.empty()) throw DataError("measure: empty workload");
  const auto context = static_cast<std::size_t>(model.config().max_seq_len);
  std::size_t longest = 0;
  for (const auto& d : docs) longest = std::max(longest, d.size());
  if (longest > context || pad_to > context) {
    throw ConfigError("measure: workload needs " + std::to_string(std::max(longest, pad_to)) +
                      " tokens but model context is " + std::to_string(context));
  }
  if (pad_to == 0) pad_to = longest;

  ThroughputResult r;
  r.model = model_name;
  r.workload_class = spec.workload_class;
  r.length_mode = spec.length_mode;
  r.mode = mode;
  r.sd_tokens = spec.length_mode == LengthMode::fixed ? 0.0 : spec.resolved_sd();

  struct Prepared {
    TokenIds ids;
    AttentionLayout layout;
  };
  std::vector<Prepared> batches;
  const auto prep_start = std::chrono::steady_clock::now();
  for (std::size_t lo = 0; lo < docs.size(); lo += options.batch_docs) {
    const std::size_t hi = std::min(docs.size(), lo + options.batch_docs);
    std::span<const TokenIds> group(docs.data() + lo, hi - lo);
    if (mode == ExecMode::unpadded) {
      PackedBatch b = pack(group, context);
      r.real_tokens += b.num_tokens();
      r.processed_slots += b.num_tokens();
      AttentionLayout layout = make_layout(b);
      batches.push_back({std::move(b.token_ids), std::move(layout)});
    } else {
      PaddedBatch b = pad(group, pad_to);
      r.real_tokens += b.real_tokens();
      r.processed_slots += b.slots();
      AttentionLayout layout = make_layout(b);
      batches.push_back({std::move(b.token_ids), std::move(layout)});
    }
  }
  r.prep_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - prep_start).count();

  auto one_pass = [&] {
    for (const auto& b : batches) {
      Tape<float> tape(false);
      Tensor<float> h = encode(tape, model, b.ids, b.layout);
      if (h.numel() == 0) throw NumericError("measure: empty encoder output");
    }
  };
  for (int w = 0; w < options.warmup_runs; ++w) one_pass();
  for (int run = 0; run < options.runs; ++run) {
    const auto t0 = std::chrono::steady_clock::now();
    one_pass();
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.per_run.push_back(static_cast<double>(r.real_tokens) / std::max(s, 1e-12) / 1000.0);
  }
  r.runs = options.runs;
  double sum = 0;
  for (double v : r.per_run) sum += v;
  r.ktok_per_s = sum / static_cast<double>(r.per_run.size());
  return r;
}

std::string bench_csv(const std::vector<ThroughputResult>& results, bool header) {
  std::string out;
  if (header) out += "model,workload_class,length_mode,mode,ktok_per_s,runs,sd_tokens\n";
  for (const auto& r : results) {
    out += r.model + "," + r.workload_class + "," + std::string(length_mode_name(r.length_mode)) +
           "," + std::string(exec_mode_name(r.mode)) + "," + format_double(r.ktok_per_s) + "," +
           std::to_string(r.runs) + "," + format_double(r.sd_tokens) + "\n";
  }
  return out;
}

std::string bench_table_csv(const std::vector<ThroughputResult>& results,
                            const std::vector<TableRow>& rows,
                            const std::vector<std::pair<std::string, std::size_t>>& classes) {
  std::string out = "model";
  for (const auto& [cls, len] : classes) out += "," + cls + "_fixed," + cls + "_variable";
  out += "\n";
  for (const auto& row : rows) {
    out += row.label;
    for (const auto& [cls, len] : classes) {
      for (LengthMode lm : {LengthMode::fixed, LengthMode::normal}) {
        out += ",";
        if (row.max_context > 0 && len > static_cast<std::size_t>(row.max_context)) {
          out += "-";
          continue;
        }
        auto it = std::find_if(results.begin(), results.end(), [&](const ThroughputResult& r) {
          return r.model == row.label && r.workload_class == cls && r.length_mode == lm;
        });
        if (it == results.end()) {
          out += "-";
        } else {
          char buf[32];
          std::snprintf(buf, sizeof(buf), "%.1f", it->ktok_per_s);
          out += buf;
        }
      }
    }
    out += "\n";
  }
  return out;
}

}  // namespace clinenc
