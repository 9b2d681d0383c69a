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


#include <gtest/gtest.h>

#include "clinenc/bench.hpp"
#include "clinenc/error.hpp"
#include "clinenc/tokenizer.hpp"

namespace clinenc {
namespace {

TEST(Workload, FixedLengths) {
  WorkloadSpec s;
  s.n_docs = 8192;
  s.max_len = 512;
  auto docs = generate_workload(s, 512);
  ASSERT_EQ(docs.size(), 8192u);
  for (const auto& d : docs) {
    ASSERT_EQ(d.size(), 512u);
    for (auto t : d) {
      ASSERT_GE(t, Vocab::kNumReserved);
      ASSERT_LT(t, 512);
    }
  }
}

TEST(Workload, NormalCenteredAtHalfMax) {
  WorkloadSpec s;
  s.n_docs = 8192;
  s.max_len = 512;
  s.length_mode = LengthMode::normal;
  EXPECT_EQ(s.resolved_mean(), 256.0);
  EXPECT_EQ(s.resolved_sd(), 64.0);
  auto docs = generate_workload(s, 100);
  double sum = 0;
  for (const auto& d : docs) {
    EXPECT_GE(d.size(), 1u);
    EXPECT_LE(d.size(), 512u);
    sum += static_cast<double>(d.size());
  }
  EXPECT_NEAR(sum / docs.size(), 256.0, 256.0 * 0.03);
}

TEST(Workload, ZeroSdDegeneratesToFixed) {
  WorkloadSpec s;
  s.n_docs = 50;
  s.max_len = 512;
  s.length_mode = LengthMode::normal;
  s.sd = 0;
  for (const auto& d : generate_workload(s, 100)) EXPECT_EQ(d.size(), 256u);
}

TEST(Workload, Deterministic) {
  WorkloadSpec s;
  s.n_docs = 20;
  s.max_len = 64;
  s.length_mode = LengthMode::normal;
  s.seed = 9;
  EXPECT_EQ(generate_workload(s, 50), generate_workload(s, 50));
  auto t = s;
  t.seed = 10;
  EXPECT_NE(generate_workload(s, 50), generate_workload(t, 50));
}

ModelConfig bench_config() {
  ModelConfig c = model_preset("preset-tiny");
  c.max_seq_len = 128;
  c.window = 32;
  c.dropout = 0;
  return c;
}

TEST(Measure, TokenAccounting) {
  EncoderModel<float> m(bench_config(), 1);
  WorkloadSpec fixed;
  fixed.n_docs = 16;
  fixed.max_len = 128;
  auto fdocs = generate_workload(fixed, m.config().vocab_size);
  MeasureOptions opt{1, 0, 8};
  auto a = measure(m, "tiny", fdocs, fixed, ExecMode::unpadded, opt);
  auto b = measure(m, "tiny", fdocs, fixed, ExecMode::padded, opt);
  EXPECT_EQ(a.real_tokens, 16u * 128u);
  EXPECT_EQ(a.real_tokens, b.real_tokens);
  EXPECT_EQ(b.processed_slots, b.real_tokens);

  WorkloadSpec var = fixed;
  var.length_mode = LengthMode::normal;
  var.n_docs = 64;
  auto vdocs = generate_workload(var, m.config().vocab_size);
  auto p = measure(m, "tiny", vdocs, var, ExecMode::padded, opt, var.max_len);
  const double ratio = double(p.processed_slots) / double(p.real_tokens);
  EXPECT_NEAR(ratio, 2.0, 0.2);
  EXPECT_EQ(p.sd_tokens, 16.0);
  EXPECT_EQ(p.per_run.size(), 1u);
}

TEST(Measure, ContextExceededIsError) {
  EncoderModel<float> m(bench_config(), 1);
  WorkloadSpec s;
  s.n_docs = 2;
  s.max_len = 256;
  auto docs = generate_workload(s, m.config().vocab_size);
  EXPECT_THROW(measure(m, "tiny", docs, s, ExecMode::unpadded), ConfigError);
}

TEST(Measure, RepeatedRunsAreStable) {
  EncoderModel<float> m(bench_config(), 2);
  WorkloadSpec s;
  s.n_docs = 32;
  s.max_len = 128;
  auto docs = generate_workload(s, m.config().vocab_size);
  MeasureOptions opt{5, 1, 8};
  // Wall-clock noise on a shared machine; allow a few attempts.
  double best_gap = 1e9;
  for (int attempt = 0; attempt < 3 && best_gap >= 0.10; ++attempt) {
    const double x = measure(m, "tiny", docs, s, ExecMode::unpadded, opt).ktok_per_s;
    const double y = measure(m, "tiny", docs, s, ExecMode::unpadded, opt).ktok_per_s;
    best_gap = std::min(best_gap, std::abs(x - y) / std::max(x, y));
  }
  EXPECT_LT(best_gap, 0.10);
}

TEST(Report, CsvShapes) {
  EXPECT_EQ(bench_csv({}), "model,workload_class,length_mode,mode,ktok_per_s,runs,sd_tokens\n");
  std::vector<ThroughputResult> rs;
  for (const char* cls : {"short", "medium", "long"}) {
    for (LengthMode lm : {LengthMode::fixed, LengthMode::normal}) {
      ThroughputResult r;
      r.model = "alt";
      r.workload_class = cls;
      r.length_mode = lm;
      r.ktok_per_s = 12.25;
      r.runs = 10;
      rs.push_back(r);
    }
  }
  const auto table = bench_table_csv(rs, {{"alt", 8192}, {"bert", 512}});
  EXPECT_EQ(table,
            "model,short_fixed,short_variable,medium_fixed,medium_variable,long_fixed,long_variable\n"
            "alt,12.2,12.2,12.2,12.2,12.2,12.2\n"
            "bert,-,-,-,-,-,-\n");
  const auto empty = bench_table_csv({}, {});
  EXPECT_EQ(empty.find('\n'), empty.size() - 1);
  const auto csv = bench_csv(rs);
  EXPECT_NE(csv.find("alt,short,variable,unpadded,12.25,10,0\n"), std::string::npos);
}

}  // namespace
}  // namespace clinenc
