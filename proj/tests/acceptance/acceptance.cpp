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


// Acceptance checks. Each criterion prints one PASS/FAIL line; pass criterion
// numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "clinenc/bench.hpp"
#include "clinenc/encoder.hpp"
#include "clinenc/error.hpp"
#include "clinenc/finetune.hpp"
#include "clinenc/ops.hpp"
#include "clinenc/packing.hpp"
#include "clinenc/pretrain.hpp"
#include "clinenc/tokenizer.hpp"

using namespace clinenc;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<TokenIds> random_docs(Rng& rng, std::size_t n, std::size_t min_len, std::size_t max_len,
                                  int vocab) {
  std::vector<TokenIds> docs(n);
  for (auto& d : docs) {
    const std::size_t len = min_len + rng.below(max_len - min_len + 1);
    for (std::size_t i = 0; i < len; ++i) {
      d.push_back(static_cast<std::int32_t>(Vocab::kNumReserved + rng.below(vocab - Vocab::kNumReserved)));
    }
  }
  return docs;
}

// ---------------------------------------------------------------------------
// 1. Padded and packed execution produce the same logits.

Outcome padded_packed_equivalence() {
  ModelConfig c = model_preset("preset-tiny");
  EncoderModel<float> model(c, 1);
  Rng rng(101);
  double worst = 0;
  std::size_t tokens = 0;
  for (int set = 0; set < 50; ++set) {
    const std::size_t n = 1 + rng.below(8);
    auto docs = random_docs(rng, n, 1, static_cast<std::size_t>(c.max_seq_len), c.vocab_size);
    Tape<float> t1(false), t2(false);
    const Tensor<float> packed = forward_mlm(t1, model, pack(docs));
    const PaddedBatch pb = pad(docs);
    const Tensor<float> padded = forward_mlm_padded(t2, model, pb);
    const std::size_t V = static_cast<std::size_t>(c.vocab_size);
    std::size_t row = 0;
    for (std::size_t slot = 0; slot < pb.slots(); ++slot) {
      if (!pb.valid[slot]) continue;
      for (std::size_t v = 0; v < V; ++v) {
        worst = std::max(worst, static_cast<double>(std::abs(packed[row * V + v] - padded[slot * V + v])));
      }
      ++row;
    }
    if (row != packed.shape()[0]) return {false, "row count mismatch in set " + std::to_string(set)};
    tokens += row;
  }
  return {worst < 1e-5, "50 sets, " + std::to_string(tokens) + " tokens, max |diff| = " + fmt("%.3g", worst) +
                            " (limit 1e-5)"};
}

// ---------------------------------------------------------------------------
// 2. Analytic gradients agree with central differences.

Outcome gradient_fidelity() {
  ModelConfig c = model_preset("preset-tiny");
  EncoderModel<double> m = EncoderModel<float>(c, 7).cast<double>();
  Rng rng(202);
  auto docs = random_docs(rng, 2, 16, 24, c.vocab_size);
  const PackedBatch batch = pack(docs);
  std::vector<std::int32_t> targets(batch.num_tokens(), ops::kIgnoreIndex);
  for (std::size_t i = 0; i < targets.size(); i += 3) targets[i] = batch.token_ids[i];
  auto loss_of = [&](Tape<double>& tape) {
    return ops::cross_entropy_with_ignore(tape, forward_mlm(tape, m, batch), targets);
  };
  Tape<double> tape;
  Tensor<double> loss = loss_of(tape);
  tape.backward(loss);

  const double h = 1e-3;
  double worst = 0;
  int checked = 0, nonzero = 0;
  auto check = [&](Tensor<double>& t, std::size_t i) {
    const double g = t.grad()[i];
    const double saved = t[i];
    t[i] = saved + h;
    Tape<double> tp(false);
    const double fp = loss_of(tp).item();
    t[i] = saved - h;
    Tape<double> tm(false);
    const double fm = loss_of(tm).item();
    t[i] = saved;
    const double num = (fp - fm) / (2 * h);
    // Gradients below 1e-6 are compared on an absolute 1e-9 scale.
    const double err = std::abs(g - num) / std::max({std::abs(g), std::abs(num), 1e-6});
    worst = std::max(worst, err);
    ++checked;
    if (std::abs(g) > 1e-6) ++nonzero;
  };
  for (auto& e : m.params().entries()) {
    const bool embedding = e.tensor.shape().size() == 2 &&
                           e.tensor.shape()[0] == static_cast<std::size_t>(c.vocab_size);
    for (int s = 0; s < 5; ++s) {
      if (embedding) {
        // Rows of tokens present in the batch; other rows have zero gradient.
        const std::size_t row = static_cast<std::size_t>(batch.token_ids[rng.below(batch.num_tokens())]);
        check(e.tensor, row * e.tensor.shape()[1] + rng.below(e.tensor.shape()[1]));
      } else {
        check(e.tensor, rng.below(e.tensor.numel()));
      }
    }
  }
  const bool pass = checked >= 200 && worst < 1e-3;
  return {pass, std::to_string(checked) + " parameters (" + std::to_string(nonzero) +
                    " with |g| > 1e-6), max rel error = " + fmt("%.3g", worst) + " (limit 1e-3)"};
}

// ---------------------------------------------------------------------------
// 3. Scheduler values match the closed form.

Outcome scheduler_exactness() {
  std::vector<std::string> problems;
  if (kBaseRecipe.peak_lr != 3e-4) problems.push_back("base peak");
  if (kLargeRecipe.peak_lr != 5e-5) problems.push_back("large peak");

  const std::int64_t D = 4500;
  Rng rng(303);
  double worst = 0;
  auto compare = [&](const SchedulerSpec& s, const std::function<double(std::int64_t)>& oracle,
                     std::vector<std::int64_t> steps, const char* name) {
    while (steps.size() < 1000) steps.push_back(static_cast<std::int64_t>(rng.below(D + 1)));
    for (auto k : steps) {
      const double diff = std::abs(lr_at(s, k) - oracle(k));
      worst = std::max(worst, diff / s.peak_lr);
      if (diff > 4 * std::numeric_limits<double>::epsilon() * s.peak_lr) {
        problems.push_back(std::string(name) + " step " + std::to_string(k));
        return;
      }
    }
  };

  const double pb = kBaseRecipe.peak_lr;
  const SchedulerSpec base = full_decay_schedule(pb, D);
  compare(base, [&](std::int64_t k) { return pb * (1.0 - std::sqrt(double(k) / double(D))); },
          {0, 1, D - 1, D}, "base");
  if (lr_at(base, 0) != pb) problems.push_back("base does not start at peak");
  if (lr_at(base, D) != 0.0) problems.push_back("base does not end at 0");

  const double pl = kLargeRecipe.peak_lr;
  const SchedulerSpec large = constant_then_decay_schedule(pl, D);
  const std::int64_t C = 3000;  // two thirds of 4500
  auto large_oracle = [&](std::int64_t k) {
    if (k < C) return pl;
    return pl * (1.0 - std::sqrt(double(k - C) / double(D - C)));
  };
  compare(large, large_oracle, {0, C - 1, C, C + 1, D - 1, D}, "large");
  if (lr_at(large, C - 1) != pl || lr_at(large, C) != pl) problems.push_back("large not continuous at the constant/decay boundary");
  if (lr_at(large, D) != 0.0) problems.push_back("large does not end at 0");

  // Full warmup-stable-decay shape: continuous at both stage boundaries.
  SchedulerSpec wsd;
  wsd.peak_lr = pb;
  wsd.warmup_steps = 100;
  wsd.stable_steps = 400;
  wsd.decay_steps = 500;
  if (lr_at(wsd, 0) != 0.0) problems.push_back("warmup does not start at 0");
  if (lr_at(wsd, 100) != pb || lr_at(wsd, 500) != pb) problems.push_back("stage boundaries not at peak");
  if (std::abs(lr_at(wsd, 99) - pb * 0.99) > 1e-18) problems.push_back("warmup not linear");
  if (lr_at(wsd, 1000) != 0.0) problems.push_back("wsd does not end at 0");

  std::string detail = "2 x 1000 steps, max rel diff = " + fmt("%.3g", worst) + ", peaks 3e-4/5e-5";
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

// ---------------------------------------------------------------------------
// 4. Masking statistics.

Outcome masking_statistics() {
  const int V = 512;
  std::string detail;
  bool pass = true;
  for (double p : {0.30, 0.15}) {
    Rng data(404), rng(405);
    MaskingSpec spec;
    spec.mlm_probability = p;
    std::size_t eligible = 0, selected = 0, masked = 0, randomized = 0, kept = 0, special_hits = 0, bad_random = 0;
    while (eligible < 120000) {
      auto docs = random_docs(data, 16, 8, 200, V);
      for (auto& d : docs) {
        d.insert(d.begin(), Vocab::kCls);
        d.push_back(Vocab::kSep);
      }
      const PackedBatch b = pack(docs);
      const MaskedBatch mb = apply_masking(b, spec, V, rng);
      for (std::size_t i = 0; i < b.num_tokens(); ++i) {
        const auto orig = b.token_ids[i];
        const bool sel = mb.targets[i] != ops::kIgnoreIndex;
        if (orig == Vocab::kCls || orig == Vocab::kSep) {
          if (sel || mb.batch.token_ids[i] != orig) ++special_hits;
          continue;
        }
        ++eligible;
        if (!sel) continue;
        ++selected;
        const auto now = mb.batch.token_ids[i];
        if (now == Vocab::kMask) {
          ++masked;
        } else if (now == orig) {
          ++kept;  // a random draw equal to the original also lands here
        } else {
          ++randomized;
          if (now < Vocab::kNumReserved || now >= V) ++bad_random;
        }
      }
    }
    const double sf = double(selected) / double(eligible);
    const double fm = double(masked) / double(selected);
    const double fr = double(randomized) / double(selected);
    const double fk = double(kept) / double(selected);
    const bool ok = std::abs(sf - p) <= 0.01 && std::abs(fm - 0.8) <= 0.02 && std::abs(fr - 0.1) <= 0.02 &&
                    std::abs(fk - 0.1) <= 0.02 && special_hits == 0 && bad_random == 0;
    pass = pass && ok;
    char buf[200];
    std::snprintf(buf, sizeof buf, "%sp=%.2f: %zu eligible, selected %.4f, split %.3f/%.3f/%.3f, CLS/SEP hits %zu",
                  detail.empty() ? "" : "; ", p, eligible, sf, fm, fr, fk, special_hits);
    detail += buf;
  }
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// 5. Metric oracles.

using Chunk = std::tuple<std::size_t, std::size_t, std::size_t, std::string>;

// Chunk rules of the seqeval reference (IOB2, default lenient mode).
bool chunk_ends(char prev, char tag, const std::string& prev_type, const std::string& type) {
  if (prev == 'B' && (tag == 'B' || tag == 'O')) return true;
  if (prev == 'I' && (tag == 'B' || tag == 'O')) return true;
  return prev != 'O' && prev_type != type;
}

bool chunk_starts(char prev, char tag, const std::string& prev_type, const std::string& type) {
  if (tag == 'B') return true;
  if (prev == 'O' && tag == 'I') return true;
  return tag != 'O' && prev_type != type;
}

std::set<Chunk> oracle_chunks(const std::vector<std::vector<std::string>>& seqs) {
  std::set<Chunk> out;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    char prev = 'O';
    std::string prev_type;
    std::size_t begin = 0;
    for (std::size_t i = 0; i <= seqs[s].size(); ++i) {
      const std::string t = i < seqs[s].size() ? seqs[s][i] : "O";
      const char tag = t[0];
      const std::string type = t.size() > 2 ? t.substr(2) : "";
      if (chunk_ends(prev, tag, prev_type, type)) out.emplace(s, begin, i - 1, prev_type);
      if (chunk_starts(prev, tag, prev_type, type)) begin = i;
      prev = tag;
      prev_type = type;
    }
  }
  return out;
}

Outcome metric_oracles() {
  Rng rng(505);
  const std::vector<std::string> tags{"O", "B-DRUG", "I-DRUG", "B-PROB", "I-PROB"};
  int entity_mismatch = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::vector<std::string>> t, p;
    const std::size_t n_seq = 1 + rng.below(4);
    for (std::size_t s = 0; s < n_seq; ++s) {
      const std::size_t len = rng.below(12);
      std::vector<std::string> a, b;
      for (std::size_t i = 0; i < len; ++i) {
        a.push_back(tags[rng.below(tags.size())]);
        b.push_back(rng.uniform() < 0.6 ? a.back() : tags[rng.below(tags.size())]);
      }
      t.push_back(a);
      p.push_back(b);
    }
    const auto ts = oracle_chunks(t), ps = oracle_chunks(p);
    std::vector<Chunk> both;
    std::set_intersection(ts.begin(), ts.end(), ps.begin(), ps.end(), std::back_inserter(both));
    const double tp = double(both.size());
    const double prec = ps.empty() ? 0.0 : tp / double(ps.size());
    const double rec = ts.empty() ? 0.0 : tp / double(ts.size());
    const double f1 = prec + rec == 0 ? 0.0 : 2 * prec * rec / (prec + rec);
    const auto got = entity_f1(t, p);
    if (got.precision != prec || got.recall != rec || got.f1 != f1) ++entity_mismatch;
  }

  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int K = 2 + static_cast<int>(rng.below(4));
    const std::size_t n = 1 + rng.below(30);
    std::vector<int> yt(n), yp(n);
    std::vector<std::vector<double>> cm(K, std::vector<double>(K, 0));
    for (std::size_t i = 0; i < n; ++i) {
      yt[i] = static_cast<int>(rng.below(K));
      yp[i] = rng.uniform() < 0.5 ? yt[i] : static_cast<int>(rng.below(K));
      cm[yt[i]][yp[i]] += 1;
    }
    double expected = 0;
    for (int k = 0; k < K; ++k) {
      double row = 0, col = 0;
      for (int j = 0; j < K; ++j) {
        row += cm[k][j];
        col += cm[j][k];
      }
      const double P = col > 0 ? cm[k][k] / col : 0;
      const double R = row > 0 ? cm[k][k] / row : 0;
      const double F = P + R > 0 ? 2 * P * R / (P + R) : 0;
      expected += F * row / double(n);
    }
    worst = std::max(worst, std::abs(weighted_f1(yt, yp) - expected));
  }
  return {entity_mismatch == 0 && worst <= 1e-9,
          "entity F1: " + std::to_string(entity_mismatch) + "/1000 mismatches; weighted F1: max |diff| = " +
              fmt("%.3g", worst) + " over 100 instances"};
}

// ---------------------------------------------------------------------------
// 6. Two-phase adaptation: mixing in phase 1 limits forgetting in phase 2.

struct Domain {
  std::int32_t first;
  std::int32_t size;
  std::vector<std::int32_t> next;  // preferred successor of each token
};

Domain make_domain(std::int32_t first, std::int32_t size, Rng& rng) {
  Domain d{first, size, {}};
  for (std::int32_t i = 0; i < size; ++i) d.next.push_back(i);
  rng.shuffle(d.next);
  return d;
}

std::vector<TokenIds> domain_docs(const Domain& d, std::size_t n, std::size_t len, Rng& rng) {
  std::vector<TokenIds> docs(n);
  for (auto& doc : docs) {
    doc.push_back(Vocab::kCls);
    std::int32_t cur = static_cast<std::int32_t>(rng.below(d.size));
    for (std::size_t i = 0; i < len; ++i) {
      doc.push_back(d.first + cur);
      cur = rng.uniform() < 0.85 ? d.next[cur] : static_cast<std::int32_t>(rng.below(d.size));
    }
    doc.push_back(Vocab::kSep);
  }
  return docs;
}

struct ForgettingRun {
  double a_p1, b_p1, a_p2, b_p2;
};

ForgettingRun two_phase(bool mixture, const CorpusSet& corpora, const std::vector<TokenIds>& val_a,
                        const std::vector<TokenIds>& val_b, const ModelConfig& config) {
  PhasePlan plan;
  plan.model = config;
  plan.seed = 6;
  PhaseSpec p1;
  p1.name = mixture ? "mixture" : "a-only";
  if (mixture) {
    p1.sources = {{"a", 8.0, 0}, {"b", 8.0, 0}};
  } else {
    p1.sources = {{"a", 16.0, 0}};
  }
  p1.masking.mlm_probability = 0.30;
  p1.schedule = {2e-3, 20, ScheduleKind::stable, 2.0 / 3.0};
  p1.start_from.kind = StartFrom::Kind::fresh;
  p1.batch_tokens = 2048;
  p1.log_interval = 1000000;
  PhaseSpec p2;
  p2.name = "b-decay";
  p2.sources = {{"b", 3.0, 0}};
  p2.masking.mlm_probability = 0.15;
  p2.schedule = {2e-3, 0, ScheduleKind::one_minus_sqrt, 2.0 / 3.0};
  p2.start_from.kind = StartFrom::Kind::previous;
  p2.batch_tokens = 2048;
  p2.log_interval = 1000000;
  plan.phases = {p1, p2};

  MaskingSpec eval;
  eval.mlm_probability = 0.15;
  TrainState state = TrainState::fresh(config, plan.seed);
  ForgettingRun r{};
  run_phase(plan, 0, state, corpora);
  r.a_p1 = evaluate_mlm_loss(state.model, val_a, eval, 99);
  r.b_p1 = evaluate_mlm_loss(state.model, val_b, eval, 99);
  run_phase(plan, 1, state, corpora);
  r.a_p2 = evaluate_mlm_loss(state.model, val_a, eval, 99);
  r.b_p2 = evaluate_mlm_loss(state.model, val_b, eval, 99);
  return r;
}

Outcome two_phase_forgetting() {
  ModelConfig c = model_preset("preset-tiny");
  Rng rng(606);
  const Domain A = make_domain(Vocab::kNumReserved, 120, rng);
  const Domain B = make_domain(Vocab::kNumReserved + 120, 120, rng);
  auto a = std::make_shared<Corpus>(Corpus{"a", domain_docs(A, 300, 62, rng)});
  auto b = std::make_shared<Corpus>(Corpus{"b", domain_docs(B, 300, 62, rng)});
  const auto val_a = domain_docs(A, 80, 62, rng);
  const auto val_b = domain_docs(B, 80, 62, rng);
  const CorpusSet corpora{{"a", a}, {"b", b}};

  const ForgettingRun mix = two_phase(true, corpora, val_a, val_b, c);
  const ForgettingRun abl = two_phase(false, corpora, val_a, val_b, c);
  const double deg_mix = (mix.a_p2 - mix.a_p1) / mix.a_p1;
  const double deg_abl = (abl.a_p2 - abl.a_p1) / abl.a_p1;
  const bool pass = mix.b_p2 < mix.b_p1 && deg_mix < 0.10 && deg_abl > deg_mix;
  char buf[400];
  std::snprintf(buf, sizeof buf,
                "mixture: B %.4f -> %.4f, A %.4f -> %.4f (%+.2f%%); A-only ablation: A %.4f -> %.4f (%+.2f%%)",
                mix.b_p1, mix.b_p2, mix.a_p1, mix.a_p2, 100 * deg_mix, abl.a_p1, abl.a_p2, 100 * deg_abl);
  return {pass, buf};
}

// ---------------------------------------------------------------------------
// 7. Throughput directionality.

double kt(const EncoderModel<float>& model, const WorkloadSpec& w, ExecMode mode, int runs) {
  const auto docs = generate_workload(w, model.config().vocab_size);
  return measure(model, "m", docs, w, mode, {runs, 1, 8}, w.max_len).ktok_per_s;
}

Outcome throughput_directionality() {
  std::vector<std::string> problems;
  std::string detail;

  // Fixed vs variable at the 512 class, both execution modes.
  ModelConfig tiny = model_preset("preset-tiny");
  tiny.dropout = 0;
  EncoderModel<float> model(tiny, 1);
  WorkloadSpec fixed;
  fixed.n_docs = 256;
  fixed.max_len = 512;
  fixed.seed = 7;
  WorkloadSpec variable = fixed;
  variable.length_mode = LengthMode::normal;
  const double uf = kt(model, fixed, ExecMode::unpadded, 3), uv = kt(model, variable, ExecMode::unpadded, 3);
  const double pf = kt(model, fixed, ExecMode::padded, 3), pv = kt(model, variable, ExecMode::padded, 3);
  if (uv < 0.9 * uf) problems.push_back("unpadded variable < 0.9x fixed");
  if (pv > 0.6 * pf) problems.push_back("padded variable > 0.6x fixed");
  char buf[400];
  std::snprintf(buf, sizeof buf, "unpadded var/fixed %.2f (>= 0.9), padded var/fixed %.2f (<= 0.6)", uv / uf,
                pv / pf);
  detail += buf;

  // Per-token time growth from L0 to 8 L0, wall clock at desk scale.
  auto per_token_ratio = [&](int global_period) {
    ModelConfig c = tiny;
    c.n_layers = 3;
    c.max_seq_len = 2048;
    c.window = 128;
    c.global_period = global_period;
    EncoderModel<float> m(c, 2);
    WorkloadSpec s0;
    s0.n_docs = 32;
    s0.max_len = 256;
    WorkloadSpec s1;
    s1.n_docs = 4;
    s1.max_len = 2048;
    return kt(m, s0, ExecMode::unpadded, 3) / kt(m, s1, ExecMode::unpadded, 3);
  };
  const double alt = per_token_ratio(3), glob = per_token_ratio(1);
  if (!(alt < glob)) problems.push_back("alternating ratio not below all-global ratio");
  std::snprintf(buf, sizeof buf, "; wall clock 2048/256 per-token ratio: alternating %.2f < all-global %.2f", alt,
                glob);
  detail += buf;

  // FLOP model at full-size dimensions, 8192 vs 512 tokens.
  auto flop_ratio = [](ModelConfig c) {
    return (count_attention_flops(c, 8192).total() / 8192.0) / (count_attention_flops(c, 512).total() / 512.0);
  };
  ModelConfig mb = model_preset("modernbert-base");
  const double f_alt = flop_ratio(mb);
  mb.global_period = 1;
  const double f_glob = flop_ratio(mb);
  if (!(f_alt <= 2.5 && f_glob > 2.5)) problems.push_back("FLOP model ratios on the wrong side of 2.5");
  std::snprintf(buf, sizeof buf, "; FLOP model 8192/512: alternating %.2f <= 2.5 < all-global %.2f", f_alt, f_glob);
  detail += buf;
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

// ---------------------------------------------------------------------------
// 8. Fine-tuning protocol on a separable NER task.

Outcome finetune_protocol() {
  Rng rng(808);
  const std::vector<std::string> drugs{"aspirin", "heparin", "insulin", "warfarin"};
  const std::vector<std::string> problems{"sepsis", "anemia", "asthma", "stroke"};
  const std::vector<std::string> other{"patient", "was", "given", "for", "with", "noted", "the", "daily"};
  auto record = [&] {
    NerRecord r;
    const std::size_t n = 4 + rng.below(6);
    for (std::size_t i = 0; i < n; ++i) {
      const double u = rng.uniform();
      if (u < 0.2) {
        r.tokens.push_back(drugs[rng.below(drugs.size())]);
        r.tags.push_back("B-DRUG");
      } else if (u < 0.35) {
        r.tokens.push_back(problems[rng.below(problems.size())]);
        r.tokens.push_back("syndrome");
        r.tags.push_back("B-PROB");
        r.tags.push_back("I-PROB");
      } else {
        r.tokens.push_back(other[rng.below(other.size())]);
        r.tags.push_back("O");
      }
    }
    return r;
  };
  std::vector<NerRecord> train, val, test;
  for (int i = 0; i < 200; ++i) train.push_back(record());
  for (int i = 0; i < 50; ++i) val.push_back(record());
  for (int i = 0; i < 50; ++i) test.push_back(record());

  std::vector<std::string> texts;
  for (const auto& r : train) {
    std::string t;
    for (const auto& w : r.tokens) t += (t.empty() ? "" : " ") + w;
    texts.push_back(t);
  }
  ModelConfig c = model_preset("preset-tiny");
  c.vocab_size = 96;
  c.max_seq_len = 64;
  c.window = 32;
  const Vocab vocab = train_vocab(texts, static_cast<std::size_t>(c.vocab_size));

  // Brief MLM pretraining on the task text.
  auto corpus = std::make_shared<Corpus>(Corpus{"text", {}});
  for (const auto& t : texts) corpus->docs.push_back(vocab.encode(t, true));
  PhasePlan plan;
  plan.model = c;
  plan.seed = 8;
  PhaseSpec ph;
  ph.name = "warm";
  ph.sources = {{"text", 4.0, 0}};
  ph.schedule = {1e-3, 10, ScheduleKind::one_minus_sqrt, 2.0 / 3.0};
  ph.start_from.kind = StartFrom::Kind::fresh;
  ph.batch_tokens = 512;
  plan.phases = {ph};
  TrainState state = TrainState::fresh(c, plan.seed);
  run_phase(plan, 0, state, {{"text", corpus}});

  TaskSpec task;
  task.name = "toy_ner";
  task.kind = TaskKind::token_bio;
  std::vector<std::vector<std::string>> all_tags;
  for (const auto* split : {&train, &val, &test}) {
    for (const auto& r : *split) all_tags.push_back(r.tags);
  }
  task.tag_names = make_tagset(all_tags);
  task.num_classes = static_cast<int>(task.tag_names.size());
  task.lr_grid = {3e-4, 1e-3, 3e-3};
  DatasetSplits data;
  auto convert = [&](const std::vector<NerRecord>& in, std::vector<Example>& out) {
    for (const auto& r : in) out.push_back(align_ner_example(vocab, r.tokens, r.tags, task.tag_names, 64));
  };
  convert(train, data.train);
  convert(val, data.val);
  convert(test, data.test);

  const MetricReport rep = finetune(state.model, task, data, "toy");
  std::string detail = "lr " + fmt("%g", rep.chosen_lr) + ", per-seed entity F1";
  std::vector<double> scores;
  for (const auto& r : rep.runs) {
    detail += " " + fmt("%.4f", r.test);
    scores.push_back(r.test);
  }
  detail += ", median " + fmt("%.4f", rep.median);
  const bool median_ok = median({3.0, 1.0, 2.0}) == 2.0 && median({4.0, 1.0, 3.0, 2.0}) == 2.5 &&
                         rep.median == median(scores);
  detail += median_ok ? "; median odd/even ok" : "; median op wrong";
  const bool pass = rep.runs.size() == 5 && rep.grid.size() == 3 && rep.median >= 0.95 && median_ok;
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// 9. Checkpoint resume is bitwise identical.

Outcome checkpoint_resume() {
  ModelConfig c = model_preset("preset-tiny");
  Rng rng(909);
  auto a = std::make_shared<Corpus>(Corpus{"a", random_docs(rng, 120, 10, 60, c.vocab_size)});
  auto b = std::make_shared<Corpus>(Corpus{"b", random_docs(rng, 120, 10, 60, c.vocab_size)});
  const CorpusSet corpora{{"a", a}, {"b", b}};
  PhasePlan plan;
  plan.model = c;
  plan.seed = 9;
  PhaseSpec p1;
  p1.name = "one";
  p1.sources = {{"a", 1.0, 0}, {"b", 1.0, 0}};
  p1.schedule = {1e-3, 3, ScheduleKind::stable, 2.0 / 3.0};
  p1.start_from.kind = StartFrom::Kind::fresh;
  p1.batch_tokens = 512;
  p1.weight_decay = 0.01;
  PhaseSpec p2 = p1;
  p2.name = "two";
  p2.sources = {{"b", 1.0, 0}};
  p2.masking.mlm_probability = 0.15;
  p2.schedule.kind = ScheduleKind::one_minus_sqrt;
  p2.start_from.kind = StartFrom::Kind::previous;
  plan.phases = {p1, p2};

  TrainState full = TrainState::fresh(c, plan.seed);
  std::vector<LossRow> ref;
  for (std::size_t i = 0; i < 2; ++i) {
    auto r = run_phase(plan, i, full, corpora);
    ref.insert(ref.end(), r.log.begin(), r.log.end());
  }

  const std::int64_t k = 7;
  const auto path = std::filesystem::temp_directory_path() / "clinenc_acceptance_resume.ckpt";
  std::vector<LossRow> got;
  {
    TrainState s = TrainState::fresh(c, plan.seed);
    RunOptions stop;
    stop.stop_at_phase_step = k;
    auto r = run_phase(plan, 0, s, corpora, stop);
    got.insert(got.end(), r.log.begin(), r.log.end());
    save_checkpoint(path, s.to_checkpoint());
  }
  TrainState s = TrainState::from_checkpoint(load_checkpoint(path));
  std::filesystem::remove(path);
  for (std::size_t i = 0; i < 2; ++i) {
    auto r = run_phase(plan, i, s, corpora);
    got.insert(got.end(), r.log.begin(), r.log.end());
  }
  const std::string want_csv = loss_log_csv(ref), got_csv = loss_log_csv(got);
  bool params_equal = true;
  const auto& pa = full.model.params().entries();
  const auto& pb = s.model.params().entries();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const auto da = pa[i].tensor.data(), db = pb[i].tensor.data();
    if (!std::equal(da.begin(), da.end(), db.begin(), db.end())) params_equal = false;
  }
  return {want_csv == got_csv && params_equal,
          "saved at step " + std::to_string(k) + ", resumed through " + std::to_string(ref.size()) +
              " steps over 2 phases; loss log " + (want_csv == got_csv ? "identical" : "DIFFERS") +
              ", final parameters " + (params_equal ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"padded/packed equivalence", padded_packed_equivalence},
      {"gradient fidelity", gradient_fidelity},
      {"scheduler exactness", scheduler_exactness},
      {"masking statistics", masking_statistics},
      {"metric oracles", metric_oracles},
      {"two-phase adaptation", two_phase_forgetting},
      {"throughput directionality", throughput_directionality},
      {"fine-tune protocol", finetune_protocol},
      {"checkpoint resume", checkpoint_resume},
  };
  std::vector<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::stoul(argv[i]));
  if (selected.empty()) {
    for (std::size_t i = 1; i <= criteria.size(); ++i) selected.push_back(i);
  }
  int failed = 0;
  for (std::size_t id : selected) {
    if (id < 1 || id > criteria.size()) {
      std::cerr << "no criterion " << id << "\n";
      return 2;
    }
    const auto& [name, fn] = criteria[id - 1];
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s [%zu] %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
