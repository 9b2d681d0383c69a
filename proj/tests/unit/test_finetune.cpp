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

#include <filesystem>
#include <fstream>
#include <set>
#include <tuple>

#include "clinenc/error.hpp"
#include "clinenc/finetune.hpp"
#include "clinenc/ops.hpp"
#include "test_util.hpp"

namespace clinenc {
namespace {

using Tags = std::vector<std::string>;

// Enumerates every (start, end, type) triple and keeps those that the
// default-mode transition table admits as a complete chunk.
std::set<std::tuple<std::size_t, std::size_t, std::size_t, std::string>> brute_spans(
    const std::vector<Tags>& seqs) {
  std::set<std::tuple<std::size_t, std::size_t, std::size_t, std::string>> out;
  for (std::size_t q = 0; q < seqs.size(); ++q) {
    const Tags& t = seqs[q];
    auto type = [&](std::size_t i) { return t[i] == "O" ? std::string() : t[i].substr(2); };
    auto opens = [&](std::size_t i) {
      if (t[i] == "O") return false;
      if (t[i][0] == 'B') return true;
      return i == 0 || t[i - 1] == "O" || type(i - 1) != type(i);
    };
    for (std::size_t s = 0; s < t.size(); ++s) {
      for (std::size_t e = s; e < t.size(); ++e) {
        if (!opens(s)) continue;
        bool ok = true;
        for (std::size_t k = s + 1; k <= e; ++k) ok = ok && t[k] == "I-" + type(s);
        const bool closed = e + 1 == t.size() || t[e + 1] != "I-" + type(s);
        if (ok && closed) out.emplace(q, s, e, type(s));
      }
    }
  }
  return out;
}

Tags random_tags(Rng& rng, std::size_t n) {
  static const Tags pool{"O", "O", "B-x", "I-x", "B-y", "I-y"};
  Tags t(n);
  for (auto& s : t) s = pool[rng.below(pool.size())];
  return t;
}

TEST(Bio, Examples) {
  auto a = bio_extract(Tags{"B-age", "I-age", "O"});
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0], (EntitySpan{0, 1, "age"}));
  EXPECT_EQ(bio_extract(Tags{"I-x", "I-x"}), (std::vector<EntitySpan>{{0, 1, "x"}}));
  EXPECT_EQ(bio_extract(Tags{"B-x", "B-x"}), (std::vector<EntitySpan>{{0, 0, "x"}, {1, 1, "x"}}));
  EXPECT_EQ(bio_extract(Tags{"B-x", "I-y"}), (std::vector<EntitySpan>{{0, 0, "x"}, {1, 1, "y"}}));
}

TEST(Bio, MalformedTagNamesPosition) {
  try {
    bio_extract(Tags{"O", "B-x", "Q-x"});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("position 2"), std::string::npos);
  }
  EXPECT_THROW(bio_extract(Tags{"B-"}), DataError);
  EXPECT_THROW(bio_extract(Tags{"B"}), DataError);
}

TEST(Bio, SpansSortedDisjointInBounds) {
  Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    auto t = random_tags(rng, 1 + rng.below(20));
    auto spans = bio_extract(t);
    for (std::size_t k = 0; k < spans.size(); ++k) {
      EXPECT_LE(spans[k].start, spans[k].end);
      EXPECT_LT(spans[k].end, t.size());
      if (k) EXPECT_GT(spans[k].start, spans[k - 1].end);
    }
  }
}

TEST(EntityF1, MatchesBruteForceOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<Tags> truth, pred;
    const std::size_t n_seq = 1 + rng.below(3);
    for (std::size_t s = 0; s < n_seq; ++s) {
      const std::size_t n = 1 + rng.below(12);
      truth.push_back(random_tags(rng, n));
      pred.push_back(random_tags(rng, n));
    }
    auto ts = brute_spans(truth), ps = brute_spans(pred);
    std::size_t tp = 0;
    for (const auto& s : ps) tp += ts.count(s);
    const double p = ps.empty() ? 0.0 : double(tp) / ps.size();
    const double r = ts.empty() ? 0.0 : double(tp) / ts.size();
    const double f = p + r == 0 ? 0.0 : 2 * p * r / (p + r);
    auto got = entity_f1(truth, pred);
    EXPECT_EQ(got.precision, p);
    EXPECT_EQ(got.recall, r);
    EXPECT_EQ(got.f1, f);
    auto swapped = entity_f1(pred, truth);
    EXPECT_EQ(swapped.precision, got.recall);
    EXPECT_EQ(swapped.recall, got.precision);
    EXPECT_DOUBLE_EQ(swapped.f1, got.f1);
  }
}

TEST(EntityF1, TrivialCases) {
  std::vector<Tags> t{{"B-a", "I-a", "O", "B-b"}};
  EXPECT_EQ(entity_f1(t, t).f1, 1.0);
  std::vector<Tags> none{{"O", "O", "O", "O"}};
  EXPECT_EQ(entity_f1(t, none).f1, 0.0);
  std::vector<Tags> shorter{{"O"}};
  EXPECT_THROW(entity_f1(t, shorter), std::invalid_argument);
}

// Per-class F1 = 2PR/(P+R) from an explicit confusion matrix.
double hand_weighted_f1(const std::vector<int>& yt, const std::vector<int>& yp, int k) {
  std::vector<std::vector<double>> cm(k, std::vector<double>(k, 0));
  for (std::size_t i = 0; i < yt.size(); ++i) cm[yt[i]][yp[i]] += 1;
  double total = 0, acc = 0;
  for (int c = 0; c < k; ++c) {
    double row = 0, col = 0;
    for (int j = 0; j < k; ++j) {
      row += cm[c][j];
      col += cm[j][c];
    }
    const double prec = col == 0 ? 0 : cm[c][c] / col;
    const double rec = row == 0 ? 0 : cm[c][c] / row;
    const double f = prec + rec == 0 ? 0 : 2 * prec * rec / (prec + rec);
    total += row;
    acc += row * f;
  }
  return total == 0 ? 0 : acc / total;
}

TEST(WeightedF1, HandExample) {
  std::vector<int> t{0, 0, 1}, p{0, 1, 1};
  EXPECT_NEAR(weighted_f1(t, p), 2.0 / 3.0, 1e-12);
  EXPECT_EQ(weighted_f1(t, t), 1.0);
}

TEST(WeightedF1, MatchesConfusionMatrixOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(4));
    const std::size_t n = 1 + rng.below(20);
    std::vector<int> t(n), p(n);
    for (auto& v : t) v = static_cast<int>(rng.below(k));
    for (auto& v : p) v = static_cast<int>(rng.below(k));
    const double got = weighted_f1(t, p);
    EXPECT_NEAR(got, hand_weighted_f1(t, p, k), 1e-9);
    EXPECT_GE(got, 0.0);
    EXPECT_LE(got, 1.0);
  }
}

TEST(WeightedF1, SingleClassIsPlainF1) {
  std::vector<int> t{1, 1, 1, 1}, p{1, 0, 1, 1};
  EXPECT_NEAR(weighted_f1(t, p), 2 * 3.0 / (2 * 3.0 + 0 + 1), 1e-12);
}

TEST(WeightedF1, MultiLabel) {
  std::vector<std::vector<std::uint8_t>> zeros(5, std::vector<std::uint8_t>(14, 0));
  EXPECT_EQ(weighted_f1_multilabel(zeros, zeros), 0.0);
  std::vector<std::vector<std::uint8_t>> t{{1, 0}, {1, 1}, {0, 1}}, p{{1, 0}, {0, 1}, {1, 1}};
  // label 0: tp 1, fp 1, fn 1 -> 0.5 (support 2); label 1: tp 2 -> 1.0 (support 2)
  EXPECT_NEAR(weighted_f1_multilabel(t, p), 0.75, 1e-12);
  EXPECT_EQ(weighted_f1_multilabel(t, t), 1.0);
}

TEST(Median, EvenOddSingleEmpty) {
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({1, 2, 3, 4}), 2.5);
  EXPECT_EQ(median({7}), 7.0);
  EXPECT_EQ(median({1, 2, 3, 4, 5}), 3.0);
  EXPECT_THROW(median({}), std::invalid_argument);
}

TEST(Presets, LearningRates) {
  EXPECT_EQ(finetune_lr_preset("chemprot", "base"), 5e-5);
  EXPECT_EQ(finetune_lr_preset("chemprot", "large"), 2e-5);
  EXPECT_EQ(finetune_lr_preset("phenotype", "base"), 8e-5);
  EXPECT_EQ(finetune_lr_preset("phenotype", "large"), 5e-5);
  EXPECT_EQ(finetune_lr_preset("cos", "base"), 1e-4);
  EXPECT_EQ(finetune_lr_preset("cos", "large"), 1.5e-4);
  EXPECT_EQ(finetune_lr_preset("social_history", "base"), 1.5e-4);
  EXPECT_EQ(finetune_lr_preset("social_history", "large"), 2e-4);
  EXPECT_EQ(finetune_lr_preset("deid", "base"), 7e-5);
  EXPECT_EQ(finetune_lr_preset("deid", "large"), 7e-5);
  EXPECT_THROW(finetune_lr_preset("mednli", "base"), ConfigError);
  TaskSpec defaults;
  EXPECT_EQ(defaults.epochs, 10);
  EXPECT_EQ(defaults.batch_size, 16);
  EXPECT_EQ(defaults.weight_decay, 1e-5);
  EXPECT_EQ(defaults.seeds.size(), 5u);
  EXPECT_EQ(defaults.patience, 3);
}

TEST(TaskSpecValidate, Problems) {
  TaskSpec t;
  t.lr_grid.clear();
  t.seeds = {1, 1};
  EXPECT_THROW(t.validate(), ConfigError);
}

Vocab word_vocab() {
  std::vector<std::string> corpus{"alpha beta gamma delta epsilon zeta eta theta", "aspirin dose mg daily"};
  return train_vocab(corpus, vocab_floor(corpus) + 10);
}

TEST(Alignment, FirstSubwordCarriesLabelAndRoundTrips) {
  Vocab v = word_vocab();
  Tags tags{"B-drug", "O", "B-dose", "I-dose", "O"};
  std::vector<std::string> words{"aspirin", "was", "81", "mg", "daily"};
  auto tagset = make_tagset({tags});
  EXPECT_EQ(tagset, (Tags{"O", "B-dose", "B-drug", "I-dose"}));
  auto ex = align_ner_example(v, words, tags, tagset, 64);
  EXPECT_EQ(ex.ids.front(), Vocab::kCls);
  EXPECT_EQ(ex.ids.back(), Vocab::kSep);
  ASSERT_EQ(ex.word_starts.size(), words.size());
  std::size_t labelled = 0;
  for (auto t : ex.token_targets) labelled += t != ops::kIgnoreIndex;
  EXPECT_EQ(labelled, words.size());
  Tags rebuilt;
  for (auto w : ex.word_starts) rebuilt.push_back(tagset[ex.token_targets[w]]);
  EXPECT_EQ(rebuilt, tags);
  EXPECT_EQ(bio_extract(rebuilt), bio_extract(tags));
  // Non-first subwords are ignored.
  for (std::size_t i = 1; i + 1 < ex.ids.size(); ++i) {
    const bool is_start = std::find(ex.word_starts.begin(), ex.word_starts.end(), i) != ex.word_starts.end();
    EXPECT_EQ(ex.token_targets[i] != ops::kIgnoreIndex, is_start);
  }
}

TEST(Alignment, TruncationDropsWholeWords) {
  Vocab v = word_vocab();
  Tags tags(20, "O");
  std::vector<std::string> words(20, "theta");
  auto ex = align_ner_example(v, words, tags, make_tagset({tags}), 12);
  EXPECT_LE(ex.ids.size(), 12u);
  EXPECT_EQ(ex.gold_tags.size(), ex.word_starts.size());
  EXPECT_THROW(align_ner_example(v, {"a"}, {"B-unknown"}, {"O"}, 12), DataError);
}

TEST(Readers, NerAndClassification) {
  Vocab v = word_vocab();
  const auto dir = std::filesystem::temp_directory_path();
  {
    std::ofstream os(dir / "clinenc_ner.jsonl");
    os << R"({"tokens": ["aspirin", "daily"], "tags": ["B-drug", "O"]})" << "\n";
  }
  auto recs = read_ner_jsonl(dir / "clinenc_ner.jsonl");
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].tags[0], "B-drug");
  {
    std::ofstream os(dir / "clinenc_ner.jsonl");
    os << R"({"tokens": ["aspirin"], "tags": ["B-drug", "O"]})" << "\n";
  }
  EXPECT_THROW(read_ner_jsonl(dir / "clinenc_ner.jsonl"), DataError);
  {
    std::ofstream os(dir / "clinenc_cls.jsonl");
    os << R"({"text": "alpha beta", "label": 1})" << "\n" << R"({"text": "gamma", "label": 0})" << "\n";
  }
  auto ex = read_classification_jsonl(dir / "clinenc_cls.jsonl", v, TaskKind::single_label, 2, 32);
  ASSERT_EQ(ex.size(), 2u);
  EXPECT_EQ(ex[0].label, 1);
  EXPECT_THROW(read_classification_jsonl(dir / "clinenc_cls.jsonl", v, TaskKind::single_label, 1, 32),
               DataError);
  {
    std::ofstream os(dir / "clinenc_ml.jsonl");
    os << R"({"text": "alpha", "labels": [0, 1, 1]})" << "\n";
  }
  auto ml = read_classification_jsonl(dir / "clinenc_ml.jsonl", v, TaskKind::multi_label, 3, 32);
  EXPECT_EQ(ml[0].labels, (std::vector<std::uint8_t>{0, 1, 1}));
  std::filesystem::remove(dir / "clinenc_ner.jsonl");
  std::filesystem::remove(dir / "clinenc_cls.jsonl");
  std::filesystem::remove(dir / "clinenc_ml.jsonl");
}

ModelConfig ft_config(int vocab) {
  ModelConfig c;
  c.n_layers = 1;
  c.d_model = 32;
  c.n_heads = 2;
  c.d_ff = 64;
  c.vocab_size = vocab;
  c.max_seq_len = 64;
  c.window = 16;
  return c;
}

// Class is decided by which of two token ids appears.
DatasetSplits separable_classification(Rng& rng, std::size_t n) {
  DatasetSplits d;
  auto make = [&](std::size_t count) {
    std::vector<Example> out;
    for (std::size_t i = 0; i < count; ++i) {
      Example ex;
      ex.label = static_cast<int>(rng.below(2));
      ex.ids = {Vocab::kCls};
      for (int j = 0; j < 6; ++j) ex.ids.push_back(10 + static_cast<std::int32_t>(rng.below(10)));
      ex.ids[1 + rng.below(6)] = ex.label == 0 ? 7 : 8;
      ex.ids.push_back(Vocab::kSep);
      out.push_back(ex);
    }
    return out;
  };
  d.train = make(n);
  d.val = make(n / 2);
  d.test = make(n / 2);
  return d;
}

TEST(Finetune, SingleLabelLearnsAndReports) {
  Rng rng(4);
  auto data = separable_classification(rng, 64);
  EncoderModel<float> base(ft_config(24), 1);
  TaskSpec task;
  task.name = "toy";
  task.lr_grid = {1e-4, 2e-3};
  task.epochs = 10;
  task.batch_size = 8;
  task.seeds = {0, 1, 2};
  auto rep = finetune(base, task, data, "tiny");
  ASSERT_EQ(rep.runs.size(), 3u);
  EXPECT_EQ(rep.grid.size(), 2u);
  EXPECT_EQ(rep.chosen_lr, 2e-3);
  std::vector<double> scores;
  for (auto& r : rep.runs) scores.push_back(r.test);
  EXPECT_EQ(rep.median, median(scores));
  EXPECT_GT(rep.median, 0.9);
  const auto csv = report_csv(rep);
  EXPECT_EQ(csv.rfind("task,model,lr,seed,metric,value\n", 0), 0u);
  EXPECT_NE(csv.find("toy,tiny,0.002,median,weighted_f1,"), std::string::npos);
}

TEST(Finetune, EarlyStoppingKeepsBestEpoch) {
  Rng rng(5);
  auto data = separable_classification(rng, 32);
  EncoderModel<float> base(ft_config(24), 2);
  TaskSpec task;
  task.lr_grid = {3e-2};  // large enough to be unstable
  task.epochs = 10;
  task.patience = 2;
  auto r = train_and_evaluate(base, task, data, 3e-2, 0);
  ASSERT_FALSE(r.val_history.empty());
  EXPECT_EQ(r.best_val, *std::max_element(r.val_history.begin(), r.val_history.end()));
  EXPECT_EQ(r.val_history[r.best_epoch - 1], r.best_val);
  EXPECT_LE(r.epochs_run - r.best_epoch, task.patience);
  // Restored parameters reproduce the best validation score.
}

TEST(Finetune, EmptySplitIsError) {
  Rng rng(6);
  auto data = separable_classification(rng, 8);
  data.val.clear();
  EncoderModel<float> base(ft_config(24), 3);
  EXPECT_THROW(finetune(base, TaskSpec{}, data), DataError);
}

}  // namespace
}  // namespace clinenc
