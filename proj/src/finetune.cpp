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


#include "clinenc/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <array>
#include <set>
#include <tuple>

#include "clinenc/error.hpp"
#include "clinenc/ops.hpp"
#include "clinenc/pretrain.hpp"
#include "json.hpp"

namespace clinenc {

// ---------------------------------------------------------------------------
// Metrics

namespace {

struct ParsedTag {
  char prefix;  // 'O', 'B' or 'I'
  std::string_view type;
};

ParsedTag parse_tag(const std::string& tag, std::size_t pos) {
  if (tag == "O") return {'O', {}};
  if (tag.size() >= 3 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-') {
    return {tag[0], std::string_view(tag).substr(2)};
  }
  throw DataError("malformed BIO tag '" + tag + "' at position " + std::to_string(pos));
}

double f1_from_counts(double tp, double fp, double fn) {
  const double denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2 * tp / denom;
}

}  // namespace

std::vector<EntitySpan> bio_extract(std::span<const std::string> tags) {
  std::vector<EntitySpan> out;
  bool open = false;
  EntitySpan cur;
  auto close = [&] {
    if (open) out.push_back(cur);
    open = false;
  };
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const ParsedTag t = parse_tag(tags[i], i);
    if (t.prefix == 'O') {
      close();
    } else if (t.prefix == 'I' && open && cur.label == t.type) {
      cur.end = i;
    } else {
      close();
      cur = EntitySpan{i, i, std::string(t.type)};
      open = true;
    }
  }
  close();
  return out;
}

PrecisionRecallF1 entity_f1(const std::vector<std::vector<std::string>>& true_tags,
                            const std::vector<std::vector<std::string>>& pred_tags) {
  if (true_tags.size() != pred_tags.size()) {
    throw std::invalid_argument("entity_f1: " + std::to_string(true_tags.size()) +
                                " true sequences vs " + std::to_string(pred_tags.size()) + " predicted");
  }
  std::size_t n_true = 0, n_pred = 0, tp = 0;
  for (std::size_t s = 0; s < true_tags.size(); ++s) {
    if (true_tags[s].size() != pred_tags[s].size()) {
      throw std::invalid_argument("entity_f1: sequence " + std::to_string(s) + " has " +
                                  std::to_string(true_tags[s].size()) + " true tags but " +
                                  std::to_string(pred_tags[s].size()) + " predicted");
    }
    const auto t = bio_extract(true_tags[s]);
    const auto p = bio_extract(pred_tags[s]);
    std::set<EntitySpan> ts(t.begin(), t.end());
    n_true += t.size();
    n_pred += p.size();
    for (const auto& span : p) tp += ts.count(span);
  }
  PrecisionRecallF1 r;
  r.precision = n_pred == 0 ? 0.0 : double(tp) / double(n_pred);
  r.recall = n_true == 0 ? 0.0 : double(tp) / double(n_true);
  r.f1 = (r.precision + r.recall) == 0 ? 0.0 : 2 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

double weighted_f1(std::span<const int> y_true, std::span<const int> y_pred) {
  if (y_true.size() != y_pred.size()) {
    throw std::invalid_argument("weighted_f1: " + std::to_string(y_true.size()) + " labels vs " +
                                std::to_string(y_pred.size()) + " predictions");
  }
  std::map<int, std::array<double, 3>> counts;  // tp, fp, fn
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] == y_pred[i]) {
      counts[y_true[i]][0] += 1;
    } else {
      counts[y_pred[i]][1] += 1;
      counts[y_true[i]][2] += 1;
    }
  }
  double total = 0, acc = 0;
  for (const auto& [cls, c] : counts) {
    const double support = c[0] + c[2];
    total += support;
    acc += support * f1_from_counts(c[0], c[1], c[2]);
  }
  return total == 0 ? 0.0 : acc / total;
}

double weighted_f1_multilabel(const std::vector<std::vector<std::uint8_t>>& y_true,
                              const std::vector<std::vector<std::uint8_t>>& y_pred) {
  if (y_true.size() != y_pred.size()) {
    throw std::invalid_argument("weighted_f1_multilabel: sample count mismatch");
  }
  if (y_true.empty()) return 0.0;
  const std::size_t k = y_true[0].size();
  std::vector<std::array<double, 3>> counts(k, {0, 0, 0});
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i].size() != k || y_pred[i].size() != k) {
      throw std::invalid_argument("weighted_f1_multilabel: sample " + std::to_string(i) +
                                  " does not have " + std::to_string(k) + " labels");
    }
    for (std::size_t j = 0; j < k; ++j) {
      const bool t = y_true[i][j] != 0, p = y_pred[i][j] != 0;
      if (t && p) counts[j][0] += 1;
      else if (p) counts[j][1] += 1;
      else if (t) counts[j][2] += 1;
    }
  }
  double total = 0, acc = 0;
  for (const auto& c : counts) {
    const double support = c[0] + c[2];
    total += support;
    acc += support * f1_from_counts(c[0], c[1], c[2]);
  }
  return total == 0 ? 0.0 : acc / total;
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

// ---------------------------------------------------------------------------
// Tasks

std::string_view task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::single_label: return "single_label";
    case TaskKind::multi_label: return "multi_label";
    case TaskKind::token_bio: return "token_bio";
  }
  return "?";
}

TaskKind parse_task_kind(std::string_view name) {
  if (name == "single_label") return TaskKind::single_label;
  if (name == "multi_label") return TaskKind::multi_label;
  if (name == "token_bio") return TaskKind::token_bio;
  throw ConfigError("unknown task kind '" + std::string(name) +
                    "' (expected single_label, multi_label or token_bio)");
}

void TaskSpec::validate() const {
  std::vector<std::string> errors;
  if (name.empty()) errors.push_back("name is empty");
  if (num_classes < 1) errors.push_back("num_classes must be >= 1");
  if (kind == TaskKind::token_bio) {
    if (tag_names.empty() || tag_names[0] != "O") errors.push_back("tag_names must start with \"O\"");
    if (static_cast<int>(tag_names.size()) != num_classes) {
      errors.push_back("num_classes must equal the number of tag_names");
    }
  }
  if (lr_grid.empty()) errors.push_back("lr_grid is empty");
  for (double lr : lr_grid) {
    if (!(lr > 0) || !std::isfinite(lr)) errors.push_back("learning rates must be positive");
  }
  if (epochs < 1) errors.push_back("epochs must be >= 1");
  if (batch_size < 1) errors.push_back("batch_size must be >= 1");
  if (weight_decay < 0) errors.push_back("weight_decay must be >= 0");
  if (seeds.empty()) errors.push_back("seeds is empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    errors.push_back("seeds must be distinct");
  }
  if (patience < 1) errors.push_back("patience must be >= 1");
  if (!errors.empty()) {
    std::string msg = "invalid task '" + name + "':";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
}

std::string TaskSpec::metric_name() const {
  return kind == TaskKind::token_bio ? "entity_f1" : "weighted_f1";
}

double finetune_lr_preset(std::string_view task, std::string_view size) {
  static const std::map<std::string, std::pair<double, double>, std::less<>> table{
      {"chemprot", {5e-5, 2e-5}},
      {"phenotype", {8e-5, 5e-5}},
      {"cos", {1e-4, 1.5e-4}},
      {"social_history", {1.5e-4, 2e-4}},
      {"deid", {7e-5, 7e-5}},
  };
  auto it = table.find(task);
  if (it == table.end()) throw ConfigError("no learning-rate preset for task '" + std::string(task) + "'");
  if (size == "base") return it->second.first;
  if (size == "large") return it->second.second;
  throw ConfigError("model size must be 'base' or 'large', got '" + std::string(size) + "'");
}

std::vector<std::string> make_tagset(const std::vector<std::vector<std::string>>& tag_seqs) {
  std::set<std::string> tags;
  for (const auto& seq : tag_seqs) {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      parse_tag(seq[i], i);
      if (seq[i] != "O") tags.insert(seq[i]);
    }
  }
  std::vector<std::string> out{"O"};
  out.insert(out.end(), tags.begin(), tags.end());
  return out;
}

Example align_ner_example(const Vocab& vocab, const std::vector<std::string>& words,
                          const std::vector<std::string>& tags,
                          const std::vector<std::string>& tagset, std::size_t max_len) {
  if (words.size() != tags.size()) {
    throw DataError("ner example has " + std::to_string(words.size()) + " words but " +
                    std::to_string(tags.size()) + " tags");
  }
  if (max_len < 2) throw ConfigError("max_len must be at least 2");
  Example ex;
  ex.ids.push_back(Vocab::kCls);
  ex.token_targets.push_back(ops::kIgnoreIndex);
  for (std::size_t w = 0; w < words.size(); ++w) {
    if (words[w].empty() || words[w].find_first_of(" \t\n\r\f\v") != std::string::npos) {
      throw DataError("ner word " + std::to_string(w) + " is empty or contains whitespace");
    }
    auto tag_it = std::find(tagset.begin(), tagset.end(), tags[w]);
    if (tag_it == tagset.end()) {
      throw DataError("ner tag '" + tags[w] + "' at position " + std::to_string(w) +
                      " is not in the tag set");
    }
    const auto sub = vocab.encode_word(words[w]);
    if (ex.ids.size() + sub.size() + 1 > max_len) break;
    ex.word_starts.push_back(ex.ids.size());
    for (std::size_t j = 0; j < sub.size(); ++j) {
      ex.ids.push_back(sub[j]);
      ex.token_targets.push_back(j == 0 ? static_cast<std::int32_t>(tag_it - tagset.begin())
                                        : ops::kIgnoreIndex);
    }
    ex.gold_tags.push_back(tags[w]);
  }
  ex.ids.push_back(Vocab::kSep);
  ex.token_targets.push_back(ops::kIgnoreIndex);
  return ex;
}

Example make_classification_example(const Vocab& vocab, std::string_view text, int label,
                                    std::vector<std::uint8_t> labels, std::size_t max_len) {
  if (max_len < 2) throw ConfigError("max_len must be at least 2");
  Example ex;
  ex.ids = vocab.encode(text, true);
  if (ex.ids.size() > max_len) {
    ex.ids.resize(max_len);
    ex.ids.back() = Vocab::kSep;
  }
  ex.label = label;
  ex.labels = std::move(labels);
  return ex;
}

namespace {

template <typename F>
void for_each_jsonl(const std::filesystem::path& path, F&& f) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(n) + ": ";
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where + "invalid JSON (" + e.what() + ")");
    }
    try {
      f(rec, where);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + e.what());
    }
  }
}

}  // namespace

std::vector<NerRecord> read_ner_jsonl(const std::filesystem::path& path) {
  std::vector<NerRecord> out;
  for_each_jsonl(path, [&](const nlohmann::json& rec, const std::string& where) {
    if (!rec.is_object() || !rec.contains("tokens") || !rec.contains("tags") ||
        !rec["tokens"].is_array() || !rec["tags"].is_array()) {
      throw DataError(where + "record needs array fields 'tokens' and 'tags'");
    }
    NerRecord r;
    r.tokens = rec["tokens"].get<std::vector<std::string>>();
    r.tags = rec["tags"].get<std::vector<std::string>>();
    if (r.tokens.size() != r.tags.size()) {
      throw DataError(where + std::to_string(r.tokens.size()) + " tokens but " +
                      std::to_string(r.tags.size()) + " tags");
    }
    for (std::size_t i = 0; i < r.tags.size(); ++i) {
      try {
        parse_tag(r.tags[i], i);
      } catch (const DataError& e) {
        throw DataError(where + e.what());
      }
    }
    out.push_back(std::move(r));
  });
  return out;
}

std::vector<Example> read_classification_jsonl(const std::filesystem::path& path,
                                               const Vocab& vocab, TaskKind kind,
                                               int num_classes, std::size_t max_len) {
  if (kind == TaskKind::token_bio) {
    throw std::invalid_argument("read_classification_jsonl: token tasks use read_ner_jsonl");
  }
  std::vector<Example> out;
  for_each_jsonl(path, [&](const nlohmann::json& rec, const std::string& where) {
    if (!rec.is_object() || !rec.contains("text") || !rec["text"].is_string()) {
      throw DataError(where + "record needs a string field 'text'");
    }
    const std::string text = rec["text"].get<std::string>();
    if (kind == TaskKind::single_label) {
      if (!rec.contains("label") || !rec["label"].is_number_integer()) {
        throw DataError(where + "record needs an integer field 'label'");
      }
      const int label = rec["label"].get<int>();
      if (label < 0 || label >= num_classes) {
        throw DataError(where + "label " + std::to_string(label) + " outside [0, " +
                        std::to_string(num_classes) + ")");
      }
      out.push_back(make_classification_example(vocab, text, label, {}, max_len));
    } else {
      if (!rec.contains("labels") || !rec["labels"].is_array()) {
        throw DataError(where + "record needs an array field 'labels'");
      }
      std::vector<std::uint8_t> labels;
      for (const auto& v : rec["labels"]) {
        if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != 1)) {
          throw DataError(where + "'labels' must hold 0/1 values");
        }
        labels.push_back(static_cast<std::uint8_t>(v.get<int>()));
      }
      if (static_cast<int>(labels.size()) != num_classes) {
        throw DataError(where + std::to_string(labels.size()) + " labels, expected " +
                        std::to_string(num_classes));
      }
      out.push_back(make_classification_example(vocab, text, -1, std::move(labels), max_len));
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Fine-tuning

namespace {

HeadKind head_kind(TaskKind k) {
  switch (k) {
    case TaskKind::single_label: return HeadKind::single_label;
    case TaskKind::multi_label: return HeadKind::multi_label;
    case TaskKind::token_bio: return HeadKind::token_label;
  }
  return HeadKind::single_label;
}

HeadSpec head_for(const TaskSpec& task) {
  return HeadSpec{head_kind(task.kind), task.num_classes, task.name};
}

PackedBatch batch_of(const std::vector<Example>& examples, std::span<const std::size_t> idx) {
  std::vector<TokenIds> docs;
  docs.reserve(idx.size());
  for (auto i : idx) docs.push_back(examples[i].ids);
  return pack(docs);
}

std::size_t argmax_row(std::span<const float> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

void check_example(const TaskSpec& task, const Example& ex) {
  switch (task.kind) {
    case TaskKind::single_label:
      if (ex.label < 0 || ex.label >= task.num_classes) {
        throw DataError("example label " + std::to_string(ex.label) + " outside task classes");
      }
      break;
    case TaskKind::multi_label:
      if (static_cast<int>(ex.labels.size()) != task.num_classes) {
        throw DataError("example has " + std::to_string(ex.labels.size()) + " labels, task expects " +
                        std::to_string(task.num_classes));
      }
      break;
    case TaskKind::token_bio:
      if (ex.token_targets.size() != ex.ids.size() || ex.word_starts.size() != ex.gold_tags.size()) {
        throw DataError("token example is not aligned");
      }
      break;
  }
}

}  // namespace

double evaluate_task(const EncoderModel<float>& model, const TaskSpec& task,
                     const std::vector<Example>& examples) {
  if (examples.empty()) throw DataError("evaluate_task: empty split");
  const HeadSpec head = head_for(task);
  std::vector<int> y_true, y_pred;
  std::vector<std::vector<std::uint8_t>> m_true, m_pred;
  std::vector<std::vector<std::string>> t_true, t_pred;
  const std::size_t chunk = 32;
  for (std::size_t lo = 0; lo < examples.size(); lo += chunk) {
    const std::size_t hi = std::min(examples.size(), lo + chunk);
    std::vector<std::size_t> idx(hi - lo);
    std::iota(idx.begin(), idx.end(), lo);
    const PackedBatch b = batch_of(examples, idx);
    Tape<float> tape(false);
    const Tensor<float> logits = forward_classify(tape, model, b, head);
    const std::size_t k = static_cast<std::size_t>(task.num_classes);
    for (std::size_t s = 0; s < idx.size(); ++s) {
      const Example& ex = examples[idx[s]];
      switch (task.kind) {
        case TaskKind::single_label:
          y_true.push_back(ex.label);
          y_pred.push_back(static_cast<int>(argmax_row(logits.data().subspan(s * k, k))));
          break;
        case TaskKind::multi_label: {
          m_true.push_back(ex.labels);
          std::vector<std::uint8_t> p(k);
          for (std::size_t j = 0; j < k; ++j) p[j] = logits[s * k + j] > 0.0f ? 1 : 0;
          m_pred.push_back(std::move(p));
          break;
        }
        case TaskKind::token_bio: {
          t_true.push_back(ex.gold_tags);
          std::vector<std::string> p;
          for (auto w : ex.word_starts) {
            const std::size_t row = b.seq_begin(s) + w;
            p.push_back(task.tag_names[argmax_row(logits.data().subspan(row * k, k))]);
          }
          t_pred.push_back(std::move(p));
          break;
        }
      }
    }
  }
  switch (task.kind) {
    case TaskKind::single_label: return weighted_f1(y_true, y_pred);
    case TaskKind::multi_label: return weighted_f1_multilabel(m_true, m_pred);
    case TaskKind::token_bio: return entity_f1(t_true, t_pred).f1;
  }
  return 0;
}

RunResult train_and_evaluate(const EncoderModel<float>& base, const TaskSpec& task,
                             const DatasetSplits& data, double lr, std::uint64_t seed) {
  task.validate();
  if (data.train.empty() || data.val.empty() || data.test.empty()) {
    throw DataError("fine-tuning needs non-empty train, val and test splits");
  }
  for (const auto* split : {&data.train, &data.val, &data.test}) {
    for (const auto& ex : *split) check_example(task, ex);
  }

  EncoderModel<float> model = base.clone();
  model.attach_head(head_for(task), mix_seed(seed, 11));
  const HeadSpec head = model.head(task.name);
  Rng rng(mix_seed(seed, 12));
  AdamWConfig cfg;
  cfg.weight_decay = task.weight_decay;
  AdamW opt(cfg);

  RunResult r;
  r.lr = lr;
  r.seed = seed;
  r.best_val = -std::numeric_limits<double>::infinity();
  ParameterSet<float> best = model.params().clone();
  int stale = 0;

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= task.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(task.batch_size)) {
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(task.batch_size));
      std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      const PackedBatch b = batch_of(data.train, idx);
      Tape<float> tape;
      ForwardOptions fo{true, &rng};
      const Tensor<float> logits = forward_classify(tape, model, b, head, fo);
      Tensor<float> loss;
      if (task.kind == TaskKind::single_label) {
        std::vector<std::int32_t> t;
        for (auto i : idx) t.push_back(data.train[i].label);
        loss = ops::cross_entropy_with_ignore(tape, logits, t);
      } else if (task.kind == TaskKind::multi_label) {
        std::vector<std::uint8_t> t;
        for (auto i : idx) t.insert(t.end(), data.train[i].labels.begin(), data.train[i].labels.end());
        loss = ops::bce_with_logits(tape, logits, t);
      } else {
        std::vector<std::int32_t> t;
        for (auto i : idx) {
          t.insert(t.end(), data.train[i].token_targets.begin(), data.train[i].token_targets.end());
        }
        if (std::all_of(t.begin(), t.end(), [](std::int32_t v) { return v == ops::kIgnoreIndex; })) {
          continue;
        }
        loss = ops::cross_entropy_with_ignore(tape, logits, t);
      }
      tape.backward(loss);
      opt.step(model.params(), lr);
    }
    const double val = evaluate_task(model, task, data.val);
    r.val_history.push_back(val);
    r.epochs_run = epoch;
    if (val > r.best_val) {
      r.best_val = val;
      r.best_epoch = epoch;
      best = model.params().clone();
      stale = 0;
    } else if (++stale >= task.patience) {
      break;
    }
  }
  EncoderModel<float> restored(model.config(), std::move(best), model.heads());
  r.test = evaluate_task(restored, task, data.test);
  return r;
}

MetricReport finetune(const EncoderModel<float>& base, const TaskSpec& task,
                      const DatasetSplits& data, const std::string& model_name) {
  task.validate();
  MetricReport rep;
  rep.task = task.name;
  rep.model = model_name;
  rep.metric = task.metric_name();

  std::vector<RunResult> first;
  std::size_t best = 0;
  for (std::size_t g = 0; g < task.lr_grid.size(); ++g) {
    first.push_back(train_and_evaluate(base, task, data, task.lr_grid[g], task.seeds[0]));
    rep.grid.emplace_back(task.lr_grid[g], first.back().best_val);
    if (first.back().best_val > first[best].best_val) best = g;
  }
  rep.chosen_lr = task.lr_grid[best];
  std::vector<double> scores;
  for (std::size_t s = 0; s < task.seeds.size(); ++s) {
    rep.runs.push_back(s == 0 ? first[best]
                              : train_and_evaluate(base, task, data, rep.chosen_lr, task.seeds[s]));
    scores.push_back(rep.runs.back().test);
  }
  rep.median = median(scores);
  return rep;
}

std::string report_csv(const MetricReport& report, bool header) {
  std::string out;
  if (header) out += "task,model,lr,seed,metric,value\n";
  const std::string prefix = report.task + "," + report.model + "," + format_double(report.chosen_lr) + ",";
  for (const auto& r : report.runs) {
    out += prefix + std::to_string(r.seed) + "," + report.metric + "," + format_double(r.test) + "\n";
  }
  out += prefix + "median," + report.metric + "," + format_double(report.median) + "\n";
  return out;
}

}  // namespace clinenc
