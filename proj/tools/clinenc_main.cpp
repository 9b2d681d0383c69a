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


// clinenc: one entry point for tokenizer training, pretraining phases,
// fine-tuning, metric evaluation, benchmarking and schedule inspection.

#include <openssl/crypto.h>
#include <openssl/evp.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "clinenc/bench.hpp"
#include "clinenc/config_io.hpp"
#include "clinenc/error.hpp"
#include "clinenc/finetune.hpp"
#include "clinenc/pretrain.hpp"
#include "clinenc/run_config.hpp"
#include "clinenc/tokenizer.hpp"
#include "json.hpp"

#ifndef CLINENC_VERSION
#define CLINENC_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace clinenc;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) throw DataError("cannot write " + path.string());
}

// SHA-1 over "blob <size>\0<content>", as git hashes file contents.
std::string git_blob_sha1(const std::string& content) {
  std::string data = "blob " + std::to_string(content.size());
  data.push_back('\0');
  data += content;
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha1(), nullptr) != 1) {
    throw std::runtime_error("SHA-1 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

fs::path under_output_root(const fs::path& dir) {
  const char* root = std::getenv("CLINENC_OUTPUT_ROOT");
  if (root && *root && dir.is_relative()) return fs::path(root) / dir;
  return dir;
}

struct Session {
  std::string subcommand;
  fs::path config_file;
  std::vector<std::string> overrides;
  json document;  // null until loaded
  RunConfig config;
  bool parsed = false;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;

  const fs::path& input(const fs::path& p) {
    if (!fs::exists(p)) throw DataError("input not found: " + p.string());
    inputs.push_back(p);
    return p;
  }

  fs::path output(const fs::path& relative) {
    fs::path p = config.output_dir / relative;
    outputs.push_back(p);
    return p;
  }

  fs::path output_dir() const {
    if (parsed) return config.output_dir;
    if (document.is_object()) {
      auto it = document.find("output_dir");
      if (it != document.end() && it->is_string()) return under_output_root(it->get<std::string>());
    }
    return under_output_root("clinenc-out");
  }
};

void load_config(Session& s) {
  const std::string text = [&] {
    try {
      return read_file(s.config_file);
    } catch (const DataError&) {
      throw ConfigError("config file not found: " + s.config_file.string());
    }
  }();
  s.inputs.push_back(s.config_file);
  json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("config file is not valid JSON: " + s.config_file.string());
  for (const auto& o : s.overrides) apply_override(doc, o);
  s.document = doc;
  s.config = parse_run_config(doc);
  s.config.resolve_inputs(s.config_file.parent_path());
  s.config.output_dir = under_output_root(s.config.output_dir);
  s.parsed = true;
}

void write_manifest(const Session& s, int exit_code, const std::string& reason) {
  json m;
  m["subcommand"] = s.subcommand;
  m["status"] = exit_code == 0 ? "ok" : "failed";
  m["exit_code"] = exit_code;
  m["reason"] = reason;
  m["config_file"] = s.config_file.string();
  m["overrides"] = s.overrides;
  m["config"] = s.document;
  if (s.parsed) m["model"] = model_config_to_json(s.config.plan.model);
  json inputs = json::array();
  for (const auto& p : s.inputs) {
    json e{{"path", p.string()}};
    try {
      const std::string content = read_file(p);
      e["bytes"] = content.size();
      e["git_sha1"] = git_blob_sha1(content);
    } catch (const std::exception&) {
      e["git_sha1"] = nullptr;
    }
    inputs.push_back(e);
  }
  m["inputs"] = inputs;
  json outputs = json::array();
  for (const auto& p : s.outputs) outputs.push_back(p.string());
  m["outputs"] = outputs;
  m["versions"] = {
      {"clinenc", CLINENC_VERSION},
      {"compiler", __VERSION__},
      {"cplusplus", __cplusplus},
      {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                            std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                            std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
      {"cli11", CLI11_VERSION},
      {"openssl", OpenSSL_version(OPENSSL_VERSION)},
      {"checkpoint_format", Checkpoint::kFormatVersion},
      {"vocab_format", Vocab::kFormatVersion},
  };
  try {
    write_file(s.output_dir() / ("manifest-" + s.subcommand + ".json"), m.dump(2) + "\n");
  } catch (const std::exception& e) {
    std::cerr << "clinenc: could not write manifest: " << e.what() << "\n";
  }
}

// ---------------------------------------------------------------------------

std::vector<std::string> read_texts(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read " + path.string());
  std::vector<std::string> texts;
  std::string line;
  for (std::size_t n = 1; std::getline(is, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object() || !rec.contains("text") || !rec["text"].is_string()) {
      throw DataError(path.string() + ":" + std::to_string(n) + ": expected {\"text\": string, ...}");
    }
    texts.push_back(rec["text"].get<std::string>());
  }
  if (texts.empty()) throw DataError(path.string() + ": no records");
  return texts;
}

Vocab load_vocab(Session& s) { return Vocab::load(s.input(s.config.vocab_path())); }

void cmd_vocab_train(Session& s) {
  const auto& cfg = s.config;
  if (cfg.tokenizer.corpus.empty()) throw ConfigError("tokenizer.corpus is required for vocab-train");
  const auto texts = read_texts(s.input(cfg.tokenizer.corpus));
  Vocab v = train_vocab(texts, cfg.tokenizer.vocab_size);
  const fs::path out = cfg.tokenizer.vocab.empty() ? s.output("vocab.bin") : cfg.tokenizer.vocab;
  if (!cfg.tokenizer.vocab.empty()) s.outputs.push_back(out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  v.save(out);
  std::cout << "vocab: " << v.size() << " entries -> " << out.string() << "\n";
}

void cmd_pretrain(Session& s) {
  const auto& cfg = s.config;
  if (cfg.plan.phases.empty()) throw ConfigError("phases: at least one phase is required for pretrain");
  if (cfg.tokenizer.corpus.empty()) throw ConfigError("tokenizer.corpus is required for pretrain");
  const Vocab vocab = load_vocab(s);
  if (vocab.size() != static_cast<std::size_t>(cfg.plan.model.vocab_size)) {
    throw ConfigError("vocabulary has " + std::to_string(vocab.size()) +
                      " entries but model.vocab_size is " + std::to_string(cfg.plan.model.vocab_size));
  }
  const CorpusSet corpora = read_corpus_jsonl(s.input(cfg.tokenizer.corpus), vocab, cfg.tokenizer.max_doc_len);

  std::optional<TrainState> state;
  std::vector<LossRow> log;
  for (std::size_t i = 0; i < cfg.plan.phases.size(); ++i) {
    const PhaseSpec& phase = cfg.plan.phases[i];
    switch (phase.start_from.kind) {
      case StartFrom::Kind::fresh:
        state = TrainState::fresh(cfg.plan.model, cfg.global_seed);
        break;
      case StartFrom::Kind::checkpoint:
        state = TrainState::from_checkpoint(load_checkpoint(s.input(phase.start_from.path)));
        break;
      case StartFrom::Kind::previous:
        break;
    }
    RunOptions opts;
    opts.stop_at_phase_step = cfg.max_steps[i];
    const fs::path final_path = cfg.checkpoint_path(i);
    if (phase.checkpoint_interval > 0) {
      opts.on_checkpoint = [&, i](const Checkpoint& ck) {
        if (ck.phase_step % phase.checkpoint_interval != 0) return;
        char name[64];
        std::snprintf(name, sizeof name, "phase%zu-step%06lld.ckpt", i + 1,
                      static_cast<long long>(ck.phase_step));
        save_checkpoint(s.output(fs::path("checkpoints") / name), ck);
      };
    }
    PhaseResult r = run_phase(cfg.plan, i, *state, corpora, opts);
    fs::create_directories(final_path.parent_path());
    save_checkpoint(final_path, r.checkpoint);
    s.outputs.push_back(final_path);
    log.insert(log.end(), r.log.begin(), r.log.end());
    std::cout << "phase " << i + 1 << " (" << phase.name << "): " << r.steps << " steps";
    if (!r.log.empty()) std::cout << ", last loss " << format_double(r.log.back().loss);
    std::cout << " -> " << final_path.string() << "\n";
  }
  write_file(s.output("pretrain_loss.csv"), loss_log_csv(log));
}

EncoderModel<float> base_model(Session& s, const TaskSection& t) {
  const auto& cfg = s.config;
  fs::path ckpt = t.base_checkpoint;
  if (ckpt.empty() && !cfg.plan.phases.empty()) ckpt = cfg.checkpoint_path(cfg.plan.phases.size() - 1);
  if (ckpt.empty()) return EncoderModel<float>(cfg.plan.model, mix_seed(cfg.global_seed, 0));
  if (!fs::exists(ckpt)) throw DataError("base checkpoint not found: " + ckpt.string() + " (run pretrain first)");
  return TrainState::from_checkpoint(load_checkpoint(s.input(ckpt))).model;
}

DatasetSplits load_task_data(Session& s, TaskSection& t, const Vocab& vocab, std::size_t max_len) {
  DatasetSplits d;
  if (t.spec.kind == TaskKind::token_bio) {
    const auto train = read_ner_jsonl(s.input(t.train));
    const auto val = read_ner_jsonl(s.input(t.val));
    const auto test = read_ner_jsonl(s.input(t.test));
    std::vector<std::vector<std::string>> all;
    for (const auto* split : {&train, &val, &test}) {
      for (const auto& r : *split) all.push_back(r.tags);
    }
    t.spec.tag_names = make_tagset(all);
    t.spec.num_classes = static_cast<int>(t.spec.tag_names.size());
    auto convert = [&](const std::vector<NerRecord>& in, std::vector<Example>& out) {
      for (const auto& r : in) out.push_back(align_ner_example(vocab, r.tokens, r.tags, t.spec.tag_names, max_len));
    };
    convert(train, d.train);
    convert(val, d.val);
    convert(test, d.test);
  } else {
    d.train = read_classification_jsonl(s.input(t.train), vocab, t.spec.kind, t.spec.num_classes, max_len);
    d.val = read_classification_jsonl(s.input(t.val), vocab, t.spec.kind, t.spec.num_classes, max_len);
    d.test = read_classification_jsonl(s.input(t.test), vocab, t.spec.kind, t.spec.num_classes, max_len);
  }
  return d;
}

std::string model_label(const Session& s) {
  if (auto it = s.document.find("model"); it != s.document.end() && it->contains("preset")) {
    return (*it)["preset"].get<std::string>();
  }
  return "preset-tiny";
}

void cmd_finetune(Session& s) {
  auto& cfg = s.config;
  if (cfg.tasks.empty()) throw ConfigError("tasks: at least one task is required for finetune");
  const Vocab vocab = load_vocab(s);
  std::string all;
  for (auto& t : cfg.tasks) {
    const std::size_t max_len = t.max_len ? t.max_len : static_cast<std::size_t>(cfg.plan.model.max_seq_len);
    DatasetSplits data = load_task_data(s, t, vocab, max_len);
    EncoderModel<float> base = base_model(s, t);
    MetricReport rep = finetune(base, t.spec, data, model_label(s));
    const std::string csv = report_csv(rep, all.empty());
    all += csv;
    write_file(s.output("finetune_" + t.spec.name + ".csv"), report_csv(rep));
    std::cout << t.spec.name << ": lr " << format_double(rep.chosen_lr) << ", " << rep.metric << " per seed";
    for (const auto& r : rep.runs) std::cout << " " << format_double(r.test);
    std::cout << ", median " << format_double(rep.median) << "\n";
  }
  write_file(s.output("finetune.csv"), all);
}

void cmd_eval(Session& s, const fs::path& predictions, const std::string& kind_name) {
  const TaskKind kind = parse_task_kind(kind_name);
  std::ifstream is(s.input(predictions));
  std::vector<std::vector<std::string>> tt, tp;
  std::vector<int> st, sp;
  std::vector<std::vector<std::uint8_t>> mt, mp;
  std::string line;
  std::size_t n = 0;
  for (std::size_t ln = 1; std::getline(is, line); ++ln) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec = json::parse(line, nullptr, false);
    const std::string where = predictions.string() + ":" + std::to_string(ln);
    if (rec.is_discarded() || !rec.is_object() || !rec.contains("true") || !rec.contains("pred")) {
      throw DataError(where + ": expected {\"true\": ..., \"pred\": ...}");
    }
    try {
      switch (kind) {
        case TaskKind::token_bio:
          tt.push_back(rec["true"].get<std::vector<std::string>>());
          tp.push_back(rec["pred"].get<std::vector<std::string>>());
          break;
        case TaskKind::single_label:
          st.push_back(rec["true"].get<int>());
          sp.push_back(rec["pred"].get<int>());
          break;
        case TaskKind::multi_label:
          mt.push_back(rec["true"].get<std::vector<std::uint8_t>>());
          mp.push_back(rec["pred"].get<std::vector<std::uint8_t>>());
          break;
      }
    } catch (const json::exception&) {
      throw DataError(where + ": values have the wrong type for " + kind_name);
    }
    ++n;
  }
  std::string csv = "metric,value,n\n";
  if (kind == TaskKind::token_bio) {
    const auto f = entity_f1(tt, tp);
    csv += "entity_precision," + format_double(f.precision) + "," + std::to_string(n) + "\n";
    csv += "entity_recall," + format_double(f.recall) + "," + std::to_string(n) + "\n";
    csv += "entity_f1," + format_double(f.f1) + "," + std::to_string(n) + "\n";
  } else if (kind == TaskKind::single_label) {
    csv += "weighted_f1," + format_double(weighted_f1(st, sp)) + "," + std::to_string(n) + "\n";
  } else {
    csv += "weighted_f1," + format_double(weighted_f1_multilabel(mt, mp)) + "," + std::to_string(n) + "\n";
  }
  write_file(s.output("eval.csv"), csv);
  std::cout << csv;
}

void cmd_bench(Session& s) {
  const auto& cfg = s.config;
  const auto& b = cfg.bench;
  if (b.workloads.empty()) throw ConfigError("bench.workloads: at least one workload is required");
  std::vector<BenchModel> models = b.models;
  if (models.empty()) models.push_back({model_label(s), cfg.plan.model});

  std::vector<ThroughputResult> results;
  std::vector<TableRow> rows;
  for (const auto& bm : models) {
    EncoderModel<float> model(bm.config, mix_seed(cfg.global_seed, 0));
    for (ExecMode mode : b.modes) {
      const std::string label = bm.label + (b.modes.size() > 1 ? "/" + std::string(exec_mode_name(mode)) : "");
      rows.push_back({label, bm.config.max_seq_len});
      for (const auto& w : b.workloads) {
        if (w.max_len > static_cast<std::size_t>(bm.config.max_seq_len)) continue;
        const auto docs = generate_workload(w, bm.config.vocab_size);
        ThroughputResult r = measure(model, label, docs, w, mode, b.options, w.max_len);
        std::cout << label << " " << w.workload_class << "/" << length_mode_name(w.length_mode) << ": "
                  << r.ktok_per_s << " ktok/s\n";
        results.push_back(std::move(r));
      }
    }
  }
  write_file(s.output("bench.csv"), bench_csv(results));
  write_file(s.output("bench_table.csv"), bench_table_csv(results, rows));
}

std::string_view stage_name(const SchedulerSpec& sp, std::int64_t step) {
  if (step < sp.warmup_steps) return "warmup";
  if (step < sp.warmup_steps + sp.stable_steps) return "stable";
  return "decay";
}

void cmd_schedule_dump(Session& s, std::int64_t steps) {
  const auto& cfg = s.config;
  if (cfg.plan.phases.empty()) throw ConfigError("phases: at least one phase is required for schedule-dump");
  std::optional<CorpusSet> corpora;
  std::string csv = "phase,step,stage,lr\n";
  for (std::size_t i = 0; i < cfg.plan.phases.size(); ++i) {
    const auto& phase = cfg.plan.phases[i];
    std::int64_t total = steps;
    if (total < 0) {
      if (cfg.tokenizer.corpus.empty()) {
        throw ConfigError("schedule-dump needs --steps or tokenizer.corpus to size the phases");
      }
      if (!corpora) corpora = read_corpus_jsonl(s.input(cfg.tokenizer.corpus), load_vocab(s), cfg.tokenizer.max_doc_len);
      std::vector<MixtureSource> sources;
      for (const auto& ref : phase.sources) {
        auto it = corpora->find(ref.corpus_id);
        if (it == corpora->end()) throw DataError("corpus '" + ref.corpus_id + "' not found in " + cfg.tokenizer.corpus.string());
        sources.push_back({it->second, ref.epochs, ref.token_budget});
      }
      total = MixtureIterator::count_batches(sources, phase.batch_tokens, mix_seed(cfg.plan.seed, 100 + i));
    }
    const SchedulerSpec sp = phase.schedule.resolve(total);
    for (std::int64_t k = 0; k <= sp.total_steps(); ++k) {
      csv += std::to_string(i + 1) + "," + std::to_string(k) + "," + std::string(stage_name(sp, k)) + "," +
             format_double(lr_at(sp, k)) + "\n";
    }
  }
  write_file(s.output("schedule.csv"), csv);
  std::cout << csv;
}

void cmd_checkpoint_inspect(const fs::path& path) {
  const Checkpoint ck = load_checkpoint(path);
  std::size_t n = 0;
  for (const auto& p : ck.params) n += p.values.size();
  std::cout << "format=" << Checkpoint::kFormatVersion << "\n"
            << "phase=" << ck.phase << "\n"
            << "step=" << ck.phase_step << "\n"
            << "global_step=" << ck.global_step << "\n"
            << "optimizer_steps=" << ck.optimizer_steps << "\n"
            << "tensors=" << ck.params.size() << "\n"
            << "parameters=" << n << "\n"
            << "model=" << model_config_to_json(ck.config).dump() << "\n";
}

int exit_code_for(const std::exception_ptr& ep, std::string& reason) {
  try {
    std::rethrow_exception(ep);
  } catch (const ConfigError& e) {
    reason = e.what();
    return 2;
  } catch (const DataError& e) {
    reason = e.what();
    return 3;
  } catch (const NumericError& e) {
    reason = e.what();
    return 4;
  } catch (const std::invalid_argument& e) {
    reason = e.what();
    return 3;
  } catch (const std::out_of_range& e) {
    reason = e.what();
    return 3;
  } catch (const std::exception& e) {
    reason = e.what();
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"clinenc: long-context clinical encoder toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", CLINENC_VERSION);

  Session s;
  fs::path predictions, checkpoint;
  std::string kind = "token_bio";
  std::int64_t steps = -1;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", s.config_file, "run config (JSON)")->required();
    sub->add_option("--set", s.overrides, "override a config key: path=value (repeatable)");
  };
  auto* vocab_train = app.add_subcommand("vocab-train", "train the subword vocabulary");
  auto* pretrain = app.add_subcommand("pretrain", "run every pretraining phase");
  auto* ft = app.add_subcommand("finetune", "grid search and seed runs per task");
  auto* eval = app.add_subcommand("eval", "score a predictions file");
  auto* bench = app.add_subcommand("bench", "inference throughput");
  auto* sched = app.add_subcommand("schedule-dump", "learning-rate curve of every phase as CSV");
  auto* inspect = app.add_subcommand("checkpoint-inspect", "print a checkpoint header");
  for (auto* sub : {vocab_train, pretrain, ft, eval, bench, sched}) add_common(sub);
  eval->add_option("--predictions", predictions, "JSONL of {\"true\", \"pred\"} records")->required();
  eval->add_option("--kind", kind, "token_bio, single_label or multi_label");
  sched->add_option("--steps", steps, "phase length in steps (default: from the corpus)");
  inspect->add_option("checkpoint", checkpoint, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (inspect->parsed()) {
    try {
      cmd_checkpoint_inspect(checkpoint);
      return 0;
    } catch (...) {
      std::string reason;
      const int code = exit_code_for(std::current_exception(), reason);
      std::cerr << "clinenc: " << reason << "\n";
      return code;
    }
  }

  s.subcommand = app.get_subcommands().front()->get_name();
  int code = 0;
  std::string reason;
  try {
    load_config(s);
    fs::create_directories(s.config.output_dir);
    if (vocab_train->parsed()) cmd_vocab_train(s);
    if (pretrain->parsed()) cmd_pretrain(s);
    if (ft->parsed()) cmd_finetune(s);
    if (eval->parsed()) cmd_eval(s, predictions, kind);
    if (bench->parsed()) cmd_bench(s);
    if (sched->parsed()) cmd_schedule_dump(s, steps);
  } catch (...) {
    code = exit_code_for(std::current_exception(), reason);
    // One line on stderr; a schema failure lists its violations after it.
    std::cerr << "clinenc " << s.subcommand << ": " << reason << "\n";
  }
  write_manifest(s, code, reason);
  return code;
}
