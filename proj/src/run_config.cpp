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


#include "clinenc/run_config.hpp"

#include <charconv>
#include <limits>
#include <map>
#include <type_traits>

#include "clinenc/config_io.hpp"
#include "clinenc/error.hpp"

namespace clinenc {

using nlohmann::json;

const std::vector<std::string>& run_config_keys(std::string_view section) {
  static const std::map<std::string, std::vector<std::string>, std::less<>> keys{
      {"", {"tokenizer", "model", "phases", "tasks", "bench", "output_dir", "global_seed"}},
      {"tokenizer", {"corpus", "vocab_size", "vocab", "max_doc_len"}},
      {"model",
       {"preset", "size", "n_layers", "d_model", "n_heads", "d_ff", "vocab_size", "max_seq_len",
        "window", "global_period", "rope_theta_global", "rope_theta_local", "dropout",
        "init_std"}},
      {"phase",
       {"name", "sources", "masking", "schedule", "start_from", "batch_tokens", "weight_decay",
        "log_interval", "checkpoint_interval", "max_steps"}},
      {"source", {"corpus", "epochs", "token_budget"}},
      {"masking", {"mlm_probability", "mask_fraction", "random_fraction", "keep_fraction"}},
      {"schedule", {"peak_lr", "warmup_steps", "kind", "constant_fraction"}},
      {"start_from", {"checkpoint"}},
      {"task",
       {"name", "kind", "num_classes", "train", "val", "test", "lr_grid", "epochs", "batch_size",
        "weight_decay", "seeds", "patience", "max_len", "base_checkpoint"}},
      {"bench", {"workloads", "models", "modes", "runs", "warmup_runs", "batch_docs"}},
      {"workload", {"class", "length_mode", "max_len", "n_docs", "mean", "sd", "seed"}},
      {"bench_model", {"label", "model"}},
  };
  auto it = keys.find(section);
  if (it == keys.end()) throw std::out_of_range("no config section '" + std::string(section) + "'");
  return it->second;
}

namespace {

class Checker {
 public:
  std::vector<std::string> errors;

  bool object(const json& j, const std::string& where) {
    if (j.is_object()) return true;
    errors.push_back(where + ": expected an object");
    return false;
  }

  bool array(const json& j, const std::string& where) {
    if (j.is_array()) return true;
    errors.push_back(where + ": expected an array");
    return false;
  }

  void known_keys(const json& j, std::string_view section, const std::string& where) {
    const auto& allowed = run_config_keys(section);
    for (const auto& [key, value] : j.items()) {
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
        errors.push_back(join(where, key) + ": unknown key");
      }
    }
  }

  template <typename T>
  bool read(const json& j, const char* key, const std::string& where, T& out) {
    auto it = j.find(key);
    if (it == j.end()) return false;
    return convert(*it, join(where, key), out);
  }

  template <typename T>
  bool convert(const json& v, const std::string& where, T& out) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) return fail(where, "expected a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) return fail(where, "expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_unsigned()) {
          out = static_cast<T>(v.get<std::uint64_t>());
        } else {
          return fail(where, "expected a non-negative integer");
        }
      } else {
        const auto x = v.get<std::int64_t>();
        if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max()) {
          return fail(where, "integer out of range");
        }
        out = static_cast<T>(x);
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) return fail(where, "expected a number");
      out = v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) return fail(where, "expected a string");
      out = v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
      if (!v.is_string() || v.get<std::string>().empty()) return fail(where, "expected a path");
      out = v.get<std::string>();
    } else {
      if (!array(v, where)) return false;
      T tmp;
      bool ok = true;
      for (std::size_t i = 0; i < v.size(); ++i) {
        typename T::value_type x{};
        ok = convert(v[i], where + "[" + std::to_string(i) + "]", x) && ok;
        tmp.push_back(x);
      }
      if (!ok) return false;
      out = std::move(tmp);
    }
    return true;
  }

  /// Runs a validate() that throws ConfigError and keeps its message.
  template <typename F>
  void collect(const std::string& where, F&& f) {
    try {
      f();
    } catch (const ConfigError& e) {
      errors.push_back(where + ": " + flatten(e.what()));
    } catch (const std::invalid_argument& e) {
      errors.push_back(where + ": " + flatten(e.what()));
    }
  }

  // Nested validators list their problems on separate lines; keep one per entry.
  static std::string flatten(std::string msg) {
    std::string out;
    for (std::size_t i = 0; i < msg.size(); ++i) {
      if (msg[i] != '\n') {
        out.push_back(msg[i]);
        continue;
      }
      while (i + 1 < msg.size() && msg[i + 1] == ' ') ++i;
      if (!out.empty() && out.back() != ':') out += ";";
      out += " ";
    }
    return out;
  }

  bool fail(const std::string& where, const std::string& msg) {
    errors.push_back(where + ": " + msg);
    return false;
  }

  static std::string join(const std::string& where, const std::string& key) {
    return where.empty() ? key : where + "." + key;
  }
};

ModelConfig read_model(Checker& c, const json& j, const std::string& where, std::string* size) {
  if (!c.object(j, where)) return {};
  c.known_keys(j, "model", where);
  std::string preset = "preset-tiny";
  c.read(j, "preset", where, preset);
  ModelConfig base;
  c.collect(where + ".preset", [&] { base = model_preset(preset); });
  if (size) {
    c.read(j, "size", where, *size);
    if (*size != "base" && *size != "large") c.fail(where + ".size", "must be 'base' or 'large'");
  }
  json fields = j;
  fields.erase("preset");
  fields.erase("size");
  std::vector<std::string> errs;
  ModelConfig m = model_config_from_json(fields, base, errs, where);
  for (auto& e : errs) {
    if (e.find("unknown key") == std::string::npos) c.errors.push_back(std::move(e));
  }
  c.collect(where, [&] { m.validate(); });
  return m;
}

MaskingSpec read_masking(Checker& c, const json& j, const std::string& where) {
  MaskingSpec m;
  if (!c.object(j, where)) return m;
  c.known_keys(j, "masking", where);
  c.read(j, "mlm_probability", where, m.mlm_probability);
  c.read(j, "mask_fraction", where, m.mask_fraction);
  c.read(j, "random_fraction", where, m.random_fraction);
  c.read(j, "keep_fraction", where, m.keep_fraction);
  c.collect(where, [&] { m.validate(); });
  return m;
}

PhaseSchedule read_schedule(Checker& c, const json& j, const std::string& where,
                            double default_peak) {
  PhaseSchedule s;
  s.peak_lr = default_peak;
  if (!c.object(j, where)) return s;
  c.known_keys(j, "schedule", where);
  c.read(j, "peak_lr", where, s.peak_lr);
  c.read(j, "warmup_steps", where, s.warmup_steps);
  c.read(j, "constant_fraction", where, s.constant_fraction);
  std::string kind;
  if (c.read(j, "kind", where, kind)) {
    if (kind == "stable") {
      s.kind = ScheduleKind::stable;
    } else if (kind == "one_minus_sqrt") {
      s.kind = ScheduleKind::one_minus_sqrt;
    } else if (kind == "constant_then_one_minus_sqrt") {
      s.kind = ScheduleKind::constant_then_one_minus_sqrt;
    } else {
      c.fail(where + ".kind",
             "must be stable, one_minus_sqrt or constant_then_one_minus_sqrt, got '" + kind + "'");
    }
  }
  return s;
}

StartFrom read_start(Checker& c, const json& j, const std::string& where) {
  StartFrom s;
  if (j.is_string()) {
    const auto v = j.get<std::string>();
    if (v == "fresh") {
      s.kind = StartFrom::Kind::fresh;
    } else if (v == "previous") {
      s.kind = StartFrom::Kind::previous;
    } else {
      c.fail(where, "must be \"fresh\", \"previous\" or {\"checkpoint\": path}");
    }
    return s;
  }
  if (!c.object(j, where)) return s;
  c.known_keys(j, "start_from", where);
  s.kind = StartFrom::Kind::checkpoint;
  if (!c.read(j, "checkpoint", where, s.path)) c.fail(where + ".checkpoint", "required");
  return s;
}

PhaseSpec read_phase(Checker& c, const json& j, const std::string& where, double default_peak,
                     std::int64_t& max_steps) {
  PhaseSpec p;
  if (!c.object(j, where)) return p;
  c.known_keys(j, "phase", where);
  c.read(j, "name", where, p.name);
  if (auto it = j.find("sources"); it != j.end() && c.array(*it, where + ".sources")) {
    for (std::size_t i = 0; i < it->size(); ++i) {
      const std::string w = where + ".sources[" + std::to_string(i) + "]";
      const json& s = (*it)[i];
      if (!c.object(s, w)) continue;
      c.known_keys(s, "source", w);
      SourceRef ref;
      if (!c.read(s, "corpus", w, ref.corpus_id)) c.fail(w + ".corpus", "required");
      c.read(s, "epochs", w, ref.epochs);
      c.read(s, "token_budget", w, ref.token_budget);
      p.sources.push_back(ref);
    }
  }
  if (auto it = j.find("masking"); it != j.end()) p.masking = read_masking(c, *it, where + ".masking");
  if (auto it = j.find("schedule"); it != j.end()) {
    p.schedule = read_schedule(c, *it, where + ".schedule", default_peak);
  } else {
    p.schedule.peak_lr = default_peak;
  }
  if (auto it = j.find("start_from"); it != j.end()) {
    p.start_from = read_start(c, *it, where + ".start_from");
  }
  c.read(j, "batch_tokens", where, p.batch_tokens);
  c.read(j, "weight_decay", where, p.weight_decay);
  c.read(j, "log_interval", where, p.log_interval);
  c.read(j, "checkpoint_interval", where, p.checkpoint_interval);
  if (c.read(j, "max_steps", where, max_steps) && max_steps < 0) {
    c.fail(where + ".max_steps", "must be >= 0");
  }
  return p;
}

TaskSection read_task(Checker& c, const json& j, const std::string& where,
                      const std::string& size) {
  TaskSection t;
  if (!c.object(j, where)) return t;
  c.known_keys(j, "task", where);
  auto& s = t.spec;
  if (!c.read(j, "name", where, s.name)) c.fail(where + ".name", "required");
  std::string kind = "single_label";
  c.read(j, "kind", where, kind);
  c.collect(where + ".kind", [&] { s.kind = parse_task_kind(kind); });
  c.read(j, "num_classes", where, s.num_classes);
  if (!c.read(j, "train", where, t.train)) c.fail(where + ".train", "required");
  if (!c.read(j, "val", where, t.val)) c.fail(where + ".val", "required");
  if (!c.read(j, "test", where, t.test)) c.fail(where + ".test", "required");
  if (!c.read(j, "lr_grid", where, s.lr_grid)) {
    // Known clinical tasks use their tuned rate; anything else keeps the default.
    try {
      s.lr_grid = {finetune_lr_preset(s.name, size)};
    } catch (const ConfigError&) {
    }
  }
  c.read(j, "epochs", where, s.epochs);
  c.read(j, "batch_size", where, s.batch_size);
  c.read(j, "weight_decay", where, s.weight_decay);
  c.read(j, "seeds", where, s.seeds);
  c.read(j, "patience", where, s.patience);
  c.read(j, "max_len", where, t.max_len);
  c.read(j, "base_checkpoint", where, t.base_checkpoint);
  if (s.kind == TaskKind::token_bio) {
    // Tag inventory comes from the training data; check the rest with a placeholder.
    TaskSpec probe = s;
    probe.tag_names = {"O", "B-X", "I-X"};
    probe.num_classes = 3;
    c.collect(where, [&] { probe.validate(); });
  } else {
    c.collect(where, [&] { s.validate(); });
  }
  return t;
}

BenchSection read_bench(Checker& c, const json& j, const std::string& where,
                        const ModelConfig& model) {
  BenchSection b;
  if (!c.object(j, where)) return b;
  c.known_keys(j, "bench", where);
  c.read(j, "runs", where, b.options.runs);
  c.read(j, "warmup_runs", where, b.options.warmup_runs);
  c.read(j, "batch_docs", where, b.options.batch_docs);
  if (b.options.runs < 1) c.fail(where + ".runs", "must be >= 1");
  if (b.options.warmup_runs < 0) c.fail(where + ".warmup_runs", "must be >= 0");
  if (b.options.batch_docs < 1) c.fail(where + ".batch_docs", "must be >= 1");
  std::vector<std::string> modes;
  if (c.read(j, "modes", where, modes)) {
    b.modes.clear();
    for (const auto& m : modes) {
      c.collect(where + ".modes", [&] { b.modes.push_back(parse_exec_mode(m)); });
    }
  }
  if (auto it = j.find("workloads"); it != j.end() && c.array(*it, where + ".workloads")) {
    for (std::size_t i = 0; i < it->size(); ++i) {
      const std::string w = where + ".workloads[" + std::to_string(i) + "]";
      const json& x = (*it)[i];
      if (!c.object(x, w)) continue;
      c.known_keys(x, "workload", w);
      WorkloadSpec s;
      c.read(x, "class", w, s.workload_class);
      std::string lm;
      if (c.read(x, "length_mode", w, lm)) {
        c.collect(w + ".length_mode", [&] { s.length_mode = parse_length_mode(lm); });
      }
      c.read(x, "max_len", w, s.max_len);
      c.read(x, "n_docs", w, s.n_docs);
      c.read(x, "mean", w, s.mean);
      c.read(x, "sd", w, s.sd);
      c.read(x, "seed", w, s.seed);
      c.collect(w, [&] { s.validate(); });
      b.workloads.push_back(s);
    }
  }
  if (auto it = j.find("models"); it != j.end() && c.array(*it, where + ".models")) {
    for (std::size_t i = 0; i < it->size(); ++i) {
      const std::string w = where + ".models[" + std::to_string(i) + "]";
      const json& x = (*it)[i];
      if (!c.object(x, w)) continue;
      c.known_keys(x, "bench_model", w);
      BenchModel m{"", model};
      if (!c.read(x, "label", w, m.label)) c.fail(w + ".label", "required");
      if (auto mj = x.find("model"); mj != x.end()) m.config = read_model(c, *mj, w + ".model", nullptr);
      b.models.push_back(std::move(m));
    }
  }
  return b;
}

}  // namespace

RunConfig parse_run_config(const json& document) {
  Checker c;
  RunConfig r;
  r.document = document;
  if (!c.object(document, "config")) throw ConfigError("invalid run config:\n  config: expected an object");
  c.known_keys(document, "", "");

  c.read(document, "output_dir", "", r.output_dir);
  c.read(document, "global_seed", "", r.global_seed);
  r.plan.seed = r.global_seed;

  ModelConfig model;
  if (auto it = document.find("model"); it != document.end()) {
    model = read_model(c, *it, "model", &r.model_size);
  }
  r.plan.model = model;

  if (auto it = document.find("tokenizer"); it != document.end() && c.object(*it, "tokenizer")) {
    c.known_keys(*it, "tokenizer", "tokenizer");
    c.read(*it, "corpus", "tokenizer", r.tokenizer.corpus);
    c.read(*it, "vocab_size", "tokenizer", r.tokenizer.vocab_size);
    c.read(*it, "vocab", "tokenizer", r.tokenizer.vocab);
    c.read(*it, "max_doc_len", "tokenizer", r.tokenizer.max_doc_len);
    if (r.tokenizer.vocab_size != 0 &&
        r.tokenizer.vocab_size != static_cast<std::size_t>(model.vocab_size)) {
      c.fail("tokenizer.vocab_size", "must equal model.vocab_size (" +
                                         std::to_string(model.vocab_size) + ")");
    }
    if (r.tokenizer.max_doc_len > static_cast<std::size_t>(model.max_seq_len)) {
      c.fail("tokenizer.max_doc_len", "exceeds model.max_seq_len");
    }
  }
  if (r.tokenizer.vocab_size == 0) r.tokenizer.vocab_size = static_cast<std::size_t>(model.vocab_size);
  if (r.tokenizer.max_doc_len == 0) r.tokenizer.max_doc_len = static_cast<std::size_t>(model.max_seq_len);

  const double default_peak = r.model_size == "large" ? kLargeRecipe.peak_lr : kBaseRecipe.peak_lr;
  if (auto it = document.find("phases"); it != document.end() && c.array(*it, "phases")) {
    for (std::size_t i = 0; i < it->size(); ++i) {
      std::int64_t max_steps = -1;
      r.plan.phases.push_back(
          read_phase(c, (*it)[i], "phases[" + std::to_string(i) + "]", default_peak, max_steps));
      r.max_steps.push_back(max_steps);
    }
    // Cross-phase checks; per-field problems are already listed.
    if (!r.plan.phases.empty() && c.errors.empty()) c.collect("phases", [&] { r.plan.validate(); });
  }

  if (auto it = document.find("tasks"); it != document.end() && c.array(*it, "tasks")) {
    for (std::size_t i = 0; i < it->size(); ++i) {
      r.tasks.push_back(read_task(c, (*it)[i], "tasks[" + std::to_string(i) + "]", r.model_size));
    }
  }

  if (auto it = document.find("bench"); it != document.end()) {
    r.bench = read_bench(c, *it, "bench", model);
  }

  if (!c.errors.empty()) {
    std::string msg = "invalid run config (" + std::to_string(c.errors.size()) + " problem" +
                      (c.errors.size() == 1 ? "" : "s") + "):";
    for (const auto& e : c.errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return r;
}

std::filesystem::path RunConfig::vocab_path() const {
  return tokenizer.vocab.empty() ? output_dir / "vocab.bin" : tokenizer.vocab;
}

std::filesystem::path RunConfig::checkpoint_path(std::size_t phase_index) const {
  return output_dir / "checkpoints" / ("phase" + std::to_string(phase_index + 1) + ".ckpt");
}

void RunConfig::resolve_inputs(const std::filesystem::path& dir) {
  auto fix = [&](std::filesystem::path& p) {
    if (!p.empty() && p.is_relative()) p = dir / p;
  };
  fix(tokenizer.corpus);
  fix(tokenizer.vocab);
  for (auto& p : plan.phases) {
    if (p.start_from.kind == StartFrom::Kind::checkpoint) fix(p.start_from.path);
  }
  for (auto& t : tasks) {
    fix(t.train);
    fix(t.val);
    fix(t.test);
    fix(t.base_checkpoint);
  }
}

void apply_override(json& document, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form path=value");
  }
  const std::string path(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &document;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override '" + path + "' has an empty path component");
    const bool last = dot == std::string::npos;
    if (node->is_array()) {
      std::size_t idx = 0;
      auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), idx);
      if (ec != std::errc() || p != part.data() + part.size() || idx >= node->size()) {
        throw ConfigError("override '" + path + "': no array element '" + part + "'");
      }
      node = &(*node)[idx];
    } else {
      if (node->is_null()) *node = json::object();
      if (!node->is_object()) {
        throw ConfigError("override '" + path + "': '" + part + "' is under a non-object value");
      }
      node = &(*node)[part];
    }
    if (last) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

}  // namespace clinenc
