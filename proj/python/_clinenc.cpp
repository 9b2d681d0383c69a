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


#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "clinenc/bench.hpp"
#include "clinenc/config_io.hpp"
#include "clinenc/error.hpp"
#include "clinenc/finetune.hpp"
#include "clinenc/pretrain.hpp"
#include "clinenc/run_config.hpp"
#include "clinenc/tokenizer.hpp"

namespace py = pybind11;
using namespace clinenc;

namespace {

py::array_t<float> to_numpy(const Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::dict packed_dict(const PackedBatch& b) {
  py::dict d;
  d["token_ids"] = b.token_ids;
  d["cu_seqlens"] = b.cu_seqlens;
  d["max_seqlen"] = b.max_seqlen;
  d["positions"] = b.positions;
  return d;
}

}  // namespace

PYBIND11_MODULE(_clinenc, m) {
  m.doc() = "Long-context clinical encoder: tokenizer, encoder, schedules and metrics";
  m.attr("__version__") = CLINENC_VERSION;

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<Vocab>(m, "Vocab")
      .def_static("train", [](const std::vector<std::string>& texts, std::size_t size) {
        return train_vocab(texts, size);
      }, py::arg("texts"), py::arg("target_size"))
      .def_static("load", &Vocab::load)
      .def("save", &Vocab::save)
      .def("encode", &Vocab::encode, py::arg("text"), py::arg("add_cls_sep") = true)
      .def("decode", [](const Vocab& v, const std::vector<std::int32_t>& ids) { return v.decode(ids); })
      .def("token", &Vocab::token)
      .def("__len__", &Vocab::size)
      .def_readonly_static("PAD", &Vocab::kPad)
      .def_readonly_static("UNK", &Vocab::kUnk)
      .def_readonly_static("CLS", &Vocab::kCls)
      .def_readonly_static("SEP", &Vocab::kSep)
      .def_readonly_static("MASK", &Vocab::kMask);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_static("preset", [](const std::string& name) { return model_preset(name); })
      .def_readwrite("n_layers", &ModelConfig::n_layers)
      .def_readwrite("d_model", &ModelConfig::d_model)
      .def_readwrite("n_heads", &ModelConfig::n_heads)
      .def_readwrite("d_ff", &ModelConfig::d_ff)
      .def_readwrite("vocab_size", &ModelConfig::vocab_size)
      .def_readwrite("max_seq_len", &ModelConfig::max_seq_len)
      .def_readwrite("window", &ModelConfig::window)
      .def_readwrite("global_period", &ModelConfig::global_period)
      .def_readwrite("rope_theta_global", &ModelConfig::rope_theta_global)
      .def_readwrite("rope_theta_local", &ModelConfig::rope_theta_local)
      .def_readwrite("dropout", &ModelConfig::dropout)
      .def_readwrite("init_std", &ModelConfig::init_std)
      .def("validate", &ModelConfig::validate)
      .def("to_json", [](const ModelConfig& c) { return model_config_to_json(c).dump(); });

  py::class_<EncoderModel<float>>(m, "Model")
      .def(py::init<const ModelConfig&, std::uint64_t>(), py::arg("config"), py::arg("seed") = 0)
      .def_property_readonly("config", &EncoderModel<float>::config)
      .def("num_parameters", [](const EncoderModel<float>& model) {
        std::size_t n = 0;
        for (const auto& e : model.params().entries()) n += e.tensor.numel();
        return n;
      })
      .def("mlm_logits", [](const EncoderModel<float>& model, const std::vector<TokenIds>& docs, bool packed) {
        Tape<float> tape(false);
        if (packed) return to_numpy(forward_mlm(tape, model, pack(docs)));
        return to_numpy(forward_mlm_padded(tape, model, pad(docs)));
      }, py::arg("docs"), py::arg("packed") = true,
         "MLM logits; packed gives one row per real token, padded one row per slot.");

  m.def("pack", [](const std::vector<TokenIds>& docs) { return packed_dict(pack(docs)); });

  m.def("flop_report", [](const ModelConfig& c, int seq_len) {
    const FlopReport r = count_attention_flops(c, seq_len);
    py::dict d;
    d["global_layers"] = r.global_layers;
    d["local_layers"] = r.local_layers;
    d["attention_total"] = r.attention_total;
    d["dense_total"] = r.dense_total;
    return d;
  });

  py::enum_<DecayKind>(m, "DecayKind")
      .value("one_minus_sqrt", DecayKind::one_minus_sqrt)
      .value("constant_then_one_minus_sqrt", DecayKind::constant_then_one_minus_sqrt);
  py::class_<SchedulerSpec>(m, "SchedulerSpec")
      .def(py::init<>())
      .def_readwrite("peak_lr", &SchedulerSpec::peak_lr)
      .def_readwrite("warmup_steps", &SchedulerSpec::warmup_steps)
      .def_readwrite("stable_steps", &SchedulerSpec::stable_steps)
      .def_readwrite("decay_steps", &SchedulerSpec::decay_steps)
      .def_readwrite("decay_kind", &SchedulerSpec::decay_kind)
      .def_readwrite("constant_fraction", &SchedulerSpec::constant_fraction)
      .def("total_steps", &SchedulerSpec::total_steps);
  m.def("lr_at", &lr_at, py::arg("spec"), py::arg("step"));
  m.def("full_decay_schedule", &full_decay_schedule);
  m.def("constant_then_decay_schedule", &constant_then_decay_schedule, py::arg("peak_lr"),
        py::arg("steps"), py::arg("constant_fraction") = 2.0 / 3.0);

  m.def("masking_stats", [](const std::vector<TokenIds>& docs, double p, int vocab_size, std::uint64_t seed) {
    MaskingSpec spec;
    spec.mlm_probability = p;
    Rng rng(seed);
    const MaskedBatch mb = apply_masking(pack(docs), spec, vocab_size, rng);
    py::dict d;
    d["eligible"] = mb.eligible;
    d["selected"] = mb.selected;
    d["masked"] = mb.masked;
    d["randomized"] = mb.randomized;
    d["kept"] = mb.kept;
    return d;
  }, py::arg("docs"), py::arg("mlm_probability") = 0.30, py::arg("vocab_size") = 512, py::arg("seed") = 0);

  m.def("bio_extract", [](const std::vector<std::string>& tags) {
    std::vector<std::tuple<std::size_t, std::size_t, std::string>> out;
    for (const auto& s : bio_extract(tags)) out.emplace_back(s.start, s.end, s.label);
    return out;
  });
  m.def("entity_f1", [](const std::vector<std::vector<std::string>>& t,
                        const std::vector<std::vector<std::string>>& p) {
    const auto r = entity_f1(t, p);
    return std::make_tuple(r.precision, r.recall, r.f1);
  }, "Micro-averaged (precision, recall, f1) over exact typed spans.");
  m.def("weighted_f1", [](const std::vector<int>& t, const std::vector<int>& p) { return weighted_f1(t, p); });
  m.def("weighted_f1_multilabel", &weighted_f1_multilabel);
  m.def("median", &median);

  m.def("generate_workload", [](std::size_t n_docs, const std::string& length_mode, std::size_t max_len,
                                std::uint64_t seed, int vocab_size) {
    WorkloadSpec s;
    s.n_docs = n_docs;
    s.length_mode = parse_length_mode(length_mode);
    s.max_len = max_len;
    s.seed = seed;
    return generate_workload(s, vocab_size);
  }, py::arg("n_docs"), py::arg("length_mode") = "fixed", py::arg("max_len") = 512, py::arg("seed") = 0,
     py::arg("vocab_size") = 512);

  m.def("inspect_checkpoint", [](const std::filesystem::path& path) {
    const Checkpoint ck = load_checkpoint(path);
    py::dict d;
    d["phase"] = ck.phase;
    d["step"] = ck.phase_step;
    d["global_step"] = ck.global_step;
    d["optimizer_steps"] = ck.optimizer_steps;
    d["model"] = model_config_to_json(ck.config).dump();
    return d;
  });

  m.def("validate_run_config", [](const std::string& text) {
    auto doc = nlohmann::json::parse(text, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("run config is not valid JSON");
    parse_run_config(doc);
  }, "Raises ConfigError listing every violation.");
}
