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


#include "clinenc/config_io.hpp"

#include <type_traits>

#include "clinenc/error.hpp"

namespace clinenc {

namespace {

template <typename F>
void for_each_field(F&& f) {
  f("n_layers", &ModelConfig::n_layers);
  f("d_model", &ModelConfig::d_model);
  f("n_heads", &ModelConfig::n_heads);
  f("d_ff", &ModelConfig::d_ff);
  f("vocab_size", &ModelConfig::vocab_size);
  f("max_seq_len", &ModelConfig::max_seq_len);
  f("window", &ModelConfig::window);
  f("global_period", &ModelConfig::global_period);
  f("rope_theta_global", &ModelConfig::rope_theta_global);
  f("rope_theta_local", &ModelConfig::rope_theta_local);
  f("dropout", &ModelConfig::dropout);
  f("init_std", &ModelConfig::init_std);
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& config) {
  nlohmann::json j = nlohmann::json::object();
  for_each_field([&](const char* key, auto member) { j[key] = config.*member; });
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j, const ModelConfig& base,
                                   std::vector<std::string>& errors, const std::string& where) {
  ModelConfig c = base;
  if (!j.is_object()) {
    errors.push_back(where + ": expected an object");
    return c;
  }
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for_each_field([&](const char* name, auto member) {
      if (key != name) return;
      known = true;
      using V = std::remove_reference_t<decltype(c.*member)>;
      if constexpr (std::is_same_v<V, int>) {
        if (!value.is_number_integer()) {
          errors.push_back(where + "." + key + ": expected an integer");
          return;
        }
        c.*member = value.get<int>();
      } else {
        if (!value.is_number()) {
          errors.push_back(where + "." + key + ": expected a number");
          return;
        }
        c.*member = value.get<double>();
      }
    });
    if (!known) errors.push_back(where + "." + key + ": unknown key");
  }
  return c;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  std::vector<std::string> errors;
  ModelConfig c = model_config_from_json(j, ModelConfig{}, errors);
  if (!errors.empty()) {
    std::string msg = "invalid model config:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  c.validate();
  return c;
}

}  // namespace clinenc
