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

#include <string>
#include <vector>

#include "clinenc/encoder.hpp"
#include "json.hpp"

namespace clinenc {

nlohmann::json model_config_to_json(const ModelConfig& config);

/// Starts from `base` and overrides the keys present in `j`. Unknown keys and
/// ill-typed values are collected into `errors` (prefixed with `where`).
ModelConfig model_config_from_json(const nlohmann::json& j, const ModelConfig& base,
                                   std::vector<std::string>& errors,
                                   const std::string& where = "model");

/// Strict variant: throws ConfigError listing every problem, then validates.
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace clinenc
