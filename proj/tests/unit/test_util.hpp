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

#include <cmath>
#include <functional>
#include <vector>

#include "clinenc/rng.hpp"
#include "clinenc/tensor.hpp"

namespace clinenc::testing {

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

inline Tensor<float> random_tensor_f(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<float> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(scale * rng.normal());
  return t;
}

/// |a - n| / max(|a|, |n|, floor); both values ~0 count as agreement.
inline double rel_error(double analytic, double numeric, double floor = 1e-10) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

using ScalarFn = std::function<Tensor<double>(Tape<double>&, std::vector<Tensor<double>>&)>;

/// Largest relative error between the tape gradient and central differences
/// over every element of every input.
inline double max_grad_error(const ScalarFn& f, std::vector<Tensor<double>> inputs,
                             double h = 1e-3) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tape<double> tape;
  Tensor<double> loss = f(tape, inputs);
  tape.backward(loss);
  double worst = 0;
  for (auto& t : inputs) {
    std::vector<double> g(t.grad().begin(), t.grad().end());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double saved = t[i];
      t[i] = saved + h;
      Tape<double> tp(false);
      const double fp = f(tp, inputs).item();
      t[i] = saved - h;
      Tape<double> tm(false);
      const double fm = f(tm, inputs).item();
      t[i] = saved;
      worst = std::max(worst, rel_error(g[i], (fp - fm) / (2 * h), 1e-6));
    }
  }
  return worst;
}

}  // namespace clinenc::testing
