// Copyright (c) 2026 The sepspot Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Finite-difference gradient checking for tape-recorded graphs.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sepspot/autograd.hpp"
#include "support/oracles.hpp"

namespace sepspot::testing {

/// Builds a graph from the leaf ids; returns the output id.
using GraphFn = std::function<VarId(Tape&, const std::vector<VarId>&)>;

struct GradCheckResult {
  std::vector<double> rel_err;  // one per input tensor
  double worst() const {
    double w = 0.0;
    for (double e : rel_err) w = std::max(w, e);
    return w;
  }
};

/// Compares tape gradients of sum(probe * output) w.r.t. every input with
/// central differences (step 1e-3). The probed sum is taken in double.
inline GradCheckResult CheckGradients(const GraphFn& graph,
                                      std::vector<Tensor> inputs,
                                      double step = 1e-3,
                                      std::uint64_t probe_seed = 99) {
  Tape tape;
  std::vector<VarId> ids;
  for (const auto& t : inputs) ids.push_back(tape.Variable(t));
  const VarId out = graph(tape, ids);
  const Tensor probe = Probe(tape.value(out).shape, probe_seed);
  tape.Backward(out, probe);

  auto eval = [&]() {
    Tape t;
    std::vector<VarId> v;
    for (const auto& in : inputs) v.push_back(t.Constant(in));
    return Dot(t.value(graph(t, v)), probe);
  };
  GradCheckResult r;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor numeric = NumericGrad(eval, inputs[i], step);
    const Tensor analytic = tape.grad(ids[i]).empty() ? Tensor(inputs[i].shape)
                                                      : tape.grad(ids[i]);
    r.rel_err.push_back(RelativeError(analytic, numeric));
  }
  return r;
}

}  // namespace sepspot::testing
