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

// Reverse-mode gradients over a recorded tape of primitive ops.
//
// A Tape is single-writer: record one forward pass, call Backward once,
// read gradients, throw the tape away. Models here are static graphs, so
// there is no support for control flow beyond what the caller unrolls.

#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "sepspot/ops.hpp"

namespace sepspot {

using VarId = std::size_t;

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  VarId Constant(Tensor value) { return Push(std::move(value), false, {}); }
  VarId Variable(Tensor value) { return Push(std::move(value), true, {}); }

  /// Appends an op result. The backward closure is kept only when some
  /// input needs a gradient.
  VarId Record(Tensor value, std::span<const VarId> inputs, BackwardFn fn) {
    bool needs = false;
    for (VarId id : inputs) {
      CheckId(id);
      needs = needs || nodes_[id].requires_grad;
    }
    return Push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  const Tensor& value(VarId id) const {
    CheckId(id);
    return nodes_[id].value;
  }
  /// Empty tensor when no gradient reached the node.
  const Tensor& grad(VarId id) const {
    CheckId(id);
    return nodes_[id].grad;
  }
  bool requires_grad(VarId id) const {
    CheckId(id);
    return nodes_[id].requires_grad;
  }
  std::size_t size() const { return nodes_.size(); }

  void AccumulateGrad(VarId id, const Tensor& g) {
    CheckId(id);
    if (!nodes_[id].requires_grad) return;
    AddInPlace(nodes_[id].grad, g);
  }

  /// Propagates from `root`. A scalar root is seeded with 1 unless an
  /// explicit upstream gradient is given.
  void Backward(VarId root, std::optional<Tensor> seed = std::nullopt) {
    if (root >= nodes_.size()) {
      Fail(ErrorKind::kValue, "backward called on node ", root,
           " which was never recorded on this tape");
    }
    if (backward_done_) {
      Fail(ErrorKind::kValue, "backward already ran on this tape");
    }
    backward_done_ = true;
    Node& r = nodes_[root];
    if (seed) {
      if (seed->shape != r.value.shape) {
        Fail(ErrorKind::kShape, "upstream gradient shape ",
             ShapeString(seed->shape), " != ", ShapeString(r.value.shape));
      }
      r.grad = std::move(*seed);
    } else {
      if (r.value.size() != 1) {
        Fail(ErrorKind::kShape,
             "backward without seed needs a scalar root, got ",
             ShapeString(r.value.shape));
      }
      r.grad = Tensor(r.value.shape, 1.0f);
    }
    for (std::size_t i = root + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      // Copy out: the closure may append gradients to earlier nodes only.
      const Tensor g = n.grad;
      n.backward(*this, g);
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  VarId Push(Tensor value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor(), requires_grad,
                          std::move(fn)});
    return nodes_.size() - 1;
  }
  void CheckId(VarId id) const {
    if (id >= nodes_.size()) {
      Fail(ErrorKind::kValue, "variable ", id, " is not on this tape");
    }
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

namespace ag {

inline VarId Conv2d(Tape& tape, VarId x, const ConvSpec& spec, VarId w,
                    std::optional<VarId> b) {
  const Tensor empty;
  Tensor y = sepspot::Conv2d(tape.value(x), spec, tape.value(w),
                             b ? tape.value(*b) : empty);
  std::vector<VarId> inputs{x, w};
  if (b) inputs.push_back(*b);
  return tape.Record(std::move(y), inputs,
                     [x, w, b, spec](Tape& t, const Tensor& g) {
                       ConvGrads cg = Conv2dBackward(
                           t.value(x), spec, t.value(w), g, t.requires_grad(x));
                       if (t.requires_grad(x)) t.AccumulateGrad(x, cg.input);
                       t.AccumulateGrad(w, cg.weight);
                       if (b) t.AccumulateGrad(*b, cg.bias);
                     });
}

/// Training-statistics batchnorm. When `running` is non-null its running
/// mean/var are updated from this batch.
inline VarId BatchNorm(Tape& tape, VarId x, VarId gamma, VarId beta, float eps,
                       BatchNormParams* running = nullptr,
                       float momentum = 0.1f) {
  BatchNormParams p;
  p.gamma = tape.value(gamma);
  p.beta = tape.value(beta);
  p.epsilon = eps;
  auto cache = std::make_shared<BatchNormCache>();
  Tensor y = BatchNormTrain(tape.value(x), p, cache.get());
  if (running) {
    const Shape& s = tape.value(x).shape;
    UpdateRunningStats(*running, *cache, NumElements(s) / s[1], momentum);
  }
  const VarId inputs[] = {x, gamma, beta};
  return tape.Record(
      std::move(y), inputs,
      [x, gamma, beta, eps, cache](Tape& t, const Tensor& g) {
        BatchNormParams pp;
        pp.gamma = t.value(gamma);
        pp.epsilon = eps;
        BatchNormGrads bg = BatchNormTrainBackward(pp, *cache, g);
        t.AccumulateGrad(x, bg.input);
        t.AccumulateGrad(gamma, bg.gamma);
        t.AccumulateGrad(beta, bg.beta);
      });
}

inline VarId Relu(Tape& tape, VarId x) {
  const VarId inputs[] = {x};
  return tape.Record(sepspot::Relu(tape.value(x)), inputs,
                     [x](Tape& t, const Tensor& g) {
                       t.AccumulateGrad(x, ReluBackward(t.value(x), g));
                     });
}

inline VarId Add(Tape& tape, VarId a, VarId b) {
  const VarId inputs[] = {a, b};
  return tape.Record(sepspot::Add(tape.value(a), tape.value(b)), inputs,
                     [a, b](Tape& t, const Tensor& g) {
                       t.AccumulateGrad(a, g);
                       t.AccumulateGrad(b, g);
                     });
}

inline VarId Linear(Tape& tape, VarId x, VarId w, VarId b) {
  const VarId inputs[] = {x, w, b};
  return tape.Record(
      sepspot::Linear(tape.value(x), tape.value(w), tape.value(b)), inputs,
      [x, w, b](Tape& t, const Tensor& g) {
        LinearGrads lg = LinearBackward(t.value(x), t.value(w), g);
        t.AccumulateGrad(x, lg.input);
        t.AccumulateGrad(w, lg.weight);
        t.AccumulateGrad(b, lg.bias);
      });
}

inline VarId Softmax(Tape& tape, VarId x) {
  const VarId inputs[] = {x};
  const VarId out_id = tape.size();
  return tape.Record(sepspot::Softmax(tape.value(x)), inputs,
                     [x, out_id](Tape& t, const Tensor& g) {
                       t.AccumulateGrad(x, SoftmaxBackward(t.value(out_id), g));
                     });
}

/// a + scale * b for scalars or equal shapes.
inline VarId AddScaled(Tape& tape, VarId a, VarId b, float scale) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  if (av.shape != bv.shape) {
    Fail(ErrorKind::kShape, "add-scaled shape mismatch");
  }
  Tensor y(av.shape);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + scale * bv[i];
  const VarId inputs[] = {a, b};
  return tape.Record(std::move(y), inputs,
                     [a, b, scale](Tape& t, const Tensor& g) {
                       t.AccumulateGrad(a, g);
                       Tensor gb(g.shape);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         gb[i] = scale * g[i];
                       }
                       t.AccumulateGrad(b, gb);
                     });
}

/// Frames [t0, t0 + len) of a [B, C, T, F] map.
inline VarId SliceTime(Tape& tape, VarId x, std::size_t t0, std::size_t len) {
  const VarId inputs[] = {x};
  return tape.Record(
      sepspot::SliceTime(tape.value(x), t0, len), inputs,
      [x, t0, len](Tape& t, const Tensor& g) {
        const Shape& s = t.value(x).shape;
        Tensor gx(s);
        const std::size_t B = s[0], C = s[1], T = s[2], F = s[3];
        for (std::size_t bc = 0; bc < B * C; ++bc) {
          std::copy(g.ptr() + bc * len * F, g.ptr() + (bc + 1) * len * F,
                    gx.ptr() + (bc * T + t0) * F);
        }
        t.AccumulateGrad(x, gx);
      });
}

/// Sum of all elements, as a [1] tensor.
inline VarId Sum(Tape& tape, VarId x) {
  double s = 0.0;
  for (float v : tape.value(x).data) s += v;
  const VarId inputs[] = {x};
  return tape.Record(Tensor({1}, static_cast<float>(s)), inputs,
                     [x](Tape& t, const Tensor& g) {
                       t.AccumulateGrad(x, Tensor(t.value(x).shape, g[0]));
                     });
}

}  // namespace ag
}  // namespace sepspot
