// Copyright (c) 2026, the geossl authors. All rights reserved.
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

#include "geossl/autodiff.hpp"

#include <cmath>
#include <cstring>
#include <memory>

#include "geossl/error.hpp"

namespace geossl {
namespace {

// Row-major accumulating GEMM kernels. Loop orders are chosen so the inner
// loop runs over contiguous memory and auto-vectorizes.

// C[m,n] += A[m,p] * B[p,n]
void gemm_nn(const float* A, const float* B, float* C, int64_t m, int64_t p, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const float* a = A + i * p;
    float* c = C + i * n;
    for (int64_t l = 0; l < p; ++l) {
      float av = a[l];
      if (av == 0.0f) continue;
      const float* b = B + l * n;
      for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[m,n] += A[m,p] * B[n,p]^T
void gemm_nt(const float* A, const float* B, float* C, int64_t m, int64_t p, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const float* a = A + i * p;
    float* c = C + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const float* b = B + j * p;
      float acc = 0.0f;
      for (int64_t l = 0; l < p; ++l) acc += a[l] * b[l];
      c[j] += acc;
    }
  }
}

// C[m,n] += A[p,m]^T * B[p,n]
void gemm_tn(const float* A, const float* B, float* C, int64_t m, int64_t p, int64_t n) {
  for (int64_t l = 0; l < p; ++l) {
    const float* a = A + l * m;
    const float* b = B + l * n;
    for (int64_t i = 0; i < m; ++i) {
      float av = a[i];
      if (av == 0.0f) continue;
      float* c = C + i * n;
      for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

void require(bool cond, const char* msg) {
  if (!cond) throw ShapeError(msg);
}

}  // namespace

Var Tape::push(Node node) {
  if (check_finite_ && !node.value.all_finite())
    throw Error("non-finite value produced by tape op");
  nodes_.push_back(std::move(node));
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

Tape::Node& Tape::at(Var v) {
  if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size())
    throw StateError("invalid tape handle");
  return nodes_[static_cast<size_t>(v.id)];
}

const Tape::Node& Tape::at(Var v) const {
  if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size())
    throw StateError("invalid tape handle");
  return nodes_[static_cast<size_t>(v.id)];
}

Tensor& Tape::grad_buf(int32_t id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.empty() && n.value.numel() > 0) n.grad = Tensor::zeros(n.value.shape());
  if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  auto it = param_map_.find(&p);
  if (it != param_map_.end()) return Var{it->second};
  Node n;
  n.value = p.value;
  n.requires_grad = p.trainable;
  n.bound = &p;
  Var v = push(std::move(n));
  param_map_.emplace(&p, v.id);
  return v;
}

const Tensor& Tape::value(Var v) const { return at(v).value; }

Tensor Tape::grad_of(Var v) const {
  const Node& n = at(v);
  if (n.grad.empty()) return Tensor::zeros(n.value.shape());
  return n.grad;
}

bool Tape::requires_grad(Var v) const { return at(v).requires_grad; }

// --------------------------------------------------------------------------
// elementwise

Var Tape::add(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require(ta.same_shape(tb), "add: shape mismatch");
  Node n;
  n.value = ta;
  for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] += tb[i];
  n.in = {a.id, b.id, -1};
  n.requires_grad = at(a).requires_grad || at(b).requires_grad;
  n.back = [](Tape& t, Node& nd) {
    for (int s = 0; s < 2; ++s) {
      int32_t in = nd.in[static_cast<size_t>(s)];
      if (!t.wants(in)) continue;
      Tensor& g = t.grad_buf(in);
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += nd.grad[i];
    }
  };
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require(ta.same_shape(tb), "sub: shape mismatch");
  Node n;
  n.value = ta;
  for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] -= tb[i];
  n.in = {a.id, b.id, -1};
  n.requires_grad = at(a).requires_grad || at(b).requires_grad;
  n.back = [](Tape& t, Node& nd) {
    if (t.wants(nd.in[0])) {
      Tensor& g = t.grad_buf(nd.in[0]);
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += nd.grad[i];
    }
    if (t.wants(nd.in[1])) {
      Tensor& g = t.grad_buf(nd.in[1]);
      for (int64_t i = 0; i < g.numel(); ++i) g[i] -= nd.grad[i];
    }
  };
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require(ta.same_shape(tb), "mul: shape mismatch");
  Node n;
  n.value = ta;
  for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] *= tb[i];
  n.in = {a.id, b.id, -1};
  n.requires_grad = at(a).requires_grad || at(b).requires_grad;
  n.back = [](Tape& t, Node& nd) {
    const Tensor& va = t.nodes_[static_cast<size_t>(nd.in[0])].value;
    const Tensor& vb = t.nodes_[static_cast<size_t>(nd.in[1])].value;
    if (t.wants(nd.in[0])) {
      Tensor& g = t.grad_buf(nd.in[0]);
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += nd.grad[i] * vb[i];
    }
    if (t.wants(nd.in[1])) {
      Tensor& g = t.grad_buf(nd.in[1]);
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += nd.grad[i] * va[i];
    }
  };
  return push(std::move(n));
}

Var Tape::scale(Var a, float c) {
  Node n;
  n.value = value(a);
  for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] *= c;
  n.in = {a.id, -1, -1};
  n.requires_grad = at(a).requires_grad;
  n.back = [c](Tape& t, Node& nd) {
    if (!t.wants(nd.in[0])) return;
    Tensor& g = t.grad_buf(nd.in[0]);
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += nd.grad[i] * c;
  };
  return push(std::move(n));
}

Var Tape::relu(Var a) {
  Node n;
  n.value = value(a);
  for (int64_t i = 0; i < n.value.numel(); ++i)
    if (n.value[i] < 0.0f) n.value[i] = 0.0f;
  n.in = {a.id, -1, -1};
  n.requires_grad = at(a).requires_grad;
  n.back = [](Tape& t, Node& nd) {
    if (!t.wants(nd.in[0])) return;
    const Tensor& x = t.nodes_[static_cast<size_t>(nd.in[0])].value;
    Tensor& g = t.grad_buf(nd.in[0]);
    for (int64_t i = 0; i < g.numel(); ++i)
      if (x[i] > 0.0f) g[i] += nd.grad[i];
  };
  return push(std::move(n));
}

Var Tape::gelu(Var a) {
  Node n;
  n.value = value(a);
  for (int64_t i = 0; i < n.value.numel(); ++i) {
    double x = n.value[i];
    n.value[i] = static_cast<float>(x * 0.5 * (1.0 + std::erf(x / M_SQRT2)));
  }
  n.in = {a.id, -1, -1};
  n.requires_grad = at(a).requires_grad;
  n.back = [](Tape& t, Node& nd) {
    if (!t.wants(nd.in[0])) return;
    const Tensor& xs = t.nodes_[static_cast<size_t>(nd.in[0])].value;
    Tensor& g = t.grad_buf(nd.in[0]);
    constexpr double kInvSqrt2Pi = 0.3989422804014327;
    for (int64_t i = 0; i < g.numel(); ++i) {
      double x = xs[i];
      double cdf = 0.5 * (1.0 + std::erf(x / M_SQRT2));
      double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      g[i] += nd.grad[i] * static_cast<float>(cdf + x * pdf);
    }
  };
  return push(std::move(n));
}

// --------------------------------------------------------------------------
// linear algebra

Var Tape::matmul(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require(ta.rank() == 2 && tb.rank() == 2 && ta.dim(1) == tb.dim(0), "matmul: bad shapes");
  int64_t m = ta.dim(0), p = ta.dim(1), nn = tb.dim(1);
  Node n;
  n.value = Tensor::zeros({m, nn});
  gemm_nn(ta.data(), tb.data(), n.value.data(), m, p, nn);
  n.in = {a.id, b.id, -1};
  n.requires_grad = at(a).requires_grad || at(b).requires_grad;
  n.back = [m, p, nn](Tape& t, Node& nd) {
    const Tensor& va = t.nodes_[static_cast<size_t>(nd.in[0])].value;
    const Tensor& vb = t.nodes_[static_cast<size_t>(nd.in[1])].value;
    if (t.wants(nd.in[0]))
      gemm_nt(nd.grad.data(), vb.data(), t.grad_buf(nd.in[0]).data(), m, nn, p);
    if (t.wants(nd.in[1]))
      gemm_tn(va.data(), nd.grad.data(), t.grad_buf(nd.in[1]).data(), p, m, nn);
  };
  return push(std::move(n));
}

Var Tape::matmul_nt(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require(ta.rank() == 2 && tb.rank() == 2 && ta.dim(1) == tb.dim(1), "matmul_nt: bad shapes");
  int64_t m = ta.dim(0), p = ta.dim(1), nn = tb.dim(0);
  Node n;
  n.value = Tensor::zeros({m, nn});
  gemm_nt(ta.data(), tb.data(), n.value.data(), m, p, nn);
  n.in = {a.id, b.id, -1};
  n.requires_grad = at(a).requires_grad || at(b).requires_grad;
  n.back = [m, p, nn](Tape& t, Node& nd) {
    const Tensor& va = t.nodes_[static_cast<size_t>(nd.in[0])].value;
    const Tensor& vb = t.nodes_[static_cast<size_t>(nd.in[1])].value;
    if (t.wants(nd.in[0]))
      gemm_nn(nd.grad.data(), vb.data(), t.grad_buf(nd.in[0]).data(), m, nn, p);
    if (t.wants(nd.in[1]))
      gemm_tn(nd.grad.data(), va.data(), t.grad_buf(nd.in[1]).data(), nn, m, p);
  };
  return push(std::move(n));
}

Var Tape::bmm(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require(ta.rank() == 3 && tb.rank() == 3 && ta.dim(0) == tb.dim(0) && ta.dim(2) == tb.dim(1),
          "bmm: bad shapes");
  int64_t g = ta.dim(0), m = ta.dim(1), p = ta.dim(2), nn = tb.dim(2);
  Node n;
  n.value = Tensor::zeros({g, m, nn});
  for (int64_t i = 0; i < g; ++i)
    gemm_nn(ta.data() + i * m * p, tb.data() + i * p * nn, n.value.data() + i * m * nn, m, p, nn);
  n.in = {a.id, b.id, -1};
  n.requires_grad = at(a).requires_grad || at(b).requires_grad;
  n.back = [g, m, p, nn](Tape& t, Node& nd) {
    const Tensor& va = t.nodes_[static_cast<size_t>(nd.in[0])].value;
    const Tensor& vb = t.nodes_[static_cast<size_t>(nd.in[1])].value;
    for (int64_t i = 0; i < g; ++i) {
      const float* dy = nd.grad.data() + i * m * nn;
      if (t.wants(nd.in[0]))
        gemm_nt(dy, vb.data() + i * p * nn, t.grad_buf(nd.in[0]).data() + i * m * p, m, nn, p);
      if (t.wants(nd.in[1]))
        gemm_tn(va.data() + i * m * p, dy, t.grad_buf(nd.in[1]).data() + i * p * nn, p, m, nn);
    }
  };
  return push(std::move(n));
}

Var Tape::bmm_nt(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require(ta.rank() == 3 && tb.rank() == 3 && ta.dim(0) == tb.dim(0) && ta.dim(2) == tb.dim(2),
          "bmm_nt: bad shapes");
  int64_t g = ta.dim(0), m = ta.dim(1), p = ta.dim(2), nn = tb.dim(1);
  Node n;
  n.value = Tensor::zeros({g, m, nn});
  for (int64_t i = 0; i < g; ++i)
    gemm_nt(ta.data() + i * m * p, tb.data() + i * nn * p, n.value.data() + i * m * nn, m, p, nn);
  n.in = {a.id, b.id, -1};
  n.requires_grad = at(a).requires_grad || at(b).requires_grad;
  n.back = [g, m, p, nn](Tape& t, Node& nd) {
    const Tensor& va = t.nodes_[static_cast<size_t>(nd.in[0])].value;
    const Tensor& vb = t.nodes_[static_cast<size_t>(nd.in[1])].value;
    for (int64_t i = 0; i < g; ++i) {
      const float* dy = nd.grad.data() + i * m * nn;
      if (t.wants(nd.in[0]))
        gemm_nn(dy, vb.data() + i * nn * p, t.grad_buf(nd.in[0]).data() + i * m * p, m, nn, p);
      if (t.wants(nd.in[1]))
        gemm_tn(dy, va.data() + i * m * p, t.grad_buf(nd.in[1]).data() + i * nn * p, nn, m, p);
    }
  };
  return push(std::move(n));
}

Var Tape::add_bias(Var x, Var bias) {
  const Tensor& tx = value(x);
  const Tensor& tb = value(bias);
  require(tx.rank() == 2 && tb.rank() == 1 && tx.dim(1) == tb.dim(0), "add_bias: bad shapes");
  int64_t m = tx.dim(0), k = tx.dim(1);
  Node n;
  n.value = tx;
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < k; ++j) n.value[i * k + j] += tb[j];
  n.in = {x.id, bias.id, -1};
  n.requires_grad = at(x).requires_grad || at(bias).requires_grad;
  n.back = [m, k](Tape& t, Node& nd) {
    if (t.wants(nd.in[0])) {
      Tensor& g = t.grad_buf(nd.in[0]);
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += nd.grad[i];
    }
    if (t.wants(nd.in[1])) {
      Tensor& g = t.grad_buf(nd.in[1]);
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < k; ++j) g[j] += nd.grad[i * k + j];
    }
  };
  return push(std::move(n));
}

// --------------------------------------------------------------------------
// shape

Var Tape::view(Var x, std::vector<int64_t> shape) {
  Node n;
  n.value = value(x).reshaped(shape);
  n.in = {x.id, -1, -1};
  n.requires_grad = at(x).requires_grad;
  n.back = [](Tape& t, Node& nd) {
    if (!t.wants(nd.in[0])) return;
    Tensor& g = t.grad_buf(nd.in[0]);
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += nd.grad[i];
  };
  return push(std::move(n));
}

Var Tape::concat_cols(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require(ta.rank() == 2 && tb.rank() == 2 && ta.dim(0) == tb.dim(0), "concat_cols: bad shapes");
  int64_t m = ta.dim(0), p = ta.dim(1), q = tb.dim(1);
  Node n;
  n.value = Tensor::zeros({m, p + q});
  for (int64_t i = 0; i < m; ++i) {
    std::memcpy(n.value.data() + i * (p + q), ta.data() + i * p, sizeof(float) * static_cast<size_t>(p));
    std::memcpy(n.value.data() + i * (p + q) + p, tb.data() + i * q, sizeof(float) * static_cast<size_t>(q));
  }
  n.in = {a.id, b.id, -1};
  n.requires_grad = at(a).requires_grad || at(b).requires_grad;
  n.back = [m, p, q](Tape& t, Node& nd) {
    if (t.wants(nd.in[0])) {
      Tensor& g = t.grad_buf(nd.in[0]);
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < p; ++j) g[i * p + j] += nd.grad[i * (p + q) + j];
    }
    if (t.wants(nd.in[1])) {
      Tensor& g = t.grad_buf(nd.in[1]);
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < q; ++j) g[i * q + j] += nd.grad[i * (p + q) + p + j];
    }
  };
  return push(std::move(n));
}

Var Tape::slice_rows(Var x, int64_t start, int64_t count) {
  const Tensor& tx = value(x);
  require(tx.rank() == 2, "slice_rows: expects [n,d]");
  int64_t nr = tx.dim(0), d = tx.dim(1);
  require(start >= 0 && count >= 0 && start + count <= nr, "slice_rows: range out of bounds");
  Node n;
  n.value = Tensor::zeros({count, d});
  std::memcpy(n.value.data(), tx.data() + start * d, sizeof(float) * static_cast<size_t>(count * d));
  n.in = {x.id, -1, -1};
  n.requires_grad = at(x).requires_grad;
  n.back = [start, count, d](Tape& t, Node& nd) {
    if (!t.wants(nd.in[0])) return;
    Tensor& g = t.grad_buf(nd.in[0]);
    for (int64_t i = 0; i < count * d; ++i) g[start * d + i] += nd.grad[i];
  };
  return push(std::move(n));
}

Var Tape::patchify(Var x, int patch) {
  const Tensor& tx = value(x);
  require(tx.rank() == 4, "patchify: expects [b,h,w,c]");
  int64_t b = tx.dim(0), h = tx.dim(1), w = tx.dim(2), c = tx.dim(3);
  require(patch > 0 && h % patch == 0 && w % patch == 0, "patchify: patch must divide h and w");
  int64_t gh = h / patch, gw = w / patch, tcount = gh * gw;
  int64_t d = static_cast<int64_t>(patch) * patch * c;
  Node n;
  n.value = Tensor::zeros({b, tcount, d});
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t gy = 0; gy < gh; ++gy)
      for (int64_t gx = 0; gx < gw; ++gx) {
        int64_t t = gy * gw + gx;
        for (int64_t py = 0; py < patch; ++py) {
          const float* src = tx.data() + ((bi * h + gy * patch + py) * w + gx * patch) * c;
          float* dst = n.value.data() + (bi * tcount + t) * d + py * patch * c;
          std::memcpy(dst, src, sizeof(float) * static_cast<size_t>(patch * c));
        }
      }
  n.in = {x.id, -1, -1};
  n.requires_grad = at(x).requires_grad;
  n.back = [b, h, w, c, patch, gh, gw, tcount, d](Tape& t, Node& nd) {
    if (!t.wants(nd.in[0])) return;
    Tensor& g = t.grad_buf(nd.in[0]);
    for (int64_t bi = 0; bi < b; ++bi)
      for (int64_t gy = 0; gy < gh; ++gy)
        for (int64_t gx = 0; gx < gw; ++gx) {
          int64_t tk = gy * gw + gx;
          for (int64_t py = 0; py < patch; ++py) {
            float* dst = g.data() + ((bi * h + gy * patch + py) * w + gx * patch) * c;
            const float* src = nd.grad.data() + (bi * tcount + tk) * d + py * patch * c;
            for (int64_t j = 0; j < patch * c; ++j) dst[j] += src[j];
          }
        }
  };
  return push(std::move(n));
}

// --------------------------------------------------------------------------
// reductions / normalization

Var Tape::mean_axis1(Var x) {
  const Tensor& tx = value(x);
  require(tx.rank() == 3, "mean_axis1: expects [n,t,d]");
  int64_t nrows = tx.dim(0), tdim = tx.dim(1), d = tx.dim(2);
  require(tdim > 0, "mean_axis1: empty axis");
  Node n;
  n.value = Tensor::zeros({nrows, d});
  for (int64_t i = 0; i < nrows; ++i)
    for (int64_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int64_t l = 0; l < tdim; ++l) acc += tx[(i * tdim + l) * d + j];
      n.value[i * d + j] = static_cast<float>(acc / static_cast<double>(tdim));
    }
  n.in = {x.id, -1, -1};
  n.requires_grad = at(x).requires_grad;
  n.back = [nrows, tdim, d](Tape& t, Node& nd) {
    if (!t.wants(nd.in[0])) return;
    Tensor& g = t.grad_buf(nd.in[0]);
    float inv = 1.0f / static_cast<float>(tdim);
    for (int64_t i = 0; i < nrows; ++i)
      for (int64_t l = 0; l < tdim; ++l)
        for (int64_t j = 0; j < d; ++j) g[(i * tdim + l) * d + j] += nd.grad[i * d + j] * inv;
  };
  return push(std::move(n));
}

Var Tape::sum(Var x) {
  const Tensor& tx = value(x);
  double acc = 0.0;
  for (int64_t i = 0; i < tx.numel(); ++i) acc += tx[i];
  Node n;
  n.value = Tensor::from_values({1}, {static_cast<float>(acc)});
  n.in = {x.id, -1, -1};
  n.requires_grad = at(x).requires_grad;
  n.back = [](Tape& t, Node& nd) {
    if (!t.wants(nd.in[0])) return;
    Tensor& g = t.grad_buf(nd.in[0]);
    float gv = nd.grad[0];
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += gv;
  };
  return push(std::move(n));
}

Var Tape::mean(Var x) {
  const Tensor& tx = value(x);
  require(tx.numel() > 0, "mean: empty tensor");
  double acc = 0.0;
  for (int64_t i = 0; i < tx.numel(); ++i) acc += tx[i];
  int64_t count = tx.numel();
  Node n;
  n.value = Tensor::from_values({1}, {static_cast<float>(acc / static_cast<double>(count))});
  n.in = {x.id, -1, -1};
  n.requires_grad = at(x).requires_grad;
  n.back = [count](Tape& t, Node& nd) {
    if (!t.wants(nd.in[0])) return;
    Tensor& g = t.grad_buf(nd.in[0]);
    float gv = nd.grad[0] / static_cast<float>(count);
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += gv;
  };
  return push(std::move(n));
}

Var Tape::row_dot(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require(ta.rank() == 2 && ta.same_shape(tb), "row_dot: bad shapes");
  int64_t m = ta.dim(0), d = ta.dim(1);
  Node n;
  n.value = Tensor::zeros({m, 1});
  for (int64_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < d; ++j) acc += static_cast<double>(ta[i * d + j]) * tb[i * d + j];
    n.value[i] = static_cast<float>(acc);
  }
  n.in = {a.id, b.id, -1};
  n.requires_grad = at(a).requires_grad || at(b).requires_grad;
  n.back = [m, d](Tape& t, Node& nd) {
    const Tensor& va = t.nodes_[static_cast<size_t>(nd.in[0])].value;
    const Tensor& vb = t.nodes_[static_cast<size_t>(nd.in[1])].value;
    if (t.wants(nd.in[0])) {
      Tensor& g = t.grad_buf(nd.in[0]);
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < d; ++j) g[i * d + j] += nd.grad[i] * vb[i * d + j];
    }
    if (t.wants(nd.in[1])) {
      Tensor& g = t.grad_buf(nd.in[1]);
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < d; ++j) g[i * d + j] += nd.grad[i] * va[i * d + j];
    }
  };
  return push(std::move(n));
}

Var Tape::mean_scalars(const std::vector<Var>& xs) {
  if (xs.empty()) throw ConfigError("mean_scalars: empty list");
  double acc = 0.0;
  bool rg = false;
  std::vector<int64_t> ids;
  ids.reserve(xs.size());
  for (Var v : xs) {
    const Tensor& tv = value(v);
    require(tv.numel() == 1, "mean_scalars: inputs must be scalars");
    acc += tv[0];
    rg = rg || at(v).requires_grad;
    ids.push_back(v.id);
  }
  Node n;
  n.value = Tensor::from_values({1}, {static_cast<float>(acc / static_cast<double>(xs.size()))});
  n.requires_grad = rg;
  n.iaux = std::move(ids);
  n.back = [](Tape& t, Node& nd) {
    float g = nd.grad[0] / static_cast<float>(nd.iaux.size());
    for (int64_t id : nd.iaux) {
      int32_t in = static_cast<int32_t>(id);
      if (!t.wants(in)) continue;
      t.grad_buf(in)[0] += g;
    }
  };
  return push(std::move(n));
}

Var Tape::l2_normalize_rows(Var x, float eps) {
  const Tensor& tx = value(x);
  require(tx.rank() == 2, "l2_normalize_rows: expects [n,d]");
  int64_t m = tx.dim(0), d = tx.dim(1);
  Node n;
  n.value = Tensor::zeros({m, d});
  Tensor radii({m});
  for (int64_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < d; ++j) acc += static_cast<double>(tx[i * d + j]) * tx[i * d + j];
    double r = std::sqrt(acc);
    if (r < eps) r = eps;
    radii[i] = static_cast<float>(r);
    for (int64_t j = 0; j < d; ++j) n.value[i * d + j] = static_cast<float>(tx[i * d + j] / r);
  }
  n.in = {x.id, -1, -1};
  n.requires_grad = at(x).requires_grad;
  n.aux = std::move(radii);
  n.back = [m, d, eps](Tape& t, Node& nd) {
    if (!t.wants(nd.in[0])) return;
    Tensor& g = t.grad_buf(nd.in[0]);
    for (int64_t i = 0; i < m; ++i) {
      double r = nd.aux[i];
      const float* y = nd.value.data() + i * d;
      const float* dy = nd.grad.data() + i * d;
      if (r <= eps) {
        // Degenerate row: the clamp makes the map linear.
        for (int64_t j = 0; j < d; ++j) g[i * d + j] += static_cast<float>(dy[j] / r);
        continue;
      }
      double dot = 0.0;
      for (int64_t j = 0; j < d; ++j) dot += static_cast<double>(dy[j]) * y[j];
      for (int64_t j = 0; j < d; ++j)
        g[i * d + j] += static_cast<float>((dy[j] - y[j] * dot) / r);
    }
  };
  return push(std::move(n));
}

Var Tape::softmax_rows(Var x) {
  const Tensor& tx = value(x);
  require(tx.rank() == 2 && tx.dim(1) > 0, "softmax_rows: expects [n,d]");
  int64_t m = tx.dim(0), d = tx.dim(1);
  Node n;
  n.value = Tensor::zeros({m, d});
  for (int64_t i = 0; i < m; ++i) {
    double mx = tx[i * d];
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, static_cast<double>(tx[i * d + j]));
    double s = 0.0;
    std::vector<double> e(static_cast<size_t>(d));
    for (int64_t j = 0; j < d; ++j) {
      e[static_cast<size_t>(j)] = std::exp(static_cast<double>(tx[i * d + j]) - mx);
      s += e[static_cast<size_t>(j)];
    }
    for (int64_t j = 0; j < d; ++j) n.value[i * d + j] = static_cast<float>(e[static_cast<size_t>(j)] / s);
  }
  n.in = {x.id, -1, -1};
  n.requires_grad = at(x).requires_grad;
  n.back = [m, d](Tape& t, Node& nd) {
    if (!t.wants(nd.in[0])) return;
    Tensor& g = t.grad_buf(nd.in[0]);
    for (int64_t i = 0; i < m; ++i) {
      const float* p = nd.value.data() + i * d;
      const float* dy = nd.grad.data() + i * d;
      double dot = 0.0;
      for (int64_t j = 0; j < d; ++j) dot += static_cast<double>(dy[j]) * p[j];
      for (int64_t j = 0; j < d; ++j)
        g[i * d + j] += static_cast<float>(p[j] * (dy[j] - dot));
    }
  };
  return push(std::move(n));
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, float eps) {
  const Tensor& tx = value(x);
  require(tx.rank() >= 1, "layer_norm: empty input");
  int64_t d = tx.dim(-1);
  const Tensor& tg = value(gamma);
  const Tensor& tb = value(beta);
  require(tg.rank() == 1 && tg.dim(0) == d && tb.rank() == 1 && tb.dim(0) == d,
          "layer_norm: gamma/beta must be [d]");
  int64_t m = tx.numel() / d;
  Node n;
  n.value = Tensor::zeros(tx.shape());
  Tensor aux({m * d + m});  // xhat rows followed by inv-sigma per row
  float* xhat = aux.data();
  float* inv = aux.data() + m * d;
  for (int64_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (int64_t j = 0; j < d; ++j) mu += tx[i * d + j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      double c = tx[i * d + j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double is = 1.0 / std::sqrt(var + eps);
    inv[i] = static_cast<float>(is);
    for (int64_t j = 0; j < d; ++j) {
      double xh = (tx[i * d + j] - mu) * is;
      xhat[i * d + j] = static_cast<float>(xh);
      n.value[i * d + j] = static_cast<float>(xh * tg[j] + tb[j]);
    }
  }
  n.in = {x.id, gamma.id, beta.id};
  n.requires_grad = at(x).requires_grad || at(gamma).requires_grad || at(beta).requires_grad;
  n.aux = std::move(aux);
  n.back = [m, d](Tape& t, Node& nd) {
    const Tensor& tg = t.nodes_[static_cast<size_t>(nd.in[1])].value;
    const float* xhat = nd.aux.data();
    const float* inv = nd.aux.data() + m * d;
    if (t.wants(nd.in[1])) {
      Tensor& gg = t.grad_buf(nd.in[1]);
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < d; ++j) gg[j] += nd.grad[i * d + j] * xhat[i * d + j];
    }
    if (t.wants(nd.in[2])) {
      Tensor& gb = t.grad_buf(nd.in[2]);
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < d; ++j) gb[j] += nd.grad[i * d + j];
    }
    if (t.wants(nd.in[0])) {
      Tensor& gx = t.grad_buf(nd.in[0]);
      for (int64_t i = 0; i < m; ++i) {
        double mean_dxh = 0.0, mean_dxh_xh = 0.0;
        for (int64_t j = 0; j < d; ++j) {
          double dxh = static_cast<double>(nd.grad[i * d + j]) * tg[j];
          mean_dxh += dxh;
          mean_dxh_xh += dxh * xhat[i * d + j];
        }
        mean_dxh /= static_cast<double>(d);
        mean_dxh_xh /= static_cast<double>(d);
        for (int64_t j = 0; j < d; ++j) {
          double dxh = static_cast<double>(nd.grad[i * d + j]) * tg[j];
          gx[i * d + j] += static_cast<float>(
              inv[i] * (dxh - mean_dxh - xhat[i * d + j] * mean_dxh_xh));
        }
      }
    }
  };
  return push(std::move(n));
}

// --------------------------------------------------------------------------
// convolution

Var Tape::conv2d(Var x, Var w, Var bias, int kernel, int stride, int pad) {
  const Tensor& tx = value(x);
  const Tensor& tw = value(w);
  const Tensor& tb = value(bias);
  require(tx.rank() == 4, "conv2d: expects [b,h,w,c]");
  int64_t b = tx.dim(0), h = tx.dim(1), wd = tx.dim(2), c = tx.dim(3);
  require(kernel > 0 && stride > 0 && pad >= 0, "conv2d: bad attributes");
  require(tw.rank() == 2 && tw.dim(0) == static_cast<int64_t>(kernel) * kernel * c,
          "conv2d: weight must be [k*k*c, f]");
  int64_t f = tw.dim(1);
  require(tb.rank() == 1 && tb.dim(0) == f, "conv2d: bias must be [f]");
  require(h + 2 * pad >= kernel && wd + 2 * pad >= kernel, "conv2d: kernel larger than input");
  int64_t oh = (h + 2 * pad - kernel) / stride + 1;
  int64_t ow = (wd + 2 * pad - kernel) / stride + 1;
  int64_t rows = b * oh * ow;
  int64_t kkc = static_cast<int64_t>(kernel) * kernel * c;

  Tensor cols({rows, kkc});
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t oy = 0; oy < oh; ++oy)
      for (int64_t ox = 0; ox < ow; ++ox) {
        float* dst = cols.data() + ((bi * oh + oy) * ow + ox) * kkc;
        for (int ky = 0; ky < kernel; ++ky) {
          int64_t iy = oy * stride - pad + ky;
          for (int kx = 0; kx < kernel; ++kx) {
            int64_t ix = ox * stride - pad + kx;
            float* seg = dst + (static_cast<int64_t>(ky) * kernel + kx) * c;
            if (iy >= 0 && iy < h && ix >= 0 && ix < wd) {
              const float* src = tx.data() + ((bi * h + iy) * wd + ix) * c;
              std::memcpy(seg, src, sizeof(float) * static_cast<size_t>(c));
            } else {
              std::memset(seg, 0, sizeof(float) * static_cast<size_t>(c));
            }
          }
        }
      }

  Node n;
  n.value = Tensor::zeros({b, oh, ow, f});
  gemm_nn(cols.data(), tw.data(), n.value.data(), rows, kkc, f);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < f; ++j) n.value[r * f + j] += tb[j];

  n.in = {x.id, w.id, bias.id};
  n.requires_grad = at(x).requires_grad || at(w).requires_grad || at(bias).requires_grad;
  n.aux = std::move(cols);
  n.iaux = {static_cast<int64_t>(kernel), static_cast<int64_t>(stride), static_cast<int64_t>(pad),
            b, h, wd, c, oh, ow, f};
  n.back = [](Tape& t, Node& nd) {
    int64_t kernel = nd.iaux[0], stride = nd.iaux[1], pad = nd.iaux[2];
    int64_t b = nd.iaux[3], h = nd.iaux[4], wd = nd.iaux[5], c = nd.iaux[6];
    int64_t oh = nd.iaux[7], ow = nd.iaux[8], f = nd.iaux[9];
    int64_t rows = b * oh * ow;
    int64_t kkc = kernel * kernel * c;
    const float* dy = nd.grad.data();

    if (t.wants(nd.in[2])) {
      Tensor& gb = t.grad_buf(nd.in[2]);
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < f; ++j) gb[j] += dy[r * f + j];
    }
    if (t.wants(nd.in[1]))
      gemm_tn(nd.aux.data(), dy, t.grad_buf(nd.in[1]).data(), kkc, rows, f);
    if (t.wants(nd.in[0])) {
      const Tensor& tw = t.nodes_[static_cast<size_t>(nd.in[1])].value;
      Tensor dcols({rows, kkc});
      gemm_nt(dy, tw.data(), dcols.data(), rows, f, kkc);
      Tensor& gx = t.grad_buf(nd.in[0]);
      for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t oy = 0; oy < oh; ++oy)
          for (int64_t ox = 0; ox < ow; ++ox) {
            const float* src = dcols.data() + ((bi * oh + oy) * ow + ox) * kkc;
            for (int64_t ky = 0; ky < kernel; ++ky) {
              int64_t iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= h) continue;
              for (int64_t kx = 0; kx < kernel; ++kx) {
                int64_t ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= wd) continue;
                float* dst = gx.data() + ((bi * h + iy) * wd + ix) * c;
                const float* seg = src + (ky * kernel + kx) * c;
                for (int64_t ch = 0; ch < c; ++ch) dst[ch] += seg[ch];
              }
            }
          }
    }
  };
  return push(std::move(n));
}

// --------------------------------------------------------------------------
// losses

Var Tape::softmax_xent(Var logits, std::vector<int64_t> labels) {
  const Tensor& tl = value(logits);
  require(tl.rank() == 2, "softmax_xent: expects [n,c]");
  int64_t m = tl.dim(0), c = tl.dim(1);
  if (m == 0) throw ConfigError("softmax_xent: empty batch");
  require(static_cast<int64_t>(labels.size()) == m, "softmax_xent: label count mismatch");
  for (int64_t y : labels)
    if (y < 0 || y >= c) throw ConfigError("softmax_xent: label out of range");

  Tensor probs({m, c});
  double total = 0.0;
  for (int64_t i = 0; i < m; ++i) {
    double mx = tl[i * c];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(tl[i * c + j]));
    double s = 0.0;
    for (int64_t j = 0; j < c; ++j) s += std::exp(static_cast<double>(tl[i * c + j]) - mx);
    double lse = mx + std::log(s);
    total += lse - tl[i * c + labels[static_cast<size_t>(i)]];
    for (int64_t j = 0; j < c; ++j)
      probs[i * c + j] = static_cast<float>(std::exp(static_cast<double>(tl[i * c + j]) - lse));
  }

  Node n;
  n.value = Tensor::from_values({1}, {static_cast<float>(total / static_cast<double>(m))});
  n.in = {logits.id, -1, -1};
  n.requires_grad = at(logits).requires_grad;
  n.aux = std::move(probs);
  n.iaux = std::move(labels);
  n.back = [m, c](Tape& t, Node& nd) {
    if (!t.wants(nd.in[0])) return;
    Tensor& g = t.grad_buf(nd.in[0]);
    float gv = nd.grad[0] / static_cast<float>(m);
    for (int64_t i = 0; i < m; ++i) {
      int64_t y = nd.iaux[static_cast<size_t>(i)];
      for (int64_t j = 0; j < c; ++j) {
        float delta = (j == y) ? 1.0f : 0.0f;
        g[i * c + j] += gv * (nd.aux[i * c + j] - delta);
      }
    }
  };
  return push(std::move(n));
}

Var Tape::soft_xent(Var logits, Tensor target_probs, double inv_temp) {
  const Tensor& tl = value(logits);
  require(tl.rank() == 2, "soft_xent: expects [n,c]");
  require(tl.same_shape(target_probs), "soft_xent: target shape mismatch");
  if (!(inv_temp > 0.0)) throw ConfigError("soft_xent: inv_temp must be positive");
  int64_t m = tl.dim(0), c = tl.dim(1);
  if (m == 0) throw ConfigError("soft_xent: empty batch");

  Tensor probs({m, c});
  Tensor tmass({m});
  double total = 0.0;
  for (int64_t i = 0; i < m; ++i) {
    double mx = static_cast<double>(tl[i * c]) * inv_temp;
    for (int64_t j = 1; j < c; ++j)
      mx = std::max(mx, static_cast<double>(tl[i * c + j]) * inv_temp);
    double s = 0.0;
    for (int64_t j = 0; j < c; ++j)
      s += std::exp(static_cast<double>(tl[i * c + j]) * inv_temp - mx);
    double lse = mx + std::log(s);
    double row = 0.0, mass = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      double tj = target_probs[i * c + j];
      row += tj * (lse - static_cast<double>(tl[i * c + j]) * inv_temp);
      mass += tj;
      probs[i * c + j] =
          static_cast<float>(std::exp(static_cast<double>(tl[i * c + j]) * inv_temp - lse));
    }
    tmass[i] = static_cast<float>(mass);
    total += row;
  }

  Node n;
  n.value = Tensor::from_values({1}, {static_cast<float>(total / static_cast<double>(m))});
  n.in = {logits.id, -1, -1};
  n.requires_grad = at(logits).requires_grad;
  n.aux = std::move(probs);
  auto targets = std::make_shared<Tensor>(std::move(target_probs));
  auto mass = std::make_shared<Tensor>(std::move(tmass));
  n.back = [m, c, targets, mass, inv_temp](Tape& t, Node& nd) {
    if (!t.wants(nd.in[0])) return;
    Tensor& g = t.grad_buf(nd.in[0]);
    float gv = nd.grad[0] / static_cast<float>(m) * static_cast<float>(inv_temp);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < c; ++j)
        g[i * c + j] += gv * (nd.aux[i * c + j] * (*mass)[i] - (*targets)[i * c + j]);
  };
  return push(std::move(n));
}

Var Tape::info_nce(Var q, Var k_pos, Tensor queue, double tau) {
  const Tensor& qv = value(q);
  const Tensor& kv = value(k_pos);
  require(qv.rank() == 2 && qv.same_shape(kv), "info_nce: q/k shape mismatch");
  require(queue.rank() == 2 && queue.dim(1) == qv.dim(1), "info_nce: queue dim mismatch");
  if (!(tau > 0.0)) throw ConfigError("info_nce: temperature must be positive");
  int64_t b = qv.dim(0), d = qv.dim(1), kn = queue.dim(0);
  if (b == 0) throw ConfigError("info_nce: empty batch");

  // Entire forward in double: dots, tempering, log-sum-exp.
  Tensor probs({b, kn + 1});
  double total = 0.0;
  std::vector<double> scores(static_cast<size_t>(kn + 1));
  for (int64_t i = 0; i < b; ++i) {
    double s0 = 0.0;
    for (int64_t j = 0; j < d; ++j) s0 += static_cast<double>(qv[i * d + j]) * kv[i * d + j];
    scores[0] = s0 / tau;
    for (int64_t n2 = 0; n2 < kn; ++n2) {
      double s = 0.0;
      for (int64_t j = 0; j < d; ++j)
        s += static_cast<double>(qv[i * d + j]) * queue[n2 * d + j];
      scores[static_cast<size_t>(n2 + 1)] = s / tau;
    }
    double mx = scores[0];
    for (double s : scores) mx = std::max(mx, s);
    double sum = 0.0;
    for (double s : scores) sum += std::exp(s - mx);
    double lse = mx + std::log(sum);
    total += lse - scores[0];
    for (int64_t j = 0; j <= kn; ++j)
      probs[i * (kn + 1) + j] = static_cast<float>(std::exp(scores[static_cast<size_t>(j)] - lse));
  }

  Node n;
  n.value = Tensor::from_values({1}, {static_cast<float>(total / static_cast<double>(b))});
  n.in = {q.id, k_pos.id, -1};
  n.requires_grad = at(q).requires_grad || at(k_pos).requires_grad;
  n.aux = std::move(probs);
  auto negatives = std::make_shared<Tensor>(std::move(queue));
  n.back = [b, d, kn, tau, negatives](Tape& t, Node& nd) {
    const Tensor& qv = t.nodes_[static_cast<size_t>(nd.in[0])].value;
    const Tensor& kv = t.nodes_[static_cast<size_t>(nd.in[1])].value;
    float gv = nd.grad[0] / static_cast<float>(b) / static_cast<float>(tau);
    if (t.wants(nd.in[0])) {
      Tensor& gq = t.grad_buf(nd.in[0]);
      for (int64_t i = 0; i < b; ++i) {
        float p0m1 = nd.aux[i * (kn + 1)] - 1.0f;
        for (int64_t j = 0; j < d; ++j) gq[i * d + j] += gv * p0m1 * kv[i * d + j];
        for (int64_t n2 = 0; n2 < kn; ++n2) {
          float pn = nd.aux[i * (kn + 1) + n2 + 1];
          if (pn == 0.0f) continue;
          const float* neg = negatives->data() + n2 * d;
          for (int64_t j = 0; j < d; ++j) gq[i * d + j] += gv * pn * neg[j];
        }
      }
    }
    if (t.wants(nd.in[1])) {
      Tensor& gk = t.grad_buf(nd.in[1]);
      for (int64_t i = 0; i < b; ++i) {
        float p0m1 = nd.aux[i * (kn + 1)] - 1.0f;
        for (int64_t j = 0; j < d; ++j) gk[i * d + j] += gv * p0m1 * qv[i * d + j];
      }
    }
  };
  return push(std::move(n));
}

Var Tape::multicrop_soft_xent(const std::vector<Var>& student_logits,
                              const std::vector<Tensor>& teacher_probs, double inv_temp) {
  if (teacher_probs.size() < 2)
    throw ConfigError("multicrop_soft_xent: need at least 2 teacher crops");
  if (student_logits.size() < teacher_probs.size())
    throw ConfigError("multicrop_soft_xent: student must cover every teacher crop");
  if (!(inv_temp > 0.0)) throw ConfigError("multicrop_soft_xent: inv_temp must be positive");

  const Tensor& first = value(student_logits[0]);
  require(first.rank() == 2, "multicrop_soft_xent: logits must be [n,p]");
  int64_t n = first.dim(0), p = first.dim(1);
  for (Var v : student_logits)
    require(value(v).same_shape(first), "multicrop_soft_xent: crop shapes differ");
  for (const Tensor& tp : teacher_probs)
    require(tp.same_shape(first), "multicrop_soft_xent: teacher shapes differ");
  if (n == 0) throw ConfigError("multicrop_soft_xent: empty batch");

  int64_t crops = static_cast<int64_t>(student_logits.size());
  int64_t teachers = static_cast<int64_t>(teacher_probs.size());
  int64_t pairs = teachers * static_cast<int64_t>(student_logits.size()) - teachers;

  // Student softmaxes and per-row log-sum-exps, once per crop, in double.
  Tensor probs({crops, n, p});
  std::vector<std::vector<double>> lse(static_cast<size_t>(crops),
                                       std::vector<double>(static_cast<size_t>(n)));
  for (int64_t s = 0; s < crops; ++s) {
    const Tensor& sl = value(student_logits[static_cast<size_t>(s)]);
    for (int64_t i = 0; i < n; ++i) {
      double mx = static_cast<double>(sl[i * p]) * inv_temp;
      for (int64_t j = 1; j < p; ++j)
        mx = std::max(mx, static_cast<double>(sl[i * p + j]) * inv_temp);
      double sum = 0.0;
      for (int64_t j = 0; j < p; ++j)
        sum += std::exp(static_cast<double>(sl[i * p + j]) * inv_temp - mx);
      double l = mx + std::log(sum);
      lse[static_cast<size_t>(s)][static_cast<size_t>(i)] = l;
      for (int64_t j = 0; j < p; ++j)
        probs[(s * n + i) * p + j] =
            static_cast<float>(std::exp(static_cast<double>(sl[i * p + j]) * inv_temp - l));
    }
  }

  // Combined targets per student crop: sum over teachers g != s.
  auto combined = std::make_shared<std::vector<Tensor>>();
  auto masses = std::make_shared<std::vector<Tensor>>();
  double total = 0.0;
  for (int64_t s = 0; s < crops; ++s) {
    Tensor tsum({n, p});
    Tensor mass({n});
    const Tensor& sl = value(student_logits[static_cast<size_t>(s)]);
    for (int64_t g = 0; g < teachers; ++g) {
      if (g == s) continue;
      const Tensor& tp = teacher_probs[static_cast<size_t>(g)];
      for (int64_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (int64_t j = 0; j < p; ++j) {
          double tj = tp[i * p + j];
          row += tj * (lse[static_cast<size_t>(s)][static_cast<size_t>(i)] -
                       static_cast<double>(sl[i * p + j]) * inv_temp);
          tsum[i * p + j] += static_cast<float>(tj);
        }
        total += row / static_cast<double>(n);
        mass[i] += static_cast<float>([&] {
          double acc = 0.0;
          for (int64_t j = 0; j < p; ++j) acc += tp[i * p + j];
          return acc;
        }());
      }
    }
    combined->push_back(std::move(tsum));
    masses->push_back(std::move(mass));
  }

  Node node;
  node.value =
      Tensor::from_values({1}, {static_cast<float>(total / static_cast<double>(pairs))});
  bool rg = false;
  std::vector<int64_t> ids;
  for (Var v : student_logits) {
    rg = rg || at(v).requires_grad;
    ids.push_back(v.id);
  }
  node.requires_grad = rg;
  node.aux = std::move(probs);
  node.iaux = std::move(ids);
  node.back = [n, p, pairs, inv_temp, combined, masses](Tape& t, Node& nd) {
    float gv = nd.grad[0] * static_cast<float>(inv_temp) /
               (static_cast<float>(pairs) * static_cast<float>(n));
    for (size_t s = 0; s < nd.iaux.size(); ++s) {
      int32_t in = static_cast<int32_t>(nd.iaux[s]);
      if (!t.wants(in)) continue;
      Tensor& g = t.grad_buf(in);
      const Tensor& tsum = (*combined)[s];
      const Tensor& mass = (*masses)[s];
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < p; ++j)
          g[i * p + j] += gv * (nd.aux[(static_cast<int64_t>(s) * n + i) * p + j] * mass[i] -
                                tsum[i * p + j]);
    }
  };
  return push(std::move(node));
}

// --------------------------------------------------------------------------

void Tape::backward(Var loss) {
  if (nodes_.empty()) throw StateError("backward before any forward op");
  if (backward_done_) throw StateError("backward already ran on this tape");
  Node& top = at(loss);
  if (top.value.numel() != 1) throw ShapeError("backward target must be scalar");
  backward_done_ = true;
  if (!top.requires_grad) return;
  grad_buf(loss.id).fill(1.0f);
  for (int32_t id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad || n.grad.empty() || !n.back) continue;
    n.back(*this, n);
  }
}

void Tape::sync_param_grads() {
  for (auto& [p, id] : param_map_) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!p->trainable || n.grad.empty()) continue;
    for (int64_t i = 0; i < n.grad.numel(); ++i) p->grad[i] += n.grad[i];
  }
}

}  // namespace geossl
