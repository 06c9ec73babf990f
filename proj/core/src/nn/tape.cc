// Copyright 2026 The CPR Sandbox Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cpr/nn/tape.h"

#include <algorithm>
#include <cmath>

#include "cpr/error.h"

namespace cpr::nn {
namespace {

Matrix expand(const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  if (m.rows() == 1 && m.cols() == 1) return Matrix::Constant(rows, cols, m(0, 0));
  if (m.rows() == 1 && m.cols() == cols) return m.replicate(rows, 1);
  if (m.cols() == 1 && m.rows() == rows) return m.replicate(1, cols);
  throw Error(ErrorCode::kShapeMismatch, "cannot broadcast " + std::to_string(m.rows()) + "x" +
                                             std::to_string(m.cols()) + " to " +
                                             std::to_string(rows) + "x" + std::to_string(cols));
}

Matrix reduce_to(const Matrix& g, Eigen::Index rows, Eigen::Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
  if (rows == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

void accumulate(Tape& t, int id, const Matrix& g) {
  if (!t.needs_grad(id)) return;
  t.grad_ref(id) += g;
}

Tape& tape_of(Var a) {
  if (!a.valid()) throw Error(ErrorCode::kShapeMismatch, "invalid Var");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  if (!a.valid() || !b.valid() || a.tape() != b.tape()) {
    throw Error(ErrorCode::kShapeMismatch, "operands live on different tapes");
  }
  return *a.tape();
}

template <class F, class G>
Var unary(Var a, F forward, G derivative) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  Matrix out = forward(a.value());
  return t.push(std::move(out), t.needs_grad(ia), [ia, derivative](Tape& tp, int self) {
    const Matrix& x = tp.value(ia);
    const Matrix& y = tp.value(self);
    accumulate(tp, ia, tp.grad_ref(self).cwiseProduct(derivative(x, y)));
  });
}

Eigen::Index out_dim(Eigen::Index a, Eigen::Index b) {
  if (a == b) return a;
  if (a == 1) return b;
  if (b == 1) return a;
  throw Error(ErrorCode::kShapeMismatch,
              "incompatible broadcast dims " + std::to_string(a) + " and " + std::to_string(b));
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var Tape::variable(Matrix value) { return push(std::move(value), true, nullptr); }

void Tape::bind(const ParamTree& params) {
  for (const auto& [name, value] : params) {
    const Var v = variable(value);
    bound_index_[name] = v.id();
    bound_.emplace_back(name, v.id());
  }
}

Var Tape::param(const std::string& name) const {
  const auto it = bound_index_.find(name);
  if (it == bound_index_.end()) {
    throw Error(ErrorCode::kShapeMismatch, "parameter '" + name + "' not bound");
  }
  return Var(const_cast<Tape*>(this), it->second);
}

bool Tape::has_param(const std::string& name) const { return bound_index_.count(name) > 0; }

Var Tape::push(Matrix value, bool needs_grad, Backward backward) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = record_ && needs_grad;
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix& Tape::grad_ref(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var root, double seed) {
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!record_ || !needs_grad(root.id())) return;
  grad_ref(root.id()).setConstant(seed);
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, id);
  }
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

ParamTree Tape::param_grads() const {
  ParamTree out;
  for (const auto& [name, id] : bound_) out.add(name, grad(Var(const_cast<Tape*>(this), id)));
  return out;
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Eigen::Index r = out_dim(a.rows(), b.rows()), c = out_dim(a.cols(), b.cols());
  const int ia = a.id(), ib = b.id();
  Matrix out = expand(a.value(), r, c) + expand(b.value(), r, c);
  return t.push(std::move(out), t.needs_grad(ia) || t.needs_grad(ib), [ia, ib](Tape& tp, int s) {
    const Matrix& g = tp.grad_ref(s);
    if (tp.needs_grad(ia)) accumulate(tp, ia, reduce_to(g, tp.value(ia).rows(), tp.value(ia).cols()));
    if (tp.needs_grad(ib)) accumulate(tp, ib, reduce_to(g, tp.value(ib).rows(), tp.value(ib).cols()));
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Eigen::Index r = out_dim(a.rows(), b.rows()), c = out_dim(a.cols(), b.cols());
  const int ia = a.id(), ib = b.id();
  Matrix out = expand(a.value(), r, c) - expand(b.value(), r, c);
  return t.push(std::move(out), t.needs_grad(ia) || t.needs_grad(ib), [ia, ib](Tape& tp, int s) {
    const Matrix& g = tp.grad_ref(s);
    if (tp.needs_grad(ia)) accumulate(tp, ia, reduce_to(g, tp.value(ia).rows(), tp.value(ia).cols()));
    if (tp.needs_grad(ib)) {
      accumulate(tp, ib, -reduce_to(g, tp.value(ib).rows(), tp.value(ib).cols()));
    }
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Eigen::Index r = out_dim(a.rows(), b.rows()), c = out_dim(a.cols(), b.cols());
  const int ia = a.id(), ib = b.id();
  Matrix out = expand(a.value(), r, c).cwiseProduct(expand(b.value(), r, c));
  return t.push(std::move(out), t.needs_grad(ia) || t.needs_grad(ib),
                [ia, ib, r, c](Tape& tp, int s) {
                  const Matrix& g = tp.grad_ref(s);
                  const Matrix& va = tp.value(ia);
                  const Matrix& vb = tp.value(ib);
                  if (tp.needs_grad(ia)) {
                    accumulate(tp, ia,
                               reduce_to(g.cwiseProduct(expand(vb, r, c)), va.rows(), va.cols()));
                  }
                  if (tp.needs_grad(ib)) {
                    accumulate(tp, ib,
                               reduce_to(g.cwiseProduct(expand(va, r, c)), vb.rows(), vb.cols()));
                  }
                });
}

Var operator+(Var a, Var b) { return add(a, b); }
Var operator-(Var a, Var b) { return sub(a, b); }
Var operator*(Var a, Var b) { return mul(a, b); }

Var scale(Var a, double c) {
  return unary(
      a, [c](const Matrix& x) -> Matrix { return x * c; },
      [c](const Matrix& x, const Matrix&) -> Matrix { return Matrix::Constant(x.rows(), x.cols(), c); });
}

Var add_scalar(Var a, double c) {
  return unary(
      a, [c](const Matrix& x) -> Matrix { return x.array() + c; },
      [](const Matrix& x, const Matrix&) -> Matrix { return Matrix::Ones(x.rows(), x.cols()); });
}

Var neg(Var a) { return scale(a, -1.0); }

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows()) {
    throw Error(ErrorCode::kShapeMismatch,
                "matmul " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " by " +
                    std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  const int ia = a.id(), ib = b.id();
  Matrix out = a.value() * b.value();
  return t.push(std::move(out), t.needs_grad(ia) || t.needs_grad(ib), [ia, ib](Tape& tp, int s) {
    const Matrix& g = tp.grad_ref(s);
    if (tp.needs_grad(ia)) tp.grad_ref(ia).noalias() += g * tp.value(ib).transpose();
    if (tp.needs_grad(ib)) tp.grad_ref(ib).noalias() += tp.value(ia).transpose() * g;
  });
}

Var tanh(Var a) {
  return unary(
      a, [](const Matrix& x) -> Matrix { return x.array().tanh(); },
      [](const Matrix&, const Matrix& y) -> Matrix { return 1.0 - y.array().square(); });
}

Var relu(Var a) {
  return unary(
      a, [](const Matrix& x) -> Matrix { return x.cwiseMax(0.0); },
      [](const Matrix& x, const Matrix&) -> Matrix {
        return (x.array() > 0.0).cast<double>();
      });
}

Var sigmoid(Var a) {
  return unary(
      a, [](const Matrix& x) -> Matrix { return 1.0 / (1.0 + (-x.array()).exp()); },
      [](const Matrix&, const Matrix& y) -> Matrix { return y.array() * (1.0 - y.array()); });
}

Var exp(Var a) {
  return unary(
      a, [](const Matrix& x) -> Matrix { return x.array().exp(); },
      [](const Matrix&, const Matrix& y) -> Matrix { return y; });
}

Var log(Var a) {
  return unary(
      a, [](const Matrix& x) -> Matrix { return x.array().log(); },
      [](const Matrix& x, const Matrix&) -> Matrix { return x.array().inverse(); });
}

Var sqrt(Var a) {
  return unary(
      a, [](const Matrix& x) -> Matrix { return x.array().sqrt(); },
      [](const Matrix&, const Matrix& y) -> Matrix { return 0.5 / y.array(); });
}

Var square(Var a) {
  return unary(
      a, [](const Matrix& x) -> Matrix { return x.array().square(); },
      [](const Matrix& x, const Matrix&) -> Matrix { return 2.0 * x.array(); });
}

Var minimum(Var a, double cap) {
  return unary(
      a, [cap](const Matrix& x) -> Matrix { return x.cwiseMin(cap); },
      [cap](const Matrix& x, const Matrix&) -> Matrix { return (x.array() < cap).cast<double>(); });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push(Matrix::Constant(1, 1, a.value().sum()), t.needs_grad(ia), [ia](Tape& tp, int s) {
    tp.grad_ref(ia).array() += tp.grad_ref(s)(0, 0);
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var sum_rows(Var a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  Matrix out = a.value().rowwise().sum();
  return t.push(std::move(out), t.needs_grad(ia), [ia](Tape& tp, int s) {
    Matrix& g = tp.grad_ref(ia);
    g.colwise() += tp.grad_ref(s).col(0);
  });
}

Var sum_cols(Var a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  Matrix out = a.value().colwise().sum();
  return t.push(std::move(out), t.needs_grad(ia), [ia](Tape& tp, int s) {
    Matrix& g = tp.grad_ref(ia);
    g.rowwise() += tp.grad_ref(s).row(0);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorCode::kShapeMismatch, "concat of nothing");
  Tape& t = tape_of(parts[0]);
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  bool needs = false;
  std::vector<int> ids;
  for (const Var& p : parts) {
    if (p.tape() != &t || p.rows() != rows) {
      throw Error(ErrorCode::kShapeMismatch, "concat_cols row mismatch");
    }
    cols += p.cols();
    needs = needs || t.needs_grad(p.id());
    ids.push_back(p.id());
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return t.push(std::move(out), needs, [ids](Tape& tp, int s) {
    Eigen::Index off = 0;
    for (int id : ids) {
      const Eigen::Index c = tp.value(id).cols();
      if (tp.needs_grad(id)) tp.grad_ref(id) += tp.grad_ref(s).middleCols(off, c);
      off += c;
    }
  });
}

Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

Var slice_cols(Var a, int start, int count) {
  Tape& t = tape_of(a);
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "slice_cols out of range");
  }
  const int ia = a.id();
  Matrix out = a.value().middleCols(start, count);
  return t.push(std::move(out), t.needs_grad(ia), [ia, start, count](Tape& tp, int s) {
    tp.grad_ref(ia).middleCols(start, count) += tp.grad_ref(s);
  });
}

Var reshape(Var a, int rows, int cols) {
  Tape& t = tape_of(a);
  if (static_cast<Eigen::Index>(rows) * cols != a.value().size()) {
    throw Error(ErrorCode::kShapeMismatch, "reshape size mismatch");
  }
  const int ia = a.id();
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return t.push(std::move(out), t.needs_grad(ia), [ia](Tape& tp, int s) {
    Matrix& g = tp.grad_ref(ia);
    const Matrix& gs = tp.grad_ref(s);
    Eigen::Map<Matrix>(g.data(), gs.rows(), gs.cols()) += gs;
  });
}

Var gather_rows(Var a, std::span<const int> index) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  const Matrix& v = a.value();
  Matrix out(static_cast<Eigen::Index>(index.size()), v.cols());
  for (size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= v.rows()) {
      throw Error(ErrorCode::kShapeMismatch, "gather_rows index out of range");
    }
    out.row(static_cast<Eigen::Index>(i)) = v.row(index[i]);
  }
  std::vector<int> idx(index.begin(), index.end());
  return t.push(std::move(out), t.needs_grad(ia), [ia, idx](Tape& tp, int s) {
    Matrix& g = tp.grad_ref(ia);
    const Matrix& gs = tp.grad_ref(s);
    for (size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += gs.row(static_cast<Eigen::Index>(i));
  });
}

Var scatter_rows(Var a, std::span<const int> index, int num_rows) {
  Tape& t = tape_of(a);
  if (static_cast<Eigen::Index>(index.size()) != a.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "scatter_rows index size mismatch");
  }
  const int ia = a.id();
  const Matrix& v = a.value();
  Matrix out = Matrix::Zero(num_rows, v.cols());
  for (size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= num_rows) {
      throw Error(ErrorCode::kShapeMismatch, "scatter_rows index out of range");
    }
    out.row(index[i]) += v.row(static_cast<Eigen::Index>(i));
  }
  std::vector<int> idx(index.begin(), index.end());
  return t.push(std::move(out), t.needs_grad(ia), [ia, idx](Tape& tp, int s) {
    Matrix& g = tp.grad_ref(ia);
    const Matrix& gs = tp.grad_ref(s);
    for (size_t i = 0; i < idx.size(); ++i) g.row(static_cast<Eigen::Index>(i)) += gs.row(idx[i]);
  });
}

Var gather_elements(Var a, std::span<const int> flat_index, int rows, int cols) {
  Tape& t = tape_of(a);
  if (static_cast<Eigen::Index>(flat_index.size()) != static_cast<Eigen::Index>(rows) * cols) {
    throw Error(ErrorCode::kShapeMismatch, "gather_elements index size mismatch");
  }
  const int ia = a.id();
  const Matrix& v = a.value();
  Matrix out(rows, cols);
  for (size_t i = 0; i < flat_index.size(); ++i) {
    if (flat_index[i] < 0 || flat_index[i] >= v.size()) {
      throw Error(ErrorCode::kShapeMismatch, "gather_elements index out of range");
    }
    out.data()[i] = v.data()[flat_index[i]];
  }
  std::vector<int> idx(flat_index.begin(), flat_index.end());
  return t.push(std::move(out), t.needs_grad(ia), [ia, idx](Tape& tp, int s) {
    Matrix& g = tp.grad_ref(ia);
    const Matrix& gs = tp.grad_ref(s);
    for (size_t i = 0; i < idx.size(); ++i) g.data()[idx[i]] += gs.data()[i];
  });
}

Var pick(Var a, std::span<const int> column) {
  std::vector<int> flat(column.size());
  const int cols = static_cast<int>(a.cols());
  for (size_t r = 0; r < column.size(); ++r) {
    if (column[r] < 0 || column[r] >= cols) {
      throw Error(ErrorCode::kShapeMismatch, "pick column out of range");
    }
    flat[r] = static_cast<int>(r) * cols + column[r];
  }
  return gather_elements(a, flat, static_cast<int>(column.size()), 1);
}

Var stop_gradient(Var a) { return tape_of(a).constant(a.value()); }

Var softmax_rows(Var a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  const Matrix& x = a.value();
  Matrix out = (x.colwise() - x.rowwise().maxCoeff()).array().exp();
  out.array().colwise() /= out.rowwise().sum().array();
  return t.push(std::move(out), t.needs_grad(ia), [ia](Tape& tp, int s) {
    const Matrix& y = tp.value(s);
    const Matrix& g = tp.grad_ref(s);
    const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
    Matrix ga = g;
    ga.colwise() -= dot;
    tp.grad_ref(ia) += ga.cwiseProduct(y);
  });
}

Var log_softmax_rows(Var a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  const Matrix& x = a.value();
  const Eigen::VectorXd mx = x.rowwise().maxCoeff();
  Matrix shifted = x.colwise() - mx;
  const Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log();
  Matrix out = shifted.colwise() - lse;
  return t.push(std::move(out), t.needs_grad(ia), [ia](Tape& tp, int s) {
    const Matrix soft = tp.value(s).array().exp();
    const Matrix& g = tp.grad_ref(s);
    const Eigen::VectorXd total = g.rowwise().sum();
    Matrix ga = g - (soft.array().colwise() * total.array()).matrix();
    tp.grad_ref(ia) += ga;
  });
}

Var cross_entropy(Var logits, std::span<const int> targets, std::span<const double> mask) {
  Tape& t = tape_of(logits);
  const Matrix& x = logits.value();
  if (static_cast<Eigen::Index>(targets.size()) != x.rows() ||
      static_cast<Eigen::Index>(mask.size()) != x.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "cross_entropy targets/mask size mismatch");
  }
  const Eigen::VectorXd mx = x.rowwise().maxCoeff();
  Matrix shifted = x.colwise() - mx;
  const Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log();
  double total = 0.0, count = 0.0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    if (mask[r] <= 0.0) continue;
    if (targets[r] < 0 || targets[r] >= x.cols()) {
      throw Error(ErrorCode::kShapeMismatch, "cross_entropy target out of range");
    }
    total += mask[r] * (lse(r) - shifted(r, targets[r]));
    count += mask[r];
  }
  const double loss = count > 0.0 ? total / count : 0.0;
  const int il = logits.id();
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<double> msk(mask.begin(), mask.end());
  return t.push(Matrix::Constant(1, 1, loss), t.needs_grad(il) && count > 0.0,
                [il, tgt, msk, count](Tape& tp, int s) {
                  const Matrix& x = tp.value(il);
                  const double gs = tp.grad_ref(s)(0, 0);
                  Matrix& g = tp.grad_ref(il);
                  for (Eigen::Index r = 0; r < x.rows(); ++r) {
                    if (msk[r] <= 0.0) continue;
                    Eigen::RowVectorXd p = (x.row(r).array() - x.row(r).maxCoeff()).exp();
                    p /= p.sum();
                    p(tgt[r]) -= 1.0;
                    g.row(r) += (gs * msk[r] / count) * p;
                  }
                });
}

}  // namespace cpr::nn
