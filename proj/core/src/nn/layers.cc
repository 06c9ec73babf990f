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

#include "cpr/nn/layers.h"

#include <cmath>

#include "cpr/error.h"

namespace cpr::nn {
namespace {

Matrix fan_in_uniform(int rows, int cols, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  return m;
}

}  // namespace

Var activate(Var x, Activation act) {
  switch (act) {
    case Activation::kTanh:
      return tanh(x);
    case Activation::kRelu:
      return relu(x);
    case Activation::kIdentity:
      break;
  }
  return x;
}

void Dense::init(ParamTree& params, Rng& rng) const {
  params.add(name + "/w", fan_in_uniform(in, out, rng));
  params.add(name + "/b", Matrix::Zero(1, out));
}

Var Dense::operator()(const Tape& tape, Var x) const {
  return fully_connected(tape, name, x, activation);
}

Var fully_connected(const Tape& tape, const std::string& name, Var x, Activation activation) {
  return activate(matmul(x, tape.param(name + "/w")) + tape.param(name + "/b"), activation);
}

void GruCell::init(ParamTree& params, Rng& rng) const {
  params.add(name + "/w", fan_in_uniform(in, 3 * hidden, rng));
  params.add(name + "/u_zr", fan_in_uniform(hidden, 2 * hidden, rng));
  params.add(name + "/u_n", fan_in_uniform(hidden, hidden, rng));
  params.add(name + "/b", Matrix::Zero(1, 3 * hidden));
}

Var GruCell::operator()(const Tape& tape, Var x, Var h) const {
  const Var xw = matmul(x, tape.param(name + "/w")) + tape.param(name + "/b");
  const Var hu = matmul(h, tape.param(name + "/u_zr"));
  const Var z = sigmoid(slice_cols(xw, 0, hidden) + slice_cols(hu, 0, hidden));
  const Var r = sigmoid(slice_cols(xw, hidden, hidden) + slice_cols(hu, hidden, hidden));
  const Var n = tanh(slice_cols(xw, 2 * hidden, hidden) + matmul(r * h, tape.param(name + "/u_n")));
  return n + z * (h - n);
}

void Mlp::init(ParamTree& params, Rng& rng) const {
  int width = in;
  for (size_t i = 0; i < sizes.size(); ++i) {
    Dense{name + "/" + std::to_string(i), width, sizes[i]}.init(params, rng);
    width = sizes[i];
  }
}

Var Mlp::operator()(const Tape& tape, Var x) const {
  for (size_t i = 0; i < sizes.size(); ++i) {
    const Activation act = i + 1 == sizes.size() ? last_activation : activation;
    x = fully_connected(tape, name + "/" + std::to_string(i), x, act);
  }
  return x;
}

GraphIndex GraphIndex::fully_connected(int num_graphs, int nodes_per_graph) {
  GraphIndex idx;
  idx.num_graphs = num_graphs;
  idx.nodes_per_graph = nodes_per_graph;
  for (int g = 0; g < num_graphs; ++g) {
    for (int i = 0; i < nodes_per_graph; ++i) idx.node_graph.push_back(g);
    for (int s = 0; s < nodes_per_graph; ++s) {
      for (int r = 0; r < nodes_per_graph; ++r) {
        if (s == r) continue;
        idx.senders.push_back(g * nodes_per_graph + s);
        idx.receivers.push_back(g * nodes_per_graph + r);
        idx.edge_graph.push_back(g);
      }
    }
  }
  return idx;
}

Mlp GraphBlock::edge_mlp() const {
  return {name + "/edge", edge_in + 2 * node_in + global_in, edge_sizes, activation, activation};
}

Mlp GraphBlock::node_mlp() const {
  const int in = node_memory > 0 ? node_memory : edge_out() + node_in + global_in;
  return {name + "/node", in, node_sizes, activation,
          linear_node_head ? Activation::kIdentity : activation};
}

Mlp GraphBlock::global_mlp() const {
  return {name + "/global", edge_out() + node_out() + global_in, global_sizes, activation,
          linear_global_head ? Activation::kIdentity : activation};
}

GruCell GraphBlock::node_gru() const {
  return {name + "/node_gru", edge_out() + node_in + global_in, node_memory};
}

void GraphBlock::init(ParamTree& params, Rng& rng) const {
  if (edge_sizes.empty() || node_sizes.empty() || global_sizes.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "graph block needs edge, node and global layers");
  }
  edge_mlp().init(params, rng);
  if (node_memory > 0) node_gru().init(params, rng);
  node_mlp().init(params, rng);
  global_mlp().init(params, rng);
}

GraphBlock::Output GraphBlock::operator()(const Tape& tape, const GraphBatch& g,
                                          const GraphIndex& index, Var node_hidden) const {
  Tape& t = *g.nodes.tape();
  const Var v_s = gather_rows(g.nodes, index.senders);
  const Var v_r = gather_rows(g.nodes, index.receivers);
  const Var u_e = gather_rows(g.globals, index.edge_graph);
  const Var edge_input = g.edges.valid() ? concat_cols({g.edges, v_s, v_r, u_e})
                                         : concat_cols({v_s, v_r, u_e});
  const Var edges = edge_mlp()(tape, edge_input);

  const Var incoming = scatter_rows(edges, index.receivers, index.num_nodes());
  const Var u_v = gather_rows(g.globals, index.node_graph);
  Var node_input = concat_cols({incoming, g.nodes, u_v});
  Output out;
  if (node_memory > 0) {
    if (!node_hidden.valid()) {
      node_hidden = t.constant(Matrix::Zero(index.num_nodes(), node_memory));
    }
    out.node_hidden = node_gru()(tape, node_input, node_hidden);
    node_input = out.node_hidden;
  }
  const Var nodes = node_mlp()(tape, node_input);

  const Var edge_sum = scatter_rows(edges, index.edge_graph, index.num_graphs);
  const Var node_sum = scatter_rows(nodes, index.node_graph, index.num_graphs);
  const Var globals = global_mlp()(tape, concat_cols({edge_sum, node_sum, g.globals}));
  out.graph = {nodes, edges, globals};
  return out;
}

}  // namespace cpr::nn
