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

#ifndef CPR_NN_LAYERS_H_
#define CPR_NN_LAYERS_H_

#include <span>
#include <string>
#include <vector>

#include "cpr/nn/param_tree.h"
#include "cpr/nn/tape.h"
#include "cpr/rng.h"

namespace cpr::nn {

enum class Activation { kIdentity, kTanh, kRelu };

Var activate(Var x, Activation act);

// y = act(x W + b) with W: in x out, b: 1 x out. Rows of x are samples.
struct Dense {
  std::string name;
  int in = 0;
  int out = 0;
  Activation activation = Activation::kIdentity;

  // Fan-in scaled uniform weights, zero bias.
  void init(ParamTree& params, Rng& rng) const;
  Var operator()(const Tape& tape, Var x) const;
};

Var fully_connected(const Tape& tape, const std::string& name, Var x, Activation activation);

// Reset-before-candidate gated recurrent unit:
//   z = sigmoid(x Wz + h Uz + bz)
//   r = sigmoid(x Wr + h Ur + br)
//   n = tanh(x Wn + (r * h) Un + bn)
//   h' = (1 - z) * n + z * h
struct GruCell {
  std::string name;
  int in = 0;
  int hidden = 0;

  void init(ParamTree& params, Rng& rng) const;
  Var operator()(const Tape& tape, Var x, Var h) const;
};

// A stack of dense layers; hidden layers use `activation`, the last one uses
// `last_activation`.
struct Mlp {
  std::string name;
  int in = 0;
  std::vector<int> sizes;
  Activation activation = Activation::kRelu;
  Activation last_activation = Activation::kRelu;

  int out() const { return sizes.empty() ? in : sizes.back(); }
  void init(ParamTree& params, Rng& rng) const;
  Var operator()(const Tape& tape, Var x) const;
};

// Fully connected directed graphs without self loops, batched: graph g owns
// nodes [g*p, (g+1)*p) and edges [g*p*(p-1), (g+1)*p*(p-1)).
struct GraphIndex {
  int num_graphs = 0;
  int nodes_per_graph = 0;
  std::vector<int> senders;
  std::vector<int> receivers;
  std::vector<int> node_graph;
  std::vector<int> edge_graph;

  static GraphIndex fully_connected(int num_graphs, int nodes_per_graph);
  int num_nodes() const { return num_graphs * nodes_per_graph; }
  int num_edges() const { return static_cast<int>(senders.size()); }
};

struct GraphBatch {
  Var nodes;    // num_nodes x d_v
  Var edges;    // num_edges x d_e; invalid Var means empty attributes
  Var globals;  // num_graphs x d_u
};

// One graph-network block. Update order is edges, then nodes, then globals:
//   e'_sr = phi_e(e_sr, v_s, v_r, u)
//   v'_r  = phi_v(sum_s e'_sr, v_r, u)      (optionally through a GRU first)
//   u'    = phi_u(sum e', sum v', u)
// phi_e and phi_v are shared across all edges and nodes.
struct GraphBlock {
  std::string name;
  int edge_in = 0;  // 0: empty edge attributes (phi_e's bias is the learned constant)
  int node_in = 0;
  int global_in = 0;
  std::vector<int> edge_sizes;
  std::vector<int> node_sizes;
  std::vector<int> global_sizes;
  int node_memory = 0;  // GRU hidden size inside phi_v; 0 disables memory
  Activation activation = Activation::kRelu;
  // When set, the last layer of phi_v / phi_u is linear.
  bool linear_node_head = false;
  bool linear_global_head = false;

  int edge_out() const { return edge_sizes.back(); }
  int node_out() const { return node_sizes.back(); }
  int global_out() const { return global_sizes.back(); }

  void init(ParamTree& params, Rng& rng) const;

  struct Output {
    GraphBatch graph;
    Var node_hidden;  // only when node_memory > 0
  };
  Output operator()(const Tape& tape, const GraphBatch& g, const GraphIndex& index,
                    Var node_hidden = {}) const;

 private:
  Mlp edge_mlp() const;
  Mlp node_mlp() const;
  Mlp global_mlp() const;
  GruCell node_gru() const;
};

}  // namespace cpr::nn

#endif  // CPR_NN_LAYERS_H_
