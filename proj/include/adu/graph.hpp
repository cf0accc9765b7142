#pragma once

#include <functional>
#include <vector>

#include "adu/tensor.hpp"

namespace adu::ad {

class Graph;

// Handle to a node of a recorded computation. Values are computed eagerly as
// ops are emitted; backward() later walks the tape in reverse.
struct Var {
  Graph* g = nullptr;
  int id = -1;
  bool valid() const { return g != nullptr && id >= 0; }
  const Tensor& value() const;
};

// Tape-style computation graph. Complex adjoints use the convention
// G = dL/dRe(X) + i*dL/dIm(X) for a real scalar loss L, so that
// dL = Re(tr(G^H dX)); real adjoints are plain Jacobian-transpose products.
class Graph {
 public:
  using BackFn = std::function<void(Graph&, int self)>;

  Var input(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return input(std::move(value), false); }

  // Used by op implementations.
  Var emit(Tensor value, std::vector<int> parents, BackFn back);

  const Tensor& value(int id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(int id) const { return nodes_[id].needs_grad; }

  // Runs reverse-mode accumulation from a real scalar loss node.
  void backward(Var loss);

  // Adjoint of a node after backward(); nullptr if none was accumulated.
  const Tensor* grad(Var v) const;

  // Adds g into the adjoint buffer of node id (no-op for non-grad nodes).
  void accumulate(int id, const Tensor& g);

  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool needs_grad = false;
    std::vector<int> parents;
    BackFn back;
  };
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return g->value(id); }

}  // namespace adu::ad
