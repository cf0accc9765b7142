#include "adu/graph.hpp"

#include <cmath>

#include "adu/errors.hpp"

namespace adu::ad {

Var Graph::input(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::emit(Tensor value, std::vector<int> parents, BackFn back) {
  Node n;
  n.value = std::move(value);
  for (int p : parents) {
    if (nodes_[p].needs_grad) {
      n.needs_grad = true;
      break;
    }
  }
  n.parents = std::move(parents);
  if (n.needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Graph::accumulate(int id, const Tensor& g) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return;
  if (!n.has_grad) {
    if (n.value.is_real()) {
      n.grad = Tensor::real(n.value.batch(), n.value.rows(), n.value.cols());
    } else {
      n.grad =
          Tensor::complex(n.value.batch(), n.value.rows(), n.value.cols());
    }
    n.has_grad = true;
  }
  n.grad.add_inplace(g);
}

void Graph::backward(Var loss) {
  if (loss.g != this) throw ContractError("backward: loss from another graph");
  Node& ln = nodes_[loss.id];
  const Tensor& lv = ln.value;
  if (lv.batch() != 1 || lv.rows() != 1 || lv.cols() != 1)
    throw ContractError("backward: loss must be a scalar");
  if (!lv.is_real()) {
    if (std::abs(lv.cat(0, 0, 0).imag()) > 1e-9)
      throw ContractError("backward: loss has a non-negligible imaginary part");
  }
  if (!ln.needs_grad)
    throw ContractError("backward: loss does not depend on any trainable leaf");

  Tensor seed;
  if (lv.is_real()) {
    seed = Tensor::scalar(1.0);
  } else {
    seed = Tensor::complex(1, 1, 1);
    seed.cat(0, 0, 0) = cplx(1.0, 0.0);
  }
  accumulate(loss.id, seed);

  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || !n.has_grad || !n.back) continue;
    n.back(*this, id);
  }
}

const Tensor* Graph::grad(Var v) const {
  const Node& n = nodes_[v.id];
  return n.has_grad ? &n.grad : nullptr;
}

}  // namespace adu::ad
