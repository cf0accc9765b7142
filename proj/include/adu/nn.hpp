#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "adu/graph.hpp"
#include "adu/ops.hpp"
#include "adu/rng.hpp"

namespace adu::nn {

using ad::Graph;
using ad::Index;
using ad::Tensor;
using ad::Var;

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// alpha(epoch) = min(alpha_max, alpha0 + rate * epoch).
struct AnnealSchedule {
  double alpha0 = 1.0;
  double rate = 0.1;
  double alpha_max = 20.0;
  double alpha(int epoch) const;
  void validate() const;
};

// Gradients keyed by canonical parameter name. Complex leaves expose the
// (dL/dRe, dL/dIm) pair through re()/im().
class GradientMap {
 public:
  void add(const std::string& name, const Tensor& g);
  const Tensor* find(const std::string& name) const;
  Tensor re(const std::string& name) const;
  Tensor im(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  double l2_norm() const;

 private:
  std::map<std::string, Tensor> grads_;
  std::vector<std::string> order_;
};

// Named parameter arrays with per-parameter Adam state. Aliased names share
// one physical array and are stored once in checkpoints.
class ParamStore {
 public:
  void add(const std::string& name, Tensor init, bool trainable = true);
  void add_alias(const std::string& alias, const std::string& target);
  bool has(const std::string& name) const;
  std::string canonical(const std::string& name) const;
  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;
  int64_t step_count(const std::string& name) const;
  std::vector<std::string> trainable_names() const;  // canonical only
  std::vector<std::string> all_names() const;        // canonical only

  void adam_step(const GradientMap& grads, const AdamConfig& cfg);

  void save(const std::string& path) const;
  static ParamStore load(const std::string& path);
  bool equal_bits(const ParamStore& o) const;

 private:
  struct Entry {
    Tensor value;
    bool trainable = false;
    Tensor m, v;
    int64_t t = 0;
  };
  Entry& entry(const std::string& name);
  const Entry& entry(const std::string& name) const;

  std::map<std::string, Entry> entries_;
  std::map<std::string, std::string> aliases_;
  std::vector<std::string> order_;
  std::vector<std::string> alias_order_;
};

// Binds store parameters as graph leaves, one leaf per canonical name, so a
// parameter used many times accumulates one summed gradient.
class Binding {
 public:
  Binding(Graph& g, ParamStore& store, bool with_grad)
      : g_(&g), store_(&store), with_grad_(with_grad) {}
  Var leaf(const std::string& name);
  GradientMap collect() const;  // call after Graph::backward

 private:
  Graph* g_;
  ParamStore* store_;
  bool with_grad_;
  std::map<std::string, Var> bound_;
  std::vector<std::string> bound_order_;
};

// y = x W^T + b rows; parameters <name>.W with shape [out, in], <name>.b.
struct DenseLayer {
  std::string name;
  Index in = 0, out = 0;
  static DenseLayer create(ParamStore& store, const std::string& name,
                           Index in, Index out, Rng& rng);
  static DenseLayer attach(const ParamStore& store, const std::string& name);
  Var forward(Binding& bind, Var x) const;
};

struct BatchNormLayer {
  std::string name;
  Index features = 0;
  double momentum = 0.9;
  double epsilon = 1e-5;
  static BatchNormLayer create(ParamStore& store, const std::string& name,
                               Index features);
  static BatchNormLayer attach(const ParamStore& store,
                               const std::string& name);
  // Train mode standardizes by batch statistics (batch >= 2) and updates the
  // running estimates in the store; eval mode uses the stored estimates.
  Var forward(Binding& bind, ParamStore& store, Var x, bool train) const;
};

// Fully-connected stack: dense -> batchnorm -> relu per hidden layer, then a
// linear output layer.
struct Mlp {
  std::vector<DenseLayer> dense;
  std::vector<BatchNormLayer> bn;
  static Mlp create(ParamStore& store, const std::string& name, Index in,
                    const std::vector<Index>& hidden, Index out, Rng& rng);
  static Mlp attach(const ParamStore& store, const std::string& name,
                    Index in, const std::vector<Index>& hidden, Index out);
  Var forward(Binding& bind, ParamStore& store, Var x, bool train) const;
};

}  // namespace adu::nn
