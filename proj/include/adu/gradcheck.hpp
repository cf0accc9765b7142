#pragma once

#include <functional>
#include <string>
#include <vector>

#include "adu/graph.hpp"

namespace adu {

// Builds a real scalar loss from graph leaves. The same builder is used for
// the reverse-mode pass and for plain forward evaluations, so the finite
// difference reference never touches the backward rules it checks.
using LossBuilder =
    std::function<ad::Var(ad::Graph&, std::vector<ad::Var>&)>;

// Central finite differences with step h on every real and imaginary
// component of every leaf. Returns the worst relative error, defined as
// |ad - fd| / max(1, |ad|, |fd|).
double fd_max_rel_err(const LossBuilder& build,
                      const std::vector<ad::Tensor>& leaves, double h = 1e-5);

struct GradCheckItem {
  std::string family;
  double max_rel_err = 0.0;
  double tol = 0.0;
  bool pass = false;
};

// Extra op families injected by tests (harness self-test).
using ExtraFamily = std::function<GradCheckItem(uint64_t seed)>;

// Checks every registered op family against finite differences.
std::vector<GradCheckItem> run_gradcheck(
    uint64_t seed, const std::vector<ExtraFamily>& extra = {});

bool gradcheck_all_pass(const std::vector<GradCheckItem>& items);

}  // namespace adu
