#pragma once

#include <vector>

#include "adu/channel.hpp"
#include "adu/graph.hpp"
#include "adu/ops.hpp"

namespace adu::wmmse {

using ad::CMat;
using ad::Graph;
using ad::Index;
using ad::Tensor;
using ad::Var;

// Batched problem dimensions: S stacked network realizations of an M-cell,
// K-users-per-cell system. Users are cell-major: user u lives in cell u/K.
struct SystemShape {
  int S = 1;
  int M = 1;
  int K = 1;
  int Nt = 1;
  int Nr = 1;
  int N() const { return M * K; }
  Index users() const { return static_cast<Index>(S) * N(); }
  Index pairs() const { return users() * N(); }
  Index cells() const { return static_cast<Index>(S) * M; }
  Index cellpairs() const { return cells() * N(); }
};

// Precomputed gather patterns for the batched update equations.
struct IndexMaps {
  std::vector<Index> pair_to_v;        // (s,u,v) -> s*N+v
  std::vector<Index> pair_to_u;        // (s,u,v) -> s*N+u
  std::vector<Index> user_to_cell;     // (s,u)   -> s*M + cell(u)
  std::vector<Index> cellpair_to_pairA;  // (s,i,m) -> pair (s, m, i*K)
  std::vector<Index> cellpair_to_user; // (s,i,m) -> s*N+m
  std::vector<Index> own_pair;         // (s,u)   -> pair (s, u, u)
  std::vector<Index> pair_nonown;      // identity, own pairs -> -1
  explicit IndexMaps(const SystemShape& sh);
};

struct BeamformerSet {
  std::vector<CMat> V;  // per user, Nt x Nr, at the serving BS
  std::vector<int> cell_of;
  std::vector<double> cell_power(int cells) const;
  // Throws ContractError if any cell exceeds P_T * (1 + tol).
  void validate_power(double power, int cells, double tol = 1e-6) const;
};

struct WmmseState {
  std::vector<CMat> U;   // Nr x Nr receive filters
  std::vector<CMat> Wt;  // Nr x Nr weights
  BeamformerSet V;
};

struct RateReport {
  std::vector<double> per_user_bits;
  double sum_bits = 0.0;
  std::vector<double> cell_power;
};

enum class InitPolicy { MatchedFilter };

// ---- Graph-level builders (shared by the solver, baselines and the
// learned pipeline; differentiable whenever the inputs carry gradients). ----

struct ChannelVars {
  Var Z;      // [S*N, Nr, Nt]
  Var Apair;  // [S*N*N, Nr, Nt], pair-major, Apair[s,u,v] = H_{u, cell(v)}
};

// Matched-filter start: V0 = Z^H scaled so every cell splits P_T equally.
Var build_init_v(Graph& g, const SystemShape& sh, Var Z, double power);

Var build_update_u(Graph& g, const SystemShape& sh, const IndexMaps& im,
                   const ChannelVars& ch, Var V, double sigma2, double power);
Var build_update_w(Graph& g, Var Z, Var V, Var U);
Var build_update_v(Graph& g, const SystemShape& sh, const IndexMaps& im,
                   const ChannelVars& ch, Var U, Var W, double sigma2,
                   double power);

// Weighted-MSE surrogate at the given state (natural log), one value for the
// whole batch (summed over users and samples).
double surrogate_value(Graph& g, const SystemShape& sh, const IndexMaps& im,
                       const ChannelVars& ch, Var U, Var W, Var V,
                       double sigma2, double power);

struct WmmseBuild {
  Var U, W, V;
  std::vector<double> surrogate_trace;  // iters+1 values when requested
};

WmmseBuild build_wmmse(Graph& g, const SystemShape& sh, const ChannelVars& ch,
                       double sigma2, double power, int iters,
                       bool want_surrogate);

// Per-user achievable rates in bits per channel use, [S*N,1,1] real.
Var build_per_user_rates(Graph& g, const SystemShape& sh, const IndexMaps& im,
                         const ChannelVars& true_ch, Var V, double sigma2);

// ---- Value-level API over single samples. ----

SystemShape shape_of(const sim::ChannelSample& s);
Tensor stack_z(const sim::ChannelSample& s);
Tensor stack_a(const sim::ChannelSample& s);
Tensor stack_v(const BeamformerSet& v);
BeamformerSet unstack_v(const Tensor& t, const std::vector<int>& cell_of);

RateReport sum_rate(const sim::ChannelSample& s, const BeamformerSet& v,
                    double sigma2);
std::vector<CMat> wmmse_update_U(const sim::ChannelSample& s,
                                 const WmmseState& st, double sigma2,
                                 double power);
std::vector<CMat> wmmse_update_W(const sim::ChannelSample& s,
                                 const WmmseState& st);
BeamformerSet wmmse_update_V(const sim::ChannelSample& s, const WmmseState& st,
                             double sigma2, double power);
double wmmse_surrogate(const sim::ChannelSample& s, const WmmseState& st,
                       double sigma2, double power);

struct SolveResult {
  BeamformerSet V;
  RateReport report;
  std::vector<double> surrogate_trace;
};

SolveResult run_wmmse(const sim::ChannelSample& s, double sigma2, double power,
                      int iters, InitPolicy init = InitPolicy::MatchedFilter);

}  // namespace adu::wmmse
