#include "adu/wmmse.hpp"

#include <cmath>

#include "adu/errors.hpp"

namespace adu::wmmse {

using namespace adu::ad;

namespace {

// Absolute diagonal floor keeping the degenerate all-zero-channel case
// well-defined (V stays zero instead of tripping the singularity check).
constexpr double kDiagFloor = 1e-30;
// Relative diagonal loading on the A and B systems. Physical channels keep
// these matrices far better conditioned than 1e11, so the loading is inert
// there; learned pre-processed channels can drive a cell's noise ridge many
// orders below its interference terms, and without the loading the Cholesky
// factorization dies around condition 1e12.
constexpr double kRelFloor = 1e-11;
constexpr double kPowerHeadroom = 1e-6;

Var scaled_identity(Graph& g, Index batch, Index n, Var scalars) {
  Var eye = g.constant(make_identity(batch, n, Dtype::Cplx));
  return mul_bscalar(eye, scalars);
}

Var floored(Graph& g, Var a) {
  const Tensor& v = a.value();
  Tensor eps = make_identity(v.batch(), v.rows(), Dtype::Cplx);
  for (Index b = 0; b < v.batch(); ++b) eps.c(b) *= kDiagFloor;
  Var loading = scale(real_part(trace(a)), kRelFloor / double(v.rows()));
  Var loaded = add(a, scaled_identity(g, v.batch(), v.rows(), loading));
  return add(loaded, g.constant(std::move(eps)));
}

// sigma_tilde^2 per cell: (sigma2 / P_T) * sum_{users of the cell} Tr(V V^H),
// gathered back to users. The per-cell scaling makes each update an exact
// block minimizer of the weighted-MSE surrogate, which is what the
// monotonicity contract certifies.
Var noise_scaling_per_user(Graph& g, const SystemShape& sh, const IndexMaps& im,
                           Var V, double sigma2, double power) {
  Var pu = real_part(trace(matmul(hermitian(V), V)));  // [S*N,1,1]
  Var pc = group_sum(pu, sh.K);                        // [S*M,1,1]
  Var st = scale(pc, sigma2 / power);
  return gather(st, im.user_to_cell);  // [S*N,1,1]
}

}  // namespace

IndexMaps::IndexMaps(const SystemShape& sh) {
  const int N = sh.N();
  pair_to_v.resize(sh.pairs());
  pair_to_u.resize(sh.pairs());
  own_pair.resize(sh.users());
  pair_nonown.resize(sh.pairs());
  for (int s = 0; s < sh.S; ++s) {
    for (int u = 0; u < N; ++u) {
      const Index user = static_cast<Index>(s) * N + u;
      own_pair[user] = (static_cast<Index>(s) * N + u) * N + u;
      for (int v = 0; v < N; ++v) {
        const Index p = (static_cast<Index>(s) * N + u) * N + v;
        pair_to_v[p] = static_cast<Index>(s) * N + v;
        pair_to_u[p] = user;
        pair_nonown[p] = (u == v) ? -1 : p;
      }
    }
  }
  user_to_cell.resize(sh.users());
  for (int s = 0; s < sh.S; ++s)
    for (int u = 0; u < N; ++u)
      user_to_cell[static_cast<Index>(s) * N + u] =
          static_cast<Index>(s) * sh.M + u / sh.K;
  cellpair_to_pairA.resize(sh.cellpairs());
  cellpair_to_user.resize(sh.cellpairs());
  for (int s = 0; s < sh.S; ++s) {
    for (int i = 0; i < sh.M; ++i) {
      for (int m = 0; m < N; ++m) {
        const Index cp = (static_cast<Index>(s) * sh.M + i) * N + m;
        cellpair_to_pairA[cp] =
            (static_cast<Index>(s) * N + m) * N + static_cast<Index>(i) * sh.K;
        cellpair_to_user[cp] = static_cast<Index>(s) * N + m;
      }
    }
  }
}

std::vector<double> BeamformerSet::cell_power(int cells) const {
  std::vector<double> p(cells, 0.0);
  for (size_t u = 0; u < V.size(); ++u) p[cell_of[u]] += V[u].squaredNorm();
  return p;
}

void BeamformerSet::validate_power(double power, int cells, double tol) const {
  std::vector<double> p = cell_power(cells);
  for (int i = 0; i < cells; ++i) {
    if (!(p[i] <= power * (1.0 + tol)))
      throw ContractError("beamformer set exceeds the per-cell power budget");
  }
}

Var build_init_v(Graph& g, const SystemShape& sh, Var Z, double power) {
  Var tr = real_part(trace(matmul(Z, hermitian(Z))));  // ||Z_u||_F^2
  Var denom = affine(tr, 1.0, kDiagFloor);
  Var s = sqrt_e(affine(reciprocal_e(denom), power / sh.K, 0.0));
  return mul_bscalar(hermitian(Z), s);
}

Var build_update_u(Graph& g, const SystemShape& sh, const IndexMaps& im,
                   const ChannelVars& ch, Var V, double sigma2, double power) {
  Var hv = matmul(ch.Apair, gather(V, im.pair_to_v));  // [S*N*N, Nr, Nr]
  Var cov = group_sum(matmul(hv, hermitian(hv)), sh.N());
  Var sigt = noise_scaling_per_user(g, sh, im, V, sigma2, power);
  Var a = floored(g, add(cov, scaled_identity(g, sh.users(), sh.Nr, sigt)));
  return matmul(inverse(a, /*hermitian_pd=*/true), matmul(ch.Z, V));
}

Var build_update_w(Graph& g, Var Z, Var V, Var U) {
  const Index nr = U.value().cols();
  Var eye = g.constant(make_identity(U.value().batch(), nr, Dtype::Cplx));
  Var e = sub(eye, matmul(hermitian(U), matmul(Z, V)));
  // E is Hermitian PD at the MMSE receiver; the Cholesky path also keeps W
  // exactly Hermitian when E is nearly singular (very high per-stream SINR),
  // which the downstream B factorization depends on. Non-MMSE states fall
  // back to LU inside the op.
  return inverse(e, /*hermitian_pd=*/true);
}

Var build_update_v(Graph& g, const SystemShape& sh, const IndexMaps& im,
                   const ChannelVars& ch, Var U, Var W, double sigma2,
                   double power) {
  Var uwu = matmul(matmul(U, W), hermitian(U));  // [S*N, Nr, Nr]
  Var tw = real_part(trace(uwu));
  Var b0 = scale(group_sum(tw, sh.K), sigma2 / power);  // [S*M,1,1]

  Var hmi = gather(ch.Apair, im.cellpair_to_pairA);  // [S*M*N, Nr, Nt]
  Var gms = gather(uwu, im.cellpair_to_user);        // [S*M*N, Nr, Nr]
  Var term = matmul(hermitian(hmi), matmul(gms, hmi));
  Var bsum = group_sum(term, sh.N());  // [S*M, Nt, Nt]
  Var b = floored(g, add(bsum, scaled_identity(g, sh.cells(), sh.Nt, b0)));

  Var binv_user = gather(inverse(b, /*hermitian_pd=*/true), im.user_to_cell);
  Var vraw = matmul(binv_user, matmul(hermitian(ch.Z), matmul(U, W)));

  // Exact per-cell rescale, active only past the feasibility headroom so the
  // nominal trajectory (which hovers at full power) stays on a smooth branch.
  Var pc = group_sum(real_part(trace(matmul(hermitian(vraw), vraw))), sh.K);
  Var sc = power_backstop(pc, power, kPowerHeadroom);
  return mul_bscalar(vraw, gather(sc, im.user_to_cell));
}

double surrogate_value(Graph& g, const SystemShape& sh, const IndexMaps& im,
                       const ChannelVars& ch, Var U, Var W, Var V,
                       double sigma2, double power) {
  Var hv = matmul(ch.Apair, gather(V, im.pair_to_v));
  Var x = matmul(hermitian(gather(U, im.pair_to_u)), hv);  // U^H H V per pair
  Var s_all = group_sum(matmul(x, hermitian(x)), sh.N());
  Var d = matmul(hermitian(U), matmul(ch.Z, V));
  Var sigt = noise_scaling_per_user(g, sh, im, V, sigma2, power);
  Var uu = mul_bscalar(matmul(hermitian(U), U), sigt);
  Var eye = g.constant(make_identity(sh.users(), sh.Nr, Dtype::Cplx));
  Var emse = add(sub(sub(eye, d), hermitian(d)), add(s_all, uu));
  Var tr_we = real_part(trace(matmul(W, emse)));

  Var wsym = scale(add(W, hermitian(W)), 0.5);
  Var ld = logdet_hpd(wsym);

  Var per_user = sub(tr_we, ld);
  Var total = sum_entries(per_user);
  return total.value().rat(0, 0, 0);
}

WmmseBuild build_wmmse(Graph& g, const SystemShape& sh, const ChannelVars& ch,
                       double sigma2, double power, int iters,
                       bool want_surrogate) {
  if (iters < 1) throw ContractError("run_wmmse: iters must be >= 1");
  IndexMaps im(sh);
  WmmseBuild out;
  Var V = build_init_v(g, sh, ch.Z, power);
  // Initial state for the surrogate trace: U = 0, W = I.
  Var U = g.constant(Tensor::complex(sh.users(), sh.Nr, sh.Nr));
  Var W = g.constant(make_identity(sh.users(), sh.Nr, Dtype::Cplx));
  if (want_surrogate)
    out.surrogate_trace.push_back(
        surrogate_value(g, sh, im, ch, U, W, V, sigma2, power));
  for (int t = 0; t < iters; ++t) {
    U = build_update_u(g, sh, im, ch, V, sigma2, power);
    W = build_update_w(g, ch.Z, V, U);
    V = build_update_v(g, sh, im, ch, U, W, sigma2, power);
    if (want_surrogate)
      out.surrogate_trace.push_back(
          surrogate_value(g, sh, im, ch, U, W, V, sigma2, power));
  }
  out.U = U;
  out.W = W;
  out.V = V;
  return out;
}

Var build_per_user_rates(Graph& g, const SystemShape& sh, const IndexMaps& im,
                         const ChannelVars& true_ch, Var V, double sigma2) {
  if (!(sigma2 > 0)) throw ContractError("sum_rate: sigma2 must be positive");
  Var hv = matmul(true_ch.Apair, gather(V, im.pair_to_v));
  Var pp = matmul(hv, hermitian(hv));  // per-pair signal covariance
  // Interference-plus-noise first (no cancellation), then add the own term.
  Var pp_masked = gather(pp, im.pair_nonown);
  Var noise = g.constant([&] {
    Tensor t = make_identity(sh.users(), sh.Nr, Dtype::Cplx);
    for (Index b = 0; b < t.batch(); ++b) t.c(b) *= sigma2;
    return t;
  }());
  Var c_int = add(group_sum(pp_masked, sh.N()), noise);
  Var c_tot = add(c_int, gather(pp, im.own_pair));
  return scale(sub(logdet_hpd(c_tot), logdet_hpd(c_int)), 1.0 / M_LN2);
}

SystemShape shape_of(const sim::ChannelSample& s) {
  SystemShape sh;
  sh.S = 1;
  const int n = static_cast<int>(s.Z.size());
  if (n == 0 || s.cell_of.size() != s.Z.size() ||
      s.A.size() != static_cast<size_t>(n) * n)
    throw DimensionError("channel sample is inconsistent");
  sh.M = s.cell_of.back() + 1;
  if (n % sh.M != 0) throw DimensionError("users are not cell-major");
  sh.K = n / sh.M;
  for (int u = 0; u < n; ++u)
    if (s.cell_of[u] != u / sh.K)
      throw DimensionError("users are not cell-major");
  sh.Nr = static_cast<int>(s.Z[0].rows());
  sh.Nt = static_cast<int>(s.Z[0].cols());
  return sh;
}

Tensor stack_z(const sim::ChannelSample& s) {
  const Index n = static_cast<Index>(s.Z.size());
  Tensor t = Tensor::complex(n, s.Z[0].rows(), s.Z[0].cols());
  for (Index u = 0; u < n; ++u) t.c(u) = s.Z[u];
  return t;
}

Tensor stack_a(const sim::ChannelSample& s) {
  const Index p = static_cast<Index>(s.A.size());
  Tensor t = Tensor::complex(p, s.A[0].rows(), s.A[0].cols());
  for (Index i = 0; i < p; ++i) t.c(i) = s.A[i];
  return t;
}

Tensor stack_v(const BeamformerSet& v) {
  const Index n = static_cast<Index>(v.V.size());
  Tensor t = Tensor::complex(n, v.V[0].rows(), v.V[0].cols());
  for (Index u = 0; u < n; ++u) t.c(u) = v.V[u];
  return t;
}

BeamformerSet unstack_v(const Tensor& t, const std::vector<int>& cell_of) {
  BeamformerSet out;
  out.cell_of = cell_of;
  out.V.resize(t.batch());
  for (Index u = 0; u < t.batch(); ++u) out.V[u] = t.c(u);
  return out;
}

namespace {

RateReport report_from(const Tensor& rates, const BeamformerSet& v, int cells) {
  RateReport rep;
  rep.per_user_bits.resize(rates.batch());
  for (Index u = 0; u < rates.batch(); ++u) {
    rep.per_user_bits[u] = rates.rat(u, 0, 0);
    rep.sum_bits += rep.per_user_bits[u];
  }
  rep.cell_power = v.cell_power(cells);
  return rep;
}

}  // namespace

RateReport sum_rate(const sim::ChannelSample& s, const BeamformerSet& v,
                    double sigma2) {
  SystemShape sh = shape_of(s);
  if (v.V.size() != s.Z.size()) throw DimensionError("sum_rate: V size");
  IndexMaps im(sh);
  Graph g;
  ChannelVars ch{g.constant(stack_z(s)), g.constant(stack_a(s))};
  Var rates = build_per_user_rates(g, sh, im, ch, g.constant(stack_v(v)), sigma2);
  return report_from(rates.value(), v, sh.M);
}

std::vector<CMat> wmmse_update_U(const sim::ChannelSample& s,
                                 const WmmseState& st, double sigma2,
                                 double power) {
  SystemShape sh = shape_of(s);
  IndexMaps im(sh);
  Graph g;
  ChannelVars ch{g.constant(stack_z(s)), g.constant(stack_a(s))};
  Var u = build_update_u(g, sh, im, ch, g.constant(stack_v(st.V)), sigma2,
                         power);
  std::vector<CMat> out(sh.users());
  for (Index i = 0; i < sh.users(); ++i) out[i] = u.value().c(i);
  return out;
}

std::vector<CMat> wmmse_update_W(const sim::ChannelSample& s,
                                 const WmmseState& st) {
  SystemShape sh = shape_of(s);
  Graph g;
  Var z = g.constant(stack_z(s));
  Tensor u = Tensor::complex(sh.users(), sh.Nr, sh.Nr);
  for (Index i = 0; i < sh.users(); ++i) u.c(i) = st.U[i];
  Var w = build_update_w(g, z, g.constant(stack_v(st.V)), g.constant(u));
  std::vector<CMat> out(sh.users());
  for (Index i = 0; i < sh.users(); ++i) out[i] = w.value().c(i);
  return out;
}

BeamformerSet wmmse_update_V(const sim::ChannelSample& s, const WmmseState& st,
                             double sigma2, double power) {
  SystemShape sh = shape_of(s);
  IndexMaps im(sh);
  Graph g;
  ChannelVars ch{g.constant(stack_z(s)), g.constant(stack_a(s))};
  Tensor u = Tensor::complex(sh.users(), sh.Nr, sh.Nr);
  Tensor w = Tensor::complex(sh.users(), sh.Nr, sh.Nr);
  for (Index i = 0; i < sh.users(); ++i) {
    u.c(i) = st.U[i];
    w.c(i) = st.Wt[i];
  }
  Var v = build_update_v(g, sh, im, ch, g.constant(u), g.constant(w), sigma2,
                         power);
  return unstack_v(v.value(), s.cell_of);
}

double wmmse_surrogate(const sim::ChannelSample& s, const WmmseState& st,
                       double sigma2, double power) {
  SystemShape sh = shape_of(s);
  IndexMaps im(sh);
  Graph g;
  ChannelVars ch{g.constant(stack_z(s)), g.constant(stack_a(s))};
  Tensor u = Tensor::complex(sh.users(), sh.Nr, sh.Nr);
  Tensor w = Tensor::complex(sh.users(), sh.Nr, sh.Nr);
  for (Index i = 0; i < sh.users(); ++i) {
    u.c(i) = st.U[i];
    w.c(i) = st.Wt[i];
  }
  return surrogate_value(g, sh, im, ch, g.constant(u), g.constant(w),
                         g.constant(stack_v(st.V)), sigma2, power);
}

SolveResult run_wmmse(const sim::ChannelSample& s, double sigma2, double power,
                      int iters, InitPolicy init) {
  (void)init;  // matched filter is the only policy
  SystemShape sh = shape_of(s);
  IndexMaps im(sh);
  Graph g;
  ChannelVars ch{g.constant(stack_z(s)), g.constant(stack_a(s))};
  WmmseBuild b = build_wmmse(g, sh, ch, sigma2, power, iters,
                             /*want_surrogate=*/true);
  SolveResult out;
  out.V = unstack_v(b.V.value(), s.cell_of);
  Var rates = build_per_user_rates(g, sh, im, ch, b.V, sigma2);
  out.report = report_from(rates.value(), out.V, sh.M);
  out.surrogate_trace = std::move(b.surrogate_trace);
  return out;
}

}  // namespace adu::wmmse
