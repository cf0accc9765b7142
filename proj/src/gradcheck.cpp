#include "adu/gradcheck.hpp"

#include <cmath>

#include "adu/errors.hpp"
#include "adu/ops.hpp"
#include "adu/rng.hpp"
#include "adu/wmmse.hpp"

namespace adu {

using ad::CMat;
using ad::cplx;
using ad::Graph;
using ad::Index;
using ad::Tensor;
using ad::Var;

namespace {

double eval_loss(const LossBuilder& build, const std::vector<Tensor>& leaves) {
  Graph g;
  std::vector<Var> lv;
  lv.reserve(leaves.size());
  for (const Tensor& t : leaves) lv.push_back(g.input(t, false));
  Var loss = build(g, lv);
  const Tensor& v = loss.value();
  return v.is_real() ? v.rat(0, 0, 0) : v.cat(0, 0, 0).real();
}

double rel_err(double ad_v, double fd_v) {
  double denom = std::max({1.0, std::abs(ad_v), std::abs(fd_v)});
  return std::abs(ad_v - fd_v) / denom;
}

}  // namespace

double fd_max_rel_err(const LossBuilder& build,
                      const std::vector<Tensor>& leaves, double h) {
  Graph g;
  std::vector<Var> lv;
  lv.reserve(leaves.size());
  for (const Tensor& t : leaves) lv.push_back(g.input(t, true));
  Var loss = build(g, lv);
  g.backward(loss);

  std::vector<Tensor> grads;
  grads.reserve(leaves.size());
  for (const Var& v : lv) {
    const Tensor* gt = g.grad(v);
    if (gt != nullptr) {
      grads.push_back(*gt);
    } else {
      const Tensor& val = v.value();
      grads.push_back(val.is_real()
                          ? Tensor::real(val.batch(), val.rows(), val.cols())
                          : Tensor::complex(val.batch(), val.rows(),
                                            val.cols()));
    }
  }

  double worst = 0.0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    const Tensor& base = leaves[li];
    const Index n = base.size();
    const int parts = base.is_real() ? 1 : 2;
    for (Index f = 0; f < n; ++f) {
      for (int part = 0; part < parts; ++part) {
        std::vector<Tensor> pert = leaves;
        auto bump = [&](double delta) {
          Tensor& t = pert[li];
          if (t.is_real()) {
            t.rdata()[f] = base.rdata()[f] + delta;
          } else {
            cplx b = base.cdata()[f];
            t.cdata()[f] = part == 0 ? cplx(b.real() + delta, b.imag())
                                     : cplx(b.real(), b.imag() + delta);
          }
        };
        bump(h);
        double fp = eval_loss(build, pert);
        bump(-h);
        double fm = eval_loss(build, pert);
        double fd = (fp - fm) / (2.0 * h);
        double adv;
        if (base.is_real()) {
          adv = grads[li].rdata()[f];
        } else {
          cplx gc = grads[li].cdata()[f];
          adv = part == 0 ? gc.real() : gc.imag();
        }
        worst = std::max(worst, rel_err(adv, fd));
      }
    }
  }
  return worst;
}

bool gradcheck_all_pass(const std::vector<GradCheckItem>& items) {
  for (const auto& it : items)
    if (!it.pass) return false;
  return true;
}

namespace {

Tensor rnd_real(Rng& rng, Index b, Index r, Index c) {
  Tensor t = Tensor::real(b, r, c);
  for (Index i = 0; i < t.size(); ++i) t.rdata()[i] = rng.normal();
  return t;
}

Tensor rnd_cplx(Rng& rng, Index b, Index r, Index c) {
  Tensor t = Tensor::complex(b, r, c);
  for (Index i = 0; i < t.size(); ++i) t.cdata()[i] = rng.cnormal();
  return t;
}

Tensor rnd_hpd(Rng& rng, Index b, Index n, double ridge) {
  Tensor g = rnd_cplx(rng, b, n, n);
  Tensor t = Tensor::complex(b, n, n);
  for (Index i = 0; i < b; ++i)
    t.c(i) = g.c(i) * g.c(i).adjoint() + ridge * CMat::Identity(n, n);
  return t;
}

Var weighted(Graph& g, Var out, const Tensor& w) {
  Var wc = g.constant(w);
  if (out.value().is_real()) return ad::sum_entries(ad::hadamard(out, wc));
  return ad::sum_entries(ad::real_part(ad::hadamard(out, wc)));
}

GradCheckItem check_family(const std::string& name, double tol, double err) {
  return GradCheckItem{name, err, tol, err <= tol};
}

GradCheckItem family_matmul(uint64_t seed) {
  Rng rng(seed);
  Tensor a = rnd_cplx(rng, 1, 3, 4), b = rnd_cplx(rng, 1, 4, 2);
  Tensor w = rnd_cplx(rng, 1, 3, 2);
  auto build = [&](Graph& g, std::vector<Var>& lv) {
    return weighted(g, ad::matmul(lv[0], lv[1]), w);
  };
  return check_family("matmul", 1e-6, fd_max_rel_err(build, {a, b}));
}

GradCheckItem family_linear_ops(uint64_t seed) {
  Rng rng(seed + 1);
  Tensor a = rnd_cplx(rng, 2, 3, 3), b = rnd_cplx(rng, 2, 3, 3);
  Tensor w = rnd_cplx(rng, 2, 3, 3);
  auto build = [&](Graph& g, std::vector<Var>& lv) {
    Var x = ad::sub(ad::add(lv[0], ad::scale(lv[1], cplx(0.4, -1.2))),
                    ad::hermitian(lv[0]));
    return weighted(g, x, w);
  };
  return check_family("hermitian_add_scale", 1e-6,
                      fd_max_rel_err(build, {a, b}));
}

GradCheckItem family_trace_real(uint64_t seed) {
  Rng rng(seed + 2);
  Tensor a = rnd_cplx(rng, 3, 4, 4);
  Tensor w = rnd_real(rng, 3, 1, 1);
  auto build = [&](Graph& g, std::vector<Var>& lv) {
    return weighted(g, ad::real_part(ad::trace(lv[0])), w);
  };
  return check_family("trace_real", 1e-6, fd_max_rel_err(build, {a}));
}

GradCheckItem family_inverse(uint64_t seed) {
  Rng rng(seed + 3);
  Tensor a = rnd_hpd(rng, 1, 4, 2.0);
  Tensor w = rnd_cplx(rng, 1, 4, 4);
  auto build = [&](Graph& g, std::vector<Var>& lv) {
    return weighted(g, ad::inverse(lv[0], false), w);
  };
  return check_family("inverse", 1e-5, fd_max_rel_err(build, {a}));
}

GradCheckItem family_logdet(uint64_t seed) {
  Rng rng(seed + 4);
  Tensor a = rnd_hpd(rng, 2, 5, 1.0);
  Tensor w = rnd_real(rng, 2, 1, 1);
  auto build = [&](Graph& g, std::vector<Var>& lv) {
    return weighted(g, ad::logdet_hpd(lv[0]), w);
  };
  return check_family("logdet", 1e-5, fd_max_rel_err(build, {a}));
}

GradCheckItem family_dense(uint64_t seed) {
  Rng rng(seed + 5);
  Tensor x = rnd_real(rng, 1, 6, 3);
  Tensor wmat = rnd_real(rng, 1, 4, 3);
  Tensor bias = rnd_real(rng, 1, 1, 4);
  Tensor w = rnd_real(rng, 1, 6, 4);
  auto build = [&](Graph& g, std::vector<Var>& lv) {
    Var y = ad::add_rowvec(ad::matmul(lv[0], ad::hermitian(lv[1])), lv[2]);
    return weighted(g, ad::relu(y), w);
  };
  return check_family("dense_relu", 1e-5, fd_max_rel_err(build, {x, wmat, bias}));
}

GradCheckItem family_batchnorm(uint64_t seed) {
  Rng rng(seed + 6);
  Tensor x = rnd_real(rng, 1, 8, 3);
  Tensor gamma = rnd_real(rng, 1, 1, 3);
  Tensor beta = rnd_real(rng, 1, 1, 3);
  Tensor w = rnd_real(rng, 1, 8, 3);
  auto build = [&](Graph& g, std::vector<Var>& lv) {
    Var mu = ad::col_mean(lv[0]);
    Var xc = ad::add_rowvec(lv[0], ad::scale(mu, -1.0));
    Var var = ad::col_mean(ad::square_e(xc));
    Var xhat = ad::mul_rowvec(xc, ad::rsqrt_shift(var, 1e-5));
    Var y = ad::add_rowvec(ad::mul_rowvec(xhat, lv[1]), lv[2]);
    return weighted(g, y, w);
  };
  return check_family("batchnorm", 1e-5,
                      fd_max_rel_err(build, {x, gamma, beta}));
}

GradCheckItem family_sign_st(uint64_t seed) {
  // The recorded surrogate gradient against finite differences of the smooth
  // function 2*sigm(alpha u) - 1 it stands in for.
  Rng rng(seed + 7);
  double worst = 0.0;
  for (int i = 0; i < 64; ++i) {
    double alpha = 0.5 + 4.0 * rng.uniform();
    double u = 2.5 * rng.normal();
    Graph g;
    Var vu = g.input(Tensor::scalar(u), true);
    g.backward(ad::sign_st(vu, alpha));
    double adv = g.grad(vu)->rat(0, 0, 0);
    double h = 1e-6;
    auto smooth = [alpha](double t) {
      return 2.0 / (1.0 + std::exp(-alpha * t)) - 1.0;
    };
    double fd = (smooth(u + h) - smooth(u - h)) / (2.0 * h);
    worst = std::max(worst, rel_err(adv, fd));
  }
  return check_family("sign_st_surrogate", 1e-5, worst);
}

GradCheckItem family_vib(uint64_t seed) {
  Rng rng(seed + 8);
  Tensor u = rnd_real(rng, 1, 4, 6);
  Tensor w = rnd_real(rng, 1, 4, 6);
  auto build = [&](Graph& g, std::vector<Var>& lv) {
    Var p = ad::sigmoid(ad::affine(lv[0], 1.7, 0.0));
    return weighted(g, ad::kl_bern_half(p), w);
  };
  return check_family("vib_kl", 1e-5, fd_max_rel_err(build, {u}));
}

GradCheckItem family_fwmmse(uint64_t seed) {
  // Composed check: channels -> f_WMMSE (T=2) -> true-channel sum rate.
  Rng rng(seed + 9);
  const int M = 2, K = 1, N = 2, Nr = 2, Nt = 4;
  const double sigma2 = 0.6, power = 10.0;
  wmmse::SystemShape sh{1, M, K, Nt, Nr};
  wmmse::IndexMaps im(sh);

  Tensor links = rnd_cplx(rng, N * M, Nr, Nt);
  Tensor ztrue = Tensor::complex(N, Nr, Nt);
  Tensor atrue = Tensor::complex(N * N, Nr, Nt);
  for (int u = 0; u < N; ++u) {
    ztrue.c(u) = links.c(u * M + u / K);
    for (int v = 0; v < N; ++v) atrue.c(u * N + v) = links.c(u * M + v / K);
  }
  std::vector<Index> zidx(N), aidx(static_cast<size_t>(N) * N);
  for (int u = 0; u < N; ++u) {
    zidx[u] = u * M + u / K;
    for (int v = 0; v < N; ++v)
      aidx[static_cast<size_t>(u) * N + v] = u * M + v / K;
  }
  auto build = [&](Graph& g, std::vector<Var>& lv) {
    wmmse::ChannelVars ch{ad::gather(lv[0], zidx), ad::gather(lv[0], aidx)};
    wmmse::WmmseBuild wb = wmmse::build_wmmse(g, sh, ch, sigma2, power, 2, false);
    wmmse::ChannelVars true_ch{g.constant(ztrue), g.constant(atrue)};
    Var rates = wmmse::build_per_user_rates(g, sh, im, true_ch, wb.V, sigma2);
    return ad::sum_entries(rates);
  };
  return check_family("f_wmmse_composed", 1e-4, fd_max_rel_err(build, {links}));
}

}  // namespace

std::vector<GradCheckItem> run_gradcheck(uint64_t seed,
                                         const std::vector<ExtraFamily>& extra) {
  std::vector<GradCheckItem> items;
  items.push_back(family_matmul(seed));
  items.push_back(family_linear_ops(seed));
  items.push_back(family_trace_real(seed));
  items.push_back(family_inverse(seed));
  items.push_back(family_logdet(seed));
  items.push_back(family_dense(seed));
  items.push_back(family_batchnorm(seed));
  items.push_back(family_sign_st(seed));
  items.push_back(family_vib(seed));
  items.push_back(family_fwmmse(seed));
  for (const ExtraFamily& fam : extra) items.push_back(fam(seed));
  return items;
}

}  // namespace adu
