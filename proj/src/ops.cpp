#include "adu/ops.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <cmath>
#include <memory>
#include <sstream>

namespace adu::ad {

namespace {

void require_dim(bool cond, const char* msg) {
  if (!cond) throw DimensionError(msg);
}

double sigmoid_stable(double x) {
  if (x >= 0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr Index kParallelBatch = 64;

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = *a.g;
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_dim(A.dtype() == B.dtype(), "matmul: dtype mismatch");
  require_dim(A.batch() == B.batch(), "matmul: batch mismatch");
  require_dim(A.cols() == B.rows(), "matmul: inner dimension mismatch");
  const Index nb = A.batch();
  Tensor out = A.is_real() ? Tensor::real_uninit(nb, A.rows(), B.cols())
                           : Tensor::complex_uninit(nb, A.rows(), B.cols());
  if (A.is_real()) {
#pragma omp parallel for schedule(static) if (nb >= kParallelBatch)
    for (Index i = 0; i < nb; ++i) out.r(i).noalias() = A.r(i) * B.r(i);
  } else {
#pragma omp parallel for schedule(static) if (nb >= kParallelBatch)
    for (Index i = 0; i < nb; ++i) out.c(i).noalias() = A.c(i) * B.c(i);
  }
  int pa = a.id, pb = b.id;
  return g.emit(std::move(out), {pa, pb}, [pa, pb](Graph& gg, int self) {
    const Tensor& G = *gg.grad(Var{&gg, self});
    const Tensor& Av = gg.value(pa);
    const Tensor& Bv = gg.value(pb);
    const Index nb2 = Av.batch();
    if (gg.requires_grad(pa)) {
      Tensor ga = Av.is_real()
                     ? Tensor::real_uninit(nb2, Av.rows(), Av.cols())
                     : Tensor::complex_uninit(nb2, Av.rows(), Av.cols());
      if (Av.is_real()) {
#pragma omp parallel for schedule(static) if (nb2 >= kParallelBatch)
        for (Index i = 0; i < nb2; ++i)
          ga.r(i).noalias() = G.r(i) * Bv.r(i).transpose();
      } else {
#pragma omp parallel for schedule(static) if (nb2 >= kParallelBatch)
        for (Index i = 0; i < nb2; ++i)
          ga.c(i).noalias() = G.c(i) * Bv.c(i).adjoint();
      }
      gg.accumulate(pa, ga);
    }
    if (gg.requires_grad(pb)) {
      Tensor gb = Bv.is_real()
                     ? Tensor::real_uninit(nb2, Bv.rows(), Bv.cols())
                     : Tensor::complex_uninit(nb2, Bv.rows(), Bv.cols());
      if (Bv.is_real()) {
#pragma omp parallel for schedule(static) if (nb2 >= kParallelBatch)
        for (Index i = 0; i < nb2; ++i)
          gb.r(i).noalias() = Av.r(i).transpose() * G.r(i);
      } else {
#pragma omp parallel for schedule(static) if (nb2 >= kParallelBatch)
        for (Index i = 0; i < nb2; ++i)
          gb.c(i).noalias() = Av.c(i).adjoint() * G.c(i);
      }
      gg.accumulate(pb, gb);
    }
  });
}

Var hermitian(Var a) {
  Graph& g = *a.g;
  const Tensor& A = a.value();
  const Index nb = A.batch();
  Tensor out = A.is_real() ? Tensor::real_uninit(nb, A.cols(), A.rows())
                           : Tensor::complex_uninit(nb, A.cols(), A.rows());
  if (A.is_real()) {
#pragma omp parallel for schedule(static) if (nb >= kParallelBatch)
    for (Index i = 0; i < nb; ++i) out.r(i) = A.r(i).transpose();
  } else {
#pragma omp parallel for schedule(static) if (nb >= kParallelBatch)
    for (Index i = 0; i < nb; ++i) out.c(i) = A.c(i).adjoint();
  }
  int pa = a.id;
  return g.emit(std::move(out), {pa}, [pa](Graph& gg, int self) {
    const Tensor& G = *gg.grad(Var{&gg, self});
    const Tensor& Av = gg.value(pa);
    const Index nb2 = Av.batch();
    Tensor ga = Av.is_real()
                   ? Tensor::real_uninit(nb2, Av.rows(), Av.cols())
                   : Tensor::complex_uninit(nb2, Av.rows(), Av.cols());
    if (Av.is_real()) {
#pragma omp parallel for schedule(static) if (nb2 >= kParallelBatch)
      for (Index i = 0; i < nb2; ++i) ga.r(i) = G.r(i).transpose();
    } else {
#pragma omp parallel for schedule(static) if (nb2 >= kParallelBatch)
      for (Index i = 0; i < nb2; ++i) ga.c(i) = G.c(i).adjoint();
    }
    gg.accumulate(pa, ga);
  });
}

Var add(Var a, Var b) {
  Graph& g = *a.g;
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_dim(A.same_shape(B), "add: shape mismatch");
  Tensor out = A;
  out.add_inplace(B);
  int pa = a.id, pb = b.id;
  return g.emit(std::move(out), {pa, pb}, [pa, pb](Graph& gg, int self) {
    const Tensor& G = *gg.grad(Var{&gg, self});
    gg.accumulate(pa, G);
    gg.accumulate(pb, G);
  });
}

Var sub(Var a, Var b) {
  Graph& g = *a.g;
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_dim(A.same_shape(B), "sub: shape mismatch");
  Tensor out = A;
  if (A.is_real()) {
    for (Index i = 0; i < A.size(); ++i) out.rdata()[i] -= B.rdata()[i];
  } else {
    for (Index i = 0; i < A.size(); ++i) out.cdata()[i] -= B.cdata()[i];
  }
  int pa = a.id, pb = b.id;
  return g.emit(std::move(out), {pa, pb}, [pa, pb](Graph& gg, int self) {
    const Tensor& G = *gg.grad(Var{&gg, self});
    gg.accumulate(pa, G);
    Tensor gb = G;
    if (gb.is_real()) {
      for (Index i = 0; i < gb.size(); ++i) gb.rdata()[i] = -gb.rdata()[i];
    } else {
      for (Index i = 0; i < gb.size(); ++i) gb.cdata()[i] = -gb.cdata()[i];
    }
    gg.accumulate(pb, gb);
  });
}

Var scale(Var a, double s) {
  Graph& g = *a.g;
  Tensor out = a.value();
  if (out.is_real()) {
    for (Index i = 0; i < out.size(); ++i) out.rdata()[i] *= s;
  } else {
    for (Index i = 0; i < out.size(); ++i) out.cdata()[i] *= s;
  }
  int pa = a.id;
  return g.emit(std::move(out), {pa}, [pa, s](Graph& gg, int self) {
    Tensor ga = *gg.grad(Var{&gg, self});
    if (ga.is_real()) {
      for (Index i = 0; i < ga.size(); ++i) ga.rdata()[i] *= s;
    } else {
      for (Index i = 0; i < ga.size(); ++i) ga.cdata()[i] *= s;
    }
    gg.accumulate(pa, ga);
  });
}

Var scale(Var a, cplx s) {
  Graph& g = *a.g;
  const Tensor& A = a.value();
  require_dim(!A.is_real(), "scale(cplx): tensor must be complex");
  Tensor out = A;
  for (Index i = 0; i < out.size(); ++i) out.cdata()[i] *= s;
  int pa = a.id;
  return g.emit(std::move(out), {pa}, [pa, s](Graph& gg, int self) {
    Tensor ga = *gg.grad(Var{&gg, self});
    cplx cs = std::conj(s);
    for (Index i = 0; i < ga.size(); ++i) ga.cdata()[i] *= cs;
    gg.accumulate(pa, ga);
  });
}

Var mul_bscalar(Var a, Var s) {
  Graph& g = *a.g;
  const Tensor& A = a.value();
  const Tensor& S = s.value();
  require_dim(S.rows() == 1 && S.cols() == 1, "mul_bscalar: s must be [B,1,1]");
  require_dim(S.batch() == A.batch(), "mul_bscalar: batch mismatch");
  const Index nb = A.batch();
  Tensor out =
      A.is_real() ? Tensor::real_uninit(nb, A.rows(), A.cols())
                  : Tensor::complex_uninit(nb, A.rows(), A.cols());
  if (A.is_real()) {
    require_dim(S.is_real(), "mul_bscalar: real tensor needs real scalars");
    for (Index i = 0; i < nb; ++i) out.r(i) = A.r(i) * S.rat(i, 0, 0);
  } else if (S.is_real()) {
    for (Index i = 0; i < nb; ++i) out.c(i) = A.c(i) * S.rat(i, 0, 0);
  } else {
    for (Index i = 0; i < nb; ++i) out.c(i) = A.c(i) * S.cat(i, 0, 0);
  }
  int pa = a.id, ps = s.id;
  return g.emit(std::move(out), {pa, ps}, [pa, ps](Graph& gg, int self) {
    const Tensor& G = *gg.grad(Var{&gg, self});
    const Tensor& Av = gg.value(pa);
    const Tensor& Sv = gg.value(ps);
    const Index nb2 = Av.batch();
    if (gg.requires_grad(pa)) {
      Tensor ga = Av.is_real()
                     ? Tensor::real_uninit(nb2, Av.rows(), Av.cols())
                     : Tensor::complex_uninit(nb2, Av.rows(), Av.cols());
      if (Av.is_real()) {
        for (Index i = 0; i < nb2; ++i) ga.r(i) = G.r(i) * Sv.rat(i, 0, 0);
      } else if (Sv.is_real()) {
        for (Index i = 0; i < nb2; ++i) ga.c(i) = G.c(i) * Sv.rat(i, 0, 0);
      } else {
        for (Index i = 0; i < nb2; ++i)
          ga.c(i) = G.c(i) * std::conj(Sv.cat(i, 0, 0));
      }
      gg.accumulate(pa, ga);
    }
    if (gg.requires_grad(ps)) {
      Tensor gs = Sv.is_real() ? Tensor::real_uninit(nb2, 1, 1)
                               : Tensor::complex_uninit(nb2, 1, 1);
      if (Av.is_real()) {
        for (Index i = 0; i < nb2; ++i)
          gs.rat(i, 0, 0) = (G.r(i).array() * Av.r(i).array()).sum();
      } else if (Sv.is_real()) {
        for (Index i = 0; i < nb2; ++i)
          gs.rat(i, 0, 0) =
              (G.c(i).array() * Av.c(i).array().conjugate()).sum().real();
      } else {
        for (Index i = 0; i < nb2; ++i)
          gs.cat(i, 0, 0) = (Av.c(i).adjoint() * G.c(i)).trace();
      }
      gg.accumulate(ps, gs);
    }
  });
}

Var trace(Var a) {
  Graph& g = *a.g;
  const Tensor& A = a.value();
  require_dim(A.rows() == A.cols(), "trace: matrix must be square");
  const Index nb = A.batch();
  Tensor out = A.is_real() ? Tensor::real_uninit(nb, 1, 1)
                           : Tensor::complex_uninit(nb, 1, 1);
  if (A.is_real()) {
    for (Index i = 0; i < nb; ++i) out.rat(i, 0, 0) = A.r(i).trace();
  } else {
    for (Index i = 0; i < nb; ++i) out.cat(i, 0, 0) = A.c(i).trace();
  }
  int pa = a.id;
  return g.emit(std::move(out), {pa}, [pa](Graph& gg, int self) {
    const Tensor& G = *gg.grad(Var{&gg, self});
    const Tensor& Av = gg.value(pa);
    const Index nb2 = Av.batch();
    const Index n = Av.rows();
    Tensor ga = Av.is_real() ? Tensor::real_uninit(nb2, n, n)
                             : Tensor::complex_uninit(nb2, n, n);
    if (Av.is_real()) {
      for (Index i = 0; i < nb2; ++i)
        ga.r(i) = RMat::Identity(n, n) * G.rat(i, 0, 0);
    } else {
      for (Index i = 0; i < nb2; ++i)
        ga.c(i) = CMat::Identity(n, n) * G.cat(i, 0, 0);
    }
    gg.accumulate(pa, ga);
  });
}

Var real_part(Var a) {
  Graph& g = *a.g;
  const Tensor& A = a.value();
  require_dim(!A.is_real(), "real_part: input must be complex");
  Tensor out = Tensor::real_uninit(A.batch(), A.rows(), A.cols());
  for (Index i = 0; i < A.size(); ++i) out.rdata()[i] = A.cdata()[i].real();
  int pa = a.id;
  return g.emit(std::move(out), {pa}, [pa](Graph& gg, int self) {
    const Tensor& G = *gg.grad(Var{&gg, self});
    const Tensor& Av = gg.value(pa);
    Tensor ga = Tensor::complex_uninit(Av.batch(), Av.rows(), Av.cols());
    for (Index i = 0; i < ga.size(); ++i) ga.cdata()[i] = cplx(G.rdata()[i], 0);
    gg.accumulate(pa, ga);
  });
}

Var imag_part(Var a) {
  Graph& g = *a.g;
  const Tensor& A = a.value();
  require_dim(!A.is_real(), "imag_part: input must be complex");
  Tensor out = Tensor::real_uninit(A.batch(), A.rows(), A.cols());
  for (Index i = 0; i < A.size(); ++i) out.rdata()[i] = A.cdata()[i].imag();
  int pa = a.id;
  return g.emit(std::move(out), {pa}, [pa](Graph& gg, int self) {
    const Tensor& G = *gg.grad(Var{&gg, self});
    const Tensor& Av = gg.value(pa);
    Tensor ga = Tensor::complex_uninit(Av.batch(), Av.rows(), Av.cols());
    for (Index i = 0; i < ga.size(); ++i) ga.cdata()[i] = cplx(0, G.rdata()[i]);
    gg.accumulate(pa, ga);
  });
}

namespace {

// Inverse of one slice; throws SingularError with a condition estimate.
// The Cholesky path is only trusted when the input really is Hermitian;
// anything else (including Hermitian inputs whose factorization fails)
// falls through to LU with the pivot-based singularity check.
template <typename Mat>
Mat slice_inverse(const Eigen::Map<const Mat>& a, bool hermitian_pd,
                  const char* who) {
  const Index n = a.rows();
  if (hermitian_pd) {
    double dev = (a - a.adjoint()).cwiseAbs().maxCoeff();
    if (dev <= 1e-9 * a.cwiseAbs().maxCoeff()) {
      Eigen::LLT<Mat> llt(a);
      if (llt.info() == Eigen::Success) {
        return llt.solve(Mat::Identity(n, n));
      }
    }
  }
  Eigen::PartialPivLU<Mat> lu(a);
  auto diag = lu.matrixLU().diagonal();
  double dmax = 0.0, dmin = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < n; ++i) {
    double d = std::abs(diag(i));
    dmax = std::max(dmax, d);
    dmin = std::min(dmin, d);
  }
  double amax = a.cwiseAbs().maxCoeff();
  if (dmin <= 1e-12 * std::max(amax, 1e-300)) {
    std::ostringstream os;
    os << who << ": singular to tolerance (n=" << n << ", hpd=" << hermitian_pd << "), condition estimate "
       << (dmin > 0 ? dmax / dmin : std::numeric_limits<double>::infinity());
    throw SingularError(os.str());
  }
  return lu.solve(Mat::Identity(n, n));
}

}  // namespace

Var inverse(Var a, bool hermitian_pd) {
  Graph& g = *a.g;
  const Tensor& A = a.value();
  require_dim(A.rows() == A.cols(), "inverse: matrix must be square");
  const Index nb = A.batch();
  Tensor out = A.is_real() ? Tensor::real_uninit(nb, A.rows(), A.cols())
                           : Tensor::complex_uninit(nb, A.rows(), A.cols());
  if (A.is_real()) {
    for (Index i = 0; i < nb; ++i)
      out.r(i) = slice_inverse<RMat>(A.r(i), hermitian_pd, "inverse");
  } else {
    for (Index i = 0; i < nb; ++i)
      out.c(i) = slice_inverse<CMat>(A.c(i), hermitian_pd, "inverse");
  }
  int pa = a.id;
  return g.emit(std::move(out), {pa}, [pa](Graph& gg, int self) {
    const Tensor& G = *gg.grad(Var{&gg, self});
    const Tensor& Y = gg.value(self);  // the inverse itself
    const Index nb2 = Y.batch();
    Tensor ga = Y.is_real() ? Tensor::real_uninit(nb2, Y.rows(), Y.cols())
                            : Tensor::complex_uninit(nb2, Y.rows(), Y.cols());
    if (Y.is_real()) {
#pragma omp parallel for schedule(static) if (nb2 >= kParallelBatch)
      for (Index i = 0; i < nb2; ++i)
        ga.r(i).noalias() = -(Y.r(i).transpose() * G.r(i)) * Y.r(i).transpose();
    } else {
#pragma omp parallel for schedule(static) if (nb2 >= kParallelBatch)
      for (Index i = 0; i < nb2; ++i)
        ga.c(i).noalias() = -(Y.c(i).adjoint() * G.c(i)) * Y.c(i).adjoint();
    }
    gg.accumulate(pa, ga);
  });
}

Var logdet_hpd(Var a) {
  Graph& g = *a.g;
  const Tensor& A = a.value();
  require_dim(A.rows() == A.cols(), "logdet: matrix must be square");
  const Index nb = A.batch();
  const Index n = A.rows();
  Tensor out = Tensor::real_uninit(nb, 1, 1);
  // Value and gradient are taken on the Hermitian part, so inputs that are
  // Hermitian only to roundoff (or to a finite-difference step) stay inside
  // the domain; a coarse guard still rejects gross misuse.
  if (A.is_real()) {
    for (Index i = 0; i < nb; ++i) {
      RMat m = A.r(i);
      double dev = (m - m.transpose()).cwiseAbs().maxCoeff();
      if (dev > 1e-3 * std::max(1.0, m.cwiseAbs().maxCoeff()))
        throw DomainError("logdet: input is not symmetric to tolerance");
      RMat s2 = 0.5 * (m + m.transpose());
      Eigen::LLT<RMat> llt(s2);
      if (llt.info() != Eigen::Success)
        throw DomainError("logdet: input is not positive definite");
      double s = 0.0;
      for (Index k = 0; k < n; ++k) s += std::log(RMat(llt.matrixL())(k, k));
      out.rat(i, 0, 0) = 2.0 * s;
    }
  } else {
    for (Index i = 0; i < nb; ++i) {
      CMat m = A.c(i);
      double dev = (m - m.adjoint()).cwiseAbs().maxCoeff();
      if (dev > 1e-3 * std::max(1.0, m.cwiseAbs().maxCoeff()))
        throw DomainError("logdet: input is not Hermitian to tolerance");
      CMat s2 = 0.5 * (m + m.adjoint());
      Eigen::LLT<CMat> llt(s2);
      if (llt.info() != Eigen::Success)
        throw DomainError("logdet: input is not positive definite");
      double s = 0.0;
      for (Index k = 0; k < n; ++k)
        s += std::log(std::real(CMat(llt.matrixL())(k, k)));
      out.rat(i, 0, 0) = 2.0 * s;
    }
  }
  int pa = a.id;
  return g.emit(std::move(out), {pa}, [pa](Graph& gg, int self) {
    const Tensor& G = *gg.grad(Var{&gg, self});
    const Tensor& Av = gg.value(pa);
    const Index nb2 = Av.batch();
    const Index n2 = Av.rows();
    Tensor ga = Av.is_real() ? Tensor::real_uninit(nb2, n2, n2)
                             : Tensor::complex_uninit(nb2, n2, n2);
    if (Av.is_real()) {
#pragma omp parallel for schedule(static) if (nb2 >= kParallelBatch)
      for (Index i = 0; i < nb2; ++i) {
        RMat s2 = 0.5 * (RMat(Av.r(i)) + RMat(Av.r(i)).transpose());
        Eigen::LLT<RMat> llt(s2);
        RMat inv = llt.solve(RMat::Identity(n2, n2));
        ga.r(i) = G.rat(i, 0, 0) * inv.transpose();
      }
    } else {
#pragma omp parallel for schedule(static) if (nb2 >= kParallelBatch)
      for (Index i = 0; i < nb2; ++i) {
        CMat s2 = 0.5 * (CMat(Av.c(i)) + CMat(Av.c(i)).adjoint());
        Eigen::LLT<CMat> llt(s2);
        CMat inv = llt.solve(CMat::Identity(n2, n2));
        ga.c(i) = G.rat(i, 0, 0) * inv.adjoint();
      }
    }
    gg.accumulate(pa, ga);
  });
}

Var gather(Var a, std::vector<Index> idx) {
  Graph& g = *a.g;
  const Tensor& A = a.value();
  const Index nb = static_cast<Index>(idx.size());
  for (Index i : idx)
    require_dim(i >= -1 && i < A.batch(), "gather: index out of range");
  Tensor out = A.is_real() ? Tensor::real_uninit(nb, A.rows(), A.cols())
                           : Tensor::complex_uninit(nb, A.rows(), A.cols());
  auto ids = std::make_shared<std::vector<Index>>(std::move(idx));
  if (A.is_real()) {
#pragma omp parallel for schedule(static) if (nb >= kParallelBatch)
    for (Index i = 0; i < nb; ++i) {
      if ((*ids)[i] >= 0) {
        out.r(i) = A.r((*ids)[i]);
      } else {
        out.r(i).setZero();
      }
    }
  } else {
#pragma omp parallel for schedule(static) if (nb >= kParallelBatch)
    for (Index i = 0; i < nb; ++i) {
      if ((*ids)[i] >= 0) {
        out.c(i) = A.c((*ids)[i]);
      } else {
        out.c(i).setZero();
      }
    }
  }
  int pa = a.id;
  return g.emit(std::move(out), {pa}, [pa, ids](Graph& gg, int self) {
    const Tensor& G = *gg.grad(Var{&gg, self});
    const Tensor& Av = gg.value(pa);
    Tensor ga = Av.is_real()
                    ? Tensor::real(Av.batch(), Av.rows(), Av.cols())
                    : Tensor::complex(Av.batch(), Av.rows(), Av.cols());
    const Index nb2 = static_cast<Index>(ids->size());
    // Scatter-add stays sequential: several outputs may map to one source.
    if (Av.is_real()) {
      for (Index i = 0; i < nb2; ++i)
        if ((*ids)[i] >= 0) ga.r((*ids)[i]) += G.r(i);
    } else {
      for (Index i = 0; i < nb2; ++i)
        if ((*ids)[i] >= 0) ga.c((*ids)[i]) += G.c(i);
    }
    gg.accumulate(pa, ga);
  });
}

Var group_sum(Var a, Index k) {
  Graph& g = *a.g;
  const Tensor& A = a.value();
  require_dim(k >= 1 && A.batch() % k == 0, "group_sum: batch not divisible");
  const Index ng = A.batch() / k;
  Tensor out = A.is_real() ? Tensor::real_uninit(ng, A.rows(), A.cols())
                           : Tensor::complex_uninit(ng, A.rows(), A.cols());
  if (A.is_real()) {
#pragma omp parallel for schedule(static) if (ng >= kParallelBatch)
    for (Index gi = 0; gi < ng; ++gi) {
      auto o = out.r(gi);
      o = A.r(gi * k);
      for (Index j = 1; j < k; ++j) o += A.r(gi * k + j);
    }
  } else {
#pragma omp parallel for schedule(static) if (ng >= kParallelBatch)
    for (Index gi = 0; gi < ng; ++gi) {
      auto o = out.c(gi);
      o = A.c(gi * k);
      for (Index j = 1; j < k; ++j) o += A.c(gi * k + j);
    }
  }
  int pa = a.id;
  return g.emit(std::move(out), {pa}, [pa, k](Graph& gg, int self) {
    const Tensor& G = *gg.grad(Var{&gg, self});
    const Tensor& Av = gg.value(pa);
    Tensor ga = Av.is_real()
                    ? Tensor::real_uninit(Av.batch(), Av.rows(), Av.cols())
                    : Tensor::complex_uninit(Av.batch(), Av.rows(), Av.cols());
    const Index ng2 = G.batch();
    if (Av.is_real()) {
#pragma omp parallel for schedule(static) if (ng2 >= kParallelBatch)
      for (Index gi = 0; gi < ng2; ++gi)
        for (Index j = 0; j < k; ++j) ga.r(gi * k + j) = G.r(gi);
    } else {
#pragma omp parallel for schedule(static) if (ng2 >= kParallelBatch)
      for (Index gi = 0; gi < ng2; ++gi)
        for (Index j = 0; j < k; ++j) ga.c(gi * k + j) = G.c(gi);
    }
    gg.accumulate(pa, ga);
  });
}

Var sum_entries(Var a) {
  Graph& g = *a.g;
  const Tensor& A = a.value();
  Tensor out;
  if (A.is_real()) {
    double s = 0.0;
    for (Index i = 0; i < A.size(); ++i) s += A.rdata()[i];
    out = Tensor::scalar(s);
  } else {
    cplx s(0, 0);
    for (Index i = 0; i < A.size(); ++i) s += A.cdata()[i];
    out = Tensor::complex(1, 1, 1);
    out.cat(0, 0, 0) = s;
  }
  int pa = a.id;
  return g.emit(std::move(out), {pa}, [pa](Graph& gg, int self) {
    const Tensor& G = *gg.grad(Var{&gg, self});
    const Tensor& Av = gg.value(pa);
    Tensor ga;
    if (Av.is_real()) {
      ga = Tensor::real_uninit(Av.batch(), Av.rows(), Av.cols());
      double gv = G.rat(0, 0, 0);
      for (Index i = 0; i < ga.size(); ++i) ga.rdata()[i] = gv;
    } else {
      ga = Tensor::complex_uninit(Av.batch(), Av.rows(), Av.cols());
      cplx gv = G.cat(0, 0, 0);
      for (Index i = 0; i < ga.size(); ++i) ga.cdata()[i] = gv;
    }
    gg.accumulate(pa, ga);
  });
}

Var reshape_rm(Var a, Index batch, Index rows, Index cols) {
  Graph& g = *a.g;
  const Tensor& A = a.value();
  require_dim(batch * rows * cols == A.size(), "reshape: element count differs");
  Tensor out = A.is_real() ? Tensor::real_uninit(batch, rows, cols)
                           : Tensor::complex_uninit(batch, rows, cols);
  const Index n = A.size();
  if (A.is_real()) {
    for (Index f = 0; f < n; ++f) out.rflat_set(f, A.rflat_get(f));
  } else {
    for (Index f = 0; f < n; ++f) out.cflat_set(f, A.cflat_get(f));
  }
  int pa = a.id;
  return g.emit(std::move(out), {pa}, [pa](Graph& gg, int self) {
    const Tensor& G = *gg.grad(Var{&gg, self});
    const Tensor& Av = gg.value(pa);
    Tensor ga = Av.is_real()
                    ? Tensor::real_uninit(Av.batch(), Av.rows(), Av.cols())
                    : Tensor::complex_uninit(Av.batch(), Av.rows(), Av.cols());
    const Index n2 = Av.size();
    if (Av.is_real()) {
      for (Index f = 0; f < n2; ++f) ga.rflat_set(f, G.rflat_get(f));
    } else {
      for (Index f = 0; f < n2; ++f) ga.cflat_set(f, G.cflat_get(f));
    }
    gg.accumulate(pa, ga);
  });
}

Var slice_cols(Var a, Index first, Index count) {
  Graph& g = *a.g;
  const Tensor& A = a.value();
  require_dim(first >= 0 && count >= 1 && first + count <= A.cols(),
              "slice_cols: range out of bounds");
  const Index nb = A.batch();
  Tensor out = A.is_real() ? Tensor::real_uninit(nb, A.rows(), count)
                           : Tensor::complex_uninit(nb, A.rows(), count);
  if (A.is_real()) {
    for (Index i = 0; i < nb; ++i) out.r(i) = A.r(i).middleCols(first, count);
  } else {
    for (Index i = 0; i < nb; ++i) out.c(i) = A.c(i).middleCols(first, count);
  }
  int pa = a.id;
  return g.emit(std::move(out), {pa}, [pa, first, count](Graph& gg, int self) {
    const Tensor& G = *gg.grad(Var{&gg, self});
    const Tensor& Av = gg.value(pa);
    Tensor ga = Av.is_real()
                    ? Tensor::real(Av.batch(), Av.rows(), Av.cols())
                    : Tensor::complex(Av.batch(), Av.rows(), Av.cols());
    for (Index i = 0; i < Av.batch(); ++i) {
      if (Av.is_real()) {
        ga.r(i).middleCols(first, count) = G.r(i);
      } else {
        ga.c(i).middleCols(first, count) = G.c(i);
      }
    }
    gg.accumulate(pa, ga);
  });
}

Var complex_join(Var re, Var im) {
  Graph& g = *re.g;
  const Tensor& R = re.value();
  const Tensor& I = im.value();
  require_dim(R.is_real() && I.is_real(), "complex_join: inputs must be real");
  require_dim(R.same_shape(I), "complex_join: shape mismatch");
  Tensor out = Tensor::complex_uninit(R.batch(), R.rows(), R.cols());
  for (Index i = 0; i < out.size(); ++i)
    out.cdata()[i] = cplx(R.rdata()[i], I.rdata()[i]);
  int pr = re.id, pi = im.id;
  return g.emit(std::move(out), {pr, pi}, [pr, pi](Graph& gg, int self) {
    const Tensor& G = *gg.grad(Var{&gg, self});
    const Tensor& Rv = gg.value(pr);
    if (gg.requires_grad(pr)) {
      Tensor gr = Tensor::real_uninit(Rv.batch(), Rv.rows(), Rv.cols());
      for (Index i = 0; i < gr.size(); ++i) gr.rdata()[i] = G.cdata()[i].real();
      gg.accumulate(pr, gr);
    }
    if (gg.requires_grad(pi)) {
      Tensor gi = Tensor::real_uninit(Rv.batch(), Rv.rows(), Rv.cols());
      for (Index i = 0; i < gi.size(); ++i) gi.rdata()[i] = G.cdata()[i].imag();
      gg.accumulate(pi, gi);
    }
  });
}

Var add_rowvec(Var x, Var v) {
  Graph& g = *x.g;
  const Tensor& X = x.value();
  const Tensor& V = v.value();
  require_dim(X.is_real() && V.is_real(), "add_rowvec: real tensors only");
  require_dim(V.batch() == 1 && V.rows() == 1 && V.cols() == X.cols(),
              "add_rowvec: v must be [1,1,C]");
  Tensor out = X;
  for (Index b = 0; b < X.batch(); ++b)
    out.r(b).rowwise() += V.r(0).row(0);
  int px = x.id, pv = v.id;
  return g.emit(std::move(out), {px, pv}, [px, pv](Graph& gg, int self) {
    const Tensor& G = *gg.grad(Var{&gg, self});
    if (gg.requires_grad(px)) gg.accumulate(px, G);
    if (gg.requires_grad(pv)) {
      Tensor gv = Tensor::real(1, 1, G.cols());
      for (Index b = 0; b < G.batch(); ++b)
        gv.r(0).row(0) += G.r(b).colwise().sum();
      gg.accumulate(pv, gv);
    }
  });
}

Var mul_rowvec(Var x, Var v) {
  Graph& g = *x.g;
  const Tensor& X = x.value();
  const Tensor& V = v.value();
  require_dim(X.is_real() && V.is_real(), "mul_rowvec: real tensors only");
  require_dim(V.batch() == 1 && V.rows() == 1 && V.cols() == X.cols(),
              "mul_rowvec: v must be [1,1,C]");
  Tensor out = X;
  for (Index b = 0; b < X.batch(); ++b)
    out.r(b).array().rowwise() *= V.r(0).row(0).array();
  int px = x.id, pv = v.id;
  return g.emit(std::move(out), {px, pv}, [px, pv](Graph& gg, int self) {
    const Tensor& G = *gg.grad(Var{&gg, self});
    const Tensor& Xv = gg.value(px);
    const Tensor& Vv = gg.value(pv);
    if (gg.requires_grad(px)) {
      Tensor gx = G;
      for (Index b = 0; b < gx.batch(); ++b)
        gx.r(b).array().rowwise() *= Vv.r(0).row(0).array();
      gg.accumulate(px, gx);
    }
    if (gg.requires_grad(pv)) {
      Tensor gv = Tensor::real(1, 1, G.cols());
      for (Index b = 0; b < G.batch(); ++b)
        gv.r(0).row(0) += (G.r(b).array() * Xv.r(b).array()).colwise().sum().matrix();
      gg.accumulate(pv, gv);
    }
  });
}

Var col_mean(Var x) {
  Graph& g = *x.g;
  const Tensor& X = x.value();
  require_dim(X.is_real() && X.batch() == 1, "col_mean: real [1,R,C] expected");
  const Index rows = X.rows();
  Tensor out = Tensor::real_uninit(1, 1, X.cols());
  out.r(0).row(0) = X.r(0).colwise().mean();
  int px = x.id;
  return g.emit(std::move(out), {px}, [px, rows](Graph& gg, int self) {
    const Tensor& G = *gg.grad(Var{&gg, self});
    const Tensor& Xv = gg.value(px);
    Tensor gx = Tensor::real_uninit(1, Xv.rows(), Xv.cols());
    gx.r(0) = (G.r(0).row(0) / static_cast<double>(rows))
                  .replicate(Xv.rows(), 1);
    gg.accumulate(px, gx);
  });
}

Var hadamard(Var a, Var b) {
  Graph& g = *a.g;
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_dim(A.same_shape(B), "hadamard: shape mismatch");
  Tensor out = A;
  if (A.is_real()) {
    for (Index i = 0; i < out.size(); ++i) out.rdata()[i] *= B.rdata()[i];
  } else {
    for (Index i = 0; i < out.size(); ++i) out.cdata()[i] *= B.cdata()[i];
  }
  int pa = a.id, pb = b.id;
  return g.emit(std::move(out), {pa, pb}, [pa, pb](Graph& gg, int self) {
    const Tensor& G = *gg.grad(Var{&gg, self});
    const Tensor& Av = gg.value(pa);
    const Tensor& Bv = gg.value(pb);
    if (gg.requires_grad(pa)) {
      Tensor ga = G;
      if (ga.is_real()) {
        for (Index i = 0; i < ga.size(); ++i) ga.rdata()[i] *= Bv.rdata()[i];
      } else {
        for (Index i = 0; i < ga.size(); ++i)
          ga.cdata()[i] *= std::conj(Bv.cdata()[i]);
      }
      gg.accumulate(pa, ga);
    }
    if (gg.requires_grad(pb)) {
      Tensor gb = G;
      if (gb.is_real()) {
        for (Index i = 0; i < gb.size(); ++i) gb.rdata()[i] *= Av.rdata()[i];
      } else {
        for (Index i = 0; i < gb.size(); ++i)
          gb.cdata()[i] *= std::conj(Av.cdata()[i]);
      }
      gg.accumulate(pb, gb);
    }
  });
}

namespace {

// Shared scaffolding for real elementwise ops: fwd computes the value,
// dfn the local derivative from (x, y).
template <typename FwdFn, typename DerivFn>
Var unary_real(Var x, const char* name, FwdFn fwd, DerivFn dfn) {
  Graph& g = *x.g;
  const Tensor& X = x.value();
  require_dim(X.is_real(), name);
  Tensor out = Tensor::like(X);
  for (Index i = 0; i < out.size(); ++i) out.rdata()[i] = fwd(X.rdata()[i]);
  int px = x.id;
  return g.emit(std::move(out), {px}, [px, dfn](Graph& gg, int self) {
    const Tensor& G = *gg.grad(Var{&gg, self});
    const Tensor& Xv = gg.value(px);
    const Tensor& Yv = gg.value(self);
    Tensor gx = Tensor::real_uninit(Xv.batch(), Xv.rows(), Xv.cols());
    for (Index i = 0; i < gx.size(); ++i)
      gx.rdata()[i] = G.rdata()[i] * dfn(Xv.rdata()[i], Yv.rdata()[i]);
    gg.accumulate(px, gx);
  });
}

}  // namespace

Var relu(Var x) {
  return unary_real(
      x, "relu: real tensor expected",
      [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
  return unary_real(
      x, "sigmoid: real tensor expected",
      [](double v) { return sigmoid_stable(v); },
      [](double, double y) { return y * (1.0 - y); });
}

Var log_e(Var x) {
  return unary_real(
      x, "log: real tensor expected",
      [](double v) {
        if (v <= 0) throw DomainError("log: nonpositive input");
        return std::log(v);
      },
      [](double v, double) { return 1.0 / v; });
}

Var sqrt_e(Var x) {
  return unary_real(
      x, "sqrt: real tensor expected",
      [](double v) {
        if (v < 0) throw DomainError("sqrt: negative input");
        return std::sqrt(v);
      },
      [](double, double y) { return 0.5 / y; });
}

Var square_e(Var x) {
  return unary_real(
      x, "square: real tensor expected", [](double v) { return v * v; },
      [](double v, double) { return 2.0 * v; });
}

Var reciprocal_e(Var x) {
  return unary_real(
      x, "reciprocal: real tensor expected",
      [](double v) {
        if (v == 0) throw DomainError("reciprocal: zero input");
        return 1.0 / v;
      },
      [](double v, double) { return -1.0 / (v * v); });
}

Var rsqrt_shift(Var x, double eps) {
  return unary_real(
      x, "rsqrt_shift: real tensor expected",
      [eps](double v) {
        double s = v + eps;
        if (s <= 0) throw DomainError("rsqrt_shift: nonpositive shifted input");
        return 1.0 / std::sqrt(s);
      },
      [eps](double v, double) {
        double s = v + eps;
        return -0.5 / (s * std::sqrt(s));
      });
}

Var affine(Var x, double mul, double addc) {
  return unary_real(
      x, "affine: real tensor expected",
      [mul, addc](double v) { return mul * v + addc; },
      [mul](double, double) { return mul; });
}

Var kl_bern_half(Var p) {
  auto clampp = [](double v) {
    constexpr double kEps = 1e-12;
    return std::min(1.0 - kEps, std::max(kEps, v));
  };
  return unary_real(
      p, "kl_bern_half: real tensor expected",
      [clampp](double v) {
        double c = clampp(v);
        return M_LN2 + c * std::log(c) + (1.0 - c) * std::log(1.0 - c);
      },
      [clampp](double v, double) {
        double c = clampp(v);
        return std::log(c / (1.0 - c));
      });
}

Var sign_st(Var u, double alpha) {
  if (!(alpha > 0)) throw ContractError("sign_st: alpha must be positive");
  return unary_real(
      u, "sign_st: real tensor expected",
      [](double v) { return v >= 0 ? 1.0 : -1.0; },
      [alpha](double v, double) {
        double s = sigmoid_stable(alpha * v);
        return 2.0 * alpha * s * (1.0 - s);
      });
}

Var power_backstop(Var p, double power, double headroom) {
  if (!(power > 0)) throw ContractError("power_backstop: power must be positive");
  double trigger = power * (1.0 + headroom);
  return unary_real(
      p, "power_backstop: real tensor expected",
      [power, trigger](double v) {
        return v > trigger ? std::sqrt(power / v) : 1.0;
      },
      [power, trigger](double v, double) {
        return v > trigger ? -0.5 * std::sqrt(power) / (v * std::sqrt(v)) : 0.0;
      });
}

Tensor make_identity(Index batch, Index n, Dtype dtype) {
  if (dtype == Dtype::Real) {
    Tensor t = Tensor::real(batch, n, n);
    for (Index b = 0; b < batch; ++b) t.r(b).setIdentity();
    return t;
  }
  Tensor t = Tensor::complex(batch, n, n);
  for (Index b = 0; b < batch; ++b) t.c(b).setIdentity();
  return t;
}

}  // namespace adu::ad
