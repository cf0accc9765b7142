#pragma once

#include "adu/rng.hpp"
#include "adu/tensor.hpp"

namespace testutil {

inline adu::ad::Tensor random_real(adu::Rng& rng, adu::ad::Index b,
                                   adu::ad::Index r, adu::ad::Index c,
                                   double scale = 1.0) {
  auto t = adu::ad::Tensor::real(b, r, c);
  for (adu::ad::Index i = 0; i < t.size(); ++i)
    t.rdata()[i] = scale * rng.normal();
  return t;
}

inline adu::ad::Tensor random_complex(adu::Rng& rng, adu::ad::Index b,
                                      adu::ad::Index r, adu::ad::Index c,
                                      double scale = 1.0) {
  auto t = adu::ad::Tensor::complex(b, r, c);
  for (adu::ad::Index i = 0; i < t.size(); ++i)
    t.cdata()[i] = scale * rng.cnormal();
  return t;
}

// Hermitian positive definite: G G^H + ridge I.
inline adu::ad::Tensor random_hpd(adu::Rng& rng, adu::ad::Index b,
                                  adu::ad::Index n, double ridge = 1.0) {
  auto g = random_complex(rng, b, n, n);
  auto t = adu::ad::Tensor::complex(b, n, n);
  for (adu::ad::Index i = 0; i < b; ++i)
    t.c(i) = g.c(i) * g.c(i).adjoint() +
             ridge * adu::ad::CMat::Identity(n, n);
  return t;
}

}  // namespace testutil
