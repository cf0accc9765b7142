#include "adu/tensor.hpp"

#include <cmath>

namespace adu::ad {

void Tensor::add_inplace(const Tensor& o) {
  if (!same_shape(o)) throw DimensionError("add_inplace: shape mismatch");
  const size_t n = buf_.size();
  for (size_t i = 0; i < n; ++i) buf_[i] += o.buf_[i];
}

bool Tensor::all_finite() const {
  for (double v : buf_)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::abs_max() const {
  double m = 0.0;
  if (is_real()) {
    for (double v : buf_) m = std::max(m, std::abs(v));
  } else {
    const cplx* p = cdata();
    for (Index i = 0; i < size(); ++i) m = std::max(m, std::abs(p[i]));
  }
  return m;
}

}  // namespace adu::ad
