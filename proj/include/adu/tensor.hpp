#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstring>
#include <memory>
#include <vector>

#include "adu/errors.hpp"

namespace adu::ad {

using RMat = Eigen::MatrixXd;
using CMat = Eigen::MatrixXcd;
using cplx = std::complex<double>;
using Index = Eigen::Index;

enum class Dtype { Real, Cplx };

namespace detail {
// Allocator that skips value-initialization on resize; tensor factories zero
// explicitly where callers rely on it.
template <typename T>
struct uninit_alloc : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = uninit_alloc<U>;
  };
  template <typename U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};
}  // namespace detail

// A batch of equally sized dense matrices, real or complex.
// Slice b is stored contiguously (column-major) at offset b*rows*cols.
// A plain matrix is a batch of one; a scalar is [1,1,1].
class Tensor {
 public:
  Tensor() = default;

  static Tensor real(Index batch, Index rows, Index cols) {
    Tensor t = real_uninit(batch, rows, cols);
    t.setZero();
    return t;
  }

  static Tensor complex(Index batch, Index rows, Index cols) {
    Tensor t = complex_uninit(batch, rows, cols);
    t.setZero();
    return t;
  }

  // Contents are indeterminate; every element must be written before use.
  static Tensor real_uninit(Index batch, Index rows, Index cols) {
    Tensor t;
    t.dtype_ = Dtype::Real;
    t.batch_ = batch;
    t.rows_ = rows;
    t.cols_ = cols;
    t.buf_.resize(static_cast<size_t>(batch * rows * cols));
    return t;
  }

  static Tensor complex_uninit(Index batch, Index rows, Index cols) {
    Tensor t;
    t.dtype_ = Dtype::Cplx;
    t.batch_ = batch;
    t.rows_ = rows;
    t.cols_ = cols;
    t.buf_.resize(2 * static_cast<size_t>(batch * rows * cols));
    return t;
  }

  static Tensor like(const Tensor& o) {
    return o.is_real() ? real_uninit(o.batch_, o.rows_, o.cols_)
                       : complex_uninit(o.batch_, o.rows_, o.cols_);
  }

  static Tensor from_rmat(const RMat& m) {
    Tensor t = real_uninit(1, m.rows(), m.cols());
    t.r(0) = m;
    return t;
  }

  static Tensor from_cmat(const CMat& m) {
    Tensor t = complex_uninit(1, m.rows(), m.cols());
    t.c(0) = m;
    return t;
  }

  static Tensor scalar(double v) {
    Tensor t = real_uninit(1, 1, 1);
    t.buf_[0] = v;
    return t;
  }

  Dtype dtype() const { return dtype_; }
  bool is_real() const { return dtype_ == Dtype::Real; }
  Index batch() const { return batch_; }
  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  Index slice_size() const { return rows_ * cols_; }
  Index size() const { return batch_ * rows_ * cols_; }

  bool same_shape(const Tensor& o) const {
    return dtype_ == o.dtype_ && batch_ == o.batch_ && rows_ == o.rows_ &&
           cols_ == o.cols_;
  }

  // Column-major views of one slice.
  Eigen::Map<RMat> r(Index b) {
    return Eigen::Map<RMat>(rdata() + b * slice_size(), rows_, cols_);
  }
  Eigen::Map<const RMat> r(Index b) const {
    return Eigen::Map<const RMat>(rdata() + b * slice_size(), rows_, cols_);
  }
  Eigen::Map<CMat> c(Index b) {
    return Eigen::Map<CMat>(cdata() + b * slice_size(), rows_, cols_);
  }
  Eigen::Map<const CMat> c(Index b) const {
    return Eigen::Map<const CMat>(cdata() + b * slice_size(), rows_, cols_);
  }

  double* rdata() { return buf_.data(); }
  const double* rdata() const { return buf_.data(); }
  cplx* cdata() { return reinterpret_cast<cplx*>(buf_.data()); }
  const cplx* cdata() const {
    return reinterpret_cast<const cplx*>(buf_.data());
  }

  // Logical element access in (batch, row, col) coordinates.
  double& rat(Index b, Index i, Index j) {
    return rdata()[b * slice_size() + j * rows_ + i];
  }
  double rat(Index b, Index i, Index j) const {
    return rdata()[b * slice_size() + j * rows_ + i];
  }
  cplx& cat(Index b, Index i, Index j) {
    return cdata()[b * slice_size() + j * rows_ + i];
  }
  cplx cat(Index b, Index i, Index j) const {
    return cdata()[b * slice_size() + j * rows_ + i];
  }

  // Flat element access in row-major logical order (b, i, j); used by the
  // reshape ops so their semantics do not depend on the storage layout.
  double rflat_get(Index f) const {
    Index ss = slice_size();
    Index b = f / ss, rem = f % ss;
    return rat(b, rem / cols_, rem % cols_);
  }
  void rflat_set(Index f, double v) {
    Index ss = slice_size();
    Index b = f / ss, rem = f % ss;
    rat(b, rem / cols_, rem % cols_) = v;
  }
  cplx cflat_get(Index f) const {
    Index ss = slice_size();
    Index b = f / ss, rem = f % ss;
    return cat(b, rem / cols_, rem % cols_);
  }
  void cflat_set(Index f, cplx v) {
    Index ss = slice_size();
    Index b = f / ss, rem = f % ss;
    cat(b, rem / cols_, rem % cols_) = v;
  }

  void add_inplace(const Tensor& o);
  void setZero() {
    std::memset(buf_.data(), 0, buf_.size() * sizeof(double));
  }
  bool all_finite() const;
  double abs_max() const;

 private:
  Dtype dtype_ = Dtype::Real;
  Index batch_ = 0, rows_ = 0, cols_ = 0;
  // Real payload, or interleaved re/im for complex (2 doubles per entry).
  std::vector<double, detail::uninit_alloc<double>> buf_;
};

}  // namespace adu::ad
