#pragma once

#include <Eigen/Core>
#include <cstdint>

namespace dpf::detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using MapConstMat = Eigen::Map<const RowMat<T>>;

/// C (m x n) = A (m x k) * B (k x n) [+ C when accumulate]. Row-major buffers.
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::int64_t m, std::int64_t n, std::int64_t k,
             bool accumulate) {
  MapConstMat<T> A(a, m, k);
  MapConstMat<T> B(b, k, n);
  MapMat<T> C(c, m, n);
  if (accumulate) {
    C.noalias() += A * B;
  } else {
    C.noalias() = A * B;
  }
}

/// C (m x n) = A^T * B with A stored (k x m).
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::int64_t m, std::int64_t n, std::int64_t k,
             bool accumulate) {
  MapConstMat<T> A(a, k, m);
  MapConstMat<T> B(b, k, n);
  MapMat<T> C(c, m, n);
  if (accumulate) {
    C.noalias() += A.transpose() * B;
  } else {
    C.noalias() = A.transpose() * B;
  }
}

/// C (m x n) = A * B^T with B stored (n x k).
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::int64_t m, std::int64_t n, std::int64_t k,
             bool accumulate) {
  MapConstMat<T> A(a, m, k);
  MapConstMat<T> B(b, n, k);
  MapMat<T> C(c, m, n);
  if (accumulate) {
    C.noalias() += A * B.transpose();
  } else {
    C.noalias() = A * B.transpose();
  }
}

}  // namespace dpf::detail
