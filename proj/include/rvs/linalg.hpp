#ifndef RVS_LINALG_HPP
#define RVS_LINALG_HPP

#include <Eigen/Core>

#include <cstddef>

namespace rvs::linalg {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Dense row-major GEMM wrappers. `acc` adds into C instead of overwriting.

// C[m,p] (+)= A[m,k] * B[k,p]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t p,
             bool acc = false) {
  ConstMatMap<T> A(a, m, k);
  ConstMatMap<T> B(b, k, p);
  MatMap<T> C(c, m, p);
  if (acc)
    C.noalias() += A * B;
  else
    C.noalias() = A * B;
}

// C[k,p] (+)= A[m,k]^T * B[m,p]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t p,
             bool acc = false) {
  ConstMatMap<T> A(a, m, k);
  ConstMatMap<T> B(b, m, p);
  MatMap<T> C(c, k, p);
  if (acc)
    C.noalias() += A.transpose() * B;
  else
    C.noalias() = A.transpose() * B;
}

// C[m,k] (+)= A[m,p] * B[k,p]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t p, std::size_t k,
             bool acc = false) {
  ConstMatMap<T> A(a, m, p);
  ConstMatMap<T> B(b, k, p);
  MatMap<T> C(c, m, k);
  if (acc)
    C.noalias() += A * B.transpose();
  else
    C.noalias() = A * B.transpose();
}

}  // namespace rvs::linalg

#endif  // RVS_LINALG_HPP
