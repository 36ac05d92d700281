#pragma once

#include <vector>

#include "soma/numcore/tensor.hpp"

namespace soma {

struct EigenDecomposition {
  std::vector<double> values;  ///< ascending
  Tensor vectors;              ///< column k is the eigenvector of values[k]
};

/// Cyclic Jacobi rotation solver for symmetric matrices. Throws ContractError when the input
/// is not square or deviates from symmetry by more than symmetry_tol.
EigenDecomposition jacobi_eigen(const Tensor& m, double symmetry_tol = 1e-9);

/// Ascending eigenvalues of a symmetric matrix.
std::vector<double> symmetric_eigenvalues(const Tensor& m, double symmetry_tol = 1e-9);

struct PcaResult {
  Tensor mean;                            ///< [d]
  Tensor components;                      ///< [k, d], orthonormal rows
  Tensor projected;                       ///< [n, k]
  std::vector<double> explained_variance; ///< length k, descending
  bool zero_variance = false;
};

/// Centers the rows, diagonalises their covariance and projects onto the leading n_components
/// directions. Each component's largest-magnitude entry is made positive.
PcaResult pca_fit_project(const Tensor& rows, std::size_t n_components);

}  // namespace soma
