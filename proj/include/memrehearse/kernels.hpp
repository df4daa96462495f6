#pragma once

#include <vector>

#include "memrehearse/matrix.hpp"

namespace memrehearse::kernels {

// Dense kernels backing the trainer. The default entry points run the
// OpenMP implementations when compiled with OpenMP; kernels::serial holds
// the reference versions used for testing and benchmarking. Both compute
// every output element with the same summation order, so results are
// bit-identical.

namespace serial {

// C = A * B          (A: n x k, B: k x m)
Matrix matmul_nn(const Matrix& a, const Matrix& b);
// C = A * B^T        (A: n x k, B: m x k)
Matrix matmul_nt(const Matrix& a, const Matrix& b);
// C = A^T * B        (A: n x k, B: n x m)
Matrix matmul_tn(const Matrix& a, const Matrix& b);

void add_row_vector(Matrix& m, const std::vector<double>& v);
void relu_inplace(Matrix& m);
std::vector<double> column_sums(const Matrix& m);

}  // namespace serial

Matrix matmul_nn(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);

void add_row_vector(Matrix& m, const std::vector<double>& v);
void relu_inplace(Matrix& m);
std::vector<double> column_sums(const Matrix& m);

// Caps OpenMP worker count; no-op without OpenMP.
void set_thread_cap(int threads);
int thread_count();

}  // namespace memrehearse::kernels
