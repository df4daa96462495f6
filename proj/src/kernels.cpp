#include "memrehearse/kernels.hpp"

#include <algorithm>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace memrehearse::kernels {

namespace {

void check_inner(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw ShapeError(std::string(what) + ": inner dimensions disagree");
}

inline double dot(const double* x, const double* y, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

}  // namespace

namespace serial {

Matrix matmul_nn(const Matrix& a, const Matrix& b) {
    check_inner(a.cols, b.rows, "matmul_nn");
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row_ptr(i);
        double* crow = c.row_ptr(i);
        for (std::size_t j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * b.at(k, j);
            crow[j] = acc;
        }
    }
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    check_inner(a.cols, b.cols, "matmul_nt");
    Matrix c(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row_ptr(i);
        double* crow = c.row_ptr(i);
        for (std::size_t j = 0; j < b.rows; ++j) crow[j] = dot(arow, b.row_ptr(j), a.cols);
    }
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    check_inner(a.rows, b.rows, "matmul_tn");
    Matrix c(a.cols, b.cols);
    for (std::size_t i = 0; i < a.cols; ++i) {
        double* crow = c.row_ptr(i);
        for (std::size_t j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.rows; ++k) acc += a.at(k, i) * b.at(k, j);
            crow[j] = acc;
        }
    }
    return c;
}

void add_row_vector(Matrix& m, const std::vector<double>& v) {
    if (v.size() != m.cols) throw ShapeError("add_row_vector: vector length != column count");
    for (std::size_t i = 0; i < m.rows; ++i) {
        double* row = m.row_ptr(i);
        for (std::size_t j = 0; j < m.cols; ++j) row[j] += v[j];
    }
}

void relu_inplace(Matrix& m) {
    for (double& x : m.data) x = std::max(x, 0.0);
}

std::vector<double> column_sums(const Matrix& m) {
    std::vector<double> sums(m.cols, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double* row = m.row_ptr(i);
        for (std::size_t j = 0; j < m.cols; ++j) sums[j] += row[j];
    }
    return sums;
}

}  // namespace serial

Matrix matmul_nn(const Matrix& a, const Matrix& b) {
    check_inner(a.cols, b.rows, "matmul_nn");
    Matrix c(a.rows, b.cols);
#pragma omp parallel for schedule(static) if (a.rows * b.cols * a.cols > 16384)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(a.rows); ++i) {
        const double* arow = a.row_ptr(static_cast<std::size_t>(i));
        double* crow = c.row_ptr(static_cast<std::size_t>(i));
        for (std::size_t j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * b.at(k, j);
            crow[j] = acc;
        }
    }
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    check_inner(a.cols, b.cols, "matmul_nt");
    Matrix c(a.rows, b.rows);
#pragma omp parallel for schedule(static) if (a.rows * b.rows * a.cols > 16384)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(a.rows); ++i) {
        const double* arow = a.row_ptr(static_cast<std::size_t>(i));
        double* crow = c.row_ptr(static_cast<std::size_t>(i));
        for (std::size_t j = 0; j < b.rows; ++j) crow[j] = dot(arow, b.row_ptr(j), a.cols);
    }
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    check_inner(a.rows, b.rows, "matmul_tn");
    Matrix c(a.cols, b.cols);
#pragma omp parallel for schedule(static) if (a.cols * b.cols * a.rows > 16384)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(a.cols); ++i) {
        double* crow = c.row_ptr(static_cast<std::size_t>(i));
        for (std::size_t j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.rows; ++k) acc += a.at(k, static_cast<std::size_t>(i)) * b.at(k, j);
            crow[j] = acc;
        }
    }
    return c;
}

void add_row_vector(Matrix& m, const std::vector<double>& v) { serial::add_row_vector(m, v); }
void relu_inplace(Matrix& m) { serial::relu_inplace(m); }
std::vector<double> column_sums(const Matrix& m) { return serial::column_sums(m); }

void set_thread_cap(int threads) {
#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#else
    (void)threads;
#endif
}

int thread_count() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace memrehearse::kernels
