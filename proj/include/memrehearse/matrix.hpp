#pragma once

#include <cstddef>
#include <vector>

#include "memrehearse/errors.hpp"

namespace memrehearse {

// Dense row-major matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    const double* row_ptr(std::size_t r) const { return data.data() + r * cols; }
    double* row_ptr(std::size_t r) { return data.data() + r * cols; }

    bool same_shape(const Matrix& other) const { return rows == other.rows && cols == other.cols; }

    bool operator==(const Matrix& other) const = default;
};

}  // namespace memrehearse
