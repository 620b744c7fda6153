#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace metafed {

// Dense row-major matrix of 64-bit reals. The only tensor type in the
// project; vectors are 1xN or handled as std::vector<double>.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool all_finite() const;
    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    bool operator==(const Matrix& other) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// out = a * b, shapes (n x k) * (k x m).
Matrix matmul(const Matrix& a, const Matrix& b);
// out = a^T * b, shapes (k x n)^T * (k x m) -> (n x m).
Matrix matmul_at_b(const Matrix& a, const Matrix& b);
// out = a * b^T, shapes (n x k) * (m x k)^T -> (n x m).
Matrix matmul_a_bt(const Matrix& a, const Matrix& b);

// Adds v to every row of m in place.
void add_row_vector(Matrix& m, std::span<const double> v);
// Column sums as a vector of length cols.
std::vector<double> col_sum(const Matrix& m);

} // namespace metafed
