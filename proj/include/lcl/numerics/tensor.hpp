#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace lcl {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major tensor of doubles. Most of the library works with rank-2
/// tensors; a vector of length n is usually carried as a 1 x n row.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor matrix(std::size_t rows, std::size_t cols,
                         std::initializer_list<double> values);
    static Tensor row(std::vector<double> values);
    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    /// Rows/cols of a rank-2 tensor; a rank-1 tensor is viewed as one row.
    std::size_t rows() const {
        if (shape_.size() == 1) return 1;
        if (shape_.size() != 2) bad_rank("rows()");
        return shape_[0];
    }
    std::size_t cols() const {
        if (shape_.size() == 1) return shape_[0];
        if (shape_.size() != 2) bad_rank("cols()");
        return shape_[1];
    }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    const double& operator[](std::size_t i) const { return data_[i]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    const double& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    Tensor reshaped(Shape shape) const;
    Tensor transposed() const;
    Tensor row_slice(std::size_t begin, std::size_t count) const;
    Tensor col(std::size_t c) const;

    bool all_finite() const;
    void fill(double v);
    Tensor& operator+=(const Tensor& other);

    /// Bitwise equality of shape and every stored double.
    bool bit_equal(const Tensor& other) const;

private:
    [[noreturn]] void bad_rank(const char* what) const;
    Shape shape_;
    std::vector<double> data_;
};

/// Stable 64-bit FNV-1a over shape and raw bytes; used as a freeze checksum.
std::uint64_t checksum(const Tensor& t);

void require_rank2(const Tensor& t, const char* what);

}  // namespace lcl
