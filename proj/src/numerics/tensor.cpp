#include "lcl/numerics/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "lcl/errors.hpp"

namespace lcl {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str(shape_));
    }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
    return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
}

void Tensor::bad_rank(const char* what) const {
    throw ShapeError(std::string(what) + " on tensor of shape " + shape_str(shape_));
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
}

Tensor Tensor::transposed() const {
    const std::size_t r = rows(), c = cols();
    Tensor out({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.data_[j * r + i] = data_[i * c + j];
    return out;
}

Tensor Tensor::row_slice(std::size_t begin, std::size_t count) const {
    const std::size_t c = cols();
    if (begin + count > rows()) throw ShapeError("row slice out of range on " + shape_str(shape_));
    std::vector<double> d(data_.begin() + static_cast<std::ptrdiff_t>(begin * c),
                          data_.begin() + static_cast<std::ptrdiff_t>((begin + count) * c));
    return Tensor({count, c}, std::move(d));
}

Tensor Tensor::col(std::size_t c) const {
    const std::size_t r = rows(), n = cols();
    if (c >= n) throw ShapeError("column index out of range on " + shape_str(shape_));
    Tensor out({r, 1});
    for (std::size_t i = 0; i < r; ++i) out.data_[i] = data_[i * n + c];
    return out;
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::fill(double v) {
    for (double& x : data_) x = v;
}

Tensor& Tensor::operator+=(const Tensor& other) {
    if (other.data_.size() != data_.size()) {
        throw ShapeError("cannot accumulate " + shape_str(other.shape_) + " into " + shape_str(shape_));
    }
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

bool Tensor::bit_equal(const Tensor& other) const {
    return shape_ == other.shape_ &&
           (data_.empty() ||
            std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0);
}

namespace {

void fnv_mix(std::uint64_t& h, const void* bytes, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
}

}  // namespace

std::uint64_t checksum(const Tensor& t) {
    std::uint64_t h = 14695981039346656037ULL;
    for (auto s : t.shape()) {
        const std::uint64_t v = s;
        fnv_mix(h, &v, sizeof v);
    }
    fnv_mix(h, t.data().data(), t.size() * sizeof(double));
    return h;
}

void require_rank2(const Tensor& t, const char* what) {
    if (t.rank() != 2) throw ShapeError(std::string(what) + ": expected a matrix, got " + shape_str(t.shape()));
}

}  // namespace lcl
