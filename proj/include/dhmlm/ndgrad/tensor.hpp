#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dhmlm/common/error.hpp"

namespace dhmlm::ndgrad {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

/// 64-byte aligned allocator. Eigen picks its vectorized peel from the runtime
/// address, so a fixed base alignment keeps results independent of heap state.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() noexcept = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <class U>
    friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
        return true;
    }
};

template <class T>
using Storage = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major array. Most ops treat a tensor as a matrix whose last
/// dimension is the column count.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
    Tensor(Shape shape, std::initializer_list<T> data) : Tensor(std::move(shape), Storage<T>(data)) {}
    Tensor(Shape shape, const std::vector<T>& data) : Tensor(std::move(shape), Storage<T>(data.begin(), data.end())) {}
    Tensor(Shape shape, Storage<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        require(data_.size() == shape_size(shape_), ErrorKind::InvalidArgument,
                "tensor data does not match shape " + shape_string(shape_));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    /// Column count (last dimension); 1 for scalars.
    std::size_t cols() const noexcept { return shape_.empty() ? 1 : shape_.back(); }
    std::size_t rows() const noexcept { return cols() == 0 ? 0 : data_.size() / cols(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    Storage<T>& storage() noexcept { return data_; }
    const Storage<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }
    T& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
    const T& at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const noexcept {
        for (T v : data_) {
            if (!std::isfinite(v)) {
                return false;
            }
        }
        return true;
    }

    template <class U>
    Tensor<U> cast() const {
        return Tensor<U>(shape_, Storage<U>(data_.begin(), data_.end()));
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    Storage<T> data_;
};

}  // namespace dhmlm::ndgrad
