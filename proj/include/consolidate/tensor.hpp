#ifndef CONSOLIDATE_TENSOR_HPP
#define CONSOLIDATE_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <new>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ewc {

struct EwcError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : EwcError {
    using EwcError::EwcError;
};

struct NumericError : EwcError {
    using EwcError::EwcError;
};

/// 64-byte-aligned allocator. All buffers handed to the linear algebra
/// kernels share one alignment so reductions are bit-reproducible
/// regardless of heap state.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::size_t alignment = 64;

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(std::size_t n) {
        const std::size_t bytes = (n * sizeof(T) + alignment - 1) / alignment * alignment;
        void* p = std::aligned_alloc(alignment, bytes);
        if (!p) throw std::bad_alloc();
        return static_cast<T*>(p);
    }
    void deallocate(T* p, std::size_t) { std::free(p); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using DoubleVec = std::vector<double, AlignedAllocator<double>>;

/// Dense n-dimensional array of 64-bit floats, row-major.
struct Tensor {
    std::vector<std::size_t> shape;
    DoubleVec data;

    Tensor() = default;

    Tensor(std::vector<std::size_t> s, DoubleVec d)
        : shape(std::move(s)), data(std::move(d)) {
        if (element_count(shape) != data.size())
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_string(shape));
    }

    static std::size_t element_count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t e : s) n *= e;
        return n;
    }

    static Tensor zeros(std::vector<std::size_t> s) {
        std::size_t n = element_count(s);
        return Tensor(std::move(s), DoubleVec(n, 0.0));
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t extent(std::size_t axis) const { return shape.at(axis); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    /// Row-major offset for a 2-d tensor.
    double& at2(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
    double at2(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    void check_finite(const char* what) const {
        for (std::size_t i = 0; i < data.size(); ++i)
            if (!std::isfinite(data[i]))
                throw NumericError(std::string(what) + ": non-finite value at flat index " +
                                   std::to_string(i));
    }

    static std::string shape_string(const std::vector<std::size_t>& s) {
        std::ostringstream os;
        os << "(";
        for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
        os << ")";
        return os.str();
    }
};

}  // namespace ewc

#endif
