#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ito {

using Dims = std::vector<std::size_t>;

namespace detail {
// Large blocks are recycled through a per-thread cache instead of being returned to the OS,
// which would otherwise page-fault on every fresh activation buffer.
void* buffer_allocate(std::size_t bytes);
void buffer_deallocate(void* p, std::size_t bytes) noexcept;
}  // namespace detail

// Leaves elements uninitialized on resize unless a value is given.
template <typename T>
struct DefaultInitAllocator {
    using value_type = T;
    DefaultInitAllocator() = default;
    template <typename U>
    DefaultInitAllocator(const DefaultInitAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(detail::buffer_allocate(n * sizeof(T))); }
    void deallocate(T* p, std::size_t n) noexcept { detail::buffer_deallocate(p, n * sizeof(T)); }

    template <typename U, typename... Args>
    void construct(U* p, Args&&... args) {
        if constexpr (sizeof...(Args) == 0) {
            ::new (static_cast<void*>(p)) U;
        } else {
            ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
        }
    }
    template <typename U>
    bool operator==(const DefaultInitAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, DefaultInitAllocator<double>>;

std::size_t numel(const Dims& dims);
std::string dims_str(const Dims& dims);

// Dense row-major array of doubles. Rank 0 is a scalar with one element.
class Tensor {
   public:
    Tensor() : Tensor(Dims{}) {}
    explicit Tensor(Dims dims, double fill = 0.0);
    Tensor(Dims dims, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor(Dims{}, v); }
    static Tensor zeros_like(const Tensor& t) { return Tensor(t.dims_); }
    // Contents are indeterminate; for outputs that are written in full.
    static Tensor uninitialized(Dims dims);

    const Dims& dims() const { return dims_; }
    std::size_t rank() const { return dims_.size(); }
    std::size_t dim(int axis) const;
    std::size_t size() const { return data_.size(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    double* ptr() { return data_.data(); }
    const double* ptr() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::initializer_list<std::size_t> idx);
    double at(std::initializer_list<std::size_t> idx) const;

    // Value of a single-element tensor.
    double item() const;
    bool all_finite() const;
    // Same data, new dims with equal element count.
    Tensor reshaped(Dims dims) const;
    void fill(double v);

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

   private:
    std::size_t flat_index(std::initializer_list<std::size_t> idx) const;

    Dims dims_;
    Buffer data_;
};

// Resolves a possibly negative axis against a rank, throwing ConfigError when out of range.
std::size_t normalize_axis(int axis, std::size_t rank);

}  // namespace ito
