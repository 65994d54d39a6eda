#include "ito/tensor.hpp"

#include <Eigen/Core>

#include <cmath>
#include <new>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "ito/errors.hpp"

namespace ito {

namespace detail {

namespace {

constexpr std::size_t kPoolMinBytes = std::size_t{1} << 16;
// Every buffer starts on a cache line, so vectorized kernels split work identically on every run.
constexpr std::align_val_t kAlign{64};
constexpr std::size_t kPoolMaxCachedBytes = std::size_t{1} << 30;

struct BlockCache {
    std::unordered_map<std::size_t, std::vector<void*>> free;
    std::size_t cached = 0;
    ~BlockCache() {
        for (auto& [bytes, list] : free)
            for (void* p : list) ::operator delete(p, kAlign);
        alive = false;
    }
    static thread_local bool alive;
};

thread_local bool BlockCache::alive = true;

BlockCache& cache() {
    thread_local BlockCache c;
    return c;
}

}  // namespace

void* buffer_allocate(std::size_t bytes) {
    if (bytes >= kPoolMinBytes && BlockCache::alive) {
        BlockCache& c = cache();
        auto it = c.free.find(bytes);
        if (it != c.free.end() && !it->second.empty()) {
            void* p = it->second.back();
            it->second.pop_back();
            c.cached -= bytes;
            return p;
        }
    }
    return ::operator new(bytes, kAlign);
}

void buffer_deallocate(void* p, std::size_t bytes) noexcept {
    if (bytes >= kPoolMinBytes && BlockCache::alive) {
        BlockCache& c = cache();
        if (c.cached + bytes <= kPoolMaxCachedBytes) {
            try {
                c.free[bytes].push_back(p);
                c.cached += bytes;
                return;
            } catch (...) {
            }
        }
    }
    ::operator delete(p, kAlign);
}

}  // namespace detail

std::size_t numel(const Dims& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

std::string dims_str(const Dims& dims) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) os << ", ";
        os << dims[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Dims dims, double fill) : dims_(std::move(dims)), data_(numel(dims_), fill) {
    for (auto d : dims_) {
        if (d == 0) throw ConfigError("tensor extents must be positive, got " + dims_str(dims_));
    }
}

Tensor Tensor::uninitialized(Dims dims) {
    Tensor t;
    for (auto d : dims) {
        if (d == 0) throw ConfigError("tensor extents must be positive, got " + dims_str(dims));
    }
    t.data_.resize(numel(dims));
    t.dims_ = std::move(dims);
    return t;
}

Tensor::Tensor(Dims dims, std::vector<double> data) : dims_(std::move(dims)), data_(data.begin(), data.end()) {
    if (numel(dims_) != data_.size()) {
        throw ConfigError("tensor data length " + std::to_string(data_.size()) + " does not match dims " +
                          dims_str(dims_));
    }
    for (auto d : dims_) {
        if (d == 0) throw ConfigError("tensor extents must be positive, got " + dims_str(dims_));
    }
}

std::size_t Tensor::dim(int axis) const { return dims_[normalize_axis(axis, rank())]; }

std::size_t Tensor::flat_index(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != dims_.size()) throw ConfigError("index rank mismatch for tensor " + dims_str(dims_));
    std::size_t flat = 0;
    std::size_t k = 0;
    for (auto i : idx) {
        if (i >= dims_[k]) throw ConfigError("index out of range for tensor " + dims_str(dims_));
        flat = flat * dims_[k] + i;
        ++k;
    }
    return flat;
}

double& Tensor::at(std::initializer_list<std::size_t> idx) { return data_[flat_index(idx)]; }
double Tensor::at(std::initializer_list<std::size_t> idx) const { return data_[flat_index(idx)]; }

double Tensor::item() const {
    if (data_.size() != 1) throw UsageError("item() on tensor with dims " + dims_str(dims_));
    return data_[0];
}

bool Tensor::all_finite() const {
    // Any Inf or NaN turns the product into NaN; one vectorized pass.
    const Eigen::Map<const Eigen::ArrayXd> a(data_.data(), static_cast<Eigen::Index>(data_.size()));
    return std::isfinite((a * 0.0).sum());
}

Tensor Tensor::reshaped(Dims dims) const {
    if (numel(dims) != data_.size()) {
        throw ConfigError("cannot reshape " + dims_str(dims_) + " to " + dims_str(dims));
    }
    Tensor t(*this);
    t.dims_ = std::move(dims);
    return t;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::size_t normalize_axis(int axis, std::size_t rank) {
    const long r = static_cast<long>(rank);
    long a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        throw ConfigError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
    }
    return static_cast<std::size_t>(a);
}

}  // namespace ito
