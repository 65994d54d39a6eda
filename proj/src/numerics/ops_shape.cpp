#include <limits>

#include "ito/autodiff.hpp"
#include "ito/errors.hpp"

namespace ito {

namespace {

// Decomposes dims around `axis` into (outer, extent, inner).
struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Dims& dims, std::size_t axis) {
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= dims[i];
    s.extent = dims[axis];
    for (std::size_t i = axis + 1; i < dims.size(); ++i) s.inner *= dims[i];
    return s;
}

Dims reduced_dims(const Dims& dims, std::size_t axis, bool keepdim) {
    Dims out = dims;
    if (keepdim) {
        out[axis] = 1;
    } else {
        out.erase(out.begin() + static_cast<long>(axis));
    }
    return out;
}

Var reduce_sum(const Var& a, int axis_in, bool keepdim, double factor, const char* name) {
    const std::size_t axis = normalize_axis(axis_in, a.rank());
    const AxisSplit s = split_at(a.dims(), axis);
    Tensor out(reduced_dims(a.dims(), axis, keepdim));
    const double* pa = a.value().ptr();
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t e = 0; e < s.extent; ++e)
            for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += pa[(o * s.extent + e) * s.inner + i];
    if (factor != 1.0)
        for (auto& v : out.data()) v *= factor;
    return make_result(std::move(out), name, {a}, [s, factor](Node& self) {
        Tensor* ga = parent_grad(self, 0);
        if (!ga) return;
        const double* g = self.grad.ptr();
        double* pg = ga->ptr();
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t e = 0; e < s.extent; ++e)
                for (std::size_t i = 0; i < s.inner; ++i)
                    pg[(o * s.extent + e) * s.inner + i] += factor * g[o * s.inner + i];
    });
}

}  // namespace

Var sum(const Var& a, int axis, bool keepdim) { return reduce_sum(a, axis, keepdim, 1.0, "sum"); }

Var mean(const Var& a, int axis, bool keepdim) {
    const double n = static_cast<double>(a.dim(axis));
    return reduce_sum(a, axis, keepdim, 1.0 / n, "mean");
}

Var sum_all(const Var& a) {
    double total = 0.0;
    for (double v : a.value().data()) total += v;
    return make_result(Tensor::scalar(total), "sum_all", {a}, [](Node& self) {
        Tensor* ga = parent_grad(self, 0);
        if (!ga) return;
        const double g = self.grad[0];
        for (auto& v : ga->data()) v += g;
    });
}

Var mean_all(const Var& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size())); }

Var max(const Var& a, int axis_in, bool keepdim) {
    const std::size_t axis = normalize_axis(axis_in, a.rank());
    const AxisSplit s = split_at(a.dims(), axis);
    Tensor out(reduced_dims(a.dims(), axis, keepdim));
    auto argmax = std::make_shared<std::vector<std::size_t>>(s.outer * s.inner, 0);
    const double* pa = a.value().ptr();
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
            double best = -std::numeric_limits<double>::infinity();
            std::size_t arg = 0;
            for (std::size_t e = 0; e < s.extent; ++e) {
                const double v = pa[(o * s.extent + e) * s.inner + i];
                if (v > best) {
                    best = v;
                    arg = e;
                }
            }
            out[o * s.inner + i] = best;
            (*argmax)[o * s.inner + i] = arg;
        }
    }
    return make_result(std::move(out), "max", {a}, [s, argmax](Node& self) {
        Tensor* ga = parent_grad(self, 0);
        if (!ga) return;
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t i = 0; i < s.inner; ++i) {
                const std::size_t j = o * s.inner + i;
                ga->data()[(o * s.extent + (*argmax)[j]) * s.inner + i] += self.grad[j];
            }
    });
}

Var concat(std::span<const Var> parts, int axis_in) {
    if (parts.empty()) throw UsageError("concat of zero tensors");
    const Dims& first = parts[0].dims();
    const std::size_t axis = normalize_axis(axis_in, first.size());
    Dims out_dims = first;
    out_dims[axis] = 0;
    for (const auto& p : parts) {
        Dims d = p.dims();
        if (d.size() != first.size()) {
            throw ConfigError("shape mismatch in 'concat': " + dims_str(first) + " vs " + dims_str(d));
        }
        for (std::size_t k = 0; k < d.size(); ++k) {
            if (k != axis && d[k] != first[k]) {
                throw ConfigError("shape mismatch in 'concat': " + dims_str(first) + " vs " + dims_str(d));
            }
        }
        out_dims[axis] += d[axis];
    }
    const AxisSplit so = split_at(out_dims, axis);
    Tensor out = Tensor::uninitialized(out_dims);
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t ext = p.dim(static_cast<int>(axis));
        const double* src = p.value().ptr();
        const std::size_t block = ext * so.inner;
        for (std::size_t o = 0; o < so.outer; ++o) {
            std::copy(src + o * block, src + (o + 1) * block, out.ptr() + (o * so.extent + off) * so.inner);
        }
        off += ext;
    }
    std::vector<Var> parents(parts.begin(), parts.end());
    return make_result(std::move(out), "concat", std::move(parents), [so, offsets, axis](Node& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            Tensor* gp = parent_grad(self, k);
            if (!gp) continue;
            const std::size_t ext = self.parents[k]->value.dims()[axis];
            const std::size_t block = ext * so.inner;
            for (std::size_t o = 0; o < so.outer; ++o) {
                const double* g = self.grad.ptr() + (o * so.extent + offsets[k]) * so.inner;
                double* dst = gp->ptr() + o * block;
                for (std::size_t i = 0; i < block; ++i) dst[i] += g[i];
            }
        }
    });
}

Var concat(std::initializer_list<Var> parts, int axis) {
    return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var slice(const Var& a, int axis_in, std::size_t start, std::size_t length) {
    const std::size_t axis = normalize_axis(axis_in, a.rank());
    if (length == 0 || start + length > a.dims()[axis]) {
        throw ConfigError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                          ") out of range for dims " + dims_str(a.dims()));
    }
    const AxisSplit s = split_at(a.dims(), axis);
    Dims out_dims = a.dims();
    out_dims[axis] = length;
    Tensor out = Tensor::uninitialized(out_dims);
    const std::size_t block = length * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
        const double* src = a.value().ptr() + (o * s.extent + start) * s.inner;
        std::copy(src, src + block, out.ptr() + o * block);
    }
    return make_result(std::move(out), "slice", {a}, [s, start, block](Node& self) {
        Tensor* ga = parent_grad(self, 0);
        if (!ga) return;
        for (std::size_t o = 0; o < s.outer; ++o) {
            double* dst = ga->ptr() + (o * s.extent + start) * s.inner;
            const double* g = self.grad.ptr() + o * block;
            for (std::size_t i = 0; i < block; ++i) dst[i] += g[i];
        }
    });
}

Var index_select(const Var& a, std::span<const std::size_t> index) {
    if (a.rank() < 1 || index.empty()) throw ConfigError("index_select needs rank >= 1 and a non-empty index");
    const std::size_t rows = a.dim(0);
    const std::size_t row = a.value().size() / rows;
    for (auto i : index) {
        if (i >= rows) throw ConfigError("index_select index " + std::to_string(i) + " out of range for " + dims_str(a.dims()));
    }
    Dims out_dims = a.dims();
    out_dims[0] = index.size();
    Tensor out = Tensor::uninitialized(out_dims);
    for (std::size_t r = 0; r < index.size(); ++r) {
        const double* src = a.value().ptr() + index[r] * row;
        std::copy(src, src + row, out.ptr() + r * row);
    }
    std::vector<std::size_t> idx(index.begin(), index.end());
    return make_result(std::move(out), "index_select", {a}, [idx = std::move(idx), row](Node& self) {
        Tensor* ga = parent_grad(self, 0);
        if (!ga) return;
        for (std::size_t r = 0; r < idx.size(); ++r) {
            double* dst = ga->ptr() + idx[r] * row;
            const double* g = self.grad.ptr() + r * row;
            for (std::size_t i = 0; i < row; ++i) dst[i] += g[i];
        }
    });
}

Var gather_tokens(const Var& x, std::span<const std::size_t> pos) {
    if (x.rank() != 3 || pos.size() != x.dim(0)) {
        throw ConfigError("gather_tokens expects x [N, L, d] and N positions, got " + dims_str(x.dims()) + " and " +
                          std::to_string(pos.size()));
    }
    const std::size_t n = x.dim(0), len = x.dim(1), d = x.dim(2);
    Tensor out = Tensor::uninitialized({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        if (pos[i] >= len) throw ConfigError("gather_tokens position out of range");
        const double* src = x.value().ptr() + (i * len + pos[i]) * d;
        std::copy(src, src + d, out.ptr() + i * d);
    }
    std::vector<std::size_t> p(pos.begin(), pos.end());
    return make_result(std::move(out), "gather_tokens", {x}, [p = std::move(p), len, d](Node& self) {
        Tensor* gx = parent_grad(self, 0);
        if (!gx) return;
        for (std::size_t i = 0; i < p.size(); ++i) {
            double* dst = gx->ptr() + (i * len + p[i]) * d;
            const double* g = self.grad.ptr() + i * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += g[j];
        }
    });
}

}  // namespace ito
