#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "ito/autodiff.hpp"
#include "ito/errors.hpp"
#include "packet.hpp"

namespace ito {

namespace {

struct Broadcast {
    Dims out;
    std::vector<std::size_t> a_stride;  // per output axis, 0 where broadcast
    std::vector<std::size_t> b_stride;
    // Fast layouts: equal shapes, one side a single value, or one side repeated over leading rows.
    enum class Kind { Same, ScalarA, ScalarB, RowsA, RowsB, General } kind = Kind::General;
    std::size_t inner = 0;
};

std::vector<std::size_t> aligned_strides(const Dims& d, const Dims& out) {
    const std::size_t r = out.size();
    std::vector<std::size_t> stride(r, 0);
    std::size_t s = 1;
    for (std::size_t k = 0; k < d.size(); ++k) {
        const std::size_t src = d.size() - 1 - k;
        const std::size_t dst = r - 1 - k;
        stride[dst] = d[src] == 1 ? 0 : s;
        s *= d[src];
    }
    return stride;
}

// True when `small` (ignoring leading 1s) equals the trailing dims of `out`.
bool is_trailing_block(const Dims& small, const Dims& out) {
    std::size_t lead = 0;
    while (lead < small.size() && small[lead] == 1) ++lead;
    const std::size_t r = small.size() - lead;
    if (r > out.size()) return false;
    return std::equal(small.begin() + static_cast<std::ptrdiff_t>(lead), small.end(),
                      out.end() - static_cast<std::ptrdiff_t>(r));
}

Broadcast broadcast(const Dims& a, const Dims& b, const char* op) {
    Broadcast bc;
    if (a == b) {
        bc.out = a;
        bc.kind = Broadcast::Kind::Same;
        return bc;
    }
    const std::size_t r = std::max(a.size(), b.size());
    bc.out.assign(r, 1);
    for (std::size_t k = 0; k < r; ++k) {
        const std::size_t da = k < a.size() ? a[a.size() - 1 - k] : 1;
        const std::size_t db = k < b.size() ? b[b.size() - 1 - k] : 1;
        if (da != db && da != 1 && db != 1) {
            throw ConfigError(std::string("shape mismatch in '") + op + "': " + dims_str(a) + " vs " + dims_str(b));
        }
        bc.out[r - 1 - k] = std::max(da, db);
    }
    const std::size_t n = numel(bc.out);
    if (numel(a) == n && numel(b) == 1) {
        bc.kind = Broadcast::Kind::ScalarB;
    } else if (numel(b) == n && numel(a) == 1) {
        bc.kind = Broadcast::Kind::ScalarA;
    } else if (numel(a) == n && is_trailing_block(b, bc.out)) {
        bc.kind = Broadcast::Kind::RowsB;
        bc.inner = numel(b);
    } else if (numel(b) == n && is_trailing_block(a, bc.out)) {
        bc.kind = Broadcast::Kind::RowsA;
        bc.inner = numel(a);
    }
    bc.a_stride = aligned_strides(a, bc.out);
    bc.b_stride = aligned_strides(b, bc.out);
    return bc;
}

// Calls f(i, ia, ib) for every output element in row-major order.
template <typename F>
void for_each_bcast(const Broadcast& bc, F&& f) {
    const std::size_t n = numel(bc.out);
    using K = Broadcast::Kind;
    switch (bc.kind) {
        case K::Same:
            for (std::size_t i = 0; i < n; ++i) f(i, i, i);
            return;
        case K::ScalarB:
            for (std::size_t i = 0; i < n; ++i) f(i, i, std::size_t{0});
            return;
        case K::ScalarA:
            for (std::size_t i = 0; i < n; ++i) f(i, std::size_t{0}, i);
            return;
        case K::RowsB:
            for (std::size_t r = 0; r < n; r += bc.inner)
                for (std::size_t j = 0; j < bc.inner; ++j) f(r + j, r + j, j);
            return;
        case K::RowsA:
            for (std::size_t r = 0; r < n; r += bc.inner)
                for (std::size_t j = 0; j < bc.inner; ++j) f(r + j, j, r + j);
            return;
        case K::General:
            break;
    }
    const std::size_t r = bc.out.size();
    std::vector<std::size_t> idx(r, 0);
    std::size_t ia = 0, ib = 0;
    const std::size_t inner = bc.out[r - 1];
    const std::size_t sa = bc.a_stride[r - 1], sb = bc.b_stride[r - 1];
    for (std::size_t i = 0; i < n; i += inner) {
        for (std::size_t j = 0; j < inner; ++j) f(i + j, ia + j * sa, ib + j * sb);
        // advance the odometer over the outer axes
        for (std::size_t k = r - 1; k-- > 0;) {
            ++idx[k];
            ia += bc.a_stride[k];
            ib += bc.b_stride[k];
            if (idx[k] < bc.out[k]) break;
            ia -= bc.a_stride[k] * idx[k];
            ib -= bc.b_stride[k] * idx[k];
            idx[k] = 0;
        }
    }
}

enum class BinOp { Add, Sub, Mul, Div };

template <BinOp K>
double apply(double x, double y) {
    if constexpr (K == BinOp::Add) return x + y;
    if constexpr (K == BinOp::Sub) return x - y;
    if constexpr (K == BinOp::Mul) return x * y;
    if constexpr (K == BinOp::Div) return x / y;
}

template <BinOp K>
Var binary(const Var& a, const Var& b, const char* name) {
    auto bc = std::make_shared<Broadcast>(broadcast(a.dims(), b.dims(), name));
    Tensor out = Tensor::uninitialized(bc->out);
    const double* pa = a.value().ptr();
    const double* pb = b.value().ptr();
    double* po = out.ptr();
    for_each_bcast(*bc, [&](auto i, auto ia, auto ib) { po[i] = apply<K>(pa[ia], pb[ib]); });
    return make_result(std::move(out), name, {a, b}, [bc](Node& self) {
        const double* g = self.grad.ptr();
        const double* va = self.parents[0]->value.ptr();
        const double* vb = self.parents[1]->value.ptr();
        if (Tensor* ga = parent_grad(self, 0)) {
            double* p = ga->ptr();
            for_each_bcast(*bc, [&](auto i, auto ia, auto ib) {
                if constexpr (K == BinOp::Add || K == BinOp::Sub) p[ia] += g[i];
                if constexpr (K == BinOp::Mul) p[ia] += g[i] * vb[ib];
                if constexpr (K == BinOp::Div) p[ia] += g[i] / vb[ib];
            });
        }
        if (Tensor* gb = parent_grad(self, 1)) {
            double* p = gb->ptr();
            for_each_bcast(*bc, [&](auto i, auto ia, auto ib) {
                if constexpr (K == BinOp::Add) p[ib] += g[i];
                if constexpr (K == BinOp::Sub) p[ib] -= g[i];
                if constexpr (K == BinOp::Mul) p[ib] += g[i] * va[ia];
                if constexpr (K == BinOp::Div) p[ib] -= g[i] * va[ia] / (vb[ib] * vb[ib]);
            });
        }
    });
}

// Unary op with derivative expressed through input x and output y.
template <typename Fwd, typename Deriv>
Var unary(const Var& a, const char* name, Fwd fwd, Deriv deriv) {
    Tensor out = Tensor::uninitialized(a.dims());
    const double* pa = a.value().ptr();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(pa[i]);
    return make_result(std::move(out), name, {a}, [deriv](Node& self) {
        Tensor* ga = parent_grad(self, 0);
        if (!ga) return;
        const double* x = self.parents[0]->value.ptr();
        const double* y = self.value.ptr();
        const double* g = self.grad.ptr();
        double* pg = ga->ptr();
        for (std::size_t i = 0; i < self.value.size(); ++i) pg[i] += g[i] * deriv(x[i], y[i]);
    });
}

}  // namespace

Var add(const Var& a, const Var& b) { return binary<BinOp::Add>(a, b, "add"); }
Var sub(const Var& a, const Var& b) { return binary<BinOp::Sub>(a, b, "sub"); }
Var mul(const Var& a, const Var& b) { return binary<BinOp::Mul>(a, b, "mul"); }
Var div(const Var& a, const Var& b) { return binary<BinOp::Div>(a, b, "div"); }
Var operator+(const Var& a, const Var& b) { return add(a, b); }
Var operator-(const Var& a, const Var& b) { return sub(a, b); }
Var operator*(const Var& a, const Var& b) { return mul(a, b); }
Var operator/(const Var& a, const Var& b) { return div(a, b); }

Var scale(const Var& a, double s) {
    return unary(a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
    return unary(a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var exp(const Var& a) {
    return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
    for (double v : a.value().data()) {
        if (!(v > 0.0)) throw NumericError("log of non-positive value in op 'log'");
    }
    return unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(const Var& a) {
    return unary(a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluK = 0.044715;

Var gelu(const Var& a) {
    constexpr double c = kGeluC, k = kGeluK;
    using Arr = Eigen::ArrayXd;
    const auto n = static_cast<Eigen::Index>(a.value().size());
    const auto np = static_cast<Eigen::Index>(detail::padded_length(a.value().size()));
    Arr x(np);
    x.head(n) = Eigen::Map<const Arr>(a.value().ptr(), n);
    x.tail(np - n).setZero();
    // tanh(u) = 1 - 2 / (exp(2u) + 1), vectorized through exp.
    auto t = std::make_shared<Arr>(1.0 - 2.0 / ((2.0 * c * (x + k * x.cube())).exp() + 1.0));
    const Arr y = 0.5 * x * (1.0 + *t);
    Tensor out = Tensor::uninitialized(a.dims());
    Eigen::Map<Arr>(out.ptr(), n) = y.head(n);
    return make_result(std::move(out), "gelu", {a}, [t, n](Node& self) {
        Tensor* ga = parent_grad(self, 0);
        if (!ga) return;
        const Eigen::Map<const Arr> xv(self.parents[0]->value.ptr(), n);
        const Eigen::Map<const Arr> g(self.grad.ptr(), n);
        const Arr du = kGeluC * (1.0 + 3.0 * kGeluK * xv.square());
        const auto th = t->head(n);
        Eigen::Map<Arr>(ga->ptr(), n) += g * (0.5 * (1.0 + th) + 0.5 * xv * (1.0 - th.square()) * du);
    });
}

}  // namespace ito
