#include <Eigen/Core>

#include "ito/autodiff.hpp"
#include "ito/errors.hpp"

namespace ito {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

Var matmul_flat(const Var& a, const Var& b) {
    const std::size_t k = a.dim(-1);
    if (b.dim(0) != k) {
        throw ConfigError("shape mismatch in 'matmul': " + dims_str(a.dims()) + " vs " + dims_str(b.dims()));
    }
    const std::size_t n = b.dim(1);
    const std::size_t m = a.value().size() / k;
    Dims out_dims = a.dims();
    out_dims.back() = n;
    Tensor out = Tensor::uninitialized(out_dims);
    MapR(out.ptr(), m, n).noalias() = CMapR(a.value().ptr(), m, k) * CMapR(b.value().ptr(), k, n);
    return make_result(std::move(out), "matmul", {a, b}, [m, k, n](Node& self) {
        CMapR g(self.grad.ptr(), m, n);
        if (Tensor* ga = parent_grad(self, 0)) {
            MapR(ga->ptr(), m, k).noalias() += g * CMapR(self.parents[1]->value.ptr(), k, n).transpose();
        }
        if (Tensor* gb = parent_grad(self, 1)) {
            MapR(gb->ptr(), k, n).noalias() += CMapR(self.parents[0]->value.ptr(), m, k).transpose() * g;
        }
    });
}

Var matmul_batched(const Var& a, const Var& b) {
    const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    if (b.dim(0) != batch || b.dim(1) != k) {
        throw ConfigError("shape mismatch in 'matmul': " + dims_str(a.dims()) + " vs " + dims_str(b.dims()));
    }
    Tensor out = Tensor::uninitialized({batch, m, n});
    for (std::size_t i = 0; i < batch; ++i) {
        MapR(out.ptr() + i * m * n, m, n).noalias() =
            CMapR(a.value().ptr() + i * m * k, m, k) * CMapR(b.value().ptr() + i * k * n, k, n);
    }
    return make_result(std::move(out), "matmul", {a, b}, [batch, m, k, n](Node& self) {
        Tensor* ga = parent_grad(self, 0);
        Tensor* gb = parent_grad(self, 1);
        for (std::size_t i = 0; i < batch; ++i) {
            CMapR g(self.grad.ptr() + i * m * n, m, n);
            if (ga) {
                MapR(ga->ptr() + i * m * k, m, k).noalias() +=
                    g * CMapR(self.parents[1]->value.ptr() + i * k * n, k, n).transpose();
            }
            if (gb) {
                MapR(gb->ptr() + i * k * n, k, n).noalias() +=
                    CMapR(self.parents[0]->value.ptr() + i * m * k, m, k).transpose() * g;
            }
        }
    });
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
    if (a.rank() < 2 || b.rank() < 2) {
        throw ConfigError("shape mismatch in 'matmul': " + dims_str(a.dims()) + " vs " + dims_str(b.dims()));
    }
    if (b.rank() == 2) return matmul_flat(a, b);
    if (a.rank() == 3 && b.rank() == 3) return matmul_batched(a, b);
    throw ConfigError("shape mismatch in 'matmul': " + dims_str(a.dims()) + " vs " + dims_str(b.dims()));
}

Var linear(const Var& x, const Var& w, const Var& b) {
    const std::size_t k = x.dim(-1);
    if (w.rank() != 2 || w.dim(0) != k || b.dims() != Dims{w.dim(1)}) {
        throw ConfigError("shape mismatch in 'linear': " + dims_str(x.dims()) + " x " + dims_str(w.dims()) + " + " +
                          dims_str(b.dims()));
    }
    const std::size_t n = w.dim(1);
    const std::size_t m = x.value().size() / k;
    Dims out_dims = x.dims();
    out_dims.back() = n;
    Tensor out = Tensor::uninitialized(out_dims);
    MapR o(out.ptr(), m, n);
    o.noalias() = CMapR(x.value().ptr(), m, k) * CMapR(w.value().ptr(), k, n);
    o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.value().ptr(), n);
    return make_result(std::move(out), "linear", {x, w, b}, [m, k, n](Node& self) {
        CMapR g(self.grad.ptr(), m, n);
        if (Tensor* gx = parent_grad(self, 0)) {
            MapR(gx->ptr(), m, k).noalias() += g * CMapR(self.parents[1]->value.ptr(), k, n).transpose();
        }
        if (Tensor* gw = parent_grad(self, 1)) {
            MapR(gw->ptr(), k, n).noalias() += CMapR(self.parents[0]->value.ptr(), m, k).transpose() * g;
        }
        if (Tensor* gb = parent_grad(self, 2)) Eigen::Map<Eigen::RowVectorXd>(gb->ptr(), n) += g.colwise().sum();
    });
}

Var transpose(const Var& a) {
    if (a.rank() < 2) throw ConfigError("transpose needs rank >= 2, got " + dims_str(a.dims()));
    const std::size_t r = a.dim(-2), c = a.dim(-1);
    const std::size_t batch = a.value().size() / (r * c);
    Dims out_dims = a.dims();
    std::swap(out_dims[out_dims.size() - 1], out_dims[out_dims.size() - 2]);
    Tensor out = Tensor::uninitialized(out_dims);
    for (std::size_t i = 0; i < batch; ++i) {
        MapR(out.ptr() + i * r * c, c, r) = CMapR(a.value().ptr() + i * r * c, r, c).transpose();
    }
    return make_result(std::move(out), "transpose", {a}, [batch, r, c](Node& self) {
        Tensor* ga = parent_grad(self, 0);
        if (!ga) return;
        for (std::size_t i = 0; i < batch; ++i) {
            MapR(ga->ptr() + i * r * c, r, c) += CMapR(self.grad.ptr() + i * r * c, c, r).transpose();
        }
    });
}

Var reshape(const Var& a, Dims dims) {
    Tensor out = a.value().reshaped(std::move(dims));
    return make_result(std::move(out), "reshape", {a}, [](Node& self) {
        Tensor* ga = parent_grad(self, 0);
        if (!ga) return;
        const double* g = self.grad.ptr();
        double* p = ga->ptr();
        for (std::size_t i = 0; i < ga->size(); ++i) p[i] += g[i];
    });
}

}  // namespace ito
