#include <Eigen/Core>
#include <cmath>
#include <limits>

#include "ito/autodiff.hpp"
#include "ito/errors.hpp"
#include "packet.hpp"

namespace ito {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using StridedMap = Eigen::Map<MatR, 0, Eigen::OuterStride<>>;
using CStridedMap = Eigen::Map<const MatR, 0, Eigen::OuterStride<>>;

std::size_t rows_of(const Tensor& t) { return t.size() / t.dims().back(); }

}  // namespace

Var softmax(const Var& a) {
    if (a.rank() < 1) throw ConfigError("softmax needs rank >= 1");
    const std::size_t d = a.dim(-1), rows = rows_of(a.value());
    Tensor out = Tensor::uninitialized(a.dims());
    const double* x = a.value().ptr();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * d;
        double* yr = out.ptr() + r * d;
        double m = xr[0];
        for (std::size_t j = 1; j < d; ++j) m = std::max(m, xr[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < d; ++j) z += (yr[j] = std::exp(xr[j] - m));
        for (std::size_t j = 0; j < d; ++j) yr[j] /= z;
    }
    return make_result(std::move(out), "softmax", {a}, [d, rows](Node& self) {
        Tensor* ga = parent_grad(self, 0);
        if (!ga) return;
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.ptr() + r * d;
            const double* g = self.grad.ptr() + r * d;
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += g[j] * y[j];
            double* dst = ga->ptr() + r * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += y[j] * (g[j] - dot);
        }
    });
}

namespace {

// Shared kernel for plain and masked logsumexp. mask == nullptr means all entries.
Var lse_impl(const Var& a, const Tensor* mask, const char* name) {
    if (a.rank() < 1) throw ConfigError(std::string(name) + " needs rank >= 1");
    if (mask && mask->dims() != a.dims()) {
        throw ConfigError(std::string("shape mismatch in '") + name + "': " + dims_str(a.dims()) + " vs mask " +
                          dims_str(mask->dims()));
    }
    const std::size_t d = a.dim(-1), rows = rows_of(a.value());
    Dims out_dims(a.dims().begin(), a.dims().end() - 1);
    Tensor out = Tensor::uninitialized(out_dims);
    auto weights = std::make_shared<Tensor>(a.dims());  // softmax restricted to the mask
    const double* x = a.value().ptr();
    const double* mk = mask ? mask->ptr() : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * d;
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < d; ++j)
            if (!mk || mk[r * d + j] != 0.0) m = std::max(m, xr[j]);
        if (!std::isfinite(m)) {
            throw UsageError(std::string(name) + ": row " + std::to_string(r) + " has an empty mask");
        }
        double z = 0.0;
        double* w = weights->ptr() + r * d;
        for (std::size_t j = 0; j < d; ++j) {
            if (!mk || mk[r * d + j] != 0.0) z += (w[j] = std::exp(xr[j] - m));
        }
        for (std::size_t j = 0; j < d; ++j) w[j] /= z;
        out[r] = m + std::log(z);
    }
    return make_result(std::move(out), name, {a}, [weights, d, rows](Node& self) {
        Tensor* ga = parent_grad(self, 0);
        if (!ga) return;
        for (std::size_t r = 0; r < rows; ++r) {
            const double g = self.grad[r];
            const double* w = weights->ptr() + r * d;
            double* dst = ga->ptr() + r * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += g * w[j];
        }
    });
}

}  // namespace

Var logsumexp(const Var& a) { return lse_impl(a, nullptr, "logsumexp"); }

Var masked_logsumexp(const Var& a, const Tensor& mask) { return lse_impl(a, &mask, "masked_logsumexp"); }

Var l2_normalize(const Var& a, double eps) {
    if (a.rank() < 1) throw ConfigError("l2_normalize needs rank >= 1");
    const std::size_t d = a.dim(-1), rows = rows_of(a.value());
    Tensor out = Tensor::uninitialized(a.dims());
    auto norms = std::make_shared<std::vector<double>>(rows);
    const double* x = a.value().ptr();
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += x[r * d + j] * x[r * d + j];
        const double n = std::max(std::sqrt(s), eps);
        (*norms)[r] = n;
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x[r * d + j] / n;
    }
    return make_result(std::move(out), "l2_normalize", {a}, [norms, d, rows](Node& self) {
        Tensor* ga = parent_grad(self, 0);
        if (!ga) return;
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.ptr() + r * d;
            const double* g = self.grad.ptr() + r * d;
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += y[j] * g[j];
            double* dst = ga->ptr() + r * d;
            const double inv = 1.0 / (*norms)[r];
            for (std::size_t j = 0; j < d; ++j) dst[j] += (g[j] - y[j] * dot) * inv;
        }
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const std::size_t d = x.dim(-1), rows = rows_of(x.value());
    if (gamma.dims() != Dims{d} || beta.dims() != Dims{d}) {
        throw ConfigError("shape mismatch in 'layer_norm': " + dims_str(x.dims()) + " vs gamma " +
                          dims_str(gamma.dims()) + " / beta " + dims_str(beta.dims()));
    }
    Tensor out = Tensor::uninitialized(x.dims());
    auto xhat = std::make_shared<Tensor>(Tensor::uninitialized(x.dims()));
    auto rstd = std::make_shared<std::vector<double>>(rows);
    const double* px = x.value().ptr();
    const double* pg = gamma.value().ptr();
    const double* pb = beta.value().ptr();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = px + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<double>(d);
        const double rs = 1.0 / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (xr[j] - mu) * rs;
            (*xhat)[r * d + j] = h;
            out[r * d + j] = h * pg[j] + pb[j];
        }
    }
    return make_result(std::move(out), "layer_norm", {x, gamma, beta}, [xhat, rstd, d, rows](Node& self) {
        Tensor* gx = parent_grad(self, 0);
        Tensor* gg = parent_grad(self, 1);
        Tensor* gb = parent_grad(self, 2);
        const double* gamma_v = self.parents[1]->value.ptr();
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* g = self.grad.ptr() + r * d;
            const double* h = xhat->ptr() + r * d;
            if (gg)
                for (std::size_t j = 0; j < d; ++j) (*gg)[j] += g[j] * h[j];
            if (gb)
                for (std::size_t j = 0; j < d; ++j) (*gb)[j] += g[j];
            if (gx) {
                double mean_dh = 0.0, mean_dh_h = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double dh = g[j] * gamma_v[j];
                    mean_dh += dh;
                    mean_dh_h += dh * h[j];
                }
                mean_dh *= inv_d;
                mean_dh_h *= inv_d;
                double* dst = gx->ptr() + r * d;
                const double rs = (*rstd)[r];
                for (std::size_t j = 0; j < d; ++j) {
                    dst[j] += rs * (g[j] * gamma_v[j] - mean_dh - h[j] * mean_dh_h);
                }
            }
        }
    });
}

Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads, bool causal) {
    if (q.rank() != 3 || k.rank() != 3 || v.dims() != k.dims() || q.dim(0) != k.dim(0) || q.dim(2) != k.dim(2) ||
        (causal && q.dim(1) != k.dim(1))) {
        throw ConfigError("shape mismatch in 'attention': " + dims_str(q.dims()) + " / " + dims_str(k.dims()) +
                          " / " + dims_str(v.dims()));
    }
    const std::size_t n = q.dim(0), lq = q.dim(1), lk = k.dim(1), width = q.dim(2);
    if (heads == 0 || width % heads != 0) {
        throw ConfigError("attention width " + std::to_string(width) + " not divisible by heads " +
                          std::to_string(heads));
    }
    const std::size_t dh = width / heads;
    const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
    auto probs = std::make_shared<Tensor>(Tensor::uninitialized(Dims{n, heads, lq, lk}));
    Tensor out = Tensor::uninitialized(q.dims());
    const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(width));
    Eigen::ArrayXd scores(static_cast<Eigen::Index>(detail::padded_length(lq * lk)));
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t qoff = b * lq * width + h * dh, koff = b * lk * width + h * dh;
            CStridedMap qh(q.value().ptr() + qoff, lq, dh, stride);
            CStridedMap kh(k.value().ptr() + koff, lk, dh, stride);
            CStridedMap vh(v.value().ptr() + koff, lk, dh, stride);
            Eigen::Map<MatR> p(probs->ptr() + (b * heads + h) * lq * lk, lq, lk);
            p.noalias() = (qh * kh.transpose()) * scl;
            for (std::size_t i = 0; i < lq; ++i) {
                const std::size_t lim = causal ? i + 1 : lk;
                double m = p(i, 0);
                for (std::size_t j = 1; j < lim; ++j) m = std::max(m, p(i, j));
                for (std::size_t j = 0; j < lk; ++j) scores[i * lk + j] = j < lim ? p(i, j) - m : 0.0;
            }
            scores = scores.exp();
            for (std::size_t i = 0; i < lq; ++i) {
                const std::size_t lim = causal ? i + 1 : lk;
                double z = 0.0;
                for (std::size_t j = 0; j < lim; ++j) z += scores[i * lk + j];
                for (std::size_t j = 0; j < lim; ++j) p(i, j) = scores[i * lk + j] / z;
                for (std::size_t j = lim; j < lk; ++j) p(i, j) = 0.0;
            }
            StridedMap oh(out.ptr() + qoff, lq, dh, stride);
            oh.noalias() = p * vh;
        }
    }
    return make_result(std::move(out), "attention", {q, k, v}, [probs, n, lq, lk, width, heads, dh, scl](Node& self) {
        Tensor* gq = parent_grad(self, 0);
        Tensor* gk = parent_grad(self, 1);
        Tensor* gv = parent_grad(self, 2);
        const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(width));
        MatR dp(lq, lk), ds(lq, lk);
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t h = 0; h < heads; ++h) {
                const std::size_t qoff = b * lq * width + h * dh, koff = b * lk * width + h * dh;
                CStridedMap qh(self.parents[0]->value.ptr() + qoff, lq, dh, stride);
                CStridedMap kh(self.parents[1]->value.ptr() + koff, lk, dh, stride);
                CStridedMap vh(self.parents[2]->value.ptr() + koff, lk, dh, stride);
                CStridedMap go(self.grad.ptr() + qoff, lq, dh, stride);
                Eigen::Map<const MatR> p(probs->ptr() + (b * heads + h) * lq * lk, lq, lk);
                if (gv) StridedMap(gv->ptr() + koff, lk, dh, stride).noalias() += p.transpose() * go;
                if (!gq && !gk) continue;
                dp.noalias() = go * vh.transpose();
                for (std::size_t i = 0; i < lq; ++i) {
                    double rowdot = 0.0;
                    for (std::size_t j = 0; j < lk; ++j) rowdot += dp(i, j) * p(i, j);
                    for (std::size_t j = 0; j < lk; ++j) ds(i, j) = p(i, j) * (dp(i, j) - rowdot) * scl;
                }
                if (gq) StridedMap(gq->ptr() + qoff, lq, dh, stride).noalias() += ds * kh;
                if (gk) StridedMap(gk->ptr() + koff, lk, dh, stride).noalias() += ds.transpose() * qh;
            }
        }
    });
}

Var embedding(const Var& table, std::span<const std::int32_t> ids, Dims leading) {
    if (table.rank() != 2) throw ConfigError("embedding table must be rank 2, got " + dims_str(table.dims()));
    const std::size_t vocab = table.dim(0), d = table.dim(1);
    if (numel(leading) != ids.size()) {
        throw ConfigError("embedding: " + std::to_string(ids.size()) + " ids do not fill dims " + dims_str(leading));
    }
    for (auto id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
            throw ConfigError("embedding id " + std::to_string(id) + " out of range for vocab " + std::to_string(vocab));
        }
    }
    Dims out_dims = leading;
    out_dims.push_back(d);
    Tensor out = Tensor::uninitialized(out_dims);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const double* src = table.value().ptr() + static_cast<std::size_t>(ids[i]) * d;
        std::copy(src, src + d, out.ptr() + i * d);
    }
    std::vector<std::int32_t> idv(ids.begin(), ids.end());
    return make_result(std::move(out), "embedding", {table}, [idv = std::move(idv), d](Node& self) {
        Tensor* gt = parent_grad(self, 0);
        if (!gt) return;
        for (std::size_t i = 0; i < idv.size(); ++i) {
            double* dst = gt->ptr() + static_cast<std::size_t>(idv[i]) * d;
            const double* g = self.grad.ptr() + i * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += g[j];
        }
    });
}

}  // namespace ito
