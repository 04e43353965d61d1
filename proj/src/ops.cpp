#include "calclab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace calclab {

namespace {

// ---- raw GEMM kernels (accumulating) -------------------------------------
// Loop orders chosen so the innermost loop runs over contiguous memory.

void gemm_nn(double* c, const double* a, const double* b, std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m,n] += a[m,k] * b[n,k]^T
void gemm_nt(double* c, const double* a, const double* b, std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::int64_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// c[k,n] += a[m,k]^T * b[m,n]
void gemm_tn(double* c, const double* a, const double* b, std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* crow = c + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

bool wants_grad(Tape* tape, std::initializer_list<const Tensor*> inputs) {
    if (!tape) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

void check_2d(const Tensor& t, const char* what) {
    if (t.ndim() != 2) throw shape_error(std::string(what) + " expects a 2-D tensor, got shape " + shape_str(t.shape()));
}

void check_no_nan(const Tensor& t, const char* what) {
    for (double v : t.data()) {
        if (std::isnan(v)) throw numeric_error(std::string(what) + ": NaN in input");
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
    check_2d(a, "matmul");
    check_2d(b, "matmul");
    if (a.dim(1) != b.dim(0)) {
        throw shape_error("matmul inner dimensions disagree: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor c = Tensor::zeros({m, n});
    gemm_nn(c.data().data(), a.data().data(), b.data().data(), m, k, n);
    if (wants_grad(tape, {&a, &b})) {
        c.set_requires_grad(true);
        tape->record([a, b, c, m, k, n]() mutable {
            auto gc = c.grad_view();
            if (gc.empty()) return;
            if (a.requires_grad()) gemm_nt(a.grad().data(), gc.data(), b.data().data(), m, n, k);
            if (b.requires_grad()) gemm_tn(b.grad().data(), a.data().data(), gc.data(), m, k, n);
        });
    }
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b, Tape* tape) {
    check_2d(a, "matmul_nt");
    check_2d(b, "matmul_nt");
    if (a.dim(1) != b.dim(1)) {
        throw shape_error("matmul_nt inner dimensions disagree: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
    }
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor c = Tensor::zeros({m, n});
    gemm_nt(c.data().data(), a.data().data(), b.data().data(), m, k, n);
    if (wants_grad(tape, {&a, &b})) {
        c.set_requires_grad(true);
        tape->record([a, b, c, m, k, n]() mutable {
            auto gc = c.grad_view();
            if (gc.empty()) return;
            // dA += dC * B ; dB += dC^T * A
            if (a.requires_grad()) gemm_nn(a.grad().data(), gc.data(), b.data().data(), m, n, k);
            if (b.requires_grad()) gemm_tn(b.grad().data(), gc.data(), a.data().data(), m, n, k);
        });
    }
    return c;
}

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
    if (a.shape() != b.shape()) {
        throw shape_error("add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor c = Tensor::zeros(a.shape());
    const auto av = a.data(), bv = b.data();
    auto cv = c.data();
    for (std::size_t i = 0; i < cv.size(); ++i) cv[i] = av[i] + bv[i];
    if (wants_grad(tape, {&a, &b})) {
        c.set_requires_grad(true);
        tape->record([a, b, c]() mutable {
            auto gc = c.grad_view();
            if (gc.empty()) return;
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (std::size_t i = 0; i < gc.size(); ++i) ga[i] += gc[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (std::size_t i = 0; i < gc.size(); ++i) gb[i] += gc[i];
            }
        });
    }
    return c;
}

Tensor add_bias(const Tensor& x, const Tensor& bias, Tape* tape) {
    check_2d(x, "add_bias");
    if (bias.ndim() != 1 || bias.dim(0) != x.dim(1)) {
        throw shape_error("add_bias: bias " + shape_str(bias.shape()) + " does not match rows of " + shape_str(x.shape()));
    }
    const std::int64_t n = x.dim(0), d = x.dim(1);
    Tensor y = Tensor::zeros({n, d});
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < d; ++j) y.at(i, j) = x.at(i, j) + bias.at(j);
    }
    if (wants_grad(tape, {&x, &bias})) {
        y.set_requires_grad(true);
        tape->record([x, bias, y, n, d]() mutable {
            auto gy = y.grad_view();
            if (gy.empty()) return;
            if (x.requires_grad()) {
                auto gx = x.grad();
                for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
            }
            if (bias.requires_grad()) {
                auto gb = bias.grad();
                for (std::int64_t i = 0; i < n; ++i) {
                    for (std::int64_t j = 0; j < d; ++j) gb[static_cast<std::size_t>(j)] += gy[static_cast<std::size_t>(i * d + j)];
                }
            }
        });
    }
    return y;
}

Tensor scale(const Tensor& x, double factor, Tape* tape) {
    Tensor y = Tensor::zeros(x.shape());
    const auto xv = x.data();
    auto yv = y.data();
    for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = factor * xv[i];
    if (wants_grad(tape, {&x})) {
        y.set_requires_grad(true);
        tape->record([x, y, factor]() mutable {
            auto gy = y.grad_view();
            if (gy.empty()) return;
            auto gx = x.grad();
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += factor * gy[i];
        });
    }
    return y;
}

Tensor softmax_lastdim(const Tensor& x, Tape* tape) {
    if (x.ndim() == 0 || x.shape().back() < 1) {
        throw shape_error("softmax_lastdim needs a last dimension >= 1, got " + shape_str(x.shape()));
    }
    check_no_nan(x, "softmax_lastdim");
    const std::int64_t d = x.shape().back();
    const std::int64_t rows = x.numel() / d;
    Tensor y = Tensor::zeros(x.shape());
    const double* xv = x.data().data();
    double* yv = y.data().data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xr = xv + r * d;
        double* yr = yv + r * d;
        double mx = xr[0];
        for (std::int64_t j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
        double sum = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        const double inv = 1.0 / sum;
        for (std::int64_t j = 0; j < d; ++j) yr[j] *= inv;
    }
    if (wants_grad(tape, {&x})) {
        y.set_requires_grad(true);
        tape->record([x, y, rows, d]() mutable {
            auto gy = y.grad_view();
            if (gy.empty()) return;
            auto gx = x.grad();
            const auto yv2 = y.data();
            for (std::int64_t r = 0; r < rows; ++r) {
                const std::size_t base = static_cast<std::size_t>(r * d);
                double dot = 0.0;
                for (std::int64_t j = 0; j < d; ++j) dot += gy[base + j] * yv2[base + j];
                for (std::int64_t j = 0; j < d; ++j) gx[base + j] += yv2[base + j] * (gy[base + j] - dot);
            }
        });
    }
    return y;
}

Tensor causal_softmax(const Tensor& scores, Tape* tape) {
    check_2d(scores, "causal_softmax");
    check_no_nan(scores, "causal_softmax");
    const std::int64_t n = scores.dim(0);
    if (scores.dim(1) != n) throw shape_error("causal_softmax expects a square matrix, got " + shape_str(scores.shape()));
    Tensor y = Tensor::zeros({n, n});
    for (std::int64_t i = 0; i < n; ++i) {
        double mx = scores.at(i, 0);
        for (std::int64_t j = 1; j <= i; ++j) mx = std::max(mx, scores.at(i, j));
        double sum = 0.0;
        for (std::int64_t j = 0; j <= i; ++j) {
            y.at(i, j) = std::exp(scores.at(i, j) - mx);
            sum += y.at(i, j);
        }
        const double inv = 1.0 / sum;
        for (std::int64_t j = 0; j <= i; ++j) y.at(i, j) *= inv;
    }
    if (wants_grad(tape, {&scores})) {
        y.set_requires_grad(true);
        tape->record([scores, y, n]() mutable {
            auto gy = y.grad_view();
            if (gy.empty()) return;
            auto gx = scores.grad();
            for (std::int64_t i = 0; i < n; ++i) {
                const std::size_t base = static_cast<std::size_t>(i * n);
                double dot = 0.0;
                for (std::int64_t j = 0; j <= i; ++j) dot += gy[base + j] * y.at(i, j);
                for (std::int64_t j = 0; j <= i; ++j) gx[base + j] += y.at(i, j) * (gy[base + j] - dot);
            }
        });
    }
    return y;
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps, Tape* tape) {
    const std::int64_t d = x.shape().back();
    if (gain.numel() != d || bias.numel() != d) {
        throw shape_error("layernorm: gain/bias must match last dimension " + std::to_string(d));
    }
    const std::int64_t rows = x.numel() / d;
    Tensor y = Tensor::zeros(x.shape());
    // per-row statistics are needed again in backward
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
    auto means = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
    const double* xv = x.data().data();
    double* yv = y.data().data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xr = xv + r * d;
        double* yr = yv + r * d;
        double mean = 0.0;
        for (std::int64_t j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double c = xr[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*means)[static_cast<std::size_t>(r)] = mean;
        (*inv_std)[static_cast<std::size_t>(r)] = is;
        for (std::int64_t j = 0; j < d; ++j) yr[j] = (xr[j] - mean) * is * gain.at(j) + bias.at(j);
    }
    if (wants_grad(tape, {&x, &gain, &bias})) {
        y.set_requires_grad(true);
        tape->record([x, gain, bias, y, rows, d, means, inv_std]() mutable {
            auto gy = y.grad_view();
            if (gy.empty()) return;
            const double* xv2 = x.data().data();
            for (std::int64_t r = 0; r < rows; ++r) {
                const std::size_t base = static_cast<std::size_t>(r * d);
                const double mean = (*means)[static_cast<std::size_t>(r)];
                const double is = (*inv_std)[static_cast<std::size_t>(r)];
                // dxhat = dy * gain ; dx = is * (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (std::int64_t j = 0; j < d; ++j) {
                    const double xhat = (xv2[base + j] - mean) * is;
                    const double dxhat = gy[base + j] * gain.at(j);
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
                const double inv_d = 1.0 / static_cast<double>(d);
                if (x.requires_grad()) {
                    auto gx = x.grad();
                    for (std::int64_t j = 0; j < d; ++j) {
                        const double xhat = (xv2[base + j] - mean) * is;
                        const double dxhat = gy[base + j] * gain.at(j);
                        gx[base + j] += is * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
                    }
                }
                if (gain.requires_grad()) {
                    auto gg = gain.grad();
                    for (std::int64_t j = 0; j < d; ++j) {
                        const double xhat = (xv2[base + j] - mean) * is;
                        gg[static_cast<std::size_t>(j)] += gy[base + j] * xhat;
                    }
                }
                if (bias.requires_grad()) {
                    auto gb = bias.grad();
                    for (std::int64_t j = 0; j < d; ++j) gb[static_cast<std::size_t>(j)] += gy[base + j];
                }
            }
        });
    }
    return y;
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Tensor gelu(const Tensor& x, Tape* tape) {
    Tensor y = Tensor::zeros(x.shape());
    const auto xv = x.data();
    auto yv = y.data();
    for (std::size_t i = 0; i < yv.size(); ++i) {
        yv[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * kInvSqrt2));
    }
    if (wants_grad(tape, {&x})) {
        y.set_requires_grad(true);
        tape->record([x, y]() mutable {
            auto gy = y.grad_view();
            if (gy.empty()) return;
            auto gx = x.grad();
            const auto xv2 = x.data();
            for (std::size_t i = 0; i < gy.size(); ++i) {
                const double v = xv2[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                gx[i] += gy[i] * (cdf + v * pdf);
            }
        });
    }
    return y;
}

Tensor silu(const Tensor& x, Tape* tape) {
    Tensor y = Tensor::zeros(x.shape());
    const auto xv = x.data();
    auto yv = y.data();
    for (std::size_t i = 0; i < yv.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-xv[i]));
        yv[i] = xv[i] * s;
    }
    if (wants_grad(tape, {&x})) {
        y.set_requires_grad(true);
        tape->record([x, y]() mutable {
            auto gy = y.grad_view();
            if (gy.empty()) return;
            auto gx = x.grad();
            const auto xv2 = x.data();
            for (std::size_t i = 0; i < gy.size(); ++i) {
                const double s = 1.0 / (1.0 + std::exp(-xv2[i]));
                gx[i] += gy[i] * s * (1.0 + xv2[i] * (1.0 - s));
            }
        });
    }
    return y;
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids, Tape* tape) {
    check_2d(table, "gather_rows");
    const std::int64_t rows = table.dim(0), cols = table.dim(1);
    Tensor y = Tensor::zeros({static_cast<std::int64_t>(ids.size()), cols});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= rows) {
            throw data_error("gather_rows: index " + std::to_string(ids[i]) + " out of range [0," + std::to_string(rows) + ")");
        }
        for (std::int64_t j = 0; j < cols; ++j) y.at(static_cast<std::int64_t>(i), j) = table.at(ids[i], j);
    }
    if (wants_grad(tape, {&table})) {
        y.set_requires_grad(true);
        std::vector<int> idv(ids.begin(), ids.end());
        tape->record([table, y, idv, cols]() mutable {
            auto gy = y.grad_view();
            if (gy.empty()) return;
            auto gt = table.grad();
            for (std::size_t i = 0; i < idv.size(); ++i) {
                const std::size_t src = i * static_cast<std::size_t>(cols);
                const std::size_t dst = static_cast<std::size_t>(idv[i]) * static_cast<std::size_t>(cols);
                for (std::int64_t j = 0; j < cols; ++j) gt[dst + j] += gy[src + j];
            }
        });
    }
    return y;
}

Tensor select_row(const Tensor& x, std::int64_t row, Tape* tape) {
    check_2d(x, "select_row");
    const std::int64_t n = x.dim(0), d = x.dim(1);
    if (row < 0 || row >= n) throw data_error("select_row: row " + std::to_string(row) + " out of range");
    Tensor y = Tensor::zeros({d});
    for (std::int64_t j = 0; j < d; ++j) y.at(j) = x.at(row, j);
    if (wants_grad(tape, {&x})) {
        y.set_requires_grad(true);
        tape->record([x, y, row, d]() mutable {
            auto gy = y.grad_view();
            if (gy.empty()) return;
            auto gx = x.grad();
            const std::size_t base = static_cast<std::size_t>(row * d);
            for (std::int64_t j = 0; j < d; ++j) gx[base + j] += gy[static_cast<std::size_t>(j)];
        });
    }
    return y;
}

Tensor cross_entropy(const Tensor& logits, int target, Tape* tape) {
    if (logits.ndim() != 1) throw shape_error("cross_entropy expects 1-D logits, got " + shape_str(logits.shape()));
    const std::int64_t v = logits.dim(0);
    if (target < 0 || target >= v) {
        throw data_error("cross_entropy: target " + std::to_string(target) + " out of range [0," + std::to_string(v) + ")");
    }
    double mx = logits.at(0);
    for (std::int64_t j = 1; j < v; ++j) mx = std::max(mx, logits.at(j));
    double sum = 0.0;
    for (std::int64_t j = 0; j < v; ++j) sum += std::exp(logits.at(j) - mx);
    const double lse = mx + std::log(sum);
    Tensor loss = Tensor::scalar(lse - logits.at(target));
    if (wants_grad(tape, {&logits})) {
        loss.set_requires_grad(true);
        tape->record([logits, loss, target, v, mx, lse]() mutable {
            auto gl = loss.grad_view();
            if (gl.empty()) return;
            auto gx = logits.grad();
            const double g = gl[0];
            for (std::int64_t j = 0; j < v; ++j) {
                const double p = std::exp(logits.at(j) - lse);
                gx[static_cast<std::size_t>(j)] += g * (p - (j == target ? 1.0 : 0.0));
            }
        });
    }
    return loss;
}

Tensor mean_of(const std::vector<Tensor>& scalars, Tape* tape) {
    if (scalars.empty()) throw shape_error("mean_of: empty input");
    double acc = 0.0;
    bool any_grad = false;
    for (const auto& s : scalars) {
        acc += s.item();
        any_grad = any_grad || s.requires_grad();
    }
    const double inv = 1.0 / static_cast<double>(scalars.size());
    Tensor y = Tensor::scalar(acc * inv);
    if (tape && any_grad) {
        y.set_requires_grad(true);
        tape->record([scalars, y, inv]() mutable {
            auto gy = y.grad_view();
            if (gy.empty()) return;
            for (auto& s : scalars) {
                if (s.requires_grad()) s.grad()[0] += gy[0] * inv;
            }
        });
    }
    return y;
}

}  // namespace calclab
