#include "camf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "camf/error.hpp"

namespace camf {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    for (auto d : shape_) {
        if (d == 0) {
            throw InvalidShape("tensor dimensions must be positive, got " + shape_string(shape_));
        }
    }
    data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    for (auto d : shape_) {
        if (d == 0) {
            throw InvalidShape("tensor dimensions must be positive, got " + shape_string(shape_));
        }
    }
    if (shape_size(shape_) != data_.size()) {
        throw InvalidShape("shape " + shape_string(shape_) + " does not match " +
                           std::to_string(data_.size()) + " values");
    }
}

double Tensor::item() const {
    if (data_.size() != 1) {
        throw InvalidShape("item() on non-scalar tensor " + shape_string(shape_));
    }
    return data_[0];
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) noexcept { std::fill(data_.begin(), data_.end(), v); }

namespace {

void require_matrix(const Tensor& t, const char* what) {
    if (t.rank() != 2) {
        throw InvalidShape(std::string(what) + ": expected a matrix, got " +
                           shape_string(t.shape()));
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw InvalidShape("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    }
    Tensor out({m, n});
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = po + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            const double* brow = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                orow[j] += av * brow[j];
            }
        }
    }
    return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_tn");
    require_matrix(b, "matmul_tn");
    const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw InvalidShape("matmul_tn: " + shape_string(a.shape()) + "^T x " +
                           shape_string(b.shape()));
    }
    Tensor out({m, n});
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = pa + p * m;
        const double* brow = pb + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            double* orow = po + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                orow[j] += av * brow[j];
            }
        }
    }
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_nt");
    require_matrix(b, "matmul_nt");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k) {
        throw InvalidShape("matmul_nt: " + shape_string(a.shape()) + " x " +
                           shape_string(b.shape()) + "^T");
    }
    Tensor out({m, n});
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = pa + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = pb + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                s += arow[p] * brow[p];
            }
            po[i * n + j] = s;
        }
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    require_matrix(a, "transpose");
    const std::size_t m = a.dim(0), n = a.dim(1);
    Tensor out({n, m});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out.at(j, i) = a.at(i, j);
        }
    }
    return out;
}

Tensor softmax_rows(const Tensor& x, bool causal) {
    if (x.empty() || x.cols() == 0) {
        throw InvalidShape("softmax_rows: empty row dimension");
    }
    Tensor out = x;
    const std::size_t n = x.cols();
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto row = out.row(r);
        const std::size_t live = causal ? std::min(n, r + 1) : n;
        double mx = row[0];
        for (std::size_t j = 1; j < live; ++j) {
            mx = std::max(mx, row[j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < live; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < live; ++j) {
            row[j] *= inv;
        }
        for (std::size_t j = live; j < n; ++j) {
            row[j] = 0.0;
        }
    }
    return out;
}

Tensor log_softmax_rows(const Tensor& x) {
    if (x.empty() || x.cols() == 0) {
        throw InvalidShape("log_softmax_rows: empty row dimension");
    }
    Tensor out = x;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto row = out.row(r);
        double mx = row[0];
        for (double v : row) {
            mx = std::max(mx, v);
        }
        double sum = 0.0;
        for (double v : row) {
            sum += std::exp(v - mx);
        }
        const double lse = mx + std::log(sum);
        for (double& v : row) {
            v -= lse;
        }
    }
    return out;
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps,
                       LayerNormCache* cache) {
    const std::size_t n = x.cols();
    if (gain.size() != n || bias.size() != n) {
        throw InvalidShape("layer_norm: gain/bias width " + std::to_string(gain.size()) +
                           " != " + std::to_string(n));
    }
    Tensor out(x.shape());
    if (cache) {
        cache->mean.assign(x.rows(), 0.0);
        cache->rstd.assign(x.rows(), 0.0);
    }
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        auto o = out.row(r);
        double mean = 0.0;
        for (double v : in) {
            mean += v;
        }
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double v : in) {
            var += (v - mean) * (v - mean);
        }
        var /= static_cast<double>(n);
        const double rstd = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            o[j] = (in[j] - mean) * rstd * gain[j] + bias[j];
        }
        if (cache) {
            cache->mean[r] = mean;
            cache->rstd[r] = rstd;
        }
    }
    return out;
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

// tanh approximation; smooth everywhere, which keeps finite-difference checks clean.
double gelu(double x) {
    const double u = kGeluC * (x + kGeluA * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad(double x) {
    const double u = kGeluC * (x + kGeluA * x * x * x);
    const double t = std::tanh(u);
    const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

void add_inplace(Tensor& dst, const Tensor& src) {
    if (dst.size() != src.size()) {
        throw InvalidShape("add: " + shape_string(dst.shape()) + " vs " +
                           shape_string(src.shape()));
    }
    auto d = dst.data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] += s[i];
    }
}

void axpy_inplace(Tensor& dst, double alpha, const Tensor& src) {
    if (dst.size() != src.size()) {
        throw InvalidShape("axpy: " + shape_string(dst.shape()) + " vs " +
                           shape_string(src.shape()));
    }
    auto d = dst.data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] += alpha * s[i];
    }
}

}  // namespace camf
