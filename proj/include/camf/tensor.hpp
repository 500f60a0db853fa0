#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace camf {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major tensor of doubles. Scalars have shape {1}.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
        return Tensor({rows, cols}, std::move(data));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    // Matrix views; a rank-1 tensor is treated as a single row.
    std::size_t rows() const noexcept { return shape_.size() >= 2 ? shape_[0] : 1; }
    std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& storage() noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }
    double& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols(), cols()}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols(), cols()};
    }

    double item() const;
    bool all_finite() const noexcept;
    void fill(double v) noexcept;

    bool operator==(const Tensor&) const = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

// Plain (non-recording) kernels. All reductions run in a fixed order, so
// identical inputs always give bit-identical outputs.

Tensor matmul(const Tensor& a, const Tensor& b);      // [m,k] x [k,n]
Tensor matmul_tn(const Tensor& a, const Tensor& b);   // a^T b: [k,m] x [k,n] -> [m,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);   // a b^T: [m,k] x [n,k] -> [m,n]
Tensor transpose(const Tensor& a);

// Row-wise softmax with per-row max subtraction. With `causal`, entry (i, j)
// for j > i is excluded (probability exactly 0). Throws InvalidShape when the
// row dimension is empty.
Tensor softmax_rows(const Tensor& x, bool causal = false);
Tensor log_softmax_rows(const Tensor& x);

struct LayerNormCache {
    std::vector<double> mean;
    std::vector<double> rstd;
};
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps,
                       LayerNormCache* cache = nullptr);

double gelu(double x);
double gelu_grad(double x);

void add_inplace(Tensor& dst, const Tensor& src);
void axpy_inplace(Tensor& dst, double alpha, const Tensor& src);

}  // namespace camf
