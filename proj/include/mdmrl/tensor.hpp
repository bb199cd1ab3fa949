#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace mdmrl {

/// Dense row-major array of 64-bit floats. Rank is dynamic but in practice
/// everything here is 1-D or 2-D.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape_in);

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double value);
    static Tensor from(std::vector<std::size_t> shape, std::vector<double> values);
    static Tensor vector(std::vector<double> values);
    static Tensor scalar(double value);

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    bool is_scalar() const { return numel() == 1 && rank() <= 1; }

    // 2-D accessors; rows()/cols() treat a 1-D tensor as a single row.
    std::size_t rows() const { return rank() == 2 ? shape[0] : 1; }
    std::size_t cols() const { return rank() == 2 ? shape[1] : (rank() == 1 ? shape[0] : 1); }
    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    std::string shape_str() const;

    void fill(double value);
    bool all_finite() const;

    std::vector<std::size_t> shape;
    std::vector<double> data;
};

/// Stable softmax over the last axis at the given temperature.
/// 1-D input -> one distribution; 2-D input -> one distribution per row.
/// Inputs must be finite; temperature must be > 0.
Tensor softmax(const Tensor& logits, double temperature);

/// Vector form used by inner loops.
std::vector<double> softmax(std::span<const double> logits, double temperature);
std::vector<double> log_softmax(std::span<const double> logits, double temperature);

/// Log-density of an isotropic Gaussian N(mean, sigma^2 I) evaluated at x:
/// -(d/2) ln(2 pi sigma^2) - |x - mean|^2 / (2 sigma^2).
double gaussian_log_density(const Tensor& x, const Tensor& mean, double sigma);
double gaussian_log_density(std::span<const double> x, std::span<const double> mean,
                            double sigma);

} // namespace mdmrl
