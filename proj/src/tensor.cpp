#include "mdmrl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "mdmrl/errors.hpp"

namespace mdmrl {

namespace {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

} // namespace

Tensor::Tensor(std::vector<std::size_t> shape_in)
    : shape(std::move(shape_in)), data(shape_numel(shape), 0.0) {}

Tensor Tensor::zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> values) {
    if (shape_numel(shape) != values.size()) {
        throw std::invalid_argument("Tensor::from: data length does not match shape");
    }
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::move(values);
    return t;
}

Tensor Tensor::vector(std::vector<double> values) {
    std::size_t n = values.size();
    return from({n}, std::move(values));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

void Tensor::fill(double value) { std::fill(data.begin(), data.end(), value); }

bool Tensor::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

std::vector<double> softmax(std::span<const double> logits, double temperature) {
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("softmax: temperature must be positive");
    }
    std::vector<double> out(logits.size());
    double hi = -std::numeric_limits<double>::infinity();
    for (double v : logits) hi = std::max(hi, v / temperature);
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] / temperature - hi);
        total += out[i];
    }
    for (double& v : out) v /= total;
    return out;
}

std::vector<double> log_softmax(std::span<const double> logits, double temperature) {
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("log_softmax: temperature must be positive");
    }
    std::vector<double> out(logits.size());
    double hi = -std::numeric_limits<double>::infinity();
    for (double v : logits) hi = std::max(hi, v / temperature);
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = logits[i] / temperature - hi;
        total += std::exp(out[i]);
    }
    double lse = std::log(total);
    for (double& v : out) v -= lse;
    return out;
}

Tensor softmax(const Tensor& logits, double temperature) {
    Tensor out = logits;
    std::size_t c = logits.cols();
    std::size_t r = logits.numel() / std::max<std::size_t>(c, 1);
    for (std::size_t i = 0; i < r; ++i) {
        std::span<const double> row(logits.data.data() + i * c, c);
        auto p = softmax(row, temperature);
        std::copy(p.begin(), p.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * c));
    }
    return out;
}

double gaussian_log_density(std::span<const double> x, std::span<const double> mean,
                            double sigma) {
    if (x.size() != mean.size()) {
        throw std::invalid_argument("gaussian_log_density: shape mismatch");
    }
    if (!(sigma > 0.0)) {
        throw std::invalid_argument("gaussian_log_density: sigma must be positive");
    }
    constexpr double two_pi = 6.283185307179586476925286766559;
    double d = static_cast<double>(x.size());
    double sq = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double diff = x[i] - mean[i];
        sq += diff * diff;
    }
    return -0.5 * d * std::log(two_pi * sigma * sigma) - sq / (2.0 * sigma * sigma);
}

double gaussian_log_density(const Tensor& x, const Tensor& mean, double sigma) {
    if (!x.same_shape(mean)) {
        throw std::invalid_argument("gaussian_log_density: shape mismatch " + x.shape_str() +
                                    " vs " + mean.shape_str());
    }
    return gaussian_log_density(std::span<const double>(x.data),
                                std::span<const double>(mean.data), sigma);
}

} // namespace mdmrl
