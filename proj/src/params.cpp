#include "mdmrl/params.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include <openssl/sha.h>

namespace mdmrl {

void adam_update(std::span<double> params, std::span<const double> grads,
                 std::span<double> m, std::span<double> v, std::uint64_t step_index,
                 double lr, double beta1, double beta2, double eps) {
    if (params.size() != grads.size() || params.size() != m.size() ||
        params.size() != v.size()) {
        throw std::invalid_argument("adam_update: array shapes are not aligned");
    }
    if (step_index < 1) throw std::invalid_argument("adam_update: step_index must be >= 1");
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_index));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_index));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grads[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grads[i] * grads[i];
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

Tensor& ParamStore::add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
    ParamEntry e;
    e.name = name;
    e.grad = Tensor(init.shape);
    e.m = Tensor(init.shape);
    e.v = Tensor(init.shape);
    e.value = std::move(init);
    entries_.push_back(std::move(e));
    index_[name] = entries_.size() - 1;
    return entries_.back().value;
}

ParamEntry& ParamStore::entry(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown name " + name);
    return entries_[it->second];
}

const ParamEntry& ParamStore::entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown name " + name);
    return entries_[it->second];
}

std::size_t ParamStore::total_params() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
}

void ParamStore::zero_grads() {
    for (auto& e : entries_) e.grad.fill(0.0);
}

std::uint64_t ParamStore::adam_step(const AdamConfig& cfg) {
    ++step_counter;
    for (auto& e : entries_) {
        adam_update(e.value.data, e.grad.data, e.m.data, e.v.data, step_counter, cfg.lr,
                    cfg.beta1, cfg.beta2, cfg.eps);
    }
    return step_counter;
}

std::vector<std::uint8_t> ParamStore::value_bytes() const {
    std::vector<std::uint8_t> out;
    for (const auto& e : entries_) {
        out.insert(out.end(), e.name.begin(), e.name.end());
        out.push_back(0);
        const auto* p = reinterpret_cast<const std::uint8_t*>(e.value.data.data());
        out.insert(out.end(), p, p + e.value.data.size() * sizeof(double));
    }
    return out;
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
    unsigned char digest[SHA256_DIGEST_LENGTH];
    SHA256(bytes.data(), bytes.size(), digest);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(SHA256_DIGEST_LENGTH * 2);
    for (unsigned char c : digest) {
        out.push_back(hex[c >> 4]);
        out.push_back(hex[c & 0xf]);
    }
    return out;
}

std::string param_hash(const ParamStore& store) {
    auto bytes = store.value_bytes();
    return sha256_hex(bytes);
}

} // namespace mdmrl
