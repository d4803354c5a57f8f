#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cbm {

// Dense row-major float32 array. Gradients live in a separate buffer that is
// empty until a backward pass populates it.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty = no gradient present

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<float> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != shape_size(shape))
            throw std::invalid_argument("Tensor: data length does not match shape");
    }

    static std::size_t shape_size(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (auto d : s) {
            if (d == 0) throw std::invalid_argument("Tensor: zero dimension");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<std::size_t> s) {
        std::size_t n = shape_size(s);
        return Tensor(std::move(s), std::vector<float>(n, 0.0f));
    }

    static Tensor scalar(float v) { return Tensor({1}, {v}); }

    std::size_t size() const { return data.size(); }
    std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
    bool is_scalar() const { return data.size() == 1; }

    float& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    float at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    bool has_grad() const { return !grad.empty(); }
    void alloc_grad() { grad.assign(data.size(), 0.0f); }
    void clear_grad() { grad.clear(); }

    bool all_finite() const {
        return std::all_of(data.begin(), data.end(),
                           [](float v) { return std::isfinite(v); });
    }
};

// Named parameter collection with stable insertion-order iteration.
class ParamSet {
public:
    Tensor& add(const std::string& name, Tensor t) {
        if (index_.count(name))
            throw std::invalid_argument("ParamSet: duplicate name " + name);
        index_[name] = items_.size();
        items_.emplace_back(name, std::move(t));
        return items_.back().second;
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    Tensor& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end())
            throw std::invalid_argument("ParamSet: unknown name " + name);
        return items_[it->second].second;
    }
    const Tensor& at(const std::string& name) const {
        return const_cast<ParamSet*>(this)->at(name);
    }

    std::size_t size() const { return items_.size(); }

    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

    void clear_grads() {
        for (auto& [name, t] : items_) t.clear_grad();
    }

    bool any_grad() const {
        for (const auto& [name, t] : items_)
            if (t.has_grad()) return true;
        return false;
    }

private:
    std::vector<std::pair<std::string, Tensor>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Glorot-uniform weight, zero bias.
inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937& rng) {
    float limit = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
    std::uniform_real_distribution<float> dist(-limit, limit);
    Tensor w = Tensor::zeros({fan_in, fan_out});
    for (auto& v : w.data) v = dist(rng);
    return w;
}

// splitmix64, for deriving independent stream seeds from (seed, tag...).
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    return mix_seed(mix_seed(a) ^ b);
}
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix_seed(mix_seed(a, b) ^ c);
}

}  // namespace cbm
