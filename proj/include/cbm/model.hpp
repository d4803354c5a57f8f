#pragma once

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "measures.hpp"
#include "tensor.hpp"

namespace cbm {

struct EncoderSpec {
    std::size_t input_dim = 256;           // flattened H*W
    std::vector<std::size_t> hidden{64};   // MLP widths
    std::size_t d1 = 2;
    std::size_t d2 = 2;
    bool shared = false;  // adversarial mode: one latent of width d1+d2

    std::size_t latent_dim() const { return d1 + d2; }
};

enum class Method { Baseline, Rebalance, Mine, DCor, Adversarial };

inline std::string method_name(Method m) {
    switch (m) {
        case Method::Baseline: return "baseline";
        case Method::Rebalance: return "rebalance";
        case Method::Mine: return "mine";
        case Method::DCor: return "dcor";
        case Method::Adversarial: return "adversarial";
    }
    throw std::logic_error("method_name: bad enum");
}

inline Method method_from_name(const std::string& s) {
    if (s == "baseline") return Method::Baseline;
    if (s == "rebalance") return Method::Rebalance;
    if (s == "mine") return Method::Mine;
    if (s == "dcor") return Method::DCor;
    if (s == "adversarial") return Method::Adversarial;
    throw std::invalid_argument("unknown method: " + s);
}

struct MethodConfig {
    Method method = Method::Baseline;
    float lambda_weight = 0.0f;  // fixed for mine/dcor, peak alpha for adversarial
    float grl_alpha = 1.0f;
    float grl_gamma = 10.0f;
    std::size_t mine_n_b = 3;            // batches per cycle: 1 encoder + n_b-1 estimator
    float lr = 1e-3f;
    float mine_lr = 1e-3f;               // estimator network
    std::vector<std::size_t> mine_hidden{64, 64};
};

struct LatentVars {
    Var z1;
    Var z2;  // in shared mode, z2 == z1 (the full latent)
};

// Plain (non-tape) latent snapshot.
struct LatentCode {
    Tensor z1;
    Tensor z2;
};

// Encoder (MLP) + two linear heads, named so checkpoints round-trip.
inline ParamSet init_model(const EncoderSpec& spec, std::uint64_t seed) {
    std::mt19937 rng(static_cast<std::uint32_t>(mix_seed(seed, 0x11u)));
    ParamSet p;
    std::size_t prev = spec.input_dim;
    for (std::size_t l = 0; l < spec.hidden.size(); ++l) {
        p.add("enc.w" + std::to_string(l), glorot_uniform(prev, spec.hidden[l], rng));
        p.add("enc.b" + std::to_string(l), Tensor::zeros({spec.hidden[l]}));
        prev = spec.hidden[l];
    }
    p.add("enc.wz", glorot_uniform(prev, spec.latent_dim(), rng));
    p.add("enc.bz", Tensor::zeros({spec.latent_dim()}));
    std::size_t h1 = spec.shared ? spec.latent_dim() : spec.d1;
    std::size_t h2 = spec.shared ? spec.latent_dim() : spec.d2;
    p.add("head1.w", glorot_uniform(h1, 2, rng));
    p.add("head1.b", Tensor::zeros({2}));
    p.add("head2.w", glorot_uniform(h2, 2, rng));
    p.add("head2.b", Tensor::zeros({2}));
    return p;
}

namespace detail {
inline Var model_param(Tape& t, ParamSet& p, const std::string& name, bool trainable) {
    return trainable ? t.leaf(&p.at(name)) : t.constant(p.at(name));
}
}  // namespace detail

// Forward through the MLP; splits the last layer into (z1, z2) unless the
// spec is shared, in which case both fields alias the full latent.
inline LatentVars encode(Tape& t, ParamSet& params, const EncoderSpec& spec,
                         const Tensor& x, bool trainable = true) {
    if (x.cols() != spec.input_dim)
        throw std::invalid_argument("encode: input width does not match spec");
    Var h = t.constant(x);
    for (std::size_t l = 0; l < spec.hidden.size(); ++l) {
        Var w = detail::model_param(t, params, "enc.w" + std::to_string(l), trainable);
        Var b = detail::model_param(t, params, "enc.b" + std::to_string(l), trainable);
        h = relu(affine(h, w, b));
    }
    Var z = affine(h, detail::model_param(t, params, "enc.wz", trainable),
                   detail::model_param(t, params, "enc.bz", trainable));
    if (spec.shared) return {z, z};
    return {slice_cols(z, 0, spec.d1), slice_cols(z, spec.d1, spec.d1 + spec.d2)};
}

// Single affine map; linearity of the heads is part of the protocol.
inline Var head_logits(Tape& t, ParamSet& params, int head, Var z, bool trainable = true) {
    std::string prefix = head == 1 ? "head1" : "head2";
    return affine(z, detail::model_param(t, params, prefix + ".w", trainable),
                  detail::model_param(t, params, prefix + ".b", trainable));
}

// 1/2 (CE(head1(z1), y1) + CE(head2(z2), y2)), batch-meaned NLL.
inline Var loss_subspace_ce(Tape& t, ParamSet& params, const LatentVars& z,
                            const Tensor& y1, const Tensor& y2, bool trainable = true) {
    Var ce1 = softmax_cross_entropy(head_logits(t, params, 1, z.z1, trainable), y1);
    Var ce2 = softmax_cross_entropy(head_logits(t, params, 2, z.z2, trainable), y2);
    return scale(add(ce1, ce2), 0.5f);
}

// Subspace CE + lambda * dcor(z1, z2).
inline Var loss_penalized_dcor(Tape& t, ParamSet& params, const LatentVars& z,
                               const Tensor& y1, const Tensor& y2, float lambda) {
    Var ce = loss_subspace_ce(t, params, z, y1, y2);
    if (lambda == 0.0f) return ce;
    return add(ce, scale(dcor_penalty(z.z1, z.z2), lambda));
}

// Subspace CE + lambda * DV bound with the estimator frozen; gradient
// reaches the encoder through both terms, the MineNet parameters through
// neither.
inline Var loss_penalized_mine(Tape& t, ParamSet& params, const LatentVars& z,
                               const Tensor& y1, const Tensor& y2, float lambda,
                               MineNet& net, const std::vector<std::size_t>& perm) {
    Var ce = loss_subspace_ce(t, params, z, y1, y2);
    if (lambda == 0.0f) return ce;
    Var bound = mine_dv_bound(net, t, z.z1, z.z2, perm, /*train_net=*/false);
    return add(ce, scale(bound, lambda));
}

// GRL wiring: head2 consumes grad_reverse(z, lambda). The optimized value is
// CE1 + CE2, so head2's own parameters minimize CE2 while the encoder
// receives grad(CE1) - lambda * grad(CE2).
inline Var loss_adversarial(Tape& t, ParamSet& params, const EncoderSpec& spec,
                            Var z_shared, const Tensor& y1, const Tensor& y2,
                            float lambda) {
    if (!spec.shared)
        throw std::invalid_argument("loss_adversarial: requires shared-mode encoder");
    Var ce1 = softmax_cross_entropy(head_logits(t, params, 1, z_shared), y1);
    Var ce2 = softmax_cross_entropy(
        head_logits(t, params, 2, grad_reverse(z_shared, lambda)), y2);
    return add(ce1, ce2);
}

// lambda = alpha * (2 / (1 + exp(-gamma p)) - 1), p in [0,1].
inline float grl_lambda_schedule(float p, float alpha, float gamma) {
    if (p < 0.0f || p > 1.0f)
        throw std::domain_error("grl_lambda_schedule: p must be in [0,1]");
    return alpha * (2.0f / (1.0f + std::exp(-gamma * p)) - 1.0f);
}

// "CBM1" checkpoint: per tensor, u16 LE name length, UTF-8 name, u8 rank,
// u32 LE dims, raw little-endian float32 data.
inline void save_checkpoint(const ParamSet& params, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    os.write("CBM1", 4);
    for (const auto& [name, t] : params) {
        auto len = static_cast<std::uint16_t>(name.size());
        os.write(reinterpret_cast<const char*>(&len), sizeof(len));
        os.write(name.data(), len);
        auto rank = static_cast<std::uint8_t>(t.shape.size());
        os.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
        for (auto d : t.shape) {
            auto d32 = static_cast<std::uint32_t>(d);
            os.write(reinterpret_cast<const char*>(&d32), sizeof(d32));
        }
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline ParamSet load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "CBM1", 4) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    ParamSet p;
    while (true) {
        std::uint16_t len;
        is.read(reinterpret_cast<char*>(&len), sizeof(len));
        if (is.eof()) break;
        if (!is) throw std::runtime_error("load_checkpoint: truncated file " + path);
        std::string name(len, '\0');
        is.read(name.data(), len);
        std::uint8_t rank;
        is.read(reinterpret_cast<char*>(&rank), sizeof(rank));
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) {
            std::uint32_t d32;
            is.read(reinterpret_cast<char*>(&d32), sizeof(d32));
            d = d32;
        }
        if (!is) throw std::runtime_error("load_checkpoint: truncated file " + path);
        Tensor t = Tensor::zeros(shape);
        is.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        if (!is) throw std::runtime_error("load_checkpoint: truncated file " + path);
        p.add(name, std::move(t));
    }
    return p;
}

// Non-tape forward pass for evaluation.
inline LatentCode encode_eval(ParamSet& params, const EncoderSpec& spec, const Tensor& x) {
    Tape t;
    LatentVars z = encode(t, params, spec, x, /*trainable=*/false);
    return {t.value(z.z1), t.value(z.z2)};
}

inline Tensor head_logits_eval(ParamSet& params, int head, const Tensor& z) {
    Tape t;
    Var logits = head_logits(t, params, head, t.constant(z), /*trainable=*/false);
    return t.value(logits);
}

}  // namespace cbm
