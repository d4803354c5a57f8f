#pragma once

#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "optim.hpp"
#include "tensor.hpp"

namespace cbm {

enum class MeasureKind { DCor, MineDV };

struct DependenceEstimate {
    float value = 0.0f;
    MeasureKind kind = MeasureKind::DCor;
    std::size_t batch_size = 0;
};

// n x n doubly centered pairwise-distance matrix (double precision; used by
// the non-differentiable estimator path and the permutation oracle).
struct CenteredDistanceMatrix {
    std::size_t n = 0;
    std::vector<double> values;  // row-major n*n

    double at(std::size_t i, std::size_t j) const { return values[i * n + j]; }
};

namespace detail {

inline std::vector<double> pairwise_dist_d(const Tensor& z) {
    std::size_t n = z.rows(), d = z.cols();
    if (n < 2) throw std::invalid_argument("pairwise distances: need at least 2 rows");
    std::vector<double> dist(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                double diff = static_cast<double>(z.at(i, k)) - z.at(j, k);
                acc += diff * diff;
            }
            dist[i * n + j] = dist[j * n + i] = std::sqrt(acc);
        }
    return dist;
}

inline CenteredDistanceMatrix center_d(const std::vector<double>& dmat, std::size_t n) {
    std::vector<double> rowm(n, 0.0), colm(n, 0.0);
    double grand = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double v = dmat[i * n + j];
            rowm[i] += v;
            colm[j] += v;
            grand += v;
        }
    for (auto& v : rowm) v /= static_cast<double>(n);
    for (auto& v : colm) v /= static_cast<double>(n);
    grand /= static_cast<double>(n) * static_cast<double>(n);
    CenteredDistanceMatrix out;
    out.n = n;
    out.values.resize(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out.values[i * n + j] = dmat[i * n + j] - rowm[i] - colm[j] + grand;
    return out;
}

inline double dcov2_from_centered(const CenteredDistanceMatrix& a,
                                  const CenteredDistanceMatrix& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) acc += a.values[i] * b.values[i];
    return acc / (static_cast<double>(a.n) * static_cast<double>(a.n));
}

inline double sqrt_clamped_d(double s) {
    if (s < -1e-9) throw std::runtime_error("dcov: negative radicand beyond float noise");
    return s > 0.0 ? std::sqrt(s) : 0.0;
}

}  // namespace detail

inline CenteredDistanceMatrix centered_distances(const Tensor& z) {
    return detail::center_d(detail::pairwise_dist_d(z), z.rows());
}

// sqrt(sum_ij A_ij B_ij / N^2); non-differentiable estimator path.
inline double dcov(const Tensor& z1, const Tensor& z2) {
    if (z1.rows() != z2.rows())
        throw std::invalid_argument("dcov: sample counts differ");
    auto a = centered_distances(z1);
    auto b = centered_distances(z2);
    return detail::sqrt_clamped_d(detail::dcov2_from_centered(a, b));
}

inline double dcor(const Tensor& z1, const Tensor& z2) {
    if (z1.rows() != z2.rows())
        throw std::invalid_argument("dcor: sample counts differ");
    auto a = centered_distances(z1);
    auto b = centered_distances(z2);
    double v11 = detail::dcov2_from_centered(a, a);
    double v22 = detail::dcov2_from_centered(b, b);
    if (v11 < 1e-12 || v22 < 1e-12)
        throw std::invalid_argument("dcor: constant subspace (degenerate input)");
    double v12 = detail::sqrt_clamped_d(detail::dcov2_from_centered(a, b));
    double denom = std::sqrt(std::sqrt(v11) * std::sqrt(v22));
    return v12 / denom;
}

// Differentiable distance correlation for use as a training penalty.
inline Var dcor_penalty(Var z1, Var z2) {
    Tape& t = *z1.tape;
    if (t.value(z1).rows() != t.value(z2).rows())
        throw std::invalid_argument("dcor_penalty: sample counts differ");
    std::size_t n = t.value(z1).rows();
    float inv_n2 = 1.0f / static_cast<float>(n * n);
    Var a = double_center(pairwise_euclidean(z1));
    Var b = double_center(pairwise_euclidean(z2));
    Var v12 = scale(sum_all(mul(a, b)), inv_n2);
    Var v11 = scale(sum_all(mul(a, a)), inv_n2);
    Var v22 = scale(sum_all(mul(b, b)), inv_n2);
    if (t.value(v11).data[0] < 1e-12f || t.value(v22).data[0] < 1e-12f)
        throw std::invalid_argument("dcor_penalty: constant subspace (degenerate input)");
    if (t.value(v12).data[0] < -1e-9f)
        throw std::runtime_error("dcor_penalty: negative radicand beyond float noise");
    Var d12 = sqrt_clamped(v12);
    Var denom = sqrt_clamped(mul_scalar(sqrt_clamped(v11), sqrt_clamped(v22)));
    return div_scalar(d12, denom);
}

// Statistics network T(z1, z2) -> R for the Donsker-Varadhan bound.
struct MineNet {
    ParamSet params;
    std::size_t in_dim = 0;
    std::vector<std::size_t> hidden{64, 64};

    static MineNet make(std::size_t d1, std::size_t d2, std::mt19937& rng,
                        std::vector<std::size_t> hidden = {64, 64}) {
        MineNet net;
        net.in_dim = d1 + d2;
        net.hidden = hidden;
        std::size_t prev = net.in_dim;
        for (std::size_t l = 0; l < hidden.size(); ++l) {
            net.params.add("mine.w" + std::to_string(l), glorot_uniform(prev, hidden[l], rng));
            net.params.add("mine.b" + std::to_string(l), Tensor::zeros({hidden[l]}));
            prev = hidden[l];
        }
        net.params.add("mine.wout", glorot_uniform(prev, 1, rng));
        net.params.add("mine.bout", Tensor::zeros({1}));
        return net;
    }

    // trainable=false routes parameters in as constants, so no gradient is
    // written to them (encoder-side penalty with the estimator frozen).
    Var forward(Tape& t, Var in, bool trainable) {
        Var h = in;
        for (std::size_t l = 0; l < hidden.size(); ++l) {
            Var w = wrap(t, "mine.w" + std::to_string(l), trainable);
            Var b = wrap(t, "mine.b" + std::to_string(l), trainable);
            h = relu(affine(h, w, b));
        }
        return affine(h, wrap(t, "mine.wout", trainable), wrap(t, "mine.bout", trainable));
    }

private:
    Var wrap(Tape& t, const std::string& name, bool trainable) {
        return trainable ? t.leaf(&params.at(name)) : t.constant(params.at(name));
    }
};

// DV bound on a tape: mean_i T(z1_i, z2_i) - logmeanexp_i T(z1_i, z2_perm(i)).
// The product of marginals is approximated by permuting z2 within the batch.
inline Var mine_dv_bound(MineNet& net, Tape& t, Var z1, Var z2,
                         const std::vector<std::size_t>& perm, bool train_net) {
    if (t.value(z1).rows() != t.value(z2).rows())
        throw std::invalid_argument("mine_dv_bound: sample counts differ");
    if (t.value(z1).cols() + t.value(z2).cols() != net.in_dim)
        throw std::invalid_argument("mine_dv_bound: latent width does not match net input");
    Var t_joint = net.forward(t, concat_cols(z1, z2), train_net);
    Var t_marg = net.forward(t, concat_cols(z1, gather_rows(z2, perm)), train_net);
    Var neg = scale(logmeanexp(t_marg), -1.0f);
    return add(mean_all(t_joint), neg);
}

inline DependenceEstimate mine_dv_estimate(MineNet& net, const Tensor& z1,
                                           const Tensor& z2,
                                           const std::vector<std::size_t>& perm) {
    Tape t;
    Var v = mine_dv_bound(net, t, t.constant(z1), t.constant(z2), perm, false);
    return {t.value(v).data[0], MeasureKind::MineDV, z1.rows()};
}

// One gradient-ascent step on the DV bound wrt net parameters only.
// Latents enter as constants; nothing flows back to their producer.
inline DependenceEstimate mine_train_step(MineNet& net, const Tensor& z1,
                                          const Tensor& z2,
                                          const std::vector<std::size_t>& perm,
                                          OptState& state, float lr) {
    Tape t;
    Var bound = mine_dv_bound(net, t, t.constant(z1), t.constant(z2), perm, true);
    float value = t.value(bound).data[0];
    Var loss = scale(bound, -1.0f);
    t.backward(loss);
    adam_step(net.params, state, lr);
    return {value, MeasureKind::MineDV, z1.rows()};
}

// -1/2 ln(1 - rho^2) nats; oracle for jointly Gaussian scalars.
inline double gaussian_mi_analytic(double rho) {
    if (std::abs(rho) >= 1.0)
        throw std::domain_error("gaussian_mi_analytic: |rho| must be < 1");
    return -0.5 * std::log(1.0 - rho * rho);
}

// Fraction of permuted-z2 dCor values >= the observed dCor, with the +1
// smoothing that gives 1/(n_perm+1) granularity.
inline double permutation_independence_pvalue(const Tensor& z1, const Tensor& z2,
                                              int n_perm, std::uint64_t seed) {
    if (n_perm < 100)
        throw std::invalid_argument("permutation_independence_pvalue: n_perm >= 100 required");
    std::size_t n = z1.rows();
    auto a = centered_distances(z1);
    auto b = centered_distances(z2);
    double v11 = detail::dcov2_from_centered(a, a);
    double v22 = detail::dcov2_from_centered(b, b);
    double denom = std::sqrt(std::sqrt(v11) * std::sqrt(v22));
    auto dcor_of = [&](const std::vector<std::size_t>& p) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                acc += a.at(i, j) * b.at(p[i], p[j]);
        double v12 = detail::sqrt_clamped_d(acc / (static_cast<double>(n) * n));
        return v12 / denom;
    };
    std::vector<std::size_t> ident(n);
    std::iota(ident.begin(), ident.end(), 0);
    double observed = dcor_of(ident);

    std::mt19937 rng(static_cast<std::uint32_t>(mix_seed(seed)));
    int ge = 0;
    auto p = ident;
    for (int r = 0; r < n_perm; ++r) {
        std::shuffle(p.begin(), p.end(), rng);
        if (dcor_of(p) >= observed) ++ge;
    }
    return (ge + 1.0) / (n_perm + 1.0);
}

}  // namespace cbm
