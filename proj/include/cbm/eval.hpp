#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "data.hpp"
#include "model.hpp"
#include "tensor.hpp"

namespace cbm {

// 100 * correct / total.
inline double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
    if (pred.empty() || pred.size() != truth.size())
        throw std::invalid_argument("accuracy: empty or mismatched inputs");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == truth[i]) ++correct;
    return 100.0 * static_cast<double>(correct) / static_cast<double>(pred.size());
}

// Probability a random positive outranks a random negative, ties 1/2.
// Rank-based (Mann-Whitney with midranks).
inline double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw std::invalid_argument("auroc: empty or mismatched inputs");
    std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        double mid = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    std::size_t n_pos = 0;
    double rank_sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        if (labels[k] == 1) {
            ++n_pos;
            rank_sum += rank[k];
        } else if (labels[k] != 0) {
            throw std::invalid_argument("auroc: labels must be 0/1");
        }
    }
    std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw std::invalid_argument("auroc: both classes must be present");
    double u = rank_sum - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// Independent O(n^2) pair-counting route; oracle for the ranking AUROC.
inline double auroc_bruteforce(const std::vector<double>& scores,
                               const std::vector<int>& labels) {
    double wins = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    if (pairs == 0) throw std::invalid_argument("auroc_bruteforce: need both classes");
    return wins / static_cast<double>(pairs);
}

// Majority vote over the k Euclidean-nearest reference latents; 15-15 ties
// break toward label 0.
inline std::vector<int> knn_predict(const Tensor& reference, const std::vector<int>& ref_labels,
                                    const Tensor& queries, std::size_t k) {
    std::size_t n_ref = reference.rows(), d = reference.cols();
    if (k == 0 || k > n_ref) throw std::invalid_argument("knn_predict: bad k");
    if (queries.cols() != d) throw std::invalid_argument("knn_predict: dim mismatch");
    std::vector<int> out(queries.rows());
    std::vector<std::pair<double, std::size_t>> dist(n_ref);
    for (std::size_t q = 0; q < queries.rows(); ++q) {
        for (std::size_t r = 0; r < n_ref; ++r) {
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                double diff = static_cast<double>(queries.at(q, c)) - reference.at(r, c);
                acc += diff * diff;
            }
            dist[r] = {acc, r};
        }
        std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k - 1),
                         dist.end());
        std::size_t ones = 0;
        for (std::size_t r = 0; r < k; ++r) ones += ref_labels[dist[r].second] == 1;
        out[q] = (2 * ones > k) ? 1 : 0;
    }
    return out;
}

// 2x2 accuracy matrix; rows are labels (y1, y2), columns subspaces (z1, z2).
struct KnnConfusion {
    std::array<std::array<double, 2>, 2> acc{{{0, 0}, {0, 0}}};  // [label][subspace]
};

inline KnnConfusion knn_confusion(const LatentCode& reference,
                                  const std::vector<int>& ref_y1,
                                  const std::vector<int>& ref_y2,
                                  const LatentCode& test,
                                  const std::vector<int>& test_y1,
                                  const std::vector<int>& test_y2, std::size_t k = 30) {
    KnnConfusion m;
    const Tensor* ref_z[2] = {&reference.z1, &reference.z2};
    const Tensor* tst_z[2] = {&test.z1, &test.z2};
    const std::vector<int>* ref_y[2] = {&ref_y1, &ref_y2};
    const std::vector<int>* tst_y[2] = {&test_y1, &test_y2};
    for (int zi = 0; zi < 2; ++zi)
        for (int yj = 0; yj < 2; ++yj) {
            auto pred = knn_predict(*ref_z[zi], *ref_y[yj], *tst_z[zi], k);
            m.acc[yj][zi] = accuracy(pred, *tst_y[yj]);
        }
    return m;
}

struct DistributionMetrics {
    double acc_y1 = 0.0;
    double acc_y2 = 0.0;  // absent for adversarial
    double auroc_y1 = 0.0;
    double auroc_y2 = 0.0;
    bool has_y2 = true;
};

struct FoldReport {
    DistributionMetrics validation, inverted, balanced;
    KnnConfusion knn;  // on the balanced split
    bool knn_has_z2 = true;
};

namespace detail {

inline std::vector<int> labels_of(const Dataset& ds, bool use_y2) {
    std::vector<int> out(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i)
        out[i] = use_y2 ? ds.samples[i].labels.y2 : ds.samples[i].labels.y1;
    return out;
}

inline std::vector<double> positive_prob(const Tensor& logits) {
    std::vector<double> p(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        double a = logits.at(i, 0), b = logits.at(i, 1);
        double m = std::max(a, b);
        double ea = std::exp(a - m), eb = std::exp(b - m);
        p[i] = eb / (ea + eb);
    }
    return p;
}

inline std::vector<int> argmax_labels(const Tensor& logits) {
    std::vector<int> out(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i)
        out[i] = logits.at(i, 1) > logits.at(i, 0) ? 1 : 0;
    return out;
}

}  // namespace detail

inline DistributionMetrics evaluate_distribution(ParamSet& params, const EncoderSpec& spec,
                                                 const Dataset& ds, bool with_auroc) {
    auto idx = all_indices(ds);
    Tensor x = images_tensor(ds, idx);
    LatentCode z = encode_eval(params, spec, x);
    DistributionMetrics m;
    m.has_y2 = !spec.shared;
    Tensor logits1 = head_logits_eval(params, 1, z.z1);
    auto y1 = detail::labels_of(ds, false);
    m.acc_y1 = accuracy(detail::argmax_labels(logits1), y1);
    if (with_auroc) m.auroc_y1 = auroc(detail::positive_prob(logits1), y1);
    if (m.has_y2) {
        Tensor logits2 = head_logits_eval(params, 2, z.z2);
        auto y2 = detail::labels_of(ds, true);
        m.acc_y2 = accuracy(detail::argmax_labels(logits2), y2);
        if (with_auroc) m.auroc_y2 = auroc(detail::positive_prob(logits2), y2);
    }
    return m;
}

// Runs encode + heads on each distribution. The kNN reference set is the
// fold's training-portion embeddings. The balanced split hosts the kNN
// confusion matrix. Adversarial reports no z2 metrics.
inline FoldReport evaluate_method(ParamSet& params, const EncoderSpec& spec,
                                  const Dataset& train_ds,
                                  const std::vector<std::size_t>& train_idx,
                                  const SplitBundle& bundle, std::size_t knn_k,
                                  bool with_auroc) {
    FoldReport r;
    r.validation = evaluate_distribution(params, spec, bundle.validation, with_auroc);
    r.inverted = evaluate_distribution(params, spec, bundle.inverted, with_auroc);
    r.balanced = evaluate_distribution(params, spec, bundle.balanced, with_auroc);

    Tensor ref_x = images_tensor(train_ds, train_idx);
    LatentCode ref_z = encode_eval(params, spec, ref_x);
    std::vector<int> ref_y1(train_idx.size()), ref_y2(train_idx.size());
    for (std::size_t i = 0; i < train_idx.size(); ++i) {
        ref_y1[i] = train_ds.samples[train_idx[i]].labels.y1;
        ref_y2[i] = train_ds.samples[train_idx[i]].labels.y2;
    }
    auto bal_idx = all_indices(bundle.balanced);
    LatentCode bal_z = encode_eval(params, spec, images_tensor(bundle.balanced, bal_idx));
    r.knn = knn_confusion(ref_z, ref_y1, ref_y2, bal_z,
                          detail::labels_of(bundle.balanced, false),
                          detail::labels_of(bundle.balanced, true), knn_k);
    r.knn_has_z2 = !spec.shared;
    if (spec.shared) {
        r.knn.acc[0][1] = 0.0;
        r.knn.acc[1][1] = 0.0;
    }
    return r;
}

// CSV: id,z1_0,z1_1,z2_0,z2_1,y1,y2,split
inline void export_embeddings(ParamSet& params, const EncoderSpec& spec,
                              const Dataset& ds, const std::string& split_tag,
                              const std::string& path) {
    if (spec.d1 < 2 || spec.d2 < 2)
        throw std::invalid_argument("export_embeddings: latent dims must be >= 2");
    auto idx = all_indices(ds);
    LatentCode z = encode_eval(params, spec, images_tensor(ds, idx));
    std::ofstream os(path);
    if (!os) throw std::runtime_error("export_embeddings: cannot open " + path);
    os << "id,z1_0,z1_1,z2_0,z2_1,y1,y2,split\n";
    char buf[256];
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& s = ds.samples[i];
        std::snprintf(buf, sizeof(buf), "%llu,%.9g,%.9g,%.9g,%.9g,%d,%d,%s\n",
                      static_cast<unsigned long long>(s.id), z.z1.at(i, 0), z.z1.at(i, 1),
                      z.z2.at(i, 0), z.z2.at(i, 1), static_cast<int>(s.labels.y1),
                      static_cast<int>(s.labels.y2), split_tag.c_str());
        os << buf;
    }
    if (!os) throw std::runtime_error("export_embeddings: write failed for " + path);
}

}  // namespace cbm
