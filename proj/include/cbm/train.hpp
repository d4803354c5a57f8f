#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "data.hpp"
#include "model.hpp"
#include "optim.hpp"

namespace cbm {

struct FoldPlan {
    std::size_t k = 5;
    std::vector<std::vector<std::size_t>> val_ids;  // per fold; folds partition the ids

    std::vector<std::size_t> train_ids(std::size_t fold) const {
        std::vector<std::size_t> out;
        for (std::size_t f = 0; f < val_ids.size(); ++f)
            if (f != fold)
                out.insert(out.end(), val_ids[f].begin(), val_ids[f].end());
        std::sort(out.begin(), out.end());
        return out;
    }
};

// Stratified by the four label cells so each fold preserves the
// co-occurrence ratios; fold sizes differ by at most one within a cell.
inline FoldPlan kfold_plan(const Dataset& ds, std::size_t k, std::uint64_t seed) {
    if (k < 2 || k > ds.size()) throw std::invalid_argument("kfold_plan: bad k");
    std::array<std::array<std::vector<std::size_t>, 2>, 2> cells;
    for (std::size_t i = 0; i < ds.size(); ++i)
        cells[ds.samples[i].labels.y2][ds.samples[i].labels.y1].push_back(i);
    std::mt19937 rng(static_cast<std::uint32_t>(mix_seed(seed, 0x21u)));
    FoldPlan plan;
    plan.k = k;
    plan.val_ids.assign(k, {});
    for (int y2 = 0; y2 < 2; ++y2)
        for (int y1 = 0; y1 < 2; ++y1) {
            auto& idx = cells[y2][y1];
            std::shuffle(idx.begin(), idx.end(), rng);
            for (std::size_t i = 0; i < idx.size(); ++i)
                plan.val_ids[i % k].push_back(idx[i]);
        }
    for (auto& fold : plan.val_ids) std::sort(fold.begin(), fold.end());
    return plan;
}

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double penalty = 0.0;  // lambda*d_m, or the adversary CE2
};

struct TrainHistory {
    std::vector<EpochRecord> records;
};

// Argmin of validation loss; ties broken by earliest epoch.
inline std::size_t select_best(const TrainHistory& history) {
    if (history.records.empty())
        throw std::invalid_argument("select_best: empty history");
    std::size_t best = 0;
    for (std::size_t i = 1; i < history.records.size(); ++i)
        if (history.records[i].val_loss < history.records[best].val_loss) best = i;
    return best;
}

inline void write_history_csv(const TrainHistory& h, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_history_csv: cannot open " + path);
    os << "epoch,train_loss,val_loss,penalty\n";
    char buf[160];
    for (const auto& r : h.records) {
        std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g\n", r.epoch,
                      r.train_loss, r.val_loss, r.penalty);
        os << buf;
    }
}

struct TrainSettings {
    std::size_t epochs = 400;
    std::size_t batch_size = 128;
};

struct Batch {
    Tensor x;
    Tensor y1;
    Tensor y2;
};

inline Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& idx) {
    return {images_tensor(ds, idx), onehot_labels(ds, idx, false),
            onehot_labels(ds, idx, true)};
}

struct TrainResult {
    ParamSet best_params;
    std::size_t best_epoch = 0;
    TrainHistory history;
};

namespace detail {

inline std::vector<std::size_t> fresh_perm(std::size_t n, std::mt19937& rng) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng);
    return p;
}

inline std::vector<std::vector<std::size_t>> batch_indices(
    std::vector<std::size_t> idx, std::size_t batch_size, std::mt19937& rng) {
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < idx.size(); i += batch_size) {
        std::size_t end = std::min(i + batch_size, idx.size());
        if (end - i < 4) break;  // tiny trailing batch: skip (dcor needs N >= 2)
        out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(i),
                         idx.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

}  // namespace detail

// One MINE cycle block: for each group of schedule n_b batches, 1 encoder
// step on the penalized loss (estimator frozen) followed by n_b-1 estimator
// ascent steps on detached latents. Returns {encoder_steps, estimator_steps}.
struct MineLoopStats {
    std::size_t encoder_steps = 0;
    std::size_t estimator_steps = 0;
    double loss_sum = 0.0;
    double penalty_sum = 0.0;
};

inline MineLoopStats mine_alternating_loop(ParamSet& params, const EncoderSpec& spec,
                                           OptState& enc_state, MineNet& net,
                                           OptState& mine_state,
                                           const std::vector<Batch>& batches,
                                           std::size_t n_b, float lambda, float enc_lr,
                                           float mine_lr, std::mt19937& perm_rng) {
    if (n_b < 2) throw std::invalid_argument("mine_alternating_loop: n_b must be >= 2");
    MineLoopStats stats;
    std::size_t cursor = 0;
    while (cursor < batches.size()) {
        {  // encoder step
            const Batch& b = batches[cursor++];
            Tape t;
            LatentVars z = encode(t, params, spec, b.x);
            auto perm = detail::fresh_perm(b.x.rows(), perm_rng);
            Var loss = loss_penalized_mine(t, params, z, b.y1, b.y2, lambda, net, perm);
            float lv = t.value(loss).data[0];
            if (!std::isfinite(lv))
                throw std::runtime_error("mine_alternating_loop: non-finite loss");
            LatentCode zc{t.value(z.z1), t.value(z.z2)};
            stats.penalty_sum +=
                lambda * mine_dv_estimate(net, zc.z1, zc.z2,
                                          detail::fresh_perm(zc.z1.rows(), perm_rng)).value;
            stats.loss_sum += lv;
            t.backward(loss);
            adam_step(params, enc_state, enc_lr);
            ++stats.encoder_steps;
        }
        for (std::size_t u = 0; u + 1 < n_b && cursor < batches.size(); ++u) {
            const Batch& b = batches[cursor++];
            LatentCode z = encode_eval(params, spec, b.x);
            auto perm = detail::fresh_perm(b.x.rows(), perm_rng);
            mine_train_step(net, z.z1, z.z2, perm, mine_state, mine_lr);
            ++stats.estimator_steps;
        }
    }
    return stats;
}

// Trains one method on one fold. The training budget is encoder-effective:
// MINE streams n_b x more batches so its encoder sees the same number of
// updates as the other methods.
inline TrainResult train_method(const MethodConfig& cfg, const EncoderSpec& spec_in,
                                const Dataset& ds, const std::vector<std::size_t>& train_idx,
                                const std::vector<std::size_t>& val_idx,
                                const TrainSettings& settings, std::uint64_t seed) {
    EncoderSpec spec = spec_in;
    spec.shared = (cfg.method == Method::Adversarial);

    // Rebalancing happens strictly inside the fold's training portion.
    Dataset local;
    std::vector<std::size_t> idx;
    const Dataset* train_ds = &ds;
    if (cfg.method == Method::Rebalance) {
        Dataset sub;
        sub.height = ds.height;
        sub.width = ds.width;
        for (auto i : train_idx) sub.samples.push_back(ds.samples[i]);
        local = rebalance_oversample(sub, mix_seed(seed, 0x31u));
        train_ds = &local;
        idx = all_indices(local);
    } else {
        idx = train_idx;
    }

    ParamSet params = init_model(spec, mix_seed(seed, 0x32u));
    OptState enc_state;
    std::mt19937 mine_rng(static_cast<std::uint32_t>(mix_seed(seed, 0x33u)));
    MineNet net = cfg.method == Method::Mine
                      ? MineNet::make(spec.d1, spec.d2, mine_rng, cfg.mine_hidden)
                      : MineNet{};
    OptState mine_state;
    std::mt19937 perm_rng(static_cast<std::uint32_t>(mix_seed(seed, 0x34u)));

    Batch val = make_batch(ds, val_idx);

    auto validation_loss = [&](double& penalty_out) -> double {
        Tape t;
        LatentVars z = encode(t, params, spec, val.x, /*trainable=*/false);
        penalty_out = 0.0;
        switch (cfg.method) {
            case Method::Baseline:
            case Method::Rebalance:
                return t.value(loss_subspace_ce(t, params, z, val.y1, val.y2, false)).data[0];
            case Method::DCor: {
                double ce = t.value(loss_subspace_ce(t, params, z, val.y1, val.y2, false)).data[0];
                double d = dcor(t.value(z.z1), t.value(z.z2));
                penalty_out = cfg.lambda_weight * d;
                return ce + penalty_out;
            }
            case Method::Mine: {
                double ce = t.value(loss_subspace_ce(t, params, z, val.y1, val.y2, false)).data[0];
                LatentCode zc{t.value(z.z1), t.value(z.z2)};
                auto perm = detail::fresh_perm(zc.z1.rows(), perm_rng);
                penalty_out = cfg.lambda_weight *
                              mine_dv_estimate(net, zc.z1, zc.z2, perm).value;
                return ce + penalty_out;
            }
            case Method::Adversarial: {
                // Selection on the primary-task CE only; CE2 measures the
                // adversary, not model quality.
                Var ce1 = softmax_cross_entropy(
                    head_logits(t, params, 1, z.z1, false), val.y1);
                return t.value(ce1).data[0];
            }
        }
        throw std::logic_error("validation_loss: bad method");
    };

    std::size_t batches_per_epoch;
    {
        std::mt19937 probe(0);
        batches_per_epoch = std::max<std::size_t>(
            1, detail::batch_indices(idx, settings.batch_size, probe).size());
    }
    std::size_t total_encoder_steps = settings.epochs * batches_per_epoch;

    TrainResult result;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t encoder_steps = 0;

    auto record_epoch = [&](std::size_t epoch, double train_loss, double penalty) {
        double val_penalty = 0.0;
        double vl = validation_loss(val_penalty);
        result.history.records.push_back({epoch, train_loss, vl, penalty});
        if (vl < best_val) {
            best_val = vl;
            result.best_epoch = epoch;
            result.best_params = params;
        }
    };

    if (cfg.method == Method::Mine) {
        std::size_t epoch = 0;
        std::size_t epoch_steps = 0;
        double loss_sum = 0.0, penalty_sum = 0.0;
        std::size_t pass = 0;
        while (encoder_steps < total_encoder_steps) {
            std::mt19937 shuffle_rng(
                static_cast<std::uint32_t>(mix_seed(seed, 0x35u, pass++)));
            auto groups = detail::batch_indices(idx, settings.batch_size, shuffle_rng);
            std::vector<Batch> batches;
            batches.reserve(groups.size());
            for (auto& g : groups) batches.push_back(make_batch(*train_ds, g));
            auto stats = mine_alternating_loop(params, spec, enc_state, net, mine_state,
                                               batches, cfg.mine_n_b, cfg.lambda_weight,
                                               cfg.lr, cfg.mine_lr, perm_rng);
            encoder_steps += stats.encoder_steps;
            epoch_steps += stats.encoder_steps;
            loss_sum += stats.loss_sum;
            penalty_sum += stats.penalty_sum;
            while (epoch_steps >= batches_per_epoch) {
                record_epoch(epoch++, loss_sum / epoch_steps, penalty_sum / epoch_steps);
                epoch_steps = 0;
                loss_sum = penalty_sum = 0.0;
            }
            if (encoder_steps >= total_encoder_steps && epoch_steps > 0)
                record_epoch(epoch++, loss_sum / epoch_steps, penalty_sum / epoch_steps);
        }
        return result;
    }

    for (std::size_t epoch = 0; epoch < settings.epochs; ++epoch) {
        std::mt19937 shuffle_rng(static_cast<std::uint32_t>(mix_seed(seed, 0x36u, epoch)));
        auto groups = detail::batch_indices(idx, settings.batch_size, shuffle_rng);
        double loss_sum = 0.0, penalty_sum = 0.0;
        for (std::size_t bi = 0; bi < groups.size(); ++bi) {
            Batch b = make_batch(*train_ds, groups[bi]);
            Tape t;
            LatentVars z = encode(t, params, spec, b.x);
            Var loss{};
            double penalty = 0.0;
            switch (cfg.method) {
                case Method::Baseline:
                case Method::Rebalance:
                    loss = loss_subspace_ce(t, params, z, b.y1, b.y2);
                    break;
                case Method::DCor: {
                    loss = loss_penalized_dcor(t, params, z, b.y1, b.y2, cfg.lambda_weight);
                    penalty = cfg.lambda_weight * dcor(t.value(z.z1), t.value(z.z2));
                    break;
                }
                case Method::Adversarial: {
                    float p = total_encoder_steps <= 1
                                  ? 1.0f
                                  : static_cast<float>(encoder_steps) /
                                        static_cast<float>(total_encoder_steps);
                    float lam = grl_lambda_schedule(p, cfg.grl_alpha, cfg.grl_gamma);
                    loss = loss_adversarial(t, params, spec, z.z1, b.y1, b.y2, lam);
                    Tape t2;
                    Var ce2 = softmax_cross_entropy(
                        head_logits(t2, params, 2, t2.constant(t.value(z.z1)), false), b.y2);
                    penalty = t2.value(ce2).data[0];
                    break;
                }
                default:
                    throw std::logic_error("train_method: bad method");
            }
            double lv = t.value(loss).data[0];
            if (!std::isfinite(lv))
                throw std::runtime_error("train_method: non-finite loss (" +
                                         method_name(cfg.method) + ", epoch " +
                                         std::to_string(epoch) + ", batch " +
                                         std::to_string(bi) + ")");
            loss_sum += lv;
            penalty_sum += penalty;
            t.backward(loss);
            if (cfg.method == Method::Adversarial)
                sgd_momentum_step(params, enc_state, cfg.lr);
            else
                adam_step(params, enc_state, cfg.lr);
            ++encoder_steps;
        }
        record_epoch(epoch, loss_sum / groups.size(), penalty_sum / groups.size());
    }
    return result;
}

}  // namespace cbm
