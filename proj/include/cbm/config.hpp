#pragma once

#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "data.hpp"
#include "model.hpp"
#include "train.hpp"

namespace cbm {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::string output_dir = "runs/default";

    // data section
    CoOccurrenceSpec train_counts{{{{950, 50}, {50, 950}}}};
    double val_fraction = 0.2;
    std::size_t inverted_total = 800;
    std::size_t balanced_total = 800;
    ImageParams image;

    // train section
    TrainSettings train;
    std::size_t folds = 5;

    // eval section
    std::size_t knn_k = 30;
    bool with_auroc = true;

    // model section
    EncoderSpec encoder;

    std::vector<MethodConfig> methods;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed,
                           const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
}

inline MethodConfig parse_method(const nlohmann::json& j) {
    reject_unknown(j, {"name", "lambda", "alpha", "gamma", "n_b", "lr", "mine_lr",
                       "mine_hidden"},
                   "methods[]");
    if (!j.contains("name")) throw ConfigError("config: method entry missing 'name'");
    MethodConfig m;
    try {
        m.method = method_from_name(j.at("name").get<std::string>());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    switch (m.method) {
        case Method::Baseline:
        case Method::Rebalance:
            m.lr = 1e-3f;
            break;
        case Method::Mine:
            m.lambda_weight = 0.55f;  // N_B=3, lambda=0.55 defaults
            m.mine_n_b = 3;
            m.lr = 5e-4f;
            m.mine_lr = 1e-3f;
            break;
        case Method::DCor:
            m.lambda_weight = 0.5f;
            m.lr = 1e-3f;
            break;
        case Method::Adversarial:
            m.grl_alpha = 0.4f;
            m.grl_gamma = 4.0f;
            m.lr = 0.01f;  // SGD with 0.9 momentum
            break;
    }
    if (j.contains("lambda")) m.lambda_weight = j.at("lambda").get<float>();
    if (j.contains("alpha")) m.grl_alpha = j.at("alpha").get<float>();
    if (j.contains("gamma")) m.grl_gamma = j.at("gamma").get<float>();
    if (j.contains("n_b")) m.mine_n_b = j.at("n_b").get<std::size_t>();
    if (j.contains("lr")) m.lr = j.at("lr").get<float>();
    if (j.contains("mine_lr")) m.mine_lr = j.at("mine_lr").get<float>();
    if (j.contains("mine_hidden"))
        m.mine_hidden = j.at("mine_hidden").get<std::vector<std::size_t>>();
    if (m.mine_n_b < 2) throw ConfigError("config: n_b must be >= 2");
    if (m.lambda_weight < 0.0f) throw ConfigError("config: lambda must be >= 0");
    return m;
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
    detail::reject_unknown(j, {"seed", "output_dir", "data", "train", "eval", "model",
                               "methods"},
                           "top level");
    ExperimentConfig c;
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("data")) {
        const auto& d = j.at("data");
        detail::reject_unknown(d, {"train_counts", "val_fraction", "inverted_total",
                                   "balanced_total", "image"},
                               "data");
        if (d.contains("train_counts")) {
            auto m = d.at("train_counts").get<std::vector<std::vector<std::size_t>>>();
            if (m.size() != 2 || m[0].size() != 2 || m[1].size() != 2)
                throw ConfigError("config: train_counts must be 2x2");
            for (int y2 = 0; y2 < 2; ++y2)
                for (int y1 = 0; y1 < 2; ++y1) c.train_counts.counts[y2][y1] = m[y2][y1];
        }
        if (d.contains("val_fraction")) c.val_fraction = d.at("val_fraction").get<double>();
        if (d.contains("inverted_total"))
            c.inverted_total = d.at("inverted_total").get<std::size_t>();
        if (d.contains("balanced_total"))
            c.balanced_total = d.at("balanced_total").get<std::size_t>();
        if (d.contains("image")) {
            const auto& im = d.at("image");
            detail::reject_unknown(im, {"height", "width", "noise"}, "data.image");
            if (im.contains("height")) c.image.height = im.at("height").get<std::size_t>();
            if (im.contains("width")) c.image.width = im.at("width").get<std::size_t>();
            if (im.contains("noise")) c.image.noise = im.at("noise").get<float>();
        }
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        detail::reject_unknown(t, {"epochs", "batch_size", "folds"}, "train");
        if (t.contains("epochs")) c.train.epochs = t.at("epochs").get<std::size_t>();
        if (t.contains("batch_size"))
            c.train.batch_size = t.at("batch_size").get<std::size_t>();
        if (t.contains("folds")) c.folds = t.at("folds").get<std::size_t>();
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        detail::reject_unknown(e, {"knn_k", "auroc"}, "eval");
        if (e.contains("knn_k")) c.knn_k = e.at("knn_k").get<std::size_t>();
        if (e.contains("auroc")) c.with_auroc = e.at("auroc").get<bool>();
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        detail::reject_unknown(m, {"hidden", "d1", "d2"}, "model");
        if (m.contains("hidden"))
            c.encoder.hidden = m.at("hidden").get<std::vector<std::size_t>>();
        if (m.contains("d1")) c.encoder.d1 = m.at("d1").get<std::size_t>();
        if (m.contains("d2")) c.encoder.d2 = m.at("d2").get<std::size_t>();
    }
    if (j.contains("methods")) {
        for (const auto& m : j.at("methods")) c.methods.push_back(detail::parse_method(m));
    } else {
        for (auto name : {"baseline", "rebalance", "mine", "dcor", "adversarial"})
            c.methods.push_back(detail::parse_method(nlohmann::json{{"name", name}}));
    }
    c.encoder.input_dim = c.image.height * c.image.width;
    if (c.val_fraction <= 0.0 || c.val_fraction >= 1.0)
        throw ConfigError("config: val_fraction must be in (0,1)");
    if (c.folds < 2) throw ConfigError("config: folds must be >= 2");
    if (c.encoder.d1 < 1 || c.encoder.d2 < 1)
        throw ConfigError("config: latent dims must be >= 1");
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config: parse error in " + path + ": " + e.what());
    }
    return parse_config(j);
}

// Fully resolved form, persisted next to run outputs.
inline nlohmann::json resolved_config(const ExperimentConfig& c) {
    nlohmann::json j;
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    j["data"] = {
        {"train_counts",
         {{c.train_counts.counts[0][0], c.train_counts.counts[0][1]},
          {c.train_counts.counts[1][0], c.train_counts.counts[1][1]}}},
        {"val_fraction", c.val_fraction},
        {"inverted_total", c.inverted_total},
        {"balanced_total", c.balanced_total},
        {"image",
         {{"height", c.image.height}, {"width", c.image.width}, {"noise", c.image.noise}}}};
    j["train"] = {{"epochs", c.train.epochs},
                  {"batch_size", c.train.batch_size},
                  {"folds", c.folds}};
    j["eval"] = {{"knn_k", c.knn_k}, {"auroc", c.with_auroc}};
    j["model"] = {{"hidden", c.encoder.hidden}, {"d1", c.encoder.d1}, {"d2", c.encoder.d2}};
    j["methods"] = nlohmann::json::array();
    for (const auto& m : c.methods) {
        nlohmann::json mj{{"name", method_name(m.method)},
                          {"lambda", m.lambda_weight},
                          {"lr", m.lr}};
        if (m.method == Method::Adversarial) {
            mj["alpha"] = m.grl_alpha;
            mj["gamma"] = m.grl_gamma;
        }
        if (m.method == Method::Mine) {
            mj["n_b"] = m.mine_n_b;
            mj["mine_lr"] = m.mine_lr;
            mj["mine_hidden"] = m.mine_hidden;
        }
        j["methods"].push_back(mj);
    }
    return j;
}

}  // namespace cbm
