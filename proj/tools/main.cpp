// Command-line front end: generate / run / evaluate / report / selfcheck.
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cbm/config.hpp"
#include "cbm/eval.hpp"
#include "cbm/measures.hpp"
#include "cbm/report.hpp"
#include "cbm/train.hpp"

namespace fs = std::filesystem;
using namespace cbm;

namespace {

struct RunPaths {
    fs::path root;
    fs::path data() const { return root / "data"; }
    fs::path dataset(const std::string& split) const {
        return data() / (split + ".cbd");
    }
    fs::path checkpoints() const { return root / "checkpoints"; }
    fs::path checkpoint(const std::string& method, std::size_t fold) const {
        return checkpoints() / (method + "_fold" + std::to_string(fold) + ".cbm");
    }
    fs::path history() const { return root / "history"; }
    fs::path history_csv(const std::string& method, std::size_t fold) const {
        return history() / (method + "_fold" + std::to_string(fold) + ".csv");
    }
    fs::path embeddings() const { return root / "embeddings"; }
};

std::uint64_t fnv1a64_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + p.string());
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[4096];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
        for (std::streamsize i = 0; i < is.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ull;
        }
        if (!is) break;
    }
    return h;
}

// Seed streams shared by every command so reruns line up exactly.
std::uint64_t bundle_seed(const ExperimentConfig& c) { return mix_seed(c.seed, 0x10u); }
std::uint64_t plan_seed(const ExperimentConfig& c) { return mix_seed(c.seed, 0x11u); }
std::uint64_t fold_seed(const ExperimentConfig& c, std::size_t fold) {
    return mix_seed(c.seed, 0x12u, fold);
}

ExperimentConfig load_cli_config(const std::string& path, std::uint64_t seed_override,
                                 bool has_seed, const std::string& out_override) {
    ExperimentConfig c = load_config(path);
    if (has_seed) c.seed = seed_override;
    if (!out_override.empty()) c.output_dir = out_override;
    return c;
}

SplitBundle load_bundle(const RunPaths& rp) {
    SplitBundle b;
    const std::pair<const char*, Dataset*> parts[] = {{"train", &b.train},
                                                      {"validation", &b.validation},
                                                      {"inverted", &b.inverted},
                                                      {"balanced", &b.balanced}};
    for (const auto& part : parts) {
        fs::path p = rp.dataset(part.first);
        if (!fs::exists(p))
            throw std::runtime_error("missing dataset " + p.string() +
                                     " (run 'generate' first)");
        *part.second = load_dataset(p.string());
    }
    return b;
}

void print_matrix(const char* name, const Dataset& ds) {
    auto c = ds.cell_counts();
    std::printf("%s co-occurrence (rows y2, cols y1):\n", name);
    std::printf("  [%6zu %6zu]\n  [%6zu %6zu]\n", c[0][0], c[0][1], c[1][0], c[1][1]);
}

void write_resolved(const ExperimentConfig& cfg, const RunPaths& rp) {
    std::ofstream os(rp.root / "resolved_config.json");
    os << resolved_config(cfg).dump(2) << "\n";
}

int cmd_generate(const ExperimentConfig& cfg) {
    RunPaths rp{cfg.output_dir};
    fs::create_directories(rp.data());
    write_resolved(cfg, rp);
    SplitBundle b = make_split_bundle(cfg.train_counts, cfg.val_fraction,
                                      cfg.inverted_total, cfg.balanced_total,
                                      bundle_seed(cfg), cfg.image);
    save_dataset(b.train, rp.dataset("train").string());
    save_dataset(b.validation, rp.dataset("validation").string());
    save_dataset(b.inverted, rp.dataset("inverted").string());
    save_dataset(b.balanced, rp.dataset("balanced").string());
    std::ofstream sums(rp.data() / "checksums.txt");
    for (const char* split : {"train", "validation", "inverted", "balanced"}) {
        char line[128];
        std::snprintf(line, sizeof(line), "%s.cbd\t%016llx\n", split,
                      static_cast<unsigned long long>(fnv1a64_file(rp.dataset(split))));
        sums << line;
    }
    print_matrix("train", b.train);
    print_matrix("validation", b.validation);
    print_matrix("inverted", b.inverted);
    print_matrix("balanced", b.balanced);
    std::printf("wrote %s\n", rp.data().string().c_str());
    return 0;
}

std::vector<MethodConfig> select_methods(const ExperimentConfig& cfg,
                                         const std::string& name) {
    if (name.empty()) return cfg.methods;
    Method m = method_from_name(name);  // throws on unknown
    for (const auto& mc : cfg.methods)
        if (mc.method == m) return {mc};
    throw ConfigError("method '" + name + "' is not in the config's methods list");
}

int cmd_run(const ExperimentConfig& cfg, const std::string& method, int fold, bool all,
            std::size_t jobs) {
    RunPaths rp{cfg.output_dir};
    SplitBundle b = load_bundle(rp);
    FoldPlan plan = kfold_plan(b.train, cfg.folds, plan_seed(cfg));
    fs::create_directories(rp.checkpoints());
    fs::create_directories(rp.history());

    std::vector<std::size_t> folds;
    if (fold >= 0) {
        if (static_cast<std::size_t>(fold) >= cfg.folds)
            throw ConfigError("--fold out of range (config has " +
                              std::to_string(cfg.folds) + " folds)");
        folds.push_back(static_cast<std::size_t>(fold));
    } else {
        (void)all;  // default is every fold
        for (std::size_t f = 0; f < cfg.folds; ++f) folds.push_back(f);
    }

    struct Job {
        MethodConfig mc;
        std::size_t fold;
        std::string message;
        bool failed = false;
    };
    std::vector<Job> queue;
    for (const auto& mc : select_methods(cfg, method))
        for (std::size_t f : folds) queue.push_back({mc, f, "", false});

    auto work = [&](Job& job) {
        try {
            TrainResult res =
                train_method(job.mc, cfg.encoder, b.train, plan.train_ids(job.fold),
                             plan.val_ids[job.fold], cfg.train, fold_seed(cfg, job.fold));
            std::string name = method_name(job.mc.method);
            save_checkpoint(res.best_params, rp.checkpoint(name, job.fold).string());
            write_history_csv(res.history, rp.history_csv(name, job.fold).string());
            char line[160];
            std::snprintf(line, sizeof(line),
                          "%-12s fold %zu: best epoch %zu, val loss %.6f", name.c_str(),
                          job.fold, res.best_epoch,
                          res.history.records[res.best_epoch].val_loss);
            job.message = line;
        } catch (const std::exception& e) {
            job.failed = true;
            job.message = method_name(job.mc.method) + " fold " +
                          std::to_string(job.fold) + ": " + e.what();
        }
    };

    if (jobs < 1) jobs = 1;
    for (std::size_t start = 0; start < queue.size(); start += jobs) {
        std::size_t stop = std::min(queue.size(), start + jobs);
        std::vector<std::thread> pool;
        for (std::size_t i = start + 1; i < stop; ++i)
            pool.emplace_back([&, i] { work(queue[i]); });
        work(queue[start]);
        for (auto& t : pool) t.join();
        for (std::size_t i = start; i < stop; ++i)
            std::fprintf(queue[i].failed ? stderr : stdout, "%s\n",
                          queue[i].message.c_str());
    }
    for (const auto& j : queue)
        if (j.failed) return 1;
    return 0;
}

// Rebuilds per-fold reports from saved checkpoints. Shared by evaluate/report.
MetricsReport collect_reports(const ExperimentConfig& cfg, const RunPaths& rp,
                              const SplitBundle& b, const FoldPlan& plan) {
    MetricsReport rep;
    std::vector<std::string> missing;
    for (const auto& mc : cfg.methods) {
        MethodResults mr;
        mr.method = mc.method;
        std::string name = method_name(mc.method);
        for (std::size_t f = 0; f < cfg.folds; ++f) {
            fs::path p = rp.checkpoint(name, f);
            if (!fs::exists(p)) {
                missing.push_back(p.string());
                continue;
            }
            ParamSet params = load_checkpoint(p.string());
            EncoderSpec spec = cfg.encoder;
            spec.shared = (mc.method == Method::Adversarial);
            mr.folds.push_back(evaluate_method(params, spec, b.train, plan.train_ids(f),
                                               b, cfg.knn_k, cfg.with_auroc));
        }
        rep.methods.push_back(std::move(mr));
    }
    if (!missing.empty()) {
        std::string msg = "missing checkpoints:";
        for (const auto& m : missing) msg += "\n  " + m;
        throw std::runtime_error(msg);
    }
    return rep;
}

int cmd_evaluate(const ExperimentConfig& cfg) {
    RunPaths rp{cfg.output_dir};
    SplitBundle b = load_bundle(rp);
    FoldPlan plan = kfold_plan(b.train, cfg.folds, plan_seed(cfg));
    MetricsReport rep = collect_reports(cfg, rp, b, plan);
    write_metrics_csv(rep, (rp.root / "metrics.csv").string());
    {
        std::ofstream os(rp.root / "metrics.json");
        os << metrics_json(rep).dump(2) << "\n";
    }
    fs::create_directories(rp.embeddings());
    for (const auto& mc : cfg.methods) {
        std::string name = method_name(mc.method);
        EncoderSpec spec = cfg.encoder;
        spec.shared = (mc.method == Method::Adversarial);
        for (std::size_t f = 0; f < cfg.folds; ++f) {
            ParamSet params = load_checkpoint(rp.checkpoint(name, f).string());
            export_embeddings(params, spec, b.balanced, "balanced",
                              (rp.embeddings() /
                               (name + "_fold" + std::to_string(f) + "_balanced.csv"))
                                  .string());
        }
    }
    std::printf("wrote %s and %s\n", (rp.root / "metrics.csv").string().c_str(),
                (rp.root / "metrics.json").string().c_str());
    return 0;
}

int cmd_report(const ExperimentConfig& cfg) {
    RunPaths rp{cfg.output_dir};
    SplitBundle b = load_bundle(rp);
    FoldPlan plan = kfold_plan(b.train, cfg.folds, plan_seed(cfg));
    MetricsReport rep = collect_reports(cfg, rp, b, plan);
    std::string shift = render_shift_table(rep);
    std::string knn = render_knn_table(rep);
    write_shift_table_csv(rep, (rp.root / "shift_table.csv").string());
    {
        std::ofstream os(rp.root / "shift_table.txt");
        os << shift;
    }
    {
        std::ofstream os(rp.root / "knn_table.txt");
        os << knn;
    }
    std::fputs(shift.c_str(), stdout);
    std::fputs("\n", stdout);
    std::fputs(knn.c_str(), stdout);
    return 0;
}

// ---- selfcheck ----------------------------------------------------------

struct CheckLine {
    std::string name;
    bool ok;
    std::string detail;
};

void check(std::vector<CheckLine>& out, const std::string& name, bool ok,
           const std::string& detail = "") {
    out.push_back({name, ok, detail});
}

int cmd_selfcheck(bool perturb) {
    std::vector<CheckLine> lines;
    std::mt19937 rng(99);

    // dCor hand cases. `perturb` is a fault-injection hook for tests.
    {
        Tensor z = Tensor::zeros({40, 2});
        std::normal_distribution<float> nd(0.0f, 1.0f);
        for (auto& v : z.data) v = nd(rng);
        double self = dcor(z, z) + (perturb ? 0.05 : 0.0);
        check(lines, "dcor self-dependence equals 1", std::abs(self - 1.0) < 1e-6);
        Tensor a = Tensor::zeros({2, 1}), c = Tensor::zeros({2, 1});
        a.data = {0.0f, 2.0f};
        c.data = {3.0f, 5.0f};
        check(lines, "dcor two-point hand case equals 1",
              std::abs(dcor(a, c) - 1.0) < 1e-12);
        CenteredDistanceMatrix m = centered_distances(a);
        check(lines, "double centering hand case",
              std::abs(m.at(0, 0) + 1.0) < 1e-12 && std::abs(m.at(0, 1) - 1.0) < 1e-12);
    }
    // Independence null.
    {
        Tensor u = Tensor::zeros({500, 1}), v = Tensor::zeros({500, 1});
        std::uniform_real_distribution<float> ud(0.0f, 1.0f);
        for (auto& x : u.data) x = ud(rng);
        for (auto& x : v.data) x = ud(rng);
        double d = dcor(u, v);
        double p = permutation_independence_pvalue(u, v, 200, 7);
        check(lines, "dcor independence null below 0.1", d < 0.1,
              "dcor=" + std::to_string(d));
        check(lines, "dcor permutation p-value above 0.01", p > 0.01,
              "p=" + std::to_string(p));
    }
    // Gradient checks against central finite differences.
    {
        auto fd_check = [&](const char* name, auto&& forward, Tensor& x) {
            Tape tape;
            Var loss = forward(tape, x);
            tape.backward(loss);
            std::vector<float> analytic(x.grad);
            x.clear_grad();
            double worst = 0.0;
            const double eps = 1e-2;
            for (std::size_t i = 0; i < x.data.size(); ++i) {
                float keep = x.data[i];
                x.data[i] = keep + static_cast<float>(eps);
                Tape tp;
                Var vp = forward(tp, x);
                double up = tp.value(vp).data[0];
                x.data[i] = keep - static_cast<float>(eps);
                Tape tm;
                Var vm = forward(tm, x);
                double dn = tm.value(vm).data[0];
                x.data[i] = keep;
                double num = (up - dn) / (2 * eps);
                double err = std::abs(num - analytic[i]) /
                             std::max(1e-3, std::abs(num));
                worst = std::max(worst, err);
            }
            check(lines, name, worst < 1e-2, "max rel err " + std::to_string(worst));
            x.clear_grad();
        };
        Tensor x = Tensor::zeros({6, 3});
        std::normal_distribution<float> nd(0.0f, 1.0f);
        for (auto& v : x.data) v = nd(rng);
        fd_check("gradient check: relu chain", [](Tape& t, Tensor& in) {
            Var v = t.leaf(&in);
            return mean_all(relu(v));
        }, x);
        Tensor y = Tensor::zeros({6, 2});
        for (auto& v : y.data) v = nd(rng);
        fd_check("gradient check: dcor penalty", [&](Tape& t, Tensor& in) {
            Var a = t.leaf(&in);
            Var b = t.constant(y);
            return dcor_penalty(a, b);
        }, x);
    }
    // Adversarial two-pass decomposition.
    {
        EncoderSpec spec;
        spec.input_dim = 16;
        spec.hidden = {8};
        spec.d1 = spec.d2 = 2;
        spec.shared = true;
        ParamSet params = init_model(spec, 3);
        std::mt19937 prng(31);
        Tensor xb = Tensor::zeros({8, 16});
        std::normal_distribution<float> nd(0.0f, 1.0f);
        for (auto& v : xb.data) v = nd(prng);
        Tensor y1 = Tensor::zeros({8, 2}), y2 = Tensor::zeros({8, 2});
        for (std::size_t i = 0; i < 8; ++i) {
            y1.at(i, i % 2) = 1.0f;
            y2.at(i, (i / 2) % 2) = 1.0f;
        }
        const float lam = 0.7f;
        auto grads = [&](int mode) {  // 0: combined, 1: ce1, 2: ce2
            params.clear_grads();
            Tape t;
            LatentVars z = encode(t, params, spec, xb);
            Var logits1 = head_logits(t, params, 1, z.z1);
            Var ce1 = softmax_cross_entropy(logits1, y1);
            Var z2adv = grad_reverse(z.z2, lam);
            Var ce2 = softmax_cross_entropy(head_logits(t, params, 2, z2adv), y2);
            Var loss = mode == 0 ? add(ce1, ce2) : (mode == 1 ? ce1 : ce2);
            t.backward(loss);
            std::vector<float> g;
            for (auto& [name, p] : params)
                if (name.rfind("enc.", 0) == 0)
                    g.insert(g.end(), p.grad.begin(), p.grad.end());
            return g;
        };
        auto gc = grads(0), g1 = grads(1), g2 = grads(2);
        double worst = 0.0;
        // grads(2) already carries the reversal, so combined = g1 + g2.
        for (std::size_t i = 0; i < gc.size(); ++i)
            worst = std::max(worst, std::abs(static_cast<double>(gc[i]) - (g1[i] + g2[i])));
        check(lines, "adversarial gradient decomposition", worst < 1e-6,
              "max abs err " + std::to_string(worst));
        params.clear_grads();
    }
    // MINE on correlated Gaussians vs the closed form.
    {
        const std::size_t n = 1000;
        const float rho = 0.9f;
        Tensor z1 = Tensor::zeros({n, 1}), z2 = Tensor::zeros({n, 1});
        std::mt19937 grng(17);
        std::normal_distribution<float> nd(0.0f, 1.0f);
        for (std::size_t i = 0; i < n; ++i) {
            float a = nd(grng), b = nd(grng);
            z1.at(i, 0) = a;
            z2.at(i, 0) = rho * a + std::sqrt(1.0f - rho * rho) * b;
        }
        std::mt19937 mrng(5);
        MineNet net = MineNet::make(1, 1, mrng, {64, 64});
        OptState opt;
        std::mt19937 perm_rng(11);
        double est = 0.0;
        for (int step = 0; step < 500; ++step) {
            auto perm = detail::fresh_perm(n, perm_rng);
            est = mine_train_step(net, z1, z2, perm, opt, 1e-3f).value;
        }
        double analytic = gaussian_mi_analytic(rho);
        check(lines, "mine bound approaches gaussian mutual information",
              est > 0.4 && est < analytic + 0.05,
              "est=" + std::to_string(est) + " analytic=" + std::to_string(analytic));
    }
    // AUROC ranking vs brute-force pair counting.
    {
        std::mt19937 arng(23);
        bool all_equal = true;
        for (int rep = 0; rep < 200 && all_equal; ++rep) {
            std::uniform_int_distribution<std::size_t> nd(5, 100);
            std::size_t n = nd(arng);
            std::vector<double> scores(n);
            std::vector<int> labels(n);
            std::uniform_int_distribution<int> sd(0, 9), ld(0, 1);
            int pos = 0;
            for (std::size_t i = 0; i < n; ++i) {
                scores[i] = sd(arng) / 10.0;  // coarse grid forces ties
                labels[i] = ld(arng);
                pos += labels[i];
            }
            if (pos == 0 || pos == static_cast<int>(n)) continue;
            all_equal = auroc(scores, labels) == auroc_bruteforce(scores, labels);
        }
        check(lines, "auroc equals pair-counting oracle", all_equal);
    }

    bool any_fail = false;
    for (const auto& l : lines) {
        std::printf("[%s] %s%s%s\n", l.ok ? "pass" : "FAIL", l.name.c_str(),
                    l.detail.empty() ? "" : " -- ", l.detail.c_str());
        any_fail = any_fail || !l.ok;
    }
    return any_fail ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"confounded-glyph benchmark harness"};
    app.require_subcommand(1);

    std::string config_path = "configs/default.json";
    std::string out_override;
    std::uint64_t seed_override = 0;
    bool has_seed = false;
    std::string method;
    int fold = -1;
    bool all_folds = false;
    std::size_t jobs = 1;
    bool perturb = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "experiment config (JSON)");
        sub->add_option("--out", out_override, "override output directory");
        sub->add_option("--seed", seed_override, "override seed")
            ->each([&](const std::string&) { has_seed = true; });
    };

    CLI::App* gen = app.add_subcommand("generate", "write the dataset split bundle");
    add_common(gen);
    CLI::App* run = app.add_subcommand("run", "train methods across folds");
    add_common(run);
    run->add_option("--method", method, "restrict to one method");
    run->add_option("--fold", fold, "train a single fold");
    run->add_flag("--all", all_folds, "train every fold (default)");
    run->add_option("--jobs", jobs, "max concurrent fold jobs");
    CLI::App* ev = app.add_subcommand("evaluate", "compute metrics and embeddings");
    add_common(ev);
    CLI::App* rep = app.add_subcommand("report", "render result tables");
    add_common(rep);
    CLI::App* self = app.add_subcommand("selfcheck", "run the built-in oracle suite");
    self->add_flag("--perturb-dcor", perturb, "fault-injection hook for tests")
        ->group("");  // hidden

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (self->parsed()) return cmd_selfcheck(perturb);
        ExperimentConfig cfg =
            load_cli_config(config_path, seed_override, has_seed, out_override);
        if (gen->parsed()) return cmd_generate(cfg);
        if (run->parsed()) return cmd_run(cfg, method, fold, all_folds, jobs);
        if (ev->parsed()) return cmd_evaluate(cfg);
        if (rep->parsed()) return cmd_report(cfg);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
