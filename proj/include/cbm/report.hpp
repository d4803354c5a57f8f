#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "eval.hpp"
#include "model.hpp"

namespace cbm {

struct MethodResults {
    Method method = Method::Baseline;
    std::vector<FoldReport> folds;
};

struct MetricsReport {
    std::vector<MethodResults> methods;
};

namespace detail {

inline double mean_of(const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc / static_cast<double>(v.size());
}

template <typename Get>
inline double fold_mean(const MethodResults& m, Get get) {
    std::vector<double> v;
    v.reserve(m.folds.size());
    for (const auto& f : m.folds) v.push_back(get(f));
    return mean_of(v);
}

inline std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

inline std::string fmt1(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return buf;
}

}  // namespace detail

// One row per method x fold x distribution x target.
inline void write_metrics_csv(const MetricsReport& r, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_metrics_csv: cannot open " + path);
    os << "method,fold,distribution,target,accuracy,auroc\n";
    for (const auto& m : r.methods) {
        std::string name = method_name(m.method);
        for (std::size_t f = 0; f < m.folds.size(); ++f) {
            const FoldReport& fr = m.folds[f];
            const std::pair<std::string, const DistributionMetrics*> dists[] = {
                {"validation", &fr.validation},
                {"inverted", &fr.inverted},
                {"balanced", &fr.balanced}};
            for (const auto& [dname, dm] : dists) {
                os << name << ',' << f << ',' << dname << ",y1,"
                   << detail::fmt(dm->acc_y1) << ',' << detail::fmt(dm->auroc_y1) << '\n';
                if (dm->has_y2)
                    os << name << ',' << f << ',' << dname << ",y2,"
                       << detail::fmt(dm->acc_y2) << ',' << detail::fmt(dm->auroc_y2)
                       << '\n';
            }
            for (int yj = 0; yj < 2; ++yj)
                for (int zi = 0; zi < 2; ++zi) {
                    if (zi == 1 && !fr.knn_has_z2) continue;
                    os << name << ',' << f << ",knn_balanced,z" << (zi + 1) << "_y"
                       << (yj + 1) << ',' << detail::fmt(fr.knn.acc[yj][zi]) << ",\n";
                }
        }
    }
    if (!os) throw std::runtime_error("write_metrics_csv: write failed");
}

inline nlohmann::json metrics_json(const MetricsReport& r) {
    nlohmann::json j;
    j["methods"] = nlohmann::json::array();
    for (const auto& m : r.methods) {
        nlohmann::json mj;
        mj["name"] = method_name(m.method);
        mj["folds"] = m.folds.size();
        bool has_y2 = m.folds.empty() || m.folds.front().validation.has_y2;
        auto dist_json = [&](const char* key, auto getter) {
            nlohmann::json dj;
            dj["acc_y1"] = detail::fold_mean(m, [&](const FoldReport& f) {
                return getter(f).acc_y1;
            });
            dj["auroc_y1"] = detail::fold_mean(m, [&](const FoldReport& f) {
                return getter(f).auroc_y1;
            });
            if (has_y2) {
                dj["acc_y2"] = detail::fold_mean(m, [&](const FoldReport& f) {
                    return getter(f).acc_y2;
                });
                dj["auroc_y2"] = detail::fold_mean(m, [&](const FoldReport& f) {
                    return getter(f).auroc_y2;
                });
            }
            mj["mean"][key] = dj;
        };
        dist_json("validation", [](const FoldReport& f) -> const DistributionMetrics& {
            return f.validation;
        });
        dist_json("inverted", [](const FoldReport& f) -> const DistributionMetrics& {
            return f.inverted;
        });
        dist_json("balanced", [](const FoldReport& f) -> const DistributionMetrics& {
            return f.balanced;
        });
        nlohmann::json knn;
        for (int yj = 0; yj < 2; ++yj)
            for (int zi = 0; zi < 2; ++zi) {
                if (zi == 1 && !m.folds.empty() && !m.folds.front().knn_has_z2) continue;
                std::string key = "z" + std::to_string(zi + 1) + "_y" + std::to_string(yj + 1);
                knn[key] = detail::fold_mean(m, [&](const FoldReport& f) {
                    return f.knn.acc[yj][zi];
                });
            }
        mj["mean"]["knn_balanced"] = knn;
        j["methods"].push_back(mj);
    }
    return j;
}

// Distribution-shift table: methods x {validation, inverted, balanced} for
// y1 and y2. Rebalance shows "-" on validation, adversarial "-" on z2.
inline std::string render_shift_table(const MetricsReport& r, bool auroc_values = false) {
    std::string out;
    out += "method       | y1 val  y1 inv  y1 bal  | y2 val  y2 inv  y2 bal\n";
    out += "-------------+-------------------------+-----------------------\n";
    for (const auto& m : r.methods) {
        bool has_y2 = !m.folds.empty() && m.folds.front().validation.has_y2;
        bool show_val = m.method != Method::Rebalance;
        auto cell = [&](const DistributionMetrics& (*get)(const FoldReport&), bool y2,
                        bool show) -> std::string {
            if (!show) return "-";
            double v = detail::fold_mean(m, [&](const FoldReport& f) {
                const DistributionMetrics& d = get(f);
                if (auroc_values) return y2 ? d.auroc_y2 : d.auroc_y1;
                return y2 ? d.acc_y2 : d.acc_y1;
            });
            return detail::fmt1(auroc_values ? v : v);
        };
        auto getv = +[](const FoldReport& f) -> const DistributionMetrics& { return f.validation; };
        auto geti = +[](const FoldReport& f) -> const DistributionMetrics& { return f.inverted; };
        auto getb = +[](const FoldReport& f) -> const DistributionMetrics& { return f.balanced; };
        char line[256];
        std::snprintf(line, sizeof(line), "%-12s | %-7s %-7s %-7s | %-7s %-7s %-7s\n",
                      method_name(m.method).c_str(), cell(getv, false, show_val).c_str(),
                      cell(geti, false, true).c_str(), cell(getb, false, true).c_str(),
                      cell(getv, true, show_val && has_y2).c_str(),
                      cell(geti, true, has_y2).c_str(), cell(getb, true, has_y2).c_str());
        out += line;
    }
    return out;
}

inline std::string render_knn_table(const MetricsReport& r) {
    std::string out;
    out += "method       | y1<-z1  y1<-z2  | y2<-z1  y2<-z2\n";
    out += "-------------+-----------------+----------------\n";
    for (const auto& m : r.methods) {
        bool has_z2 = !m.folds.empty() && m.folds.front().knn_has_z2;
        auto cell = [&](int yj, int zi) -> std::string {
            if (zi == 1 && !has_z2) return "-";
            return detail::fmt1(
                detail::fold_mean(m, [&](const FoldReport& f) { return f.knn.acc[yj][zi]; }));
        };
        char line[256];
        std::snprintf(line, sizeof(line), "%-12s | %-7s %-7s | %-7s %-7s\n",
                      method_name(m.method).c_str(), cell(0, 0).c_str(), cell(0, 1).c_str(),
                      cell(1, 0).c_str(), cell(1, 1).c_str());
        out += line;
    }
    return out;
}

inline void write_shift_table_csv(const MetricsReport& r, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_shift_table_csv: cannot open " + path);
    os << "method,y1_validation,y1_inverted,y1_balanced,y2_validation,y2_inverted,"
          "y2_balanced\n";
    for (const auto& m : r.methods) {
        bool has_y2 = !m.folds.empty() && m.folds.front().validation.has_y2;
        bool show_val = m.method != Method::Rebalance;
        auto mean_acc = [&](const char* which, bool y2) -> std::string {
            double v = detail::fold_mean(m, [&](const FoldReport& f) {
                const DistributionMetrics& d = std::string(which) == "validation"
                                                   ? f.validation
                                                   : (std::string(which) == "inverted"
                                                          ? f.inverted
                                                          : f.balanced);
                return y2 ? d.acc_y2 : d.acc_y1;
            });
            return detail::fmt(v);
        };
        os << method_name(m.method) << ','
           << (show_val ? mean_acc("validation", false) : "-") << ','
           << mean_acc("inverted", false) << ',' << mean_acc("balanced", false) << ','
           << (show_val && has_y2 ? mean_acc("validation", true) : "-") << ','
           << (has_y2 ? mean_acc("inverted", true) : "-") << ','
           << (has_y2 ? mean_acc("balanced", true) : "-") << '\n';
    }
}

}  // namespace cbm
