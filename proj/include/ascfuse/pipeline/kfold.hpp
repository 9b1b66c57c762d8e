#pragma once

#include <map>
#include <string>
#include <vector>

#include "ascfuse/pipeline/stages.hpp"

namespace ascfuse::pipeline {

struct KFoldResult {
    int k = 0;
    std::vector<Summary> folds;

    /// Rows: every single model and fusion result; columns: folds then mean.
    std::string to_csv() const {
        std::vector<std::pair<std::string, std::vector<double>>> rows;
        auto add = [&](const std::string& name, std::size_t fold, double v) {
            auto it = std::find_if(rows.begin(), rows.end(), [&](const auto& r) { return r.first == name; });
            if (it == rows.end()) {
                rows.emplace_back(name, std::vector<double>(folds.size(), 0.0));
                it = rows.end() - 1;
            }
            it->second[fold] = v;
        };
        for (std::size_t f = 0; f < folds.size(); ++f) {
            for (const auto& m : folds[f].single) {
                add(m.model + " sample-level", f, m.sample_level);
                add(m.model + " voting", f, m.voting);
            }
            for (const auto& x : folds[f].fusion) add(x.model + " " + x.pair, f, x.accuracy);
        }
        std::string out = "result";
        for (std::size_t f = 0; f < folds.size(); ++f) out += ",fold" + std::to_string(f);
        out += ",mean\n";
        for (const auto& [name, vals] : rows) {
            out += name;
            double s = 0.0;
            for (double v : vals) {
                out += "," + fmt4(v);
                s += v;
            }
            out += "," + fmt4(s / static_cast<double>(vals.size())) + "\n";
        }
        return out;
    }
};

/// Runs the whole pipeline once per test fold under `<output_dir>/fold<i>`.
/// Every fold refits its own networks, PCA and SVM on the other folds only.
inline KFoldResult kfold_eval(const ExperimentConfig& base, int k,
                              const Workspace::Logger& log = Workspace::default_logger()) {
    if (k < 2) throw ConfigError("kfold: k must be >= 2, got " + std::to_string(k));
    if (base.synth && base.synth->num_folds != k)
        throw ConfigError("kfold: the synthetic dataset defines " + std::to_string(base.synth->num_folds) +
                          " folds, k is " + std::to_string(k));
    KFoldResult res;
    res.k = k;
    for (int f = 0; f < k; ++f) {
        ExperimentConfig cfg = base;
        cfg.split.test_fold = f;
        cfg.split.num_folds = k;
        cfg.output_dir = base.output_dir / ("fold" + std::to_string(f));
        Workspace ws(cfg, [&log, f](const std::string& m) { log("[fold " + std::to_string(f) + "] " + m); });
        ws.run(Stage::dataset);
        if (const auto folds = ws.manifest().num_folds; folds != k)
            throw ConfigError("kfold: the dataset defines " + std::to_string(folds) + " folds, k is " + std::to_string(k));
        ws.run_all();
        res.folds.push_back(ws.summary());
    }
    write_text(base.output_dir / "kfold.csv", res.to_csv());
    return res;
}

}  // namespace ascfuse::pipeline
