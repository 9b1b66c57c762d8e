#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "ascfuse/pipeline.hpp"

using namespace ascfuse;
using namespace ascfuse::pipeline;

namespace {

struct CommonArgs {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> preset;
    std::optional<std::string> out;
    bool force = false;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
    cmd->add_option("--config", a.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", a.seed, "Use this value for every seed");
    cmd->add_option("--preset", a.preset, "Network preset")->check(CLI::IsMember({"vgg-mini", "table1"}));
    cmd->add_option("--out", a.out, "Override output_dir");
    cmd->add_flag("--force", a.force, "Rerun even if outputs are up to date");
}

ExperimentConfig load(const CommonArgs& a) {
    Overrides ov;
    ov.seed = a.seed;
    ov.preset = a.preset;
    if (a.out) ov.output_dir = *a.out;
    return load_config(a.config, ov);
}

void print_summary(const Summary& s) {
    std::cout << single_report_csv(s);
    if (!s.fusion.empty()) std::cout << '\n' << fusion_report_csv(s);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acoustic scene classification: multi-spectrogram CNNs, label expansion and feature fusion"};
    app.require_subcommand(1);

    CommonArgs common;
    std::vector<std::pair<CLI::App*, Stage>> stage_cmds;
    for (Stage s : kStages) {
        auto* cmd = app.add_subcommand(stage_name(s), "Run the '" + stage_name(s) + "' stage");
        add_common(cmd, common);
        stage_cmds.emplace_back(cmd, s);
    }
    auto* run_all = app.add_subcommand("run-all", "Run every stage in order");
    add_common(run_all, common);

    int folds = 4;
    auto* kfold = app.add_subcommand("kfold", "k-fold cross validation of the whole pipeline");
    add_common(kfold, common);
    kfold->add_option("-k,--folds", folds, "Number of folds")->capture_default_str();

    SynthSpec synth;
    std::string synth_out;
    auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic WAV dataset and manifest");
    synth_cmd->add_option("--out", synth_out, "Output directory")->required();
    synth_cmd->add_option("--classes", synth.classes)->capture_default_str();
    synth_cmd->add_option("--segments", synth.segments_per_class, "Segments per class")->capture_default_str();
    synth_cmd->add_option("--duration", synth.duration_s, "Seconds per segment")->capture_default_str();
    synth_cmd->add_option("--rate", synth.sample_rate, "Sample rate in Hz")->capture_default_str();
    synth_cmd->add_option("--folds", synth.num_folds)->capture_default_str();
    synth_cmd->add_option("--label-noise", synth.label_noise)->capture_default_str();
    synth_cmd->add_option("--seed", synth.seed)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth_cmd->parsed()) {
            const auto m = synth_dataset(synth, synth_out);
            std::cout << "wrote " << m.segments.size() << " segments to " << synth_out << "\n";
            return 0;
        }
        const ExperimentConfig cfg = load(common);
        if (kfold->parsed()) {
            const auto res = kfold_eval(cfg, folds);
            std::cout << res.to_csv();
            return 0;
        }
        Workspace ws(cfg);
        std::cerr << "config hash " << ws.hash() << ", output " << ws.root().string() << "\n";
        if (run_all->parsed()) {
            ws.run_all(common.force);
            print_summary(ws.summary());
            return 0;
        }
        for (const auto& [cmd, stage] : stage_cmds) {
            if (!cmd->parsed()) continue;
            ws.run(stage, common.force);
            if (stage == Stage::evaluate || stage == Stage::report) print_summary(ws.summary());
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const StageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
