#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>

#include "ascfuse/pipeline.hpp"

using namespace ascfuse;
using namespace ascfuse::pipeline;

namespace {

const fs::path kConfigs = fs::path(ASCFUSE_SOURCE_DIR) / "configs";

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("ascfuse_pipeline_" + name);
    fs::remove_all(p);
    return p;
}

void quiet(const std::string&) {}

ExperimentConfig tiny(const fs::path& out) {
    Overrides ov;
    ov.output_dir = out;
    return load_config(kConfigs / "tiny.json", ov);
}

std::map<std::string, std::string> checksums(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) out[fs::relative(e.path(), dir).generic_string()] = checksum_hex(e.path());
    return out;
}

SynthSpec small_synth(std::uint64_t seed) {
    SynthSpec s;
    s.classes = 4;
    s.segments_per_class = 4;
    s.duration_s = 0.5;
    s.num_folds = 2;
    s.seed = seed;
    return s;
}

}  // namespace

TEST(Synth, CountsAndManifest) {
    const auto dir = scratch("synth_count");
    SynthSpec s;
    s.seed = 3;
    const auto m = synth_dataset(s, dir);
    EXPECT_EQ(m.segments.size(), 80u);
    std::size_t wavs = 0;
    for (const auto& e : fs::directory_iterator(dir / "wav")) wavs += e.path().extension() == ".wav";
    EXPECT_EQ(wavs, 80u);
    const auto back = load_manifest(dir / "manifest.json");
    EXPECT_EQ(back.segments.size(), 80u);
    EXPECT_EQ(back.num_folds, 4);
    const auto a = dsp::load_wav(back.segments[0].wav);
    EXPECT_EQ(a.samples.size(), 66150u);
    EXPECT_EQ(a.sample_rate, 22050.0);
    check_fold_coverage(back);
    fs::remove_all(dir);
}

TEST(Synth, SameSeedByteIdentical) {
    const auto a = scratch("synth_a"), b = scratch("synth_b"), c = scratch("synth_c");
    synth_dataset(small_synth(5), a);
    synth_dataset(small_synth(5), b);
    synth_dataset(small_synth(6), c);
    EXPECT_EQ(checksums(a / "wav"), checksums(b / "wav"));
    EXPECT_NE(checksums(a / "wav"), checksums(c / "wav"));
    EXPECT_EQ(read_text(a / "manifest.json").size(), read_text(b / "manifest.json").size());
    for (const auto& d : {a, b, c}) fs::remove_all(d);
}

TEST(Synth, Errors) {
    auto s = small_synth(1);
    s.classes = 1;
    EXPECT_THROW(synth_dataset(s, scratch("synth_err")), ConfigError);
    s = small_synth(1);
    s.duration_s = 0.02;  // 441 samples < one 706-sample window
    EXPECT_THROW(synth_dataset(s, scratch("synth_err")), DataError);
    fs::remove_all(scratch("synth_err"));
}

TEST(Synth, SiblingsDifferOnlyInModulationRate) {
    for (int c = 0; c < 6; c += 2) {
        const auto a = class_recipe(c, 6), b = class_recipe(c + 1, 6);
        EXPECT_EQ(a.root_hz, b.root_hz);
        EXPECT_EQ(a.band_hz, b.band_hz);
        EXPECT_NE(a.am_hz, b.am_hz);
    }
    EXPECT_GT(class_recipe(2, 4).band_hz, 2 * class_recipe(0, 4).band_hz);
}

TEST(Synth, LabelNoiseFlipsToSiblingOutsideCleanFold) {
    const auto dir = scratch("synth_noise");
    auto s = small_synth(2);
    s.segments_per_class = 10;
    s.label_noise = 0.3;
    s.clean_fold = 0;
    const auto m = synth_dataset(s, dir);
    int flipped = 0;
    for (const auto& e : m.segments) {
        const int origin = e.id[1] - '0';
        if (e.label != origin) {
            ++flipped;
            EXPECT_EQ(e.label, origin ^ 1);
            EXPECT_NE(e.fold, 0);
        }
    }
    EXPECT_GT(flipped, 0);
    fs::remove_all(dir);
}

TEST(Manifest, ValidationAndLeakageCanary) {
    const auto dir = scratch("manifest");
    auto m = synth_dataset(small_synth(4), dir);
    EXPECT_NO_THROW(validate(m));
    EXPECT_NO_THROW(check_leakage(m));

    auto dup = m;
    dup.segments[1].id = dup.segments[0].id;
    EXPECT_THROW(validate(dup), DataError);

    auto bad = m;
    bad.segments[0].label = 9;
    EXPECT_THROW(validate(bad), DataError);

    // The same audio under a second name in another fold.
    auto leak = m;
    const auto src = leak.segments[0];
    const fs::path copy = dir / "wav" / "copy.wav";
    fs::copy_file(src.wav, copy);
    leak.segments.push_back({"copy", copy, src.label, 1 - src.fold});
    EXPECT_NO_THROW(validate(leak));
    try {
        check_leakage(leak);
        FAIL() << "duplicated segment across folds was accepted";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("copy"), std::string::npos);
    }
    leak.segments.back().fold = src.fold;
    EXPECT_NO_THROW(check_leakage(leak));
    fs::remove_all(dir);
}

TEST(Manifest, FoldAssignment) {
    const auto dir = scratch("folds");
    auto m = synth_dataset(small_synth(8), dir);
    auto a = m, b = m;
    assign_folds(a, 2, 99);
    assign_folds(b, 2, 99);
    for (std::size_t i = 0; i < a.segments.size(); ++i) EXPECT_EQ(a.segments[i].fold, b.segments[i].fold);
    check_fold_coverage(a);
    EXPECT_THROW(assign_folds(a, 1, 99), ConfigError);
    EXPECT_THROW(assign_folds(a, 5, 99), DataError);  // 4 segments per class

    auto gap = a;
    for (auto& s : gap.segments)
        if (s.label == 2) s.fold = 0;
    EXPECT_THROW(check_fold_coverage(gap), DataError);
    save_manifest(dir / "m2.json", a);
    const auto back = load_manifest(dir / "m2.json");
    EXPECT_EQ(back.segments[3].wav, a.segments[3].wav);
    EXPECT_EQ(back.segments[3].fold, a.segments[3].fold);
    fs::remove_all(dir);
}

TEST(Config, ParseDefaultsAndHash) {
    const auto c = tiny("/tmp/x");
    EXPECT_EQ(c.kinds.size(), 2u);
    EXPECT_EQ(c.geometry(SpecKind::stft).width, 16u);
    EXPECT_EQ(c.geometry(SpecKind::mfcc).shift, 100u);
    EXPECT_EQ(c.input_size(), 64u);
    EXPECT_EQ(c.synth->seed, c.seeds.data);
    EXPECT_EQ(c.le.settings.alpha, c.train.weight_decay);

    auto other_dir = tiny("/tmp/y");
    EXPECT_EQ(config_hash(c), config_hash(other_dir));
    Overrides ov;
    ov.output_dir = "/tmp/x";
    ov.seed = 123;
    const auto seeded = load_config(kConfigs / "tiny.json", ov);
    EXPECT_EQ(seeded.seeds.permutation, 123u);
    EXPECT_NE(config_hash(seeded), config_hash(c));
    ov.preset = "table1";
    EXPECT_EQ(load_config(kConfigs / "tiny.json", ov).input_size(), 143u);

    const auto desk = load_config(kConfigs / "desk.json");
    EXPECT_EQ(desk.synth->segments_per_class, 20);
    EXPECT_EQ(desk.fusion.pairs.size(), 1u);
}

TEST(Config, Rejections) {
    const json base = read_json(kConfigs / "tiny.json");
    auto without = [&](const std::string& key) {
        json j = base;
        j.erase(key);
        return j;
    };
    EXPECT_THROW(config_from_json(without("seeds")), ConfigError);
    EXPECT_THROW(config_from_json(without("dataset")), ConfigError);
    json j = base;
    j["seeds"].erase("init");
    EXPECT_THROW(config_from_json(j), ConfigError);
    j = base;
    j["trian"] = json::object();
    EXPECT_THROW(config_from_json(j), ConfigError);
    j = base;
    j["preset"] = "resnet";
    EXPECT_THROW(config_from_json(j), ConfigError);
    j = base;
    j["fusion"]["pairs"] = {"STFT+MFCC"};
    EXPECT_THROW(config_from_json(j), ConfigError);
    j = base;
    j["train"]["patience"] = 10;
    EXPECT_THROW(config_from_json(j), ConfigError);
    j = base;
    j["label_expansion"]["num_superclasses"] = "many";
    EXPECT_THROW(config_from_json(j), ConfigError);
}

TEST(Parallel, DeterministicSlotsAndErrors) {
    std::vector<int> out(100, 0);
    parallel_for(out.size(), [&](std::size_t i) { out[i] = static_cast<int>(i * i); }, 4);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], static_cast<int>(i * i));
    EXPECT_THROW(parallel_for(10, [](std::size_t i) { if (i == 7) throw DataError("seven"); }, 3), DataError);
    std::atomic<int> count{0};
    parallel_for(0, [&](std::size_t) { ++count; });
    EXPECT_EQ(count.load(), 0);

    setenv("ASCFUSE_THREADS", "2", 1);
    EXPECT_EQ(thread_budget(), 2u);
    setenv("ASCFUSE_THREADS", "zero", 1);
    EXPECT_THROW(thread_budget(), ConfigError);
    unsetenv("ASCFUSE_THREADS");
}

TEST(Report, CsvShapes) {
    Summary s;
    s.config_hash = "abc";
    s.single = {{"VGG-STFT", "stft", "basic", 0.81234, 0.9, 4, 20}, {"VGG-STFT-LE", "stft", "le", 0.85, 0.95, 4, 20}};
    s.fusion = {{"STFT+CQT", "VGG", 0.875, 4}, {"STFT+CQT", "VGG-LE", 1.0, 4}};
    EXPECT_EQ(single_report_csv(s), "model,sample_level,voting\nVGG-STFT,0.8123,0.9000\nVGG-STFT-LE,0.8500,0.9500\n");
    EXPECT_EQ(fusion_report_csv(s), "pair,VGG,VGG-LE\nSTFT+CQT,0.8750,1.0000\n");
    const auto svg = accuracy_svg(s);
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
    const auto back = summary_from_json(to_json(s));
    EXPECT_EQ(single_report_csv(back), single_report_csv(s));
    EXPECT_EQ(back.fused("STFT+CQT", "VGG-LE").accuracy, 1.0);
}

TEST(Stages, PrerequisitesAreEnforced) {
    const auto out = scratch("prereq");
    Workspace ws(tiny(out), quiet);
    try {
        ws.run(Stage::train_basic);
        FAIL();
    } catch (const StageError& e) {
        EXPECT_NE(std::string(e.what()).find("run 'spectrogram' first"), std::string::npos) << e.what();
    }
    ws.run(Stage::dataset);
    EXPECT_THROW(ws.run(Stage::train_basic), StageError);
    EXPECT_EQ(parse_stage("train-le"), Stage::train_le);
    EXPECT_THROW(parse_stage("train"), ConfigError);
    fs::remove_all(out);
}

TEST(Stages, FullRunIdempotentAndDeterministic) {
    const auto out = scratch("full");
    Workspace ws(tiny(out), quiet);
    for (const auto& o : ws.run_all()) EXPECT_FALSE(o.skipped) << stage_name(o.stage);
    for (const char* f : {"report_single.csv", "report_fusion.csv", "report.json", "report.svg"})
        EXPECT_TRUE(fs::exists(out / "report" / f)) << f;
    const auto single = read_text(out / "report" / "report_single.csv");
    EXPECT_NE(single.find("VGG-STFT,"), std::string::npos);
    EXPECT_NE(single.find("VGG-CQT-LE,"), std::string::npos);
    EXPECT_EQ(read_text(out / "report" / "report_fusion.csv").rfind("pair,VGG,VGG-LE\nSTFT+CQT,", 0), 0u);
    const auto eval = read_text(out / "eval" / "VGG-STFT.csv");
    EXPECT_EQ(eval.rfind("segment_id,true,predicted_samples,predicted_voted\n", 0), 0u);

    const auto before = checksums(out);
    for (const auto& o : ws.run_all()) EXPECT_TRUE(o.skipped) << stage_name(o.stage);
    EXPECT_TRUE(ws.run(Stage::spectrogram).skipped);
    EXPECT_EQ(checksums(out), before);

    // Forced rerun reproduces identical bytes.
    ws.run(Stage::spectrogram, true);
    std::map<std::string, std::string> spec_before;
    for (const auto& [k, v] : before)
        if (k.rfind("spectrograms/", 0) == 0) spec_before[k.substr(13)] = v;
    EXPECT_EQ(checksums(out / "spectrograms"), spec_before);
    // Downstream stamps stay valid because the spectrogram digest is unchanged.
    EXPECT_TRUE(ws.run(Stage::train_basic).skipped);

    const auto out2 = scratch("full2");
    Workspace ws2(tiny(out2), quiet);
    ws2.run_all();
    EXPECT_EQ(checksums(out / "report"), checksums(out2 / "report"));
    fs::remove_all(out2);

    // Tampering with an artifact invalidates dependants.
    write_text(out / "features" / "index.json", "[]");
    try {
        ws.run(Stage::fuse);
        FAIL();
    } catch (const StageError& e) {
        EXPECT_NE(std::string(e.what()).find("rerun 'extract'"), std::string::npos) << e.what();
    }
    fs::remove_all(out);
}

TEST(Stages, ReportRefusesMixedConfigHashes) {
    const auto out = scratch("mixed");
    auto cfg = tiny(out);
    Workspace ws(cfg, quiet);
    ws.run_all();
    cfg.fusion.svm_c = 2.0;
    Workspace changed(cfg, quiet);
    EXPECT_NE(changed.hash(), ws.hash());
    try {
        changed.run(Stage::report);
        FAIL();
    } catch (const StageError& e) {
        EXPECT_NE(std::string(e.what()).find("different configuration"), std::string::npos) << e.what();
    }
    fs::remove_all(out);
}

TEST(Stages, SiblingClassesAttractTheConfusionMass) {
    const auto out = scratch("siblings");
    json j = read_json(kConfigs / "tiny.json");
    j["output_dir"] = out.string();
    j["kinds"] = {"stft"};
    j["dataset"]["synthetic"]["segments_per_class"] = 9;
    j["dataset"]["synthetic"]["duration_s"] = 2.0;
    j["patches"] = {{"stft", {{"width", 32}, {"shift", 8}}}};
    j["train"]["max_epochs"] = 6;
    j["train"]["patience"] = 5;
    j["label_expansion"]["enabled"] = false;
    j["fusion"]["pairs"] = json::array();
    Workspace ws(config_from_json(j), quiet);
    ws.run_all();
    const auto m = ws.manifest();
    const Matrix proba = tensor_read(out / "features" / "basic" / "stft.proba.atns").to_matrix();
    const auto index = read_json(out / "features" / "index.json").at("stft");
    // Expected confusion counts over every segment.
    Matrix f(4, 4);
    for (std::size_t i = 0; i < m.segments.size(); ++i) {
        const auto off = index[i].at("offset").get<std::size_t>(), cnt = index[i].at("count").get<std::size_t>();
        for (std::size_t r = off; r < off + cnt; ++r)
            for (int c = 0; c < 4; ++c) f(m.segments[i].label, c) += proba(r, c);
    }
    double sibling = 0.0, cross = 0.0;
    for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b)
            if (a != b) ((a ^ 1) == b ? sibling : cross) += f(a, b);
    EXPECT_GT(sibling, 0.0);
    // 4 sibling cells against 8 cross-family cells.
    EXPECT_GT(sibling / 4.0, 2.0 * cross / 8.0) << "sibling " << sibling << " cross " << cross;
    EXPECT_EQ(ws.summary().fusion.size(), 0u);
    fs::remove_all(out);
}

TEST(KFold, ValidationAndRun) {
    const auto out = scratch("kfold");
    auto cfg = tiny(out);
    EXPECT_THROW(kfold_eval(cfg, 1, quiet), ConfigError);
    EXPECT_THROW(kfold_eval(cfg, 4, quiet), ConfigError);  // dataset defines 3 folds
    cfg.synth->num_folds = 2;
    cfg.synth->segments_per_class = 4;
    cfg.le.enabled = false;
    const auto res = kfold_eval(cfg, 2, quiet);
    ASSERT_EQ(res.folds.size(), 2u);
    EXPECT_NE(res.folds[0].config_hash, res.folds[1].config_hash);
    const auto csv = read_text(out / "kfold.csv");
    EXPECT_EQ(csv.rfind("result,fold0,fold1,mean\n", 0), 0u);
    EXPECT_NE(csv.find("VGG STFT+CQT,"), std::string::npos);
    // Test folds are disjoint and together cover the dataset.
    const auto m0 = load_manifest(out / "fold0" / "dataset" / "manifest.json");
    const auto m1 = load_manifest(out / "fold1" / "dataset" / "manifest.json");
    for (std::size_t i = 0; i < m0.segments.size(); ++i) EXPECT_EQ(m0.segments[i].fold, m1.segments[i].fold);
    fs::remove_all(out);
}
