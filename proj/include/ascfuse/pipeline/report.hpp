#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "ascfuse/error.hpp"
#include "ascfuse/pipeline/files.hpp"

namespace ascfuse::pipeline {

/// Accuracy of one CNN model on the test segments.
struct ModelScore {
    std::string model;    // e.g. VGG-STFT-LE
    std::string kind;     // stft | cqt | mfcc
    std::string variant;  // basic | le
    double sample_level = 0.0;
    double voting = 0.0;
    std::size_t segments = 0;
    std::size_t patches = 0;
};

struct FusionScore {
    std::string pair;   // e.g. STFT+CQT
    std::string model;  // VGG | VGG-LE
    double accuracy = 0.0;
    std::size_t segments = 0;
};

struct Summary {
    std::string config_hash;
    std::vector<ModelScore> single;
    std::vector<FusionScore> fusion;

    const ModelScore& model(const std::string& name) const {
        for (const auto& m : single)
            if (m.model == name) return m;
        throw DataError("summary has no model '" + name + "'");
    }
    const FusionScore& fused(const std::string& pair, const std::string& model) const {
        for (const auto& f : fusion)
            if (f.pair == pair && f.model == model) return f;
        throw DataError("summary has no fusion result for " + pair + " / " + model);
    }
};

inline json to_json(const Summary& s) {
    json single = json::array(), fused = json::array();
    for (const auto& m : s.single)
        single.push_back({{"model", m.model},
                          {"kind", m.kind},
                          {"variant", m.variant},
                          {"sample_level", m.sample_level},
                          {"voting", m.voting},
                          {"segments", m.segments},
                          {"patches", m.patches}});
    for (const auto& f : s.fusion)
        fused.push_back({{"pair", f.pair}, {"model", f.model}, {"accuracy", f.accuracy}, {"segments", f.segments}});
    return {{"config_hash", s.config_hash}, {"single", single}, {"fusion", fused}};
}

inline Summary summary_from_json(const json& j) {
    Summary s;
    try {
        s.config_hash = j.at("config_hash").get<std::string>();
        for (const auto& m : j.at("single"))
            s.single.push_back({m.at("model"), m.at("kind"), m.at("variant"), m.at("sample_level"), m.at("voting"),
                                m.at("segments"), m.at("patches")});
        for (const auto& f : j.at("fusion"))
            s.fusion.push_back({f.at("pair"), f.at("model"), f.at("accuracy"), f.at("segments")});
    } catch (const json::exception& e) {
        throw ConfigError(std::string("summary: ") + e.what());
    }
    return s;
}

/// model × {sample-level, voting}
inline std::string single_report_csv(const Summary& s) {
    std::string out = "model,sample_level,voting\n";
    for (const auto& m : s.single) out += m.model + "," + fmt4(m.sample_level) + "," + fmt4(m.voting) + "\n";
    return out;
}

/// fusion pair × model
inline std::string fusion_report_csv(const Summary& s) {
    std::vector<std::string> pairs, models;
    for (const auto& f : s.fusion) {
        if (std::find(pairs.begin(), pairs.end(), f.pair) == pairs.end()) pairs.push_back(f.pair);
        if (std::find(models.begin(), models.end(), f.model) == models.end()) models.push_back(f.model);
    }
    std::string out = "pair";
    for (const auto& m : models) out += "," + m;
    out += "\n";
    for (const auto& p : pairs) {
        out += p;
        for (const auto& m : models) {
            out += ",";
            for (const auto& f : s.fusion)
                if (f.pair == p && f.model == m) out += fmt4(f.accuracy);
        }
        out += "\n";
    }
    return out;
}

inline std::string xml_escape(const std::string& s) {
    std::string o;
    for (char c : s) {
        switch (c) {
            case '&': o += "&amp;"; break;
            case '<': o += "&lt;"; break;
            case '>': o += "&gt;"; break;
            case '"': o += "&quot;"; break;
            default: o += c;
        }
    }
    return o;
}

/// Horizontal bar chart of voting and fusion accuracies.
inline std::string accuracy_svg(const Summary& s) {
    std::vector<std::pair<std::string, double>> bars;
    for (const auto& m : s.single) bars.emplace_back(m.model + " (voting)", m.voting);
    for (const auto& f : s.fusion) bars.emplace_back(f.model + " " + f.pair, f.accuracy);
    const int label_w = 220, bar_w = 360, row_h = 24, top = 30;
    const int height = top + static_cast<int>(bars.size()) * row_h + 30;
    std::string o = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(label_w + bar_w + 80) +
                    "\" height=\"" + std::to_string(height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o += "<text x=\"10\" y=\"18\" font-size=\"14\">Test accuracy</text>\n";
    for (std::size_t i = 0; i < bars.size(); ++i) {
        const int y = top + static_cast<int>(i) * row_h;
        const int w = static_cast<int>(std::lround(std::clamp(bars[i].second, 0.0, 1.0) * bar_w));
        const bool fused = i >= s.single.size();
        o += "<text x=\"" + std::to_string(label_w - 6) + "\" y=\"" + std::to_string(y + 15) +
             "\" text-anchor=\"end\">" + xml_escape(bars[i].first) + "</text>\n";
        o += "<rect x=\"" + std::to_string(label_w) + "\" y=\"" + std::to_string(y + 3) + "\" width=\"" +
             std::to_string(w) + "\" height=\"" + std::to_string(row_h - 6) + "\" fill=\"" +
             (fused ? "#d9822b" : "#3a6ea5") + "\"/>\n";
        o += "<text x=\"" + std::to_string(label_w + w + 6) + "\" y=\"" + std::to_string(y + 15) + "\">" +
             fmt4(bars[i].second) + "</text>\n";
    }
    const int axis_y = top + static_cast<int>(bars.size()) * row_h + 4;
    o += "<line x1=\"" + std::to_string(label_w) + "\" y1=\"" + std::to_string(axis_y) + "\" x2=\"" +
         std::to_string(label_w + bar_w) + "\" y2=\"" + std::to_string(axis_y) + "\" stroke=\"#444\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const int x = label_w + t * bar_w / 4;
        o += "<text x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(axis_y + 16) +
             "\" text-anchor=\"middle\">" + fmt4(t / 4.0).substr(0, 4) + "</text>\n";
    }
    o += "</svg>\n";
    return o;
}

}  // namespace ascfuse::pipeline
