#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ascfuse/error.hpp"
#include "ascfuse/numerics/rng.hpp"
#include "ascfuse/pipeline/files.hpp"

namespace ascfuse::pipeline {

struct SegmentEntry {
    std::string id;
    fs::path wav;
    int label = -1;
    int fold = -1;  // -1: not yet assigned
};

/// Segments with labels in [0, C) and their cross-validation folds.
struct DatasetManifest {
    std::vector<std::string> class_names;
    std::vector<SegmentEntry> segments;
    int num_folds = 0;

    int num_classes() const { return static_cast<int>(class_names.size()); }
    bool has_folds() const {
        return num_folds > 0 && std::all_of(segments.begin(), segments.end(), [](const auto& s) { return s.fold >= 0; });
    }
};

/// Structural checks: ids and paths unique, labels dense, folds in range.
inline void validate(const DatasetManifest& m) {
    const int C = m.num_classes();
    if (C < 2) throw DataError("manifest: need at least 2 classes, got " + std::to_string(C));
    if (m.segments.empty()) throw DataError("manifest: no segments");
    std::set<std::string> ids, paths;
    std::vector<int> per_class(C, 0);
    for (const auto& s : m.segments) {
        if (s.id.empty() || s.id.find_first_of("/\\") != std::string::npos)
            throw DataError("manifest: invalid segment id '" + s.id + "'");
        if (!ids.insert(s.id).second) throw DataError("manifest: duplicate segment id '" + s.id + "'");
        if (!paths.insert(fs::weakly_canonical(s.wav).string()).second)
            throw DataError("manifest: WAV " + s.wav.string() + " is listed twice");
        if (s.label < 0 || s.label >= C)
            throw DataError("manifest: segment '" + s.id + "' has label " + std::to_string(s.label) + " outside [0," +
                            std::to_string(C) + ")");
        ++per_class[s.label];
        if (m.num_folds > 0 && s.fold >= m.num_folds)
            throw DataError("manifest: segment '" + s.id + "' is in fold " + std::to_string(s.fold) + " of " +
                            std::to_string(m.num_folds));
    }
    for (int c = 0; c < C; ++c)
        if (per_class[c] == 0) throw DataError("manifest: class '" + m.class_names[c] + "' has no segments");
}

/// Leakage canary: identical audio content in two different folds.
inline void check_leakage(const DatasetManifest& m) {
    std::map<std::uint64_t, const SegmentEntry*> seen;
    for (const auto& s : m.segments) {
        const auto h = file_checksum(s.wav);
        auto [it, inserted] = seen.emplace(h, &s);
        if (!inserted && it->second->fold != s.fold)
            throw DataError("manifest: segments '" + it->second->id + "' (fold " + std::to_string(it->second->fold) +
                            ") and '" + s.id + "' (fold " + std::to_string(s.fold) +
                            ") have identical audio; a segment may appear in only one fold");
    }
}

/// Every fold must contain every class.
inline void check_fold_coverage(const DatasetManifest& m) {
    if (!m.has_folds()) throw DataError("manifest: folds are not assigned");
    std::vector<std::vector<int>> count(m.num_folds, std::vector<int>(m.num_classes(), 0));
    for (const auto& s : m.segments) ++count[s.fold][s.label];
    for (int f = 0; f < m.num_folds; ++f)
        for (int c = 0; c < m.num_classes(); ++c)
            if (count[f][c] == 0)
                throw DataError("class '" + m.class_names[c] + "' is missing from fold " + std::to_string(f));
}

/// Seeded stratified fold assignment: each class's segments are shuffled and
/// dealt round-robin into k folds.
inline void assign_folds(DatasetManifest& m, int k, std::uint64_t seed) {
    if (k < 2) throw ConfigError("fold count must be >= 2, got " + std::to_string(k));
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < m.segments.size(); ++i) by_class[m.segments[i].label].push_back(i);
    for (auto& [c, idx] : by_class) {
        if (idx.size() < static_cast<std::size_t>(k))
            throw DataError("class '" + m.class_names[c] + "' has " + std::to_string(idx.size()) +
                            " segments, fewer than " + std::to_string(k) + " folds");
        std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return m.segments[a].id < m.segments[b].id; });
        Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(c));
        const auto perm = rng.permutation(idx.size());
        for (std::size_t j = 0; j < idx.size(); ++j) m.segments[idx[perm[j]]].fold = static_cast<int>(j % k);
    }
    m.num_folds = k;
}

inline json to_json(const DatasetManifest& m, const fs::path& base_dir = {}) {
    json segs = json::array();
    for (const auto& s : m.segments) {
        fs::path p = s.wav;
        if (!base_dir.empty()) {
            const auto rel = p.lexically_relative(base_dir);
            if (!rel.empty() && *rel.begin() != "..") p = rel;
        }
        segs.push_back({{"id", s.id}, {"wav", p.generic_string()}, {"label", s.label}, {"fold", s.fold}});
    }
    return {{"class_names", m.class_names}, {"num_folds", m.num_folds}, {"segments", segs}};
}

/// Relative WAV paths are resolved against `base_dir`.
inline DatasetManifest manifest_from_json(const json& j, const fs::path& base_dir = {}) {
    DatasetManifest m;
    try {
        m.class_names = j.at("class_names").get<std::vector<std::string>>();
        m.num_folds = j.value("num_folds", 0);
        for (const auto& s : j.at("segments")) {
            SegmentEntry e;
            e.id = s.at("id").get<std::string>();
            e.wav = s.at("wav").get<std::string>();
            if (e.wav.is_relative() && !base_dir.empty()) e.wav = base_dir / e.wav;
            e.label = s.at("label").get<int>();
            e.fold = s.value("fold", -1);
            m.segments.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("manifest: ") + e.what());
    }
    return m;
}

inline void save_manifest(const fs::path& path, const DatasetManifest& m) {
    write_json(path, to_json(m, path.parent_path()));
}

inline DatasetManifest load_manifest(const fs::path& path) {
    return manifest_from_json(read_json(path), path.parent_path());
}

}  // namespace ascfuse::pipeline
