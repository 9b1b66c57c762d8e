#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ascfuse/dsp/spectrogram.hpp"
#include "ascfuse/error.hpp"
#include "ascfuse/numerics/matrix.hpp"
#include "ascfuse/numerics/rng.hpp"
#include "ascfuse/numerics/tensor_io.hpp"

namespace ascfuse::fusion {

using dsp::SpecKind;

struct Concatenated {
    std::vector<double> vector;
    std::vector<std::size_t> order;  // order[p] = patch placed in block p
};

/// O(g): the segment's m patch features (rows) in a random block order,
/// zero-padded to `pad_to` blocks.
inline Concatenated concat_random(const Matrix& patch_features, Rng& rng, std::size_t pad_to = 0) {
    const std::size_t m = patch_features.rows(), L = patch_features.cols();
    if (m == 0) throw DataError("concat_random: segment has no patch features");
    if (pad_to != 0 && pad_to < m) throw ShapeError("concat_random: pad_to is smaller than the patch count");
    Concatenated out;
    out.order = rng.permutation(m);
    out.vector.assign(std::max(pad_to, m) * L, 0.0);
    for (std::size_t p = 0; p < m; ++p) {
        const auto row = patch_features.row(out.order[p]);
        std::copy(row.begin(), row.end(), out.vector.begin() + static_cast<std::ptrdiff_t>(p * L));
    }
    return out;
}

/// Ragged input check for callers holding per-patch vectors.
inline Matrix stack_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw DataError("stack_rows: no rows");
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != m.cols())
            throw ShapeError("ragged feature lengths: row " + std::to_string(i) + " has " + std::to_string(rows[i].size()) +
                             ", expected " + std::to_string(m.cols()));
        std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
    }
    return m;
}

/// Per-segment permutation stream, independent of processing order.
inline Rng segment_rng(std::uint64_t run_seed, const std::string& segment_id) {
    return Rng::derive(run_seed, fnv1a64(segment_id.data(), segment_id.size()));
}

using KindPair = std::pair<SpecKind, SpecKind>;

/// The three supported pairs, in declared block order.
inline const std::array<KindPair, 3>& supported_pairs() {
    static const std::array<KindPair, 3> pairs{{{SpecKind::stft, SpecKind::cqt},
                                                {SpecKind::stft, SpecKind::mfcc},
                                                {SpecKind::mfcc, SpecKind::cqt}}};
    return pairs;
}

inline std::string pair_name(const KindPair& p) { return display_name(p.first) + "+" + display_name(p.second); }

inline KindPair parse_pair(const std::string& s) {
    for (const auto& p : supported_pairs())
        if (pair_name(p) == s || to_string(p.first) + "+" + to_string(p.second) == s) return p;
    throw ConfigError("unsupported fusion pair '" + s + "' (expected STFT+CQT, STFT+MFCC or MFCC+CQT)");
}

/// Global features of one segment, keyed by kind.
using GlobalFeatures = std::map<SpecKind, std::vector<double>>;

/// A(g) = [G^first(g); G^second(g)].
inline std::vector<double> aggregate(const GlobalFeatures& g, const KindPair& pair, const std::string& segment_id = "") {
    std::vector<std::string> missing;
    for (SpecKind k : {pair.first, pair.second})
        if (!g.count(k)) missing.push_back(display_name(k));
    if (!missing.empty()) {
        std::string msg = "aggregate: segment '" + segment_id + "' lacks";
        for (const auto& k : missing) msg += " " + k;
        throw DataError(msg);
    }
    std::vector<double> out = g.at(pair.first);
    const auto& b = g.at(pair.second);
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

/// Modal class; ties go to the larger summed probability, then the lowest index.
inline int majority_vote(std::span<const int> votes, int num_classes, const Matrix* probs = nullptr) {
    if (votes.empty()) throw DataError("majority_vote: no predictions");
    std::vector<int> count(num_classes, 0);
    for (int v : votes) {
        if (v < 0 || v >= num_classes) throw DataError("majority_vote: class out of range");
        ++count[v];
    }
    std::vector<double> mass(num_classes, 0.0);
    if (probs) {
        if (probs->rows() != votes.size() || probs->cols() != static_cast<std::size_t>(num_classes))
            throw ShapeError("majority_vote: probability matrix must be votes × classes");
        for (std::size_t i = 0; i < probs->rows(); ++i)
            for (int c = 0; c < num_classes; ++c) mass[c] += (*probs)(i, c);
    }
    int best = 0;
    for (int c = 1; c < num_classes; ++c)
        if (count[c] > count[best] || (count[c] == count[best] && mass[c] > mass[best])) best = c;
    return best;
}

inline double accuracy(std::span<const int> predicted, std::span<const int> truth) {
    if (predicted.size() != truth.size()) throw ShapeError("accuracy: length mismatch");
    if (truth.empty()) return 0.0;
    std::size_t ok = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) ok += predicted[i] == truth[i];
    return static_cast<double>(ok) / static_cast<double>(truth.size());
}

}  // namespace ascfuse::fusion
