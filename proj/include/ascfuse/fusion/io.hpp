#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

#include "ascfuse/error.hpp"
#include "ascfuse/fusion/pca.hpp"
#include "ascfuse/fusion/svm.hpp"
#include "ascfuse/numerics/tensor_io.hpp"

namespace ascfuse::fusion {

namespace detail {

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary);
    if (!f) throw Error("cannot write " + p.string());
    f << j.dump(2) << '\n';
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw Error("cannot read " + p.string());
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(p.string() + ": " + e.what());
    }
}

}  // namespace detail

/// `<base>.json` + `<base>.mean.atns` + `<base>.components.atns`
inline void save_pca(const std::filesystem::path& base, const PcaModel& m) {
    const std::string b = base.string();
    detail::write_json(b + ".json", {{"type", "pca"},
                                     {"threshold", m.threshold},
                                     {"input_dim", m.input_dim()},
                                     {"output_dim", m.output_dim()},
                                     {"explained", m.explained},
                                     {"all_ratios", m.all_ratios}});
    Tensor mean;
    mean.dims = {static_cast<std::uint32_t>(m.mean.size())};
    mean.values = m.mean;
    tensor_write(b + ".mean.atns", mean);
    tensor_write(b + ".components.atns", Tensor::from_matrix(m.components));
}

inline PcaModel load_pca(const std::filesystem::path& base) {
    const std::string b = base.string();
    const auto j = detail::read_json(b + ".json");
    PcaModel m;
    m.threshold = j.at("threshold").get<double>();
    m.explained = j.at("explained").get<std::vector<double>>();
    m.all_ratios = j.at("all_ratios").get<std::vector<double>>();
    m.mean = tensor_read(b + ".mean.atns").values;
    m.components = tensor_read(b + ".components.atns").to_matrix();
    if (m.components.cols() != m.mean.size() || m.components.rows() != j.at("output_dim").get<std::size_t>())
        throw ShapeError("pca model " + b + ": stored shapes disagree");
    return m;
}

/// `<base>.json` + `<base>.weights.atns` (K × d) + `<base>.bias.atns`
inline void save_svm(const std::filesystem::path& base, const SvmModel& m) {
    const std::string b = base.string();
    nlohmann::json machines = nlohmann::json::array();
    for (const auto& k : m.machines)
        machines.push_back({{"primal", k.primal}, {"dual", k.dual}, {"sweeps", k.sweeps}});
    detail::write_json(b + ".json", {{"type", "svm_ovr_linear"},
                                     {"c", m.c},
                                     {"num_classes", m.num_classes()},
                                     {"dim", m.dim()},
                                     {"machines", machines}});
    Matrix w(m.num_classes(), m.dim());
    Tensor bias;
    bias.dims = {static_cast<std::uint32_t>(m.num_classes())};
    for (std::size_t k = 0; k < m.num_classes(); ++k) {
        std::copy(m.machines[k].w.begin(), m.machines[k].w.end(), w.row(k).begin());
        bias.values.push_back(m.machines[k].b);
    }
    tensor_write(b + ".weights.atns", Tensor::from_matrix(w));
    tensor_write(b + ".bias.atns", bias);
}

inline SvmModel load_svm(const std::filesystem::path& base) {
    const std::string b = base.string();
    const auto j = detail::read_json(b + ".json");
    const Matrix w = tensor_read(b + ".weights.atns").to_matrix();
    const auto bias = tensor_read(b + ".bias.atns").values;
    if (w.rows() != bias.size() || w.rows() != j.at("num_classes").get<std::size_t>())
        throw ShapeError("svm model " + b + ": stored shapes disagree");
    SvmModel m;
    m.c = j.at("c").get<double>();
    for (std::size_t k = 0; k < w.rows(); ++k) {
        BinarySvm s;
        s.w.assign(w.row(k).begin(), w.row(k).end());
        s.b = bias[k];
        m.machines.push_back(std::move(s));
    }
    return m;
}

}  // namespace ascfuse::fusion
