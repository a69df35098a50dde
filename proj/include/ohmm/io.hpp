#pragma once

// File formats: points and parameters as JSON, chains as CSV, traces as
// JSON lines.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "ohmm/error.hpp"
#include "ohmm/gaussian.hpp"
#include "ohmm/manifold.hpp"
#include "ohmm/markov.hpp"
#include "ohmm/online.hpp"

namespace ohmm::io {

using nlohmann::json;

/// Disk points as [re, im]; SPD points as row-major arrays of arrays.
inline json point_to_json(const ManifoldPoint& p) {
    if (p.is_disk()) return json::array({p.as_disk().real(), p.as_disk().imag()});
    const auto& m = p.as_spd();
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline ManifoldPoint point_from_json(const json& j, const ManifoldKind& kind) {
    try {
        if (kind.is_disk()) {
            if (!j.is_array() || j.size() != 2) throw InvalidArgument("disk point must be [re, im]");
            return ManifoldPoint::disk(j.at(0).get<double>(), j.at(1).get<double>());
        }
        const auto d = static_cast<Eigen::Index>(kind.dim);
        if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != d)
            throw InvalidArgument("SPD point must have " + std::to_string(d) + " rows");
        Eigen::MatrixXd m(d, d);
        for (Eigen::Index r = 0; r < d; ++r) {
            const auto& row = j.at(static_cast<std::size_t>(r));
            if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != d)
                throw InvalidArgument("SPD point row has wrong length");
            for (Eigen::Index c = 0; c < d; ++c) m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
        }
        return ManifoldPoint::spd(m);
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("malformed point: ") + e.what());
    }
}

inline json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Eigen::MatrixXd matrix_from_json(const json& j) {
    if (!j.is_array() || j.empty()) throw InvalidArgument("expected a non-empty array of rows");
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = static_cast<Eigen::Index>(j.at(0).size());
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = j.at(static_cast<std::size_t>(r));
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
            throw InvalidArgument("ragged matrix");
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
    }
    return m;
}

inline json kind_to_json(const ManifoldKind& k) { return k.is_disk() ? json("disk") : json("spd"); }

inline json params_to_json(const HmmParams& p) {
    json comps = json::array();
    for (const auto& c : p.components)
        comps.push_back({{"center", point_to_json(c.center)}, {"sigma", c.sigma}, {"delta", c.delta}});
    json out = {
        {"manifold", kind_to_json(p.kind())},
        {"n_states", p.n_states()},
        {"transition", matrix_to_json(p.transition)},
        {"initial", std::vector<double>(p.initial.data(), p.initial.data() + p.initial.size())},
        {"components", comps},
    };
    if (p.kind().is_spd()) out["dim"] = p.kind().dim;
    return out;
}

inline ManifoldKind kind_from_json(const json& j) {
    const auto name = j.value("manifold", std::string("disk"));
    if (name == "disk") return ManifoldKind::disk();
    if (name == "spd") return ManifoldKind::spd(j.value("dim", 2));
    throw InvalidArgument("unknown manifold '" + name + "'");
}

/// Components need a center and sigma (delta is derived; given alone, sigma is inverted from it).
inline HmmParams params_from_json(const json& j) {
    try {
        const ManifoldKind kind = kind_from_json(j);
        HmmParams p;
        p.transition = matrix_from_json(j.at("transition"));
        const auto init = j.at("initial").get<std::vector<double>>();
        p.initial = Eigen::Map<const Eigen::VectorXd>(init.data(), static_cast<Eigen::Index>(init.size()));
        for (const auto& c : j.at("components")) {
            ManifoldPoint center = point_from_json(c.at("center"), kind);
            if (c.contains("sigma"))
                p.components.push_back(RiemannianGaussian::from_sigma(std::move(center), c.at("sigma").get<double>()));
            else
                p.components.push_back(RiemannianGaussian::from_delta(std::move(center), c.at("delta").get<double>()));
        }
        if (j.contains("n_states") && j.at("n_states").get<std::size_t>() != p.components.size())
            throw InvalidArgument("n_states does not match the number of components");
        require_valid(p);
        return p;
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("malformed parameters: ") + e.what());
    }
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

inline json read_json(const std::filesystem::path& path) {
    const std::string text = read_text(path);
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw IoError("corrupt JSON in " + path.string() + ": " + e.what());
    }
}

inline HmmParams load_params(const std::filesystem::path& path) { return params_from_json(read_json(path)); }

inline void save_params(const std::filesystem::path& path, const HmmParams& p) {
    write_text(path, params_to_json(p).dump(2) + "\n");
}

/// Shortest round-trip decimal form.
inline std::string format_double(double v) {
    std::ostringstream ss;
    ss << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
    return ss.str();
}

/// CSV: header t,state,<coordinates>; t and state are 1-based.
inline std::string chain_to_csv(const ChainSample& chain) {
    std::ostringstream out;
    if (chain.observations.empty()) return "t,state\n";
    const ManifoldKind kind = chain.observations.front().kind();
    out << "t,state";
    if (kind.is_disk()) {
        out << ",re,im";
    } else {
        for (int i = 1; i <= kind.dim; ++i)
            for (int j = 1; j <= kind.dim; ++j) out << ",p" << i << "_" << j;
    }
    out << "\n";
    for (std::size_t t = 0; t < chain.size(); ++t) {
        out << t + 1 << "," << chain.states[t] + 1;
        const auto& y = chain.observations[t];
        if (y.is_disk()) {
            out << "," << format_double(y.as_disk().real()) << "," << format_double(y.as_disk().imag());
        } else {
            const auto& m = y.as_spd();
            for (Eigen::Index i = 0; i < m.rows(); ++i)
                for (Eigen::Index j = 0; j < m.cols(); ++j) out << "," << format_double(m(i, j));
        }
        out << "\n";
    }
    return out.str();
}

inline void save_chain(const std::filesystem::path& path, const ChainSample& chain) {
    write_text(path, chain_to_csv(chain));
}

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline double parse_double(const std::string& s) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw InvalidArgument("not a number: '" + s + "'");
    }
}
} // namespace detail

/// Reads a chain CSV. The manifold kind is inferred from the header.
inline ChainSample chain_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw InvalidArgument("empty chain CSV");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = detail::split_csv_line(line);
    if (header.size() < 3 || header[0] != "t" || header[1] != "state")
        throw InvalidArgument("chain CSV header must start with t,state");
    const std::size_t coords = header.size() - 2;
    ManifoldKind kind = ManifoldKind::disk();
    if (header.size() == 4 && header[2] == "re" && header[3] == "im") {
        kind = ManifoldKind::disk();
    } else {
        const int d = static_cast<int>(std::lround(std::sqrt(static_cast<double>(coords))));
        if (static_cast<std::size_t>(d * d) != coords) throw InvalidArgument("chain CSV: unrecognized coordinate columns");
        kind = ManifoldKind::spd(d);
    }
    ChainSample chain;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw InvalidArgument("chain CSV line " + std::to_string(lineno) + ": wrong number of fields");
        const double state = detail::parse_double(cells[1]);
        if (state < 1.0 || state != std::floor(state))
            throw InvalidArgument("chain CSV line " + std::to_string(lineno) + ": state must be a positive integer");
        chain.states.push_back(static_cast<int>(state) - 1);
        if (kind.is_disk()) {
            chain.observations.push_back(
                ManifoldPoint::disk(detail::parse_double(cells[2]), detail::parse_double(cells[3])));
        } else {
            Eigen::MatrixXd m(kind.dim, kind.dim);
            for (int i = 0; i < kind.dim; ++i)
                for (int j = 0; j < kind.dim; ++j)
                    m(i, j) = detail::parse_double(cells[2 + static_cast<std::size_t>(i * kind.dim + j)]);
            chain.observations.push_back(ManifoldPoint::spd(m));
        }
    }
    if (chain.states.empty()) throw InvalidArgument("chain CSV has no rows");
    return chain;
}

inline ChainSample load_chain(const std::filesystem::path& path) { return chain_from_csv(read_text(path)); }

/// One trace record: {k, A, centers, sigmas, deltas, gamma_filtered}.
inline json trace_record(std::size_t k, const HmmParams& p, const Eigen::VectorXd& gamma) {
    json centers = json::array();
    std::vector<double> sigmas;
    std::vector<double> deltas;
    for (const auto& c : p.components) {
        centers.push_back(point_to_json(c.center));
        sigmas.push_back(c.sigma);
        deltas.push_back(c.delta);
    }
    return {
        {"k", k},
        {"A", matrix_to_json(p.transition)},
        {"centers", centers},
        {"sigmas", sigmas},
        {"deltas", deltas},
        {"gamma_filtered", std::vector<double>(gamma.data(), gamma.data() + gamma.size())},
    };
}

/// Writes a JSON-lines trace record every `every` steps.
class TraceWriter {
public:
    TraceWriter(const std::filesystem::path& path, std::size_t every) : every_(every) {
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        out_.open(path);
        if (!out_) throw IoError("cannot write trace " + path.string());
    }

    void operator()(const StepRecord& r) {
        if (every_ == 0 || r.k % every_ != 0) return;
        out_ << trace_record(r.k, r.params, r.gamma_filtered).dump() << "\n";
    }

private:
    std::size_t every_;
    std::ofstream out_;
};

} // namespace ohmm::io
