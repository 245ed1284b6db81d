#pragma once

// Text file formats.
//
// Landmark file:
//     p,d,n,space,label
//     4,2,1000,configuration,convex-quad
//     specimen,landmark,x,y[,z]
//     1,1,<x>,<y>
//     ...
// Specimen and landmark indices are 1-based; rows are specimen-major.
// Reals are written in the shortest form that reads back to the same
// double, so read(write(x)) == x bit for bit.
//
// Chain file: CSV with header iter,<columns...>, one row per retained sweep,
// plus a key=value sidecar at <path>.meta.
//
// Reports: key=value lines in insertion order.

#include <Eigen/Dense>

#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "bpa/density.hpp"
#include "bpa/errors.hpp"
#include "bpa/geometry.hpp"
#include "bpa/posterior.hpp"

namespace bpa::io {

/// Malformed or unreadable input file.
class FormatError : public ValidationError {
public:
    explicit FormatError(const std::string& what) : ValidationError(what) {}
};

inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw FormatError("not a number: '" + std::string(s) + "'");
    return v;
}

inline long long parse_int(std::string_view s) {
    while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    long long v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw FormatError("not an integer: '" + std::string(s) + "'");
    return v;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::string trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return std::string(s);
}

struct LandmarkFile {
    ObjectSet objects;
    std::string label;
};

inline void write_landmarks(std::ostream& out, const ObjectSet& objects, const std::string& label) {
    if (label.find_first_of(",\n\r") != std::string::npos) throw ValidationError("label may not contain commas or newlines");
    const int p = objects.landmarks(), d = objects.dim();
    out << "p,d,n,space,label\n" << p << ',' << d << ',' << objects.size() << ',' << to_string(objects.space()) << ',' << label << '\n';
    out << "specimen,landmark,x,y" << (d == 3 ? ",z" : "") << '\n';
    for (int k = 0; k < objects.size(); ++k) {
        const auto& s = objects[static_cast<std::size_t>(k)];
        for (int i = 0; i < p; ++i) {
            out << (k + 1) << ',' << (i + 1);
            for (int j = 0; j < d; ++j) out << ',' << format_double(s(i, j));
            out << '\n';
        }
    }
}

inline LandmarkFile read_landmarks(std::istream& in) {
    std::string line;
    auto next = [&](const char* what) {
        if (!std::getline(in, line)) throw FormatError(std::string("landmark file ends before ") + what);
        return trim(line);
    };
    if (next("the header") != "p,d,n,space,label") throw FormatError("landmark file must start with 'p,d,n,space,label'");
    const std::string header = next("the header values");
    const auto fields = split_csv(header);
    if (fields.size() < 4) throw FormatError("header needs p,d,n,space[,label]");
    const auto p = parse_int(fields[0]), d = parse_int(fields[1]), n = parse_int(fields[2]);
    const std::string space_name = trim(fields[3]);
    Space space;
    if (space_name == "configuration") {
        space = Space::configuration;
    } else if (space_name == "preshape") {
        space = Space::preshape;
    } else {
        throw FormatError("unknown coordinate space '" + space_name + "'");
    }
    const std::string label = fields.size() > 4 ? trim(fields[4]) : std::string{};
    if (p < 1 || n < 1 || (d != 2 && d != 3)) throw FormatError("invalid p, d or n in header");
    const std::string columns = next("the column header");
    const std::string expected = d == 3 ? "specimen,landmark,x,y,z" : "specimen,landmark,x,y";
    if (columns != expected) throw FormatError("expected column header '" + expected + "'");

    std::vector<Matrix> specimens(static_cast<std::size_t>(n), Matrix::Constant(p, d, std::numeric_limits<double>::quiet_NaN()));
    long long rows = 0;
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto f = split_csv(t);
        if (static_cast<long long>(f.size()) != 2 + d) throw FormatError("row has the wrong number of fields: " + t);
        const auto k = parse_int(f[0]), i = parse_int(f[1]);
        if (k < 1 || k > n || i < 1 || i > p) throw FormatError("specimen or landmark index out of range: " + t);
        auto& s = specimens[static_cast<std::size_t>(k - 1)];
        if (!std::isnan(s(i - 1, 0))) throw FormatError("duplicate row: " + t);
        for (int j = 0; j < d; ++j) s(i - 1, j) = parse_double(f[static_cast<std::size_t>(2 + j)]);
        ++rows;
    }
    if (rows != p * n) throw FormatError("payload has " + std::to_string(rows) + " rows, header implies " + std::to_string(p * n));
    return {ObjectSet(std::move(specimens), space), label};
}

inline void write_landmarks(const std::string& path, const ObjectSet& objects, const std::string& label) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    write_landmarks(out, objects, label);
    if (!out) throw ValidationError("write failed: " + path);
}

inline LandmarkFile read_landmarks(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open: " + path);
    return read_landmarks(in);
}

/// Ordered key=value record.
class KeyValues {
public:
    KeyValues& add(std::string key, std::string value) {
        entries_.emplace_back(std::move(key), std::move(value));
        return *this;
    }
    KeyValues& add(std::string key, const char* value) { return add(std::move(key), std::string(value)); }
    KeyValues& add(std::string key, double value) { return add(std::move(key), format_double(value)); }
    KeyValues& add(std::string key, bool value) { return add(std::move(key), std::string(value ? "true" : "false")); }
    template <std::integral T>
    KeyValues& add(std::string key, T value) {
        return add(std::move(key), std::to_string(value));
    }

    std::optional<std::string> get(std::string_view key) const {
        for (const auto& [k, v] : entries_)
            if (k == key) return v;
        return std::nullopt;
    }

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

    void write(std::ostream& out) const {
        for (const auto& [k, v] : entries_) out << k << '=' << v << '\n';
    }

    static KeyValues read(std::istream& in) {
        KeyValues kv;
        std::string line;
        while (std::getline(in, line)) {
            const std::string t = trim(line);
            if (t.empty() || t.front() == '#') continue;
            const auto eq = t.find('=');
            if (eq == std::string::npos) throw FormatError("expected key=value: " + t);
            kv.add(trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
        }
        return kv;
    }

private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    out << text;
    if (!out) throw ValidationError("write failed: " + path);
}

inline void write_key_values(const std::string& path, const KeyValues& kv) {
    std::ostringstream s;
    kv.write(s);
    write_text(path, s.str());
}

inline KeyValues read_key_values(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open: " + path);
    return KeyValues::read(in);
}

inline KeyValues chain_metadata(const PosteriorChain& chain) {
    KeyValues kv;
    kv.add("sampler", chain.sampler)
        .add("seed", chain.seed)
        .add("tune", chain.tune ? format_double(*chain.tune) : std::string("none"))
        .add("burn_in", chain.burn_in)
        .add("n_samples", chain.n_samples)
        .add("retained", static_cast<long long>(chain.rows()))
        .add("accepted", chain.accepted)
        .add("proposals", chain.proposals)
        .add("acceptance_rate", chain.acceptance_rate())
        .add("chains", chain.chains)
        .add("lazy", chain.lazy)
        .add("dim", chain.dim)
        .add("mode", to_string(chain.mode))
        .add("gimbal_lock_states", chain.gimbal_lock_states);
    return kv;
}

inline void write_chain(std::ostream& out, const PosteriorChain& chain) {
    out << "iter";
    for (const auto& c : chain.columns) out << ',' << c;
    out << '\n';
    for (Eigen::Index r = 0; r < chain.rows(); ++r) {
        out << chain.iterations[static_cast<std::size_t>(r)];
        for (Eigen::Index j = 0; j < chain.samples.cols(); ++j) out << ',' << format_double(chain.samples(r, j));
        out << '\n';
    }
}

inline std::string meta_path(const std::string& chain_path) { return chain_path + ".meta"; }

/// Writes the chain CSV and its .meta sidecar.
inline void write_chain(const std::string& path, const PosteriorChain& chain, const KeyValues& extra = {}) {
    std::ostringstream csv;
    write_chain(csv, chain);
    write_text(path, csv.str());
    KeyValues meta = chain_metadata(chain);
    for (const auto& [k, v] : extra.entries()) meta.add(k, v);
    write_key_values(meta_path(path), meta);
}

inline PosteriorChain read_chain(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw FormatError("chain file is empty");
    const std::string header = trim(line);
    const auto head = split_csv(header);
    if (head.empty() || trim(head[0]) != "iter") throw FormatError("chain header must start with 'iter'");
    PosteriorChain chain;
    for (std::size_t i = 1; i < head.size(); ++i) chain.columns.push_back(trim(head[i]));
    if (chain.columns.empty() || chain.columns.back() != "sigma") throw FormatError("chain header must end with 'sigma'");
    bool per_object = false, three_d = false;
    for (const auto& c : chain.columns) {
        if (c.find('_') != std::string::npos) per_object = true;
        if (c == "c3" || c.rfind("c3_", 0) == 0) three_d = true;
    }
    chain.dim = three_d ? 3 : 2;
    chain.mode = per_object ? TransformMode::per_object : TransformMode::shared;
    if (!per_object && chain.columns != chain_columns(chain.dim, TransformMode::shared))
        throw FormatError("unrecognised chain columns");

    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto f = split_csv(t);
        if (f.size() != chain.columns.size() + 1) throw FormatError("chain row has the wrong number of fields");
        chain.iterations.push_back(static_cast<int>(parse_int(f[0])));
        std::vector<double> r;
        for (std::size_t i = 1; i < f.size(); ++i) r.push_back(parse_double(f[i]));
        rows.push_back(std::move(r));
    }
    chain.samples.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(chain.columns.size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t j = 0; j < rows[r].size(); ++j) chain.samples(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = rows[r][j];
    return chain;
}

/// Reads a chain CSV and, when present, its .meta sidecar.
inline PosteriorChain read_chain(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open: " + path);
    PosteriorChain chain = read_chain(in);
    std::ifstream meta_in(meta_path(path), std::ios::binary);
    if (meta_in) {
        const auto meta = KeyValues::read(meta_in);
        if (auto v = meta.get("sampler")) chain.sampler = *v;
        if (auto v = meta.get("seed")) chain.seed = static_cast<std::uint64_t>(std::stoull(*v));
        if (auto v = meta.get("tune"); v && *v != "none") chain.tune = parse_double(*v);
        if (auto v = meta.get("burn_in")) chain.burn_in = static_cast<int>(parse_int(*v));
        if (auto v = meta.get("n_samples")) chain.n_samples = static_cast<int>(parse_int(*v));
        if (auto v = meta.get("accepted")) chain.accepted = parse_int(*v);
        if (auto v = meta.get("proposals")) chain.proposals = parse_int(*v);
        if (auto v = meta.get("chains")) chain.chains = static_cast<int>(parse_int(*v));
        if (auto v = meta.get("lazy")) chain.lazy = *v == "true";
        if (auto v = meta.get("mode"); v && *v == "variance-only") chain.mode = TransformMode::variance_only;
        if (auto v = meta.get("gimbal_lock_states")) chain.gimbal_lock_states = parse_int(*v);
    }
    return chain;
}

/// x,y,density rows; y is 0 for a single-column grid.
inline void write_density(std::ostream& out, const DensityGrid& grid) {
    out << "x,y,density\n";
    for (std::size_t iy = 0; iy < grid.ys.size(); ++iy)
        for (std::size_t ix = 0; ix < grid.xs.size(); ++ix)
            out << format_double(grid.xs[ix]) << ',' << format_double(grid.ys[iy]) << ','
                << format_double(grid.density(static_cast<Eigen::Index>(iy), static_cast<Eigen::Index>(ix))) << '\n';
}

inline void write_density(const std::string& path, const DensityGrid& grid) {
    std::ostringstream s;
    write_density(s, grid);
    write_text(path, s.str());
}

/// One real per line (blank lines and a non-numeric first line are skipped).
inline std::vector<double> read_values(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open: " + path);
    std::vector<double> out;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (t.empty()) continue;
        try {
            out.push_back(parse_double(t));
        } catch (const FormatError&) {
            if (!first) throw;
        }
        first = false;
    }
    return out;
}

}  // namespace bpa::io
