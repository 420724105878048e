#pragma once

// Serialization: field tables, key-value manifests, line-delimited records.
// All writes are atomic (temp file + rename) and all floats round-trip exactly
// through 17 significant digits.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cll/error.hpp"
#include "cll/grid.hpp"

namespace cll::io {

inline std::string format_float(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.16e", v);
    return buf;
}

inline std::string format_int(long long v) { return std::to_string(v); }

inline void atomic_write_text(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::path dir = path.parent_path();
    if (!dir.empty()) std::filesystem::create_directories(dir);
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw ValidationError("atomic_write_text: cannot open " + tmp.string());
        out << content;
        if (!out)
            throw ValidationError("atomic_write_text: short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ValidationError("read_text: cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---- field tables ------------------------------------------------------------
//
// Header `i,j,x,y,re,im,mask`, one row per node in row-major order (x fastest).

inline void write_field_csv(const std::filesystem::path& path, const ComplexField& f) {
    const GridDomain& d = f.domain;
    std::string out;
    out.reserve(d.size() * 96 + 32);
    out += "i,j,x,y,re,im,mask\n";
    for (int j = 0; j < d.ny; ++j) {
        for (int i = 0; i < d.nx; ++i) {
            std::size_t n = d.index(i, j);
            out += std::to_string(i);
            out += ',';
            out += std::to_string(j);
            out += ',';
            out += format_float(d.x(i));
            out += ',';
            out += format_float(d.y(j));
            out += ',';
            out += format_float(f.values[n].real());
            out += ',';
            out += format_float(f.values[n].imag());
            out += ',';
            out += (f.masked(n) ? '1' : '0');
            out += '\n';
        }
    }
    atomic_write_text(path, out);
}

namespace detail {
inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            parts.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    parts.push_back(cur);
    return parts;
}
} // namespace detail

// Reads a field table onto a known domain; row count, indices, and node
// coordinates must all agree or the read is rejected.
inline ComplexField read_field_csv(const std::filesystem::path& path, const GridDomain& d) {
    std::ifstream in(path);
    if (!in)
        throw ValidationError("read_field_csv: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || detail::split_csv(line) !=
        std::vector<std::string>{"i", "j", "x", "y", "re", "im", "mask"})
        throw ValidationError("read_field_csv: bad header in " + path.string());
    ComplexField f(d);
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto parts = detail::split_csv(line);
        if (parts.size() != 7)
            throw ValidationError("read_field_csv: malformed row in " + path.string());
        int i = std::atoi(parts[0].c_str());
        int j = std::atoi(parts[1].c_str());
        if (i < 0 || i >= d.nx || j < 0 || j >= d.ny)
            throw ValidationError("read_field_csv: node index out of range in " + path.string());
        double x = std::strtod(parts[2].c_str(), nullptr);
        double y = std::strtod(parts[3].c_str(), nullptr);
        if (std::abs(x - d.x(i)) > 1e-12 * (1.0 + std::abs(d.x(i))) ||
            std::abs(y - d.y(j)) > 1e-12 * (1.0 + std::abs(d.y(j))))
            throw ValidationError("read_field_csv: node coordinates disagree with domain in " +
                                  path.string());
        f.at(i, j) = cd(std::strtod(parts[4].c_str(), nullptr),
                        std::strtod(parts[5].c_str(), nullptr));
        if (parts[6] == "1") f.mask_node(i, j);
        ++rows;
    }
    if (rows != d.size())
        throw ValidationError("read_field_csv: row count mismatch in " + path.string() + " (got " +
                              std::to_string(rows) + ", domain has " + std::to_string(d.size()) +
                              " nodes)");
    return f;
}

// ---- manifests ----------------------------------------------------------------
//
// Order-preserving `key = value` text; '#' starts a comment, blank lines skipped.

using Manifest = std::vector<std::pair<std::string, std::string>>;

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline void manifest_set(Manifest& m, const std::string& key, const std::string& value) {
    for (auto& kv : m)
        if (kv.first == key) {
            kv.second = value;
            return;
        }
    m.emplace_back(key, value);
}

inline const std::string* manifest_find(const Manifest& m, const std::string& key) {
    for (const auto& kv : m)
        if (kv.first == key) return &kv.second;
    return nullptr;
}

inline Manifest parse_kv_text(const std::string& text, const std::string& origin) {
    Manifest m;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        std::size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) +
                              ": expected `key = value`, got `" + s + "`");
        std::string key = trim(s.substr(0, eq));
        std::string value = trim(s.substr(eq + 1));
        if (key.empty())
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        manifest_set(m, key, value);
    }
    return m;
}

inline void write_manifest(const std::filesystem::path& path, const Manifest& m) {
    std::string out;
    for (const auto& kv : m) {
        out += kv.first;
        out += " = ";
        out += kv.second;
        out += '\n';
    }
    atomic_write_text(path, out);
}

inline Manifest read_manifest(const std::filesystem::path& path) {
    return parse_kv_text(read_text(path), path.string());
}

// ---- domain <-> manifest -------------------------------------------------------

inline void put_domain(Manifest& m, const GridDomain& d, const std::string& prefix = "domain.") {
    manifest_set(m, prefix + "nx", std::to_string(d.nx));
    manifest_set(m, prefix + "ny", std::to_string(d.ny));
    manifest_set(m, prefix + "periodic_x", d.periodic_x() ? "true" : "false");
    if (d.periodic_x()) {
        manifest_set(m, prefix + "x_period", format_float(d.x_period));
    } else {
        manifest_set(m, prefix + "x_min", format_float(d.x_min));
        manifest_set(m, prefix + "x_max", format_float(d.x_max));
    }
    manifest_set(m, prefix + "y_min", format_float(d.y_min));
    manifest_set(m, prefix + "y_max", format_float(d.y_max));
}

inline GridDomain get_domain(const Manifest& m, const std::string& prefix = "domain.") {
    auto need = [&](const std::string& key) -> const std::string& {
        const std::string* v = manifest_find(m, prefix + key);
        if (!v) throw ConfigError("manifest: missing key " + prefix + key);
        return *v;
    };
    int nx = std::atoi(need("nx").c_str());
    int ny = std::atoi(need("ny").c_str());
    double y_min = std::strtod(need("y_min").c_str(), nullptr);
    double y_max = std::strtod(need("y_max").c_str(), nullptr);
    if (need("periodic_x") == "true") {
        double period = std::strtod(need("x_period").c_str(), nullptr);
        return make_domain(nx, ny, period, y_min, y_max);
    }
    double x_min = std::strtod(need("x_min").c_str(), nullptr);
    double x_max = std::strtod(need("x_max").c_str(), nullptr);
    return make_rect_domain(nx, ny, x_min, x_max, y_min, y_max);
}

// ---- line-delimited records ------------------------------------------------------
//
// One record per line, space-separated `key=value` pairs, e.g.
//   iter=3 residual=4.8514968734e-07

inline std::string record_line(const std::vector<std::pair<std::string, std::string>>& fields) {
    std::string out;
    for (std::size_t k = 0; k < fields.size(); ++k) {
        if (k) out += ' ';
        out += fields[k].first;
        out += '=';
        out += fields[k].second;
    }
    return out;
}

inline void write_records(const std::filesystem::path& path, const std::vector<std::string>& lines) {
    std::string out;
    for (const auto& l : lines) {
        out += l;
        out += '\n';
    }
    atomic_write_text(path, out);
}

} // namespace cll::io
