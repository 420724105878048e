#pragma once

// Typed access over flat `key = value` config text with dotted section keys.
// The raw text is kept so report bundles can embed a verbatim copy.

#include <cstdlib>
#include <set>
#include <string>
#include <vector>

#include "cll/error.hpp"
#include "cll/expr.hpp"
#include "cll/grid.hpp"
#include "cll/io.hpp"

namespace cll {

class Config {
public:
    static Config from_text(const std::string& text, const std::string& origin) {
        Config c;
        c.entries_ = io::parse_kv_text(text, origin);
        c.raw_text_ = text;
        c.origin_ = origin;
        return c;
    }

    static Config from_file(const std::string& path) {
        return from_text(io::read_text(path), path);
    }

    bool has(const std::string& key) const { return io::manifest_find(entries_, key) != nullptr; }

    std::string get_string(const std::string& key) const {
        const std::string* v = io::manifest_find(entries_, key);
        if (!v) throw ConfigError(origin_ + ": missing required key `" + key + "`");
        consumed_.insert(key);
        return *v;
    }
    std::string get_string(const std::string& key, const std::string& fallback) const {
        return has(key) ? get_string(key) : fallback;
    }

    double get_double(const std::string& key) const {
        return parse_double(key, get_string(key));
    }
    double get_double(const std::string& key, double fallback) const {
        return has(key) ? get_double(key) : fallback;
    }

    long long get_int(const std::string& key) const {
        std::string s = get_string(key);
        char* end = nullptr;
        long long v = std::strtoll(s.c_str(), &end, 10);
        if (end == s.c_str() || *end != '\0')
            throw ConfigError(origin_ + ": key `" + key + "` is not an integer: `" + s + "`");
        return v;
    }
    long long get_int(const std::string& key, long long fallback) const {
        return has(key) ? get_int(key) : fallback;
    }

    bool get_bool(const std::string& key) const {
        std::string s = get_string(key);
        if (s == "true" || s == "1" || s == "yes") return true;
        if (s == "false" || s == "0" || s == "no") return false;
        throw ConfigError(origin_ + ": key `" + key + "` is not a boolean: `" + s + "`");
    }
    bool get_bool(const std::string& key, bool fallback) const {
        return has(key) ? get_bool(key) : fallback;
    }

    // Comma- or space-separated list of floats (sweep schedules).
    std::vector<double> get_double_list(const std::string& key) const {
        std::string s = get_string(key);
        std::vector<double> out;
        std::string cur;
        auto flush = [&]() {
            if (cur.empty()) return;
            out.push_back(parse_double(key, cur));
            cur.clear();
        };
        for (char c : s) {
            if (c == ',' || c == ' ' || c == '\t')
                flush();
            else
                cur += c;
        }
        flush();
        if (out.empty())
            throw ConfigError(origin_ + ": key `" + key + "` holds an empty list");
        return out;
    }

    Expression get_expression(const std::string& key) const {
        return parse_expression(get_string(key));
    }

    // domain.nx / domain.ny / domain.periodic_x + either domain.x_period or
    // domain.x_min,x_max, plus domain.y_min,y_max; same keys a bundle manifest uses.
    GridDomain get_domain(const std::string& prefix = "domain.") const {
        for (const auto& kv : entries_)
            if (kv.first.rfind(prefix, 0) == 0) consumed_.insert(kv.first);
        return io::get_domain(entries_, prefix);
    }

    // Keys present in the file but never read; surfaced as a typo guard.
    std::vector<std::string> unread_keys() const {
        std::vector<std::string> out;
        for (const auto& kv : entries_)
            if (!consumed_.count(kv.first)) out.push_back(kv.first);
        return out;
    }

    const std::string& raw_text() const { return raw_text_; }
    const std::string& origin() const { return origin_; }
    const io::Manifest& entries() const { return entries_; }

private:
    double parse_double(const std::string& key, const std::string& s) const {
        char* end = nullptr;
        double v = std::strtod(s.c_str(), &end);
        if (end == s.c_str() || *end != '\0')
            throw ConfigError(origin_ + ": key `" + key + "` is not a number: `" + s + "`");
        return v;
    }

    io::Manifest entries_;
    std::string raw_text_;
    std::string origin_ = "<config>";
    mutable std::set<std::string> consumed_;
};

} // namespace cll
