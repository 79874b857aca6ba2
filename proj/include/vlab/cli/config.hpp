#pragma once

// Flat `key = value` configuration files with typed schemas.
//
//   # comment
//   seed = 3
//   [optimizer]          # following keys become optimizer.<key>
//   rho = 0.05
//
// Precedence when resolving: override (flag / --set) > file > schema default.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vlab/error.hpp"

namespace vlab::cli {

enum class KeyType { Int, UInt, Double, Bool, String, DoubleList, IntList };

inline std::string to_string(KeyType t) {
    switch (t) {
        case KeyType::Int: return "integer";
        case KeyType::UInt: return "non-negative integer";
        case KeyType::Double: return "number";
        case KeyType::Bool: return "boolean";
        case KeyType::String: return "string";
        case KeyType::DoubleList: return "list of numbers";
        case KeyType::IntList: return "list of integers";
    }
    return "unknown";
}

struct KeySpec {
    std::string name;
    KeyType type = KeyType::Double;
    std::string default_value;
    std::string help;
    bool runtime_only = false;  ///< excluded from data artifacts (threads, out)
};

struct RawEntry {
    std::string value;
    std::size_t line = 0;
};

struct RawConfig {
    std::string source;
    std::map<std::string, RawEntry> entries;
};

struct Violation {
    std::string key;
    std::size_t line = 0;  ///< 0 when the value did not come from a file
    std::string message;

    std::string describe() const {
        std::string s;
        if (line) s += "line " + std::to_string(line) + ": ";
        if (!key.empty()) s += key + ": ";
        return s + message;
    }
};

namespace detail {

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return std::string(s.substr(b, e - b));
}

inline bool valid_key(std::string_view k) {
    if (k.empty()) return false;
    return std::all_of(k.begin(), k.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
               c == '.' || c == '-';
    });
}

inline std::optional<double> parse_double(std::string_view s) {
    const std::string t = trim(s);
    if (t == "inf" || t == "+inf" || t == "infinity") return std::numeric_limits<double>::infinity();
    if (t.empty()) return std::nullopt;
    const char* first = t.data();
    if (*first == '+') ++first;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size() || std::isnan(v)) return std::nullopt;
    return v;
}

inline std::optional<std::int64_t> parse_int(std::string_view s) {
    const std::string t = trim(s);
    if (t.empty()) return std::nullopt;
    const char* first = t.data();
    if (*first == '+') ++first;
    std::int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size()) return std::nullopt;
    return v;
}

inline std::optional<std::uint64_t> parse_uint(std::string_view s) {
    const std::string t = trim(s);
    if (t.empty() || t[0] == '-') return std::nullopt;
    const char* first = t.data();
    if (*first == '+') ++first;
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size()) return std::nullopt;
    return v;
}

inline std::optional<bool> parse_bool(std::string_view s) {
    const std::string t = trim(s);
    if (t == "true" || t == "yes" || t == "on" || t == "1") return true;
    if (t == "false" || t == "no" || t == "off" || t == "0") return false;
    return std::nullopt;
}

inline std::vector<std::string> split_list(std::string_view s) {
    std::vector<std::string> out;
    std::string t = trim(s);
    if (t.size() >= 2 && t.front() == '[' && t.back() == ']') t = t.substr(1, t.size() - 2);
    if (trim(t).empty()) return out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = t.find(',', start);
        out.push_back(trim(std::string_view(t).substr(start, comma - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

inline std::string unquote(const std::string& v) {
    if (v.size() >= 2 && ((v.front() == '"' && v.back() == '"') || (v.front() == '\'' && v.back() == '\'')))
        return v.substr(1, v.size() - 2);
    return v;
}

/// Checks that `value` parses as `type`; returns an error message or empty.
inline std::string type_error(KeyType type, const std::string& value) {
    switch (type) {
        case KeyType::Int:
            if (!parse_int(value)) return "expected an integer, got '" + value + "'";
            break;
        case KeyType::UInt:
            if (!parse_uint(value)) return "expected a non-negative integer, got '" + value + "'";
            break;
        case KeyType::Double:
            if (!parse_double(value)) return "expected a number, got '" + value + "'";
            break;
        case KeyType::Bool:
            if (!parse_bool(value)) return "expected true or false, got '" + value + "'";
            break;
        case KeyType::String: break;
        case KeyType::DoubleList: {
            const auto items = split_list(value);
            if (items.empty()) return "expected a non-empty comma-separated list of numbers";
            for (const auto& it : items)
                if (!parse_double(it)) return "list item '" + it + "' is not a number";
            break;
        }
        case KeyType::IntList: {
            const auto items = split_list(value);
            if (items.empty()) return "expected a non-empty comma-separated list of integers";
            for (const auto& it : items)
                if (!parse_int(it)) return "list item '" + it + "' is not an integer";
            break;
        }
    }
    return {};
}

}  // namespace detail

/// Parses config text. Throws ParseError (with the line number) on malformed
/// lines or duplicate keys; unknown keys are only detected on resolution.
inline RawConfig parse_config_text(std::string_view text, std::string source = "<text>") {
    RawConfig cfg;
    cfg.source = std::move(source);
    std::string section;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t nl = text.find('\n', pos);
        std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        // Strip comments outside quotes.
        std::string line;
        char quote = 0;
        for (const char c : raw) {
            if (quote) {
                if (c == quote) quote = 0;
            } else if (c == '"' || c == '\'') {
                quote = c;
            } else if (c == '#') {
                break;
            }
            line.push_back(c);
        }
        if (quote) throw ParseError("unterminated quoted value", line_no);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ParseError("malformed section header '" + line + "'", line_no);
            section = detail::trim(std::string_view(line).substr(1, line.size() - 2));
            if (!section.empty() && !detail::valid_key(section))
                throw ParseError("invalid section name '" + section + "'", line_no);
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw ParseError("expected 'key = value', got '" + line + "'", line_no);
        std::string key = detail::trim(std::string_view(line).substr(0, eq));
        std::string value = detail::unquote(detail::trim(std::string_view(line).substr(eq + 1)));
        if (!detail::valid_key(key)) throw ParseError("invalid key '" + key + "'", line_no);
        if (!section.empty()) key = section + "." + key;
        if (cfg.entries.count(key))
            throw ParseError("duplicate key '" + key + "' (first set on line " +
                                 std::to_string(cfg.entries[key].line) + ")",
                             line_no);
        cfg.entries[key] = {std::move(value), line_no};
    }
    return cfg;
}

inline RawConfig parse_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open config file '" + path + "'", 0);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path);
}

/// Splits "key=value" as given to --set.
inline std::pair<std::string, std::string> parse_assignment(const std::string& s) {
    const std::size_t eq = s.find('=');
    if (eq == std::string::npos) throw ParseError("expected key=value, got '" + s + "'", 0);
    std::string key = detail::trim(std::string_view(s).substr(0, eq));
    if (!detail::valid_key(key)) throw ParseError("invalid key '" + key + "'", 0);
    return {key, detail::unquote(detail::trim(std::string_view(s).substr(eq + 1)))};
}

struct ResolvedEntry {
    const KeySpec* spec = nullptr;
    std::string value;
    std::string origin;  ///< default | file | flag
    std::size_t line = 0;
};

/// Every schema key with its winning value. Typed getters assume the entry
/// passed type checking during resolution.
class ResolvedConfig {
public:
    std::string experiment;
    std::vector<ResolvedEntry> entries;  ///< schema order

    const ResolvedEntry& entry(const std::string& key) const {
        for (const auto& e : entries)
            if (e.spec->name == key) return e;
        throw ContractError("config has no key '" + key + "'");
    }

    bool has(const std::string& key) const {
        return std::any_of(entries.begin(), entries.end(), [&](const auto& e) { return e.spec->name == key; });
    }

    const std::string& raw(const std::string& key) const { return entry(key).value; }
    double get_double(const std::string& key) const { return *detail::parse_double(raw(key)); }
    std::int64_t get_int(const std::string& key) const { return *detail::parse_int(raw(key)); }
    std::uint64_t get_uint(const std::string& key) const { return *detail::parse_uint(raw(key)); }
    bool get_bool(const std::string& key) const { return *detail::parse_bool(raw(key)); }
    std::string get_string(const std::string& key) const { return raw(key); }

    std::vector<double> get_doubles(const std::string& key) const {
        std::vector<double> out;
        for (const auto& s : detail::split_list(raw(key))) out.push_back(*detail::parse_double(s));
        return out;
    }

    std::vector<std::int64_t> get_ints(const std::string& key) const {
        std::vector<std::int64_t> out;
        for (const auto& s : detail::split_list(raw(key))) out.push_back(*detail::parse_int(s));
        return out;
    }

    /// Typed JSON view. Runtime-only keys (threads, out) are skipped unless asked for.
    nlohmann::ordered_json to_json(bool include_runtime = false) const {
        nlohmann::ordered_json j;
        j["experiment"] = experiment;
        for (const auto& e : entries) {
            if (e.spec->runtime_only && !include_runtime) continue;
            const std::string& k = e.spec->name;
            switch (e.spec->type) {
                case KeyType::Int: j[k] = get_int(k); break;
                case KeyType::UInt: j[k] = get_uint(k); break;
                case KeyType::Double: {
                    const double v = get_double(k);
                    if (std::isfinite(v)) j[k] = v;
                    else j[k] = v > 0 ? "inf" : "-inf";
                    break;
                }
                case KeyType::Bool: j[k] = get_bool(k); break;
                case KeyType::String: j[k] = e.value; break;
                case KeyType::DoubleList: {
                    auto arr = nlohmann::ordered_json::array();
                    for (const double v : get_doubles(k)) arr.push_back(v);
                    j[k] = arr;
                    break;
                }
                case KeyType::IntList: {
                    auto arr = nlohmann::ordered_json::array();
                    for (const auto v : get_ints(k)) arr.push_back(v);
                    j[k] = arr;
                    break;
                }
            }
        }
        return j;
    }

    /// `key = value` text that parses back to the same configuration.
    std::string to_text(bool include_runtime = true) const {
        std::string s = "experiment = " + experiment + "\n";
        for (const auto& e : entries) {
            if (e.spec->runtime_only && !include_runtime) continue;
            s += e.spec->name + " = " + e.value + "\n";
        }
        return s;
    }
};

struct Resolution {
    ResolvedConfig config;
    std::vector<Violation> violations;
    bool ok() const noexcept { return violations.empty(); }
};

/// Merges defaults, file entries and overrides under `schema`. Unknown keys and
/// type errors become violations; nothing throws.
inline Resolution resolve(const std::string& experiment, const std::vector<KeySpec>& schema, const RawConfig& file,
                          const std::vector<std::pair<std::string, std::string>>& overrides) {
    Resolution r;
    r.config.experiment = experiment;
    std::map<std::string, std::size_t> index;
    for (const auto& k : schema) {
        index[k.name] = r.config.entries.size();
        r.config.entries.push_back({&k, k.default_value, "default", 0});
    }
    for (const auto& [key, raw] : file.entries) {
        if (key == "experiment") {
            if (raw.value != experiment)
                r.violations.push_back({key, raw.line, "file is for experiment '" + raw.value + "', not '" + experiment + "'"});
            continue;
        }
        const auto it = index.find(key);
        if (it == index.end()) {
            r.violations.push_back({key, raw.line, "unknown key for experiment '" + experiment + "'"});
            continue;
        }
        auto& e = r.config.entries[it->second];
        e.value = raw.value;
        e.origin = "file";
        e.line = raw.line;
    }
    for (const auto& [key, value] : overrides) {
        const auto it = index.find(key);
        if (it == index.end()) {
            r.violations.push_back({key, 0, "unknown key for experiment '" + experiment + "' (from command line)"});
            continue;
        }
        auto& e = r.config.entries[it->second];
        e.value = value;
        e.origin = "flag";
        e.line = 0;
    }
    for (const auto& e : r.config.entries) {
        const std::string err = detail::type_error(e.spec->type, e.value);
        if (!err.empty()) r.violations.push_back({e.spec->name, e.line, err});
    }
    return r;
}

/// Collects semantic violations against a resolved, type-checked config.
class Checker {
public:
    Checker(const ResolvedConfig& cfg, std::vector<Violation>& out) : cfg_(cfg), out_(out) {}

    void require(bool cond, const std::string& key, const std::string& message) {
        if (!cond) out_.push_back({key, cfg_.has(key) ? cfg_.entry(key).line : 0, message});
    }

    void positive(const std::string& key) { require(cfg_.get_double(key) > 0.0, key, "must be > 0"); }
    void non_negative(const std::string& key) { require(cfg_.get_double(key) >= 0.0, key, "must be >= 0"); }
    void finite(const std::string& key) { require(std::isfinite(cfg_.get_double(key)), key, "must be finite"); }
    void at_least(const std::string& key, std::int64_t lo) {
        require(cfg_.get_int(key) >= lo, key, "must be >= " + std::to_string(lo));
    }
    void one_of(const std::string& key, const std::vector<std::string>& options) {
        const std::string v = cfg_.get_string(key);
        if (std::find(options.begin(), options.end(), v) != options.end()) return;
        std::string all;
        for (const auto& o : options) all += (all.empty() ? "" : ", ") + o;
        require(false, key, "must be one of " + all + " (got '" + v + "')");
    }
    void all_positive(const std::string& key) {
        const auto v = cfg_.get_doubles(key);
        require(std::all_of(v.begin(), v.end(), [](double x) { return x > 0.0 && std::isfinite(x); }), key,
                "every entry must be finite and > 0");
    }
    void all_non_negative(const std::string& key) {
        const auto v = cfg_.get_doubles(key);
        require(std::all_of(v.begin(), v.end(), [](double x) { return x >= 0.0 && std::isfinite(x); }), key,
                "every entry must be finite and >= 0");
    }
    void all_at_least(const std::string& key, std::int64_t lo) {
        const auto v = cfg_.get_ints(key);
        require(std::all_of(v.begin(), v.end(), [&](auto x) { return x >= lo; }), key,
                "every entry must be >= " + std::to_string(lo));
    }

    const ResolvedConfig& config() const { return cfg_; }

private:
    const ResolvedConfig& cfg_;
    std::vector<Violation>& out_;
};

}  // namespace vlab::cli
