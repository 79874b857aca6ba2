#pragma once

#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include "vlab/error.hpp"

namespace vlab::csv {

/// Splits one CSV record. Quoted fields may contain commas and doubled quotes;
/// records spanning several lines are not supported.
inline std::vector<std::string> split_record(std::string_view line, std::size_t line_no = 0) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    bool field_was_quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"' && cur.empty() && !field_was_quoted) {
            quoted = true;
            field_was_quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
            field_was_quoted = false;
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    if (quoted) throw ParseError("unterminated quoted field", line_no);
    fields.push_back(std::move(cur));
    return fields;
}

inline std::string escape(std::string_view field) {
    if (field.find_first_of(",\"\n") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (const char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

/// Round-trip exact decimal form of a double (17 significant digits).
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string join(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out.push_back(',');
        out += escape(fields[i]);
    }
    return out;
}

}  // namespace vlab::csv
