#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vlab/diagnostics.hpp"
#include "vlab/error.hpp"
#include "vlab/io/csv.hpp"

namespace vlab::cli {

struct Artifact {
    std::string file;  ///< relative to the output directory
    std::string kind;  ///< csv | json | jsonl
    std::string description;
};

/// Writes artifacts into one directory and remembers what was written.
class ArtifactWriter {
public:
    explicit ArtifactWriter(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::error_code ec;
        std::filesystem::create_directories(dir_, ec);
        if (ec) throw Error("cannot create output directory '" + dir_.string() + "': " + ec.message());
    }

    const std::filesystem::path& dir() const noexcept { return dir_; }
    const std::vector<Artifact>& artifacts() const noexcept { return artifacts_; }

    void csv(const std::string& name, const std::vector<std::string>& header,
             const std::vector<std::vector<std::string>>& rows, const std::string& description) {
        std::ofstream out = open(name);
        out << csv::join(header) << '\n';
        for (const auto& r : rows) {
            if (r.size() != header.size())
                throw ContractError("csv '" + name + "': row width does not match the header");
            out << csv::join(r) << '\n';
        }
        finish(out, name, "csv", description);
    }

    void json(const std::string& name, const nlohmann::ordered_json& j, const std::string& description) {
        std::ofstream out = open(name);
        out << j.dump(2) << '\n';
        finish(out, name, "json", description);
    }

    TrajectoryRecord jsonl(const std::string& name, const nlohmann::ordered_json& meta,
                           const std::string& description) {
        TrajectoryRecord rec((dir_ / name).string(), meta);
        artifacts_.push_back({name, "jsonl", description});
        return rec;
    }

private:
    std::ofstream open(const std::string& name) const {
        std::ofstream out(dir_ / name, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write '" + (dir_ / name).string() + "'");
        return out;
    }

    void finish(std::ofstream& out, const std::string& name, const std::string& kind, const std::string& description) {
        out.flush();
        if (!out) throw Error("write failed for '" + (dir_ / name).string() + "'");
        artifacts_.push_back({name, kind, description});
    }

    std::filesystem::path dir_;
    std::vector<Artifact> artifacts_;
};

inline std::string fmt(double v) { return csv::format_double(v); }
inline std::string fmt(std::optional<double> v) { return v ? csv::format_double(*v) : std::string(); }
inline std::string fmt_int(long long v) { return std::to_string(v); }

/// JSON number, or a string for non-finite values.
inline nlohmann::ordered_json jnum(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

}  // namespace vlab::cli
