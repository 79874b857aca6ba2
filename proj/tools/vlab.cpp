// vlab: command-line front end for the experiment suite.
//
//   vlab <experiment> [--config FILE] [--set key=value]... [--seed N] [--threads N] [--out DIR]
//   vlab run FILE [same overrides]          (experiment named by the file's `experiment` key)
//   vlab validate [--experiment NAME] [--config FILE] [--set ...]
//   vlab keys <experiment>
//
// Exit codes: 0 success, 1 configuration error, 2 runtime error.

#include <CLI11.hpp>

#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "vlab/cli/config.hpp"
#include "vlab/cli/experiments.hpp"
#include "vlab/error.hpp"
#include "vlab/version.hpp"

namespace {

using namespace vlab;
using namespace vlab::cli;

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct Overrides {
    std::string config_path;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::optional<std::uint64_t> threads;
    std::optional<std::string> out;

    void attach(CLI::App* app, bool config_option = true) {
        if (config_option) app->add_option("-c,--config", config_path, "config file (key = value)");
        app->add_option("--set", sets, "override one key: key=value (repeatable)");
        app->add_option("--seed", seed, "master seed");
        app->add_option("--threads", threads, "worker threads (0 = all cores)");
        app->add_option("--out", out, "output directory");
    }

    std::vector<std::pair<std::string, std::string>> pairs() const {
        std::vector<std::pair<std::string, std::string>> p;
        for (const auto& s : sets) p.push_back(parse_assignment(s));
        if (seed) p.emplace_back("seed", std::to_string(*seed));
        if (threads) p.emplace_back("threads", std::to_string(*threads));
        if (out) p.emplace_back("out", *out);
        return p;
    }
};

void print_violations(std::ostream& os, const std::string& source, const std::vector<Violation>& v) {
    for (const auto& x : v) os << source << ": " << x.describe() << "\n";
}

void print_resolved(std::ostream& os, const ResolvedConfig& c) {
    os << "experiment = " << c.experiment << "\n";
    std::size_t width = 0;
    for (const auto& e : c.entries) width = std::max(width, e.spec->name.size());
    for (const auto& e : c.entries) {
        os << std::left << std::setw(static_cast<int>(width)) << e.spec->name << " = " << e.value;
        os << "    # " << e.origin;
        if (e.line) os << " (line " << e.line << ")";
        os << "\n";
    }
}

std::string keys_help(const Experiment& e) {
    std::ostringstream os;
    os << "\nKeys (use in the config file or with --set key=value):\n";
    for (const auto& k : e.keys)
        os << "  " << std::left << std::setw(26) << k.name << " " << std::setw(20) << to_string(k.type) << " default '"
           << k.default_value << "'  " << k.help << "\n";
    return os.str();
}

RawConfig load(const std::string& path) { return path.empty() ? RawConfig{} : parse_config_file(path); }

int run_resolved(const Experiment& exp, const RawConfig& file, const Overrides& ov, const std::string& source) {
    Resolution r = resolve_and_check(exp, file, ov.pairs());
    if (!r.ok()) {
        print_violations(std::cerr, source, r.violations);
        return kExitConfig;
    }
    try {
        const RunOutcome o = execute(exp, r.config, std::cout);
        std::cout << "wrote " << o.artifacts.size() << " artifact(s) and manifest.json to " << o.out_dir.string()
                  << " in " << o.wall_clock_seconds << " s\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vlab: variational gradient descent and edge-of-stability laboratory"};
    app.set_version_flag("--version", std::string(vlab::kVersion));
    app.require_subcommand(1);

    struct ExpCmd {
        const Experiment* exp;
        CLI::App* cmd;
        Overrides ov;
    };
    std::vector<ExpCmd> cmds;
    cmds.reserve(experiments().size());
    for (const auto& e : experiments()) {
        cmds.push_back({&e, app.add_subcommand(e.name, e.help), {}});
        cmds.back().cmd->footer(keys_help(e));
    }
    for (auto& c : cmds) c.ov.attach(c.cmd);

    Overrides run_ov;
    std::string run_file;
    CLI::App* run = app.add_subcommand("run", "run the experiment named by a config file's `experiment` key");
    run->add_option("config", run_file, "config file")->required();
    run_ov.attach(run, false);

    Overrides val_ov;
    std::string val_exp;
    CLI::App* validate = app.add_subcommand("validate", "check a configuration without running it");
    validate->add_option("-e,--experiment", val_exp, "experiment (defaults to the file's `experiment` key)");
    val_ov.attach(validate);

    std::string keys_exp;
    CLI::App* keys = app.add_subcommand("keys", "list the keys of an experiment");
    keys->add_option("experiment", keys_exp, "experiment name")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        for (auto& c : cmds) {
            if (!c.cmd->parsed()) continue;
            const RawConfig file = load(c.ov.config_path);
            return run_resolved(*c.exp, file, c.ov, c.ov.config_path.empty() ? "config" : c.ov.config_path);
        }
        if (run->parsed()) {
            const RawConfig file = parse_config_file(run_file);
            const auto it = file.entries.find("experiment");
            if (it == file.entries.end()) {
                std::cerr << run_file << ": missing `experiment = <name>`\n";
                return kExitConfig;
            }
            const Experiment* exp = find_experiment(it->second.value);
            if (!exp) {
                std::cerr << run_file << ": line " << it->second.line << ": experiment: unknown experiment '"
                          << it->second.value << "'\n";
                return kExitConfig;
            }
            return run_resolved(*exp, file, run_ov, run_file);
        }
        if (validate->parsed()) {
            const RawConfig file = load(val_ov.config_path);
            std::string name = val_exp;
            if (name.empty()) {
                const auto it = file.entries.find("experiment");
                if (it != file.entries.end()) name = it->second.value;
            }
            const std::string source = val_ov.config_path.empty() ? "config" : val_ov.config_path;
            if (name.empty()) {
                std::cerr << source << ": no experiment given (use --experiment or an `experiment` key)\n";
                return kExitConfig;
            }
            const Experiment* exp = find_experiment(name);
            if (!exp) {
                std::cerr << source << ": unknown experiment '" << name << "'\n";
                return kExitConfig;
            }
            const Resolution r = resolve_and_check(*exp, file, val_ov.pairs());
            std::cout << "violations: " << r.violations.size() << "\n";
            print_violations(std::cout, source, r.violations);
            std::cout << "resolved configuration:\n";
            print_resolved(std::cout, r.config);
            return r.ok() ? 0 : kExitConfig;
        }
        if (keys->parsed()) {
            const Experiment* exp = find_experiment(keys_exp);
            if (!exp) {
                std::cerr << "unknown experiment '" << keys_exp << "'\n";
                return kExitConfig;
            }
            std::cout << exp->name << ": " << exp->help << "\n" << keys_help(*exp);
            return 0;
        }
    } catch (const vlab::ParseError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const vlab::InvalidSpecError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitConfig;
}
