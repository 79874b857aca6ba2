#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vlab/cli/config.hpp"
#include "vlab/cli/experiments.hpp"

using namespace vlab;
using namespace vlab::cli;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("vlab_test_cli_" + name);
    fs::remove_all(p);
    return p;
}

struct CmdResult {
    int code = -1;
    std::string output;
};

CmdResult run_vlab(const std::string& args) {
    const fs::path log = scratch("log.txt");
    const std::string cmd = std::string(VLAB_BINARY) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

bool has_violation(const Resolution& r, const std::string& key) {
    for (const auto& v : r.violations)
        if (v.key == key) return true;
    return false;
}

}  // namespace

TEST(ConfigParser, SectionsCommentsQuotes) {
    const auto c = parse_config_text(
        "# comment\n"
        "experiment = train\n"
        "steps = 10   # trailing\n"
        "[optimizer]\n"
        "kind = \"vgd\"\n"
        "rho = 0.05\n"
        "[data]\n"
        "path = 'a # b.csv'\n");
    EXPECT_EQ(c.entries.at("experiment").value, "train");
    EXPECT_EQ(c.entries.at("steps").value, "10");
    EXPECT_EQ(c.entries.at("steps").line, 3u);
    EXPECT_EQ(c.entries.at("optimizer.kind").value, "vgd");
    EXPECT_EQ(c.entries.at("optimizer.rho").line, 6u);
    EXPECT_EQ(c.entries.at("data.path").value, "a # b.csv");
}

TEST(ConfigParser, ErrorsCarryLines) {
    auto line_of = [](const std::string& text) -> std::size_t {
        try {
            parse_config_text(text);
        } catch (const ParseError& e) {
            return e.line();
        }
        return 999;
    };
    EXPECT_EQ(line_of("a = 1\nb = 2\na = 3\n"), 3u);
    EXPECT_EQ(line_of("a = 1\njust words\n"), 2u);
    EXPECT_EQ(line_of("[sec\n"), 1u);
    EXPECT_EQ(line_of("a = \"open\n"), 1u);
    EXPECT_THROW(parse_assignment("novalue"), ParseError);
    EXPECT_EQ(parse_assignment("rho = 0.1").second, "0.1");
}

TEST(ConfigResolve, UnknownKeysAndTypeErrors) {
    const Experiment* e = find_experiment("quad-heatmap");
    ASSERT_NE(e, nullptr);
    const auto file = parse_config_text("rho = fast\nbogus = 1\n");
    const auto r = resolve_and_check(*e, file, {{"trials", "-3"}});
    ASSERT_EQ(r.violations.size(), 3u);
    EXPECT_TRUE(has_violation(r, "rho"));
    EXPECT_TRUE(has_violation(r, "bogus"));
    EXPECT_TRUE(has_violation(r, "trials"));
    for (const auto& v : r.violations)
        if (v.key == "bogus") EXPECT_EQ(v.line, 2u);
}

TEST(ConfigResolve, SemanticViolations) {
    const Experiment* e = find_experiment("quad-heatmap");
    const auto r = resolve_and_check(*e, {}, {{"n_samples", "0"}, {"rho", "0"}});
    EXPECT_TRUE(has_violation(r, "n_samples"));
    EXPECT_TRUE(has_violation(r, "rho"));
    const Experiment* t = find_experiment("train");
    const auto bad = resolve_and_check(*t, {}, {{"optimizer.rho", "-1"}, {"perturbation.n_samples", "0"}});
    EXPECT_TRUE(has_violation(bad, "optimizer.rho"));
    EXPECT_TRUE(has_violation(bad, "perturbation.n_samples"));
    const auto other = resolve_and_check(*e, parse_config_text("experiment = train\n"), {});
    EXPECT_TRUE(has_violation(other, "experiment"));
}

TEST(ConfigResolve, EveryExperimentDefaultsAreValid) {
    for (const auto& e : experiments()) {
        const auto r = resolve_and_check(e, {}, {});
        EXPECT_TRUE(r.ok()) << e.name << ": " << (r.violations.empty() ? "" : r.violations[0].describe());
        const auto j = r.config.to_json(false);
        EXPECT_FALSE(j.contains("threads")) << e.name;
        EXPECT_FALSE(j.contains("out")) << e.name;
        EXPECT_TRUE(r.config.to_json(true).contains("threads"));
    }
}

TEST(ConfigResolve, PrecedenceFileThenFlag) {
    const Experiment* e = find_experiment("escape");
    const auto r = resolve_and_check(*e, parse_config_text("rho = 0.2\nruns = 5\n"), {{"rho", "0.3"}});
    ASSERT_TRUE(r.ok());
    EXPECT_EQ(r.config.get_double("rho"), 0.3);
    EXPECT_EQ(r.config.get_uint("runs"), 5u);
}

TEST(Binary, ExitCodes) {
    EXPECT_EQ(run_vlab("--version").code, 0);
    EXPECT_EQ(run_vlab("").code, 1);
    EXPECT_EQ(run_vlab("quad-heatmap --set rho=0").code, 1);
    EXPECT_EQ(run_vlab("quad-heatmap --set nonsense=1").code, 1);
    EXPECT_EQ(run_vlab("quad-heatmap --config /nonexistent/vlab.cfg").code, 1);
    const CmdResult v = run_vlab("validate -e escape --set n_samples=0");
    EXPECT_EQ(v.code, 1);
    EXPECT_NE(v.output.find("violations: 1"), std::string::npos);
    EXPECT_EQ(run_vlab("validate -e escape").code, 0);
    EXPECT_EQ(run_vlab("keys train").code, 0);
    const fs::path out = scratch("missing_data");
    const CmdResult r = run_vlab("train --set data.source=csv --set data.path=/nonexistent/x.csv --set steps=1 --out " +
                       out.string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(slurp(out / "manifest.json").find("\"status\": \"error\""), std::string::npos);
}

TEST(Binary, RunFileUsesExperimentKey) {
    const fs::path dir = scratch("runfile");
    fs::create_directories(dir);
    const fs::path cfg = dir / "hm.cfg";
    std::ofstream(cfg) << "experiment = quad-heatmap\n[inv_sigma2]\ncount = 4\n[lambda]\ncount = 3\n";
    const CmdResult r = run_vlab("run " + cfg.string() + " --out " + (dir / "out").string());
    ASSERT_EQ(r.code, 0) << r.output;
    const std::string csv = slurp(dir / "out" / "heatmap.csv");
    std::size_t lines = 0;
    for (const char c : csv) lines += c == '\n';
    EXPECT_EQ(lines, 4u);  // header + 3 lambda rows
    EXPECT_EQ(csv.substr(0, 7), "lambda,");
}

TEST(Binary, ArtifactsByteIdenticalAcrossWorkers) {
    const std::string common = " --set inv_sigma2.count=8 --set lambda.count=6 --seed 5";
    const fs::path a = scratch("det_a"), b = scratch("det_b");
    ASSERT_EQ(run_vlab("quad-heatmap" + common + " --threads 1 --out " + a.string()).code, 0);
    ASSERT_EQ(run_vlab("quad-heatmap" + common + " --threads 4 --out " + b.string()).code, 0);
    for (const char* f : {"heatmap.csv", "theory.csv", "summary.json"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST(Binary, TrainWritesTrajectory) {
    const fs::path out = scratch("train");
    const CmdResult r = run_vlab(
        "train --set data.classes=3 --set data.per_class=5 --set data.test_per_class=2 --set data.input_dim=4 "
        "--set model.hidden=5 --set steps=6 --set log_every=3 --set optimizer.kind=vgd "
        "--set perturbation.sigma2=1e-4 --set perturbation.n_samples=2 --out " +
        out.string());
    ASSERT_EQ(r.code, 0) << r.output;
    std::ifstream in(out / "trajectory.jsonl");
    std::string line;
    std::vector<nlohmann::json> rows;
    while (std::getline(in, line)) rows.push_back(nlohmann::json::parse(line));
    ASSERT_EQ(rows.size(), 4u);  // meta + steps 0, 3, 6
    EXPECT_EQ(rows[0]["type"], "meta");
    EXPECT_EQ(rows[3]["step"], 6);
    EXPECT_TRUE(rows[3]["vf"].is_number());
    const auto summary = nlohmann::json::parse(slurp(out / "summary.json"));
    EXPECT_TRUE(summary.contains("final_sharpness"));
}
