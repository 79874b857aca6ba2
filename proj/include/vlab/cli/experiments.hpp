#pragma once

// Experiment schemas and runners behind the `vlab` subcommands.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "vlab/cli/artifacts.hpp"
#include "vlab/cli/config.hpp"
#include "vlab/numerics/parallel.hpp"
#include "vlab/quadlab.hpp"
#include "vlab/stability.hpp"
#include "vlab/training.hpp"
#include "vlab/version.hpp"

namespace vlab::cli {

using Runner = std::function<void(const ResolvedConfig&, ArtifactWriter&, unsigned, std::ostream&)>;
using CheckFn = std::function<void(Checker&)>;

struct Experiment {
    std::string name;
    std::string help;
    std::vector<KeySpec> keys;
    CheckFn check;
    Runner run;
};

namespace detail {

using K = KeyType;

inline void add_common(std::vector<KeySpec>& s) {
    s.push_back({"seed", K::UInt, "0", "master seed"});
    s.push_back({"threads", K::UInt, "1", "worker threads (0 = hardware concurrency)", true});
    s.push_back({"out", K::String, "", "output directory (default $VLAB_OUT_DIR/<experiment> or vlab-out/<experiment>)",
                 true});
}

inline RandomStream root_stream(const ResolvedConfig& c) { return RandomStream(c.get_uint("seed")); }

inline nlohmann::ordered_json meta(const ResolvedConfig& c) { return c.to_json(false); }

inline GridAxis axis(const ResolvedConfig& c, const std::string& prefix) {
    return GridAxis{prefix, c.get_double(prefix + ".min"), c.get_double(prefix + ".max"),
                    static_cast<std::size_t>(c.get_uint(prefix + ".count")), c.get_bool(prefix + ".log")};
}

inline void add_axis(std::vector<KeySpec>& s, const std::string& prefix, const std::string& lo, const std::string& hi,
                     const std::string& count, bool log, const std::string& what) {
    s.push_back({prefix + ".min", K::Double, lo, "smallest " + what});
    s.push_back({prefix + ".max", K::Double, hi, "largest " + what});
    s.push_back({prefix + ".count", K::UInt, count, "grid points"});
    s.push_back({prefix + ".log", K::Bool, log ? "true" : "false", "log spacing"});
}

inline void check_axis(Checker& ck, const std::string& prefix, bool positive) {
    const auto& c = ck.config();
    ck.finite(prefix + ".min");
    ck.finite(prefix + ".max");
    if (positive) ck.positive(prefix + ".min");
    ck.require(c.get_double(prefix + ".max") > c.get_double(prefix + ".min"), prefix + ".max", "must exceed min");
    ck.require(c.get_uint(prefix + ".count") >= 2, prefix + ".count", "must be >= 2");
    if (c.get_bool(prefix + ".log")) ck.positive(prefix + ".min");
}

/// Axis value at a fractional index (geometric between points on log axes).
inline double axis_at(const std::vector<double>& v, double pos, bool log) {
    const std::size_t i = std::min(static_cast<std::size_t>(pos), v.size() - 1);
    if (i + 1 >= v.size()) return v.back();
    const double f = pos - static_cast<double>(i);
    if (log) return v[i] * std::pow(v[i + 1] / v[i], f);
    return v[i] + f * (v[i + 1] - v[i]);
}

// --------------------------------------------------------------------------
// quad-heatmap
// --------------------------------------------------------------------------

inline Experiment quad_heatmap() {
    Experiment e{"quad-heatmap", "descent probability over (1/sigma^2, lambda) on a 1-D quadratic", {}, {}, {}};
    add_axis(e.keys, "inv_sigma2", "0.1", "100", "50", true, "1/sigma^2 (columns)");
    add_axis(e.keys, "lambda", "0.5", "25", "50", false, "curvature lambda (rows)");
    e.keys.push_back({"rho", K::Double, "0.1", "step size"});
    e.keys.push_back({"n_samples", K::Int, "1", "perturbation samples per step"});
    e.keys.push_back({"m0", K::Double, "1", "starting iterate"});
    e.keys.push_back({"trials", K::UInt, "10", "independent draws per cell"});
    add_common(e.keys);
    e.check = [](Checker& ck) {
        check_axis(ck, "inv_sigma2", true);
        check_axis(ck, "lambda", true);
        ck.positive("rho");
        ck.finite("rho");
        ck.at_least("n_samples", 1);
        ck.finite("m0");
        ck.require(ck.config().get_double("m0") != 0.0, "m0", "must be non-zero");
        ck.require(ck.config().get_uint("trials") >= 1, "trials", "must be >= 1");
    };
    e.run = [](const ResolvedConfig& c, ArtifactWriter& w, unsigned workers, std::ostream& log) {
        GridExperimentConfig g;
        g.x = axis(c, "inv_sigma2");
        g.y = axis(c, "lambda");
        g.rho = c.get_double("rho");
        g.n_samples = static_cast<int>(c.get_int("n_samples"));
        g.m0 = c.get_double("m0");
        g.trials = c.get_uint("trials");
        g.seed = c.get_uint("seed");
        const HeatmapResult h = descent_heatmap(g, workers);

        std::vector<std::string> header{"lambda"};
        for (const double x : h.x) header.push_back(fmt(x));
        std::vector<std::vector<std::string>> rows;
        for (std::size_t r = 0; r < h.y.size(); ++r) {
            std::vector<std::string> row{fmt(h.y[r])};
            for (std::size_t col = 0; col < h.x.size(); ++col) row.push_back(fmt(h.probability(r, col)));
            rows.push_back(std::move(row));
        }
        w.csv("heatmap.csv", header, rows,
              "descent probability; rows lambda (first column), columns 1/sigma^2 (header)");

        std::vector<std::vector<std::string>> curve;
        for (std::size_t col = 0; col < h.x.size(); ++col) {
            std::optional<double> contour;
            if (h.contour_position[col]) contour = axis_at(h.y, *h.contour_position[col], g.y.log);
            curve.push_back({fmt(h.x[col]), fmt(1.0 / h.x[col]), fmt(h.theory_lambda[col]), fmt(contour)});
        }
        w.csv("theory.csv", {"inv_sigma2", "sigma2", "theory_lambda", "contour_lambda"}, curve,
              "theory threshold curve and empirical 0.5 contour per column");

        const double agreement = contour_agreement(h, 1.0);
        nlohmann::ordered_json s;
        s["meta"] = meta(c);
        s["contour_agreement"] = agreement;
        s["columns"] = h.x.size();
        w.json("summary.json", s, "contour agreement within one grid cell");
        log << "contour agreement (within one cell): " << agreement << "\n";
    };
    return e;
}

// --------------------------------------------------------------------------
// stability-boundary
// --------------------------------------------------------------------------

inline Experiment stability_boundary_exp() {
    Experiment e{"stability-boundary", "divergence region over (N_s, sigma^2) for 1-D VGD", {}, {}, {}};
    e.keys.push_back({"n_samples", K::IntList, "1,2,3,4,5,6,7,8,9,10", "N_s values (columns)"});
    add_axis(e.keys, "sigma2", "1e3", "1e8", "51", true, "perturbation variance (rows)");
    e.keys.push_back({"lambda", K::Double, "15", "curvature"});
    e.keys.push_back({"rho", K::Double, "0.1", "step size"});
    e.keys.push_back({"m0", K::Double, "1", "starting iterate"});
    e.keys.push_back({"steps", K::UInt, "400", "steps per trajectory"});
    e.keys.push_back({"trials", K::UInt, "5", "trajectories per cell (majority class)"});
    add_common(e.keys);
    e.check = [](Checker& ck) {
        ck.all_at_least("n_samples", 1);
        ck.require(ck.config().get_uint("trials") >= 1, "trials", "must be >= 1");
        check_axis(ck, "sigma2", true);
        ck.positive("lambda");
        ck.positive("rho");
        ck.finite("m0");
        ck.require(ck.config().get_double("m0") != 0.0, "m0", "must be non-zero");
        ck.require(ck.config().get_uint("steps") >= 8, "steps", "must be >= 8");
    };
    e.run = [](const ResolvedConfig& c, ArtifactWriter& w, unsigned workers, std::ostream& log) {
        BoundaryConfig b;
        b.n_samples.clear();
        for (const auto n : c.get_ints("n_samples")) b.n_samples.push_back(static_cast<int>(n));
        b.sigma2 = axis(c, "sigma2");
        b.lambda = c.get_double("lambda");
        b.rho = c.get_double("rho");
        b.m0 = c.get_double("m0");
        b.steps = c.get_uint("steps");
        b.trials = c.get_uint("trials");
        b.seed = c.get_uint("seed");
        const BoundaryResult r = stability_boundary(b, workers);

        std::vector<std::string> header{"sigma2"};
        for (const int n : r.n_samples) header.push_back(fmt_int(n));
        std::vector<std::vector<std::string>> rows;
        for (std::size_t i = 0; i < r.sigma2.size(); ++i) {
            std::vector<std::string> row{fmt(r.sigma2[i])};
            for (std::size_t j = 0; j < r.n_samples.size(); ++j) row.push_back(to_string(r.classes[i][j]));
            rows.push_back(std::move(row));
        }
        w.csv("classes.csv", header, rows, "stability class; rows sigma^2 (first column), columns N_s (header)");
        rows.clear();
        for (std::size_t i = 0; i < r.sigma2.size(); ++i) {
            std::vector<std::string> row{fmt(r.sigma2[i])};
            for (std::size_t j = 0; j < r.n_samples.size(); ++j) row.push_back(fmt(r.divergent_fraction[i][j]));
            rows.push_back(std::move(row));
        }
        w.csv("divergent_fraction.csv", header, rows, "fraction of divergent trials per cell");

        std::vector<std::vector<std::string>> bnd;
        for (std::size_t j = 0; j < r.n_samples.size(); ++j) {
            std::optional<double> th;
            if (j < r.theory_sigma2.size()) th = r.theory_sigma2[j];
            bnd.push_back({fmt_int(r.n_samples[j]), fmt(r.empirical_sigma2[j]), fmt(th)});
        }
        w.csv("boundary.csv", {"n_samples", "empirical_sigma2", "theory_sigma2"}, bnd,
              "empirical divergence boundary and one-step theory line per N_s");

        nlohmann::ordered_json s;
        s["meta"] = meta(c);
        s["slope"] = jnum(r.slope);
        s["r_squared"] = jnum(r.r_squared);
        s["monotonicity_violations"] = r.monotonicity_violations;
        w.json("summary.json", s, "line-through-origin fit of the boundary");
        log << "boundary fit: slope " << r.slope << ", R^2 " << r.r_squared << ", monotonicity violations "
            << r.monotonicity_violations << "\n";
    };
    return e;
}

// --------------------------------------------------------------------------
// quad-histogram
// --------------------------------------------------------------------------

inline Experiment quad_histogram() {
    Experiment e{"quad-histogram", "stationary iterate distribution of 1-D VGD for several N_s", {}, {}, {}};
    e.keys.push_back({"lambda", K::Double, "15", "curvature"});
    e.keys.push_back({"rho", K::Double, "0.1", "step size"});
    e.keys.push_back({"sigma2", K::Double, "0.01", "perturbation variance"});
    e.keys.push_back({"n_samples", K::IntList, "1000,200,100,50,20,10,5", "N_s values"});
    e.keys.push_back({"steps", K::UInt, "20000", "steps per run"});
    e.keys.push_back({"burn_in", K::Double, "0.5", "fraction of steps discarded"});
    e.keys.push_back({"m0", K::Double, "1", "starting iterate"});
    e.keys.push_back({"bins", K::UInt, "51", "histogram bins"});
    e.keys.push_back({"half_width", K::Double, "0", "histogram half width (0 = largest |m| of each run)"});
    add_common(e.keys);
    e.check = [](Checker& ck) {
        ck.positive("lambda");
        ck.positive("rho");
        ck.non_negative("sigma2");
        ck.finite("sigma2");
        ck.all_at_least("n_samples", 1);
        const double b = ck.config().get_double("burn_in");
        ck.require(b >= 0.0 && b < 1.0, "burn_in", "must lie in [0, 1)");
        ck.require(ck.config().get_uint("steps") >= 2, "steps", "must be >= 2");
        ck.require(ck.config().get_uint("bins") >= 1, "bins", "must be >= 1");
        ck.non_negative("half_width");
    };
    e.run = [](const ResolvedConfig& c, ArtifactWriter& w, unsigned workers, std::ostream& log) {
        const auto ns = c.get_ints("n_samples");
        const std::size_t steps = c.get_uint("steps");
        const auto burn = static_cast<std::size_t>(c.get_double("burn_in") * static_cast<double>(steps));
        const RandomStream root = root_stream(c);
        std::vector<IterateHistogram> hs(ns.size());
        parallel_for(ns.size(), workers, [&](std::size_t i) {
            hs[i] = iterate_histogram(c.get_double("lambda"), c.get_double("rho"), c.get_double("sigma2"),
                                      static_cast<int>(ns[i]), steps, burn,
                                      root.child(static_cast<std::uint64_t>(ns[i])), c.get_double("m0"),
                                      c.get_uint("bins"), c.get_double("half_width"));
        });
        std::vector<std::vector<std::string>> rows, stats;
        for (std::size_t i = 0; i < ns.size(); ++i) {
            const auto& h = hs[i].histogram;
            for (std::size_t b = 0; b < h.bins(); ++b)
                rows.push_back({fmt_int(ns[i]), fmt(h.edges[b]), fmt(h.edges[b + 1]), fmt_int(static_cast<long long>(h.counts[b]))});
            stats.push_back({fmt_int(ns[i]), fmt_int(static_cast<long long>(hs[i].samples)), fmt(hs[i].mean),
                             fmt(hs[i].variance), fmt(hs[i].variance_se), fmt(hs[i].max_abs)});
            log << "N_s " << ns[i] << ": variance " << hs[i].variance << " +- " << hs[i].variance_se << "\n";
        }
        w.csv("histogram.csv", {"n_samples", "bin_lo", "bin_hi", "count"}, rows, "post-burn-in iterate histogram");
        w.csv("stats.csv", {"n_samples", "samples", "mean", "variance", "variance_se", "max_abs"}, stats,
              "stationary moments per N_s");
    };
    return e;
}

// --------------------------------------------------------------------------
// quad-trajectory
// --------------------------------------------------------------------------

inline Experiment quad_trajectory() {
    Experiment e{"quad-trajectory", "GD or VGD on a diagonal quadratic with per-mode thresholds", {}, {}, {}};
    e.keys.push_back({"eigenvalues", K::DoubleList, "18,6,1", "curvatures of the diagonal quadratic"});
    e.keys.push_back({"m0", K::DoubleList, "1", "starting iterate (one value is broadcast)"});
    e.keys.push_back({"optimizer", K::String, "vgd", "gd | vgd"});
    e.keys.push_back({"rho", K::Double, "0.1", "step size"});
    e.keys.push_back({"sigma2", K::Double, "0.05", "perturbation variance"});
    e.keys.push_back({"n_samples", K::Int, "1", "perturbation samples per step"});
    e.keys.push_back({"family", K::String, "gaussian", "gaussian | student-t"});
    e.keys.push_back({"alpha", K::Double, "10", "student-t degrees of freedom"});
    e.keys.push_back({"steps", K::UInt, "200", "steps"});
    e.keys.push_back({"log_every", K::UInt, "1", "logging cadence"});
    add_common(e.keys);
    e.check = [](Checker& ck) {
        const auto& c = ck.config();
        ck.all_positive("eigenvalues");
        const auto m0 = c.get_doubles("m0");
        ck.require(m0.size() == 1 || m0.size() == c.get_doubles("eigenvalues").size(), "m0",
                   "needs one value or one per eigenvalue");
        ck.one_of("optimizer", {"gd", "vgd"});
        ck.positive("rho");
        ck.non_negative("sigma2");
        ck.finite("sigma2");
        ck.at_least("n_samples", 1);
        ck.one_of("family", {"gaussian", "student-t"});
        if (c.get_string("family") == "student-t")
            ck.require(c.get_double("alpha") > 2.0, "alpha", "must be > 2 for finite variance");
        ck.require(c.get_uint("steps") >= 1, "steps", "must be >= 1");
        ck.require(c.get_uint("log_every") >= 1, "log_every", "must be >= 1");
    };
    e.run = [](const ResolvedConfig& c, ArtifactWriter& w, unsigned, std::ostream& log) {
        const Vector eig = c.get_doubles("eigenvalues");
        const QuadraticProblem problem = QuadraticProblem::diagonal(eig);
        Vector m0 = c.get_doubles("m0");
        if (m0.size() == 1) m0.assign(eig.size(), m0[0]);
        const int ns = static_cast<int>(c.get_int("n_samples"));
        const PosteriorSpec spec = c.get_string("family") == "student-t"
                                       ? PosteriorSpec::student_t(c.get_double("sigma2"), ns, c.get_double("alpha"))
                                       : PosteriorSpec::isotropic(c.get_double("sigma2"), ns);
        const QuadOptimizer opt = c.get_string("optimizer") == "gd" ? QuadOptimizer::Gd : QuadOptimizer::Vgd;
        auto rec = w.jsonl("trajectory.jsonl", meta(c), "loss, iterate norm and per-mode thresholds per logged step");
        const QuadTrajectory t = run_quadratic_trajectory(problem, opt, spec, m0, c.get_double("rho"),
                                                          c.get_uint("steps"), root_stream(c), std::move(rec),
                                                          c.get_uint("log_every"));
        nlohmann::ordered_json s;
        s["meta"] = meta(c);
        s["classification"] = to_string(t.classification);
        s["final_loss"] = jnum(t.loss.back());
        s["truncated"] = t.truncated;
        w.json("summary.json", s, "trajectory classification");
        log << "classification: " << to_string(t.classification) << ", final loss " << t.loss.back() << "\n";
    };
    return e;
}

// --------------------------------------------------------------------------
// smoothing
// --------------------------------------------------------------------------

inline Experiment smoothing() {
    Experiment e{"smoothing", "Gaussian-smoothed quartic curvature: closed form vs Monte Carlo", {}, {}, {}};
    e.keys.push_back({"theta", K::DoubleList, "-1.5,-1,-0.5,0,0.5,1,1.5", "evaluation points"});
    e.keys.push_back({"sigma2", K::DoubleList, "0,0.01,0.05,0.1,0.2", "smoothing variances"});
    e.keys.push_back({"n_samples", K::Int, "10", "samples inside one curvature estimate"});
    e.keys.push_back({"realizations", K::UInt, "2000", "independent estimates per cell"});
    e.keys.push_back({"variance.theta", K::Double, "0.5", "point for the estimator-variance sweep"});
    e.keys.push_back({"variance.sigma2", K::Double, "0.1", "variance for the estimator-variance sweep"});
    e.keys.push_back({"variance.n_samples", K::IntList, "1,2,4,8,16,32,64,128", "N_s values of the sweep"});
    e.keys.push_back({"variance.realizations", K::UInt, "4000", "estimates per N_s"});
    add_common(e.keys);
    e.check = [](Checker& ck) {
        const auto th = ck.config().get_doubles("theta");
        ck.require(std::all_of(th.begin(), th.end(), [](double x) { return std::isfinite(x); }), "theta",
                   "entries must be finite");
        ck.all_non_negative("sigma2");
        ck.at_least("n_samples", 1);
        ck.require(ck.config().get_uint("realizations") >= 2, "realizations", "must be >= 2");
        ck.finite("variance.theta");
        ck.non_negative("variance.sigma2");
        ck.all_at_least("variance.n_samples", 1);
        ck.require(ck.config().get_uint("variance.realizations") >= 2, "variance.realizations", "must be >= 2");
    };
    e.run = [](const ResolvedConfig& c, ArtifactWriter& w, unsigned workers, std::ostream& log) {
        const auto thetas = c.get_doubles("theta");
        const auto sig = c.get_doubles("sigma2");
        const int ns = static_cast<int>(c.get_int("n_samples"));
        const std::size_t reps = c.get_uint("realizations");
        const RandomStream root = root_stream(c);

        struct Cell {
            double mean = 0.0, se = 0.0;
        };
        auto estimate = [&](double theta, double s2, int n, std::size_t r_count, const RandomStream& base) {
            Vector v(r_count);
            for (std::size_t r = 0; r < r_count; ++r) v[r] = averaged_curvature_mc(theta, s2, n, base.child(r));
            Cell out;
            out.mean = stable_mean(v);
            CompensatedSum ss;
            for (const double x : v) ss.add((x - out.mean) * (x - out.mean));
            const double var = ss.value() / static_cast<double>(r_count - 1);
            out.se = std::sqrt(var / static_cast<double>(r_count));
            return std::pair{out, var};
        };

        std::vector<Cell> cells(thetas.size() * sig.size());
        parallel_for(cells.size(), workers, [&](std::size_t idx) {
            const std::size_t i = idx / sig.size(), j = idx % sig.size();
            cells[idx] = estimate(thetas[i], sig[j], ns, reps, root.child(0).child(idx)).first;
        });
        std::vector<std::vector<std::string>> rows;
        for (std::size_t i = 0; i < thetas.size(); ++i)
            for (std::size_t j = 0; j < sig.size(); ++j) {
                const auto& cell = cells[i * sig.size() + j];
                rows.push_back({fmt(thetas[i]), fmt(sig[j]), fmt(smoothed_quartic(thetas[i], sig[j]).curvature),
                                fmt(cell.mean), fmt(cell.se)});
            }
        w.csv("smoothing.csv", {"theta", "sigma2", "closed_form_curvature", "mc_mean", "mc_se"}, rows,
              "smoothed curvature: closed form vs Monte-Carlo mean");

        std::vector<std::vector<std::string>> mins;
        for (const double s2 : sig) {
            const auto m = smoothed_quartic_minimizer(s2);
            mins.push_back({fmt(s2), fmt(m), m ? fmt(smoothed_quartic(*m, s2).curvature) : std::string()});
        }
        w.csv("minimizer.csv", {"sigma2", "minimizer", "curvature_at_minimizer"}, mins,
              "positive minimizer of the smoothed quartic and its curvature");

        const auto sweep = c.get_ints("variance.n_samples");
        std::vector<std::pair<Cell, double>> sv(sweep.size());
        parallel_for(sweep.size(), workers, [&](std::size_t k) {
            sv[k] = estimate(c.get_double("variance.theta"), c.get_double("variance.sigma2"), static_cast<int>(sweep[k]),
                             c.get_uint("variance.realizations"), root.child(1).child(k));
        });
        std::vector<std::vector<std::string>> vr;
        std::vector<double> lx, ly;
        for (std::size_t k = 0; k < sweep.size(); ++k) {
            vr.push_back({fmt_int(sweep[k]), fmt(sv[k].first.mean), fmt(sv[k].second)});
            if (sv[k].second > 0.0) {
                lx.push_back(std::log(static_cast<double>(sweep[k])));
                ly.push_back(std::log(sv[k].second));
            }
        }
        w.csv("estimator_variance.csv", {"n_samples", "mean", "variance"}, vr,
              "variance of the averaged-curvature estimator against N_s");
        if (lx.size() >= 2) {
            const double mx = stable_mean(lx), my = stable_mean(ly);
            CompensatedSum sxy, sxx;
            for (std::size_t k = 0; k < lx.size(); ++k) {
                sxy.add((lx[k] - mx) * (ly[k] - my));
                sxx.add((lx[k] - mx) * (lx[k] - mx));
            }
            log << "estimator variance log-log slope: " << sxy.value() / sxx.value() << "\n";
        }
    };
    return e;
}

// --------------------------------------------------------------------------
// escape
// --------------------------------------------------------------------------

inline Experiment escape() {
    Experiment e{"escape", "VGD on an asymmetric double well started in the sharp basin", {}, {}, {}};
    e.keys.push_back({"rho", K::Double, "0.1", "step size"});
    e.keys.push_back({"sigma2", K::DoubleList, "0,0.01,0.05,0.1,0.2,0.5", "perturbation variances"});
    e.keys.push_back({"n_samples", K::Int, "1", "perturbation samples per step"});
    e.keys.push_back({"steps", K::UInt, "2000", "steps per run"});
    e.keys.push_back({"m0", K::Double, "1", "starting point (sharp minimum at +1)"});
    e.keys.push_back({"runs", K::UInt, "100", "seeded runs per variance"});
    add_common(e.keys);
    e.check = [](Checker& ck) {
        ck.positive("rho");
        ck.all_non_negative("sigma2");
        ck.at_least("n_samples", 1);
        ck.require(ck.config().get_uint("steps") >= 1, "steps", "must be >= 1");
        ck.finite("m0");
        ck.require(ck.config().get_uint("runs") >= 1, "runs", "must be >= 1");
    };
    e.run = [](const ResolvedConfig& c, ArtifactWriter& w, unsigned workers, std::ostream& log) {
        const auto sig = c.get_doubles("sigma2");
        const std::size_t runs = c.get_uint("runs");
        const RandomStream root = root_stream(c);
        std::vector<EscapeResult> res(sig.size() * runs);
        parallel_for(res.size(), workers, [&](std::size_t idx) {
            const std::size_t k = idx / runs, r = idx % runs;
            res[idx] = double_well_escape(c.get_double("rho"), sig[k], static_cast<int>(c.get_int("n_samples")),
                                          c.get_uint("steps"), c.get_double("m0"), root.child(k).child(r));
        });
        std::vector<std::vector<std::string>> rows, summary;
        for (std::size_t k = 0; k < sig.size(); ++k) {
            std::size_t counts[3] = {0, 0, 0};
            for (std::size_t r = 0; r < runs; ++r) {
                const auto& x = res[k * runs + r];
                ++counts[static_cast<int>(x.basin)];
                rows.push_back({fmt(sig[k]), fmt_int(static_cast<long long>(r)), fmt(x.theta.back()),
                                to_string(x.basin), to_string(x.classification)});
            }
            const double n = static_cast<double>(runs);
            summary.push_back({fmt(sig[k]), fmt_int(static_cast<long long>(runs)), fmt(counts[0] / n),
                               fmt(counts[1] / n), fmt(counts[2] / n)});
            log << "sigma2 " << sig[k] << ": flat-basin fraction " << counts[1] / n << ", divergent " << counts[2] / n
                << "\n";
        }
        w.csv("escape.csv", {"sigma2", "run", "final_theta", "basin", "classification"}, rows, "final state per run");
        w.csv("summary.csv", {"sigma2", "runs", "sharp_fraction", "flat_fraction", "divergent_fraction"}, summary,
              "basin frequencies per variance");
    };
    return e;
}

// --------------------------------------------------------------------------
// MLP experiments
// --------------------------------------------------------------------------

inline void add_data_model_keys(std::vector<KeySpec>& s) {
    s.push_back({"data.source", K::String, "synthetic", "synthetic | csv"});
    s.push_back({"data.path", K::String, "", "training CSV (header row, numeric features)"});
    s.push_back({"data.test_path", K::String, "", "optional test CSV"});
    s.push_back({"data.label_column", K::String, "label", "label column name"});
    s.push_back({"data.classes", K::Int, "10", "synthetic classes"});
    s.push_back({"data.per_class", K::Int, "50", "synthetic training points per class"});
    s.push_back({"data.test_per_class", K::Int, "20", "synthetic test points per class (0 = none)"});
    s.push_back({"data.input_dim", K::UInt, "20", "synthetic feature count"});
    s.push_back({"data.separation", K::Double, "1.5", "distance between synthetic class means"});
    s.push_back({"data.input_scale", K::Double, "60", "synthetic features are multiplied by this"});
    s.push_back({"model.hidden", K::IntList, "64,64", "hidden layer widths"});
    s.push_back({"model.activation", K::String, "tanh", "tanh | identity"});
    s.push_back({"model.init_scale", K::Double, "1", "initialization scale"});
}

inline void add_run_keys(std::vector<KeySpec>& s, const std::string& steps, const std::string& log_every,
                         const std::string& top_k) {
    s.push_back({"steps", K::UInt, steps, "optimizer steps"});
    s.push_back({"batch_size", K::UInt, "0", "mini-batch size (0 = full batch)"});
    s.push_back({"log_every", K::UInt, log_every, "logging cadence"});
    s.push_back({"top_k", K::UInt, top_k, "Hessian eigenvalues per logged step"});
    s.push_back({"eig_tol", K::Double, "1e-4", "Lanczos relative tolerance"});
    s.push_back({"eig_max_iters", K::UInt, "100", "Lanczos iteration cap"});
    s.push_back({"log_wall_clock", K::Bool, "false", "add wall-clock seconds to trajectory rows"});
}

inline void add_optimizer_keys(std::vector<KeySpec>& s) {
    s.push_back({"optimizer.kind", K::String, "gd", "gd | vgd | adam | ivon"});
    s.push_back({"optimizer.rho", K::Double, "0.05", "step size"});
    s.push_back({"optimizer.beta2", K::Double, "0.99", "adam second-moment decay"});
    s.push_back({"optimizer.eps", K::Double, "1e-12", "adam denominator floor"});
    s.push_back({"optimizer.ivon_beta2", K::Double, "0.01", "ivon weight of the new Hessian estimate"});
    s.push_back({"optimizer.temperature", K::Double, "1", "ivon posterior temperature"});
    s.push_back({"optimizer.samples", K::Int, "1", "ivon samples per step"});
    s.push_back({"optimizer.init_precision", K::Double, "1", "ivon initial precision"});
    s.push_back({"optimizer.damping", K::Double, "0", "ivon damping added to the precision"});
    s.push_back({"perturbation.family", K::String, "gaussian", "vgd perturbation: gaussian | student-t"});
    s.push_back({"perturbation.sigma2", K::Double, "0", "vgd perturbation variance"});
    s.push_back({"perturbation.n_samples", K::Int, "1", "vgd samples per step"});
    s.push_back({"perturbation.alpha", K::Double, "10", "student-t degrees of freedom"});
    s.push_back({"perturbation.temperature", K::Double, "1", "multiplies sigma2"});
    s.push_back({"elbo_samples", K::Int, "0", "samples for the logged ELBO estimate (0 = off)"});
}

inline void check_data_model(Checker& ck) {
    const auto& c = ck.config();
    ck.one_of("data.source", {"synthetic", "csv"});
    if (c.get_string("data.source") == "csv") {
        ck.require(!c.get_string("data.path").empty(), "data.path", "required when data.source = csv");
    } else {
        ck.at_least("data.classes", 2);
        ck.at_least("data.per_class", 1);
        ck.at_least("data.test_per_class", 0);
        ck.require(c.get_uint("data.input_dim") >= static_cast<std::uint64_t>(std::max<std::int64_t>(c.get_int("data.classes"), 0)),
                   "data.input_dim", "must be at least data.classes");
        ck.non_negative("data.separation");
        ck.positive("data.input_scale");
        ck.finite("data.input_scale");
    }
    ck.all_at_least("model.hidden", 1);
    ck.one_of("model.activation", {"tanh", "identity"});
    ck.positive("model.init_scale");
}

inline void check_run(Checker& ck) {
    const auto& c = ck.config();
    ck.require(c.get_uint("steps") >= 1, "steps", "must be >= 1");
    ck.require(c.get_uint("log_every") >= 1, "log_every", "must be >= 1");
    ck.require(c.get_uint("top_k") >= 1 && c.get_uint("top_k") <= kMaxTopK, "top_k", "must lie in [1, 16]");
    ck.positive("eig_tol");
    ck.require(c.get_uint("eig_max_iters") >= 1, "eig_max_iters", "must be >= 1");
}

inline void check_optimizer(Checker& ck) {
    const auto& c = ck.config();
    ck.one_of("optimizer.kind", {"gd", "vgd", "adam", "ivon"});
    ck.positive("optimizer.rho");
    ck.finite("optimizer.rho");
    const double b2 = c.get_double("optimizer.beta2");
    ck.require(b2 >= 0.0 && b2 < 1.0, "optimizer.beta2", "must lie in [0, 1)");
    ck.positive("optimizer.eps");
    const double ib = c.get_double("optimizer.ivon_beta2");
    ck.require(ib >= 0.0 && ib <= 1.0, "optimizer.ivon_beta2", "must lie in [0, 1]");
    ck.positive("optimizer.temperature");
    ck.at_least("optimizer.samples", 1);
    ck.positive("optimizer.init_precision");
    ck.non_negative("optimizer.damping");
    ck.one_of("perturbation.family", {"gaussian", "student-t"});
    ck.non_negative("perturbation.sigma2");
    ck.finite("perturbation.sigma2");
    ck.at_least("perturbation.n_samples", 1);
    if (c.get_string("perturbation.family") == "student-t")
        ck.require(c.get_double("perturbation.alpha") > 2.0, "perturbation.alpha", "must be > 2 for finite variance");
    ck.positive("perturbation.temperature");
    ck.at_least("elbo_samples", 0);
}

inline TrainConfig base_train_config(const ResolvedConfig& c, unsigned workers) {
    TrainConfig t;
    t.data.source = c.get_string("data.source");
    t.data.path = c.get_string("data.path");
    t.data.test_path = c.get_string("data.test_path");
    t.data.label_column = c.get_string("data.label_column");
    t.data.classes = static_cast<int>(c.get_int("data.classes"));
    t.data.per_class = static_cast<int>(c.get_int("data.per_class"));
    t.data.test_per_class = static_cast<int>(c.get_int("data.test_per_class"));
    t.data.input_dim = c.get_uint("data.input_dim");
    t.data.separation = c.get_double("data.separation");
    t.data.input_scale = c.get_double("data.input_scale");
    t.hidden.clear();
    for (const auto h : c.get_ints("model.hidden")) t.hidden.push_back(static_cast<std::size_t>(h));
    t.activation = c.get_string("model.activation") == "identity" ? Activation::Identity : Activation::Tanh;
    t.init_scale = c.get_double("model.init_scale");
    t.steps = c.get_uint("steps");
    t.batch_size = c.get_uint("batch_size");
    t.log_every = c.get_uint("log_every");
    t.top_k = c.get_uint("top_k");
    t.eig_tol = c.get_double("eig_tol");
    t.eig_max_iters = c.get_uint("eig_max_iters");
    t.record_wall_clock = c.get_bool("log_wall_clock");
    t.seed = c.get_uint("seed");
    t.workers = workers;
    return t;
}

inline TrainConfig train_config_from(const ResolvedConfig& c, unsigned workers) {
    TrainConfig t = base_train_config(c, workers);
    t.optimizer = parse_optimizer(c.get_string("optimizer.kind"));
    t.rho = c.get_double("optimizer.rho");
    t.beta2 = c.get_double("optimizer.beta2");
    t.adam_eps = c.get_double("optimizer.eps");
    t.ivon_beta2 = c.get_double("optimizer.ivon_beta2");
    t.temperature = c.get_double("optimizer.temperature");
    t.ivon_samples = static_cast<int>(c.get_int("optimizer.samples"));
    t.ivon_init_precision = c.get_double("optimizer.init_precision");
    t.damping = c.get_double("optimizer.damping");
    const int ns = static_cast<int>(c.get_int("perturbation.n_samples"));
    const double s2 = c.get_double("perturbation.sigma2");
    const double tau = c.get_double("perturbation.temperature");
    t.spec = c.get_string("perturbation.family") == "student-t"
                 ? PosteriorSpec::student_t(s2, ns, c.get_double("perturbation.alpha"), tau)
                 : PosteriorSpec::isotropic(s2, ns, tau);
    t.elbo_samples = static_cast<int>(c.get_int("elbo_samples"));
    return t;
}

inline nlohmann::ordered_json train_summary(const TrainResult& r, const TrainConfig& t) {
    nlohmann::ordered_json s;
    s["optimizer"] = to_string(t.optimizer);
    s["rho"] = t.rho;
    s["final_loss"] = jnum(r.final_loss);
    s["final_sharpness"] = jnum(r.final_sharpness);
    s["mean_sharpness_second_half"] = jnum(r.mean_sharpness);
    s["mean_normalized_sharpness_second_half"] = jnum(r.mean_normalized_sharpness);
    s["mean_vf_second_half"] = jnum(r.mean_vf);
    s["tracking_gap_second_half"] = jnum(r.tracking_gap);
    s["mean_precond_sharpness_second_half"] = jnum(r.mean_precond_sharpness);
    s["normalized_precond_sharpness_second_half"] = jnum(0.5 * t.rho * r.mean_precond_sharpness);
    s["diverged"] = r.diverged;
    s["divergence_reason"] = r.divergence_reason;
    s["classification"] = to_string(r.classification);
    s["warnings"] = r.warnings;
    return s;
}

inline void log_train(std::ostream& log, const std::string& label, const TrainResult& r) {
    log << label << ": final loss " << r.final_loss << ", final sharpness " << r.final_sharpness << ", tracking gap "
        << r.tracking_gap;
    if (std::isfinite(r.mean_precond_sharpness)) log << ", preconditioned sharpness " << r.mean_precond_sharpness;
    if (r.diverged) log << " [diverged: " << r.divergence_reason << "]";
    log << "\n";
    for (const auto& wmsg : r.warnings) log << "warning: " << wmsg << "\n";
}

inline Experiment train() {
    Experiment e{"train", "train the MLP and track sharpness against the stability threshold", {}, {}, {}};
    add_data_model_keys(e.keys);
    add_optimizer_keys(e.keys);
    add_run_keys(e.keys, "1500", "50", "1");
    add_common(e.keys);
    e.check = [](Checker& ck) {
        check_data_model(ck);
        check_optimizer(ck);
        check_run(ck);
    };
    e.run = [](const ResolvedConfig& c, ArtifactWriter& w, unsigned workers, std::ostream& log) {
        const TrainConfig t = train_config_from(c, workers);
        auto rec = w.jsonl("trajectory.jsonl", meta(c), "per-step loss, accuracy, spectrum and thresholds");
        const TrainResult r = train_mlp(t, std::move(rec));
        nlohmann::ordered_json s = train_summary(r, t);
        s["meta"] = meta(c);
        w.json("summary.json", s, "second-half averages and final values");
        log_train(log, "train", r);
    };
    return e;
}

inline Experiment spectrum() {
    Experiment e{"spectrum", "train and record the top-k Hessian modes with their per-mode thresholds", {}, {}, {}};
    add_data_model_keys(e.keys);
    add_optimizer_keys(e.keys);
    add_run_keys(e.keys, "1500", "50", "5");
    add_common(e.keys);
    e.check = [](Checker& ck) {
        check_data_model(ck);
        check_optimizer(ck);
        check_run(ck);
    };
    e.run = [](const ResolvedConfig& c, ArtifactWriter& w, unsigned workers, std::ostream& log) {
        const TrainConfig t = train_config_from(c, workers);
        auto rec = w.jsonl("trajectory.jsonl", meta(c), "per-step loss, accuracy, spectrum and thresholds");
        const TrainResult r = train_mlp(t, std::move(rec));
        std::vector<std::vector<std::string>> rows;
        for (const auto& row : r.record.rows()) {
            for (std::size_t k = 0; k < row.top_eigs.size(); ++k) {
                const double lam = row.top_eigs[k];
                const std::string th = k < row.thresholds.size() ? fmt(row.thresholds[k]) : std::string();
                const std::string z = k < row.z.size() ? fmt(row.z[k]) : std::string();
                rows.push_back({fmt_int(static_cast<long long>(row.step)), fmt_int(static_cast<long long>(k + 1)),
                                fmt(lam), th, z, fmt(0.5 * t.rho * lam)});
            }
        }
        w.csv("spectrum.csv", {"step", "mode", "eigenvalue", "threshold", "z", "normalized_eigenvalue"}, rows,
              "top-k Hessian eigenvalues and their thresholds (2/rho) VF(z_i) per logged step");
        nlohmann::ordered_json s = train_summary(r, t);
        s["meta"] = meta(c);
        w.json("summary.json", s, "second-half averages and final values");
        log_train(log, "spectrum", r);
    };
    return e;
}

inline void add_ivon_keys(std::vector<KeySpec>& s, bool rho_list) {
    if (rho_list) s.push_back({"ivon.rho", K::DoubleList, "0.05,0.1,0.2", "ivon step sizes"});
    else s.push_back({"ivon.rho", K::Double, "0.2", "ivon step size"});
    s.push_back({"ivon.beta2", K::Double, "0.01", "weight of the new Hessian estimate"});
    s.push_back({"ivon.temperature", K::Double, "2e-4", "posterior temperature"});
    s.push_back({"ivon.damping", K::Double, "10", "damping added to the precision"});
    s.push_back({"ivon.init_precision", K::Double, "1", "initial precision"});
    s.push_back({"ivon.samples", K::Int, "1", "samples per step"});
}

inline void check_ivon(Checker& ck, bool rho_list) {
    if (rho_list) ck.all_positive("ivon.rho");
    else ck.positive("ivon.rho");
    const double b = ck.config().get_double("ivon.beta2");
    ck.require(b >= 0.0 && b <= 1.0, "ivon.beta2", "must lie in [0, 1]");
    ck.positive("ivon.temperature");
    ck.non_negative("ivon.damping");
    ck.positive("ivon.init_precision");
    ck.at_least("ivon.samples", 1);
}

inline void apply_ivon(TrainConfig& t, const ResolvedConfig& c) {
    t.optimizer = OptimizerKind::Ivon;
    t.ivon_beta2 = c.get_double("ivon.beta2");
    t.temperature = c.get_double("ivon.temperature");
    t.damping = c.get_double("ivon.damping");
    t.ivon_init_precision = c.get_double("ivon.init_precision");
    t.ivon_samples = static_cast<int>(c.get_int("ivon.samples"));
}

inline Experiment von_compare() {
    Experiment e{"von-compare", "Adam vs IVON preconditioned sharpness on the MLP", {}, {}, {}};
    add_data_model_keys(e.keys);
    e.keys.push_back({"adam.rho", K::Double, "1e-3", "adam step size"});
    e.keys.push_back({"adam.beta2", K::Double, "0.99", "adam second-moment decay"});
    e.keys.push_back({"adam.eps", K::Double, "1e-12", "adam denominator floor"});
    add_ivon_keys(e.keys, false);
    add_run_keys(e.keys, "1500", "50", "1");
    add_common(e.keys);
    e.check = [](Checker& ck) {
        check_data_model(ck);
        check_run(ck);
        ck.positive("adam.rho");
        const double b = ck.config().get_double("adam.beta2");
        ck.require(b >= 0.0 && b < 1.0, "adam.beta2", "must lie in [0, 1)");
        ck.positive("adam.eps");
        check_ivon(ck, false);
    };
    e.run = [](const ResolvedConfig& c, ArtifactWriter& w, unsigned workers, std::ostream& log) {
        TrainConfig a = base_train_config(c, workers);
        a.optimizer = OptimizerKind::Adam;
        a.rho = c.get_double("adam.rho");
        a.beta2 = c.get_double("adam.beta2");
        a.adam_eps = c.get_double("adam.eps");
        TrainConfig v = base_train_config(c, workers);
        apply_ivon(v, c);
        v.rho = c.get_double("ivon.rho");

        nlohmann::ordered_json ma = meta(c), mv = meta(c);
        ma["run"] = "adam";
        mv["run"] = "ivon";
        const TrainResult ra = train_mlp(a, w.jsonl("adam.jsonl", ma, "Adam trajectory"));
        const TrainResult rv = train_mlp(v, w.jsonl("ivon.jsonl", mv, "IVON trajectory"));
        nlohmann::ordered_json s;
        s["meta"] = meta(c);
        s["adam"] = train_summary(ra, a);
        s["ivon"] = train_summary(rv, v);
        w.json("summary.json", s, "preconditioned sharpness of both runs (raw and times rho/2)");
        log_train(log, "adam", ra);
        log_train(log, "ivon", rv);
    };
    return e;
}

inline Experiment elbo_sweep() {
    Experiment e{"elbo-sweep", "IVON variational objective across step sizes and batch sizes", {}, {}, {}};
    add_data_model_keys(e.keys);
    add_ivon_keys(e.keys, true);
    e.keys.push_back({"batch_sizes", K::IntList, "0,100,25", "mini-batch sizes (0 = full batch)"});
    e.keys.push_back({"elbo_samples", K::Int, "16", "samples per ELBO estimate"});
    add_run_keys(e.keys, "600", "50", "1");
    add_common(e.keys);
    e.check = [](Checker& ck) {
        check_data_model(ck);
        check_run(ck);
        check_ivon(ck, true);
        ck.all_at_least("batch_sizes", 0);
        ck.at_least("elbo_samples", 1);
    };
    e.run = [](const ResolvedConfig& c, ArtifactWriter& w, unsigned workers, std::ostream& log) {
        const auto rhos = c.get_doubles("ivon.rho");
        const auto batches = c.get_ints("batch_sizes");
        std::vector<std::vector<std::string>> rows, summary;
        for (const double rho : rhos) {
            for (const auto b : batches) {
                TrainConfig t = base_train_config(c, workers);
                apply_ivon(t, c);
                t.rho = rho;
                t.batch_size = static_cast<std::size_t>(b);
                t.elbo_samples = static_cast<int>(c.get_int("elbo_samples"));
                const TrainResult r = train_mlp(t);
                std::optional<double> last;
                for (const auto& row : r.record.rows()) {
                    if (!row.elbo) continue;
                    last = row.elbo;
                    rows.push_back({fmt(rho), fmt_int(b), fmt_int(static_cast<long long>(row.step)), fmt(*row.elbo),
                                    fmt(row.loss)});
                }
                summary.push_back({fmt(rho), fmt_int(b), fmt(last), fmt(r.final_loss), r.diverged ? "true" : "false"});
                log << "rho " << rho << ", batch " << b << ": final objective " << (last ? *last : NAN)
                    << (r.diverged ? " [diverged]" : "") << "\n";
            }
        }
        w.csv("elbo.csv", {"rho", "batch_size", "step", "objective", "train_loss"}, rows,
              "variational objective E[loss] - entropy per logged step");
        w.csv("summary.csv", {"rho", "batch_size", "final_objective", "final_loss", "diverged"}, summary,
              "final objective per (rho, batch size)");
    };
    return e;
}

}  // namespace detail

inline const std::vector<Experiment>& experiments() {
    static const std::vector<Experiment> all = [] {
        std::vector<Experiment> v;
        v.push_back(detail::quad_heatmap());
        v.push_back(detail::stability_boundary_exp());
        v.push_back(detail::quad_histogram());
        v.push_back(detail::quad_trajectory());
        v.push_back(detail::smoothing());
        v.push_back(detail::escape());
        v.push_back(detail::train());
        v.push_back(detail::spectrum());
        v.push_back(detail::von_compare());
        v.push_back(detail::elbo_sweep());
        return v;
    }();
    return all;
}

inline const Experiment* find_experiment(const std::string& name) {
    for (const auto& e : experiments())
        if (e.name == name) return &e;
    return nullptr;
}

/// Resolution plus semantic checks.
inline Resolution resolve_and_check(const Experiment& e, const RawConfig& file,
                                    const std::vector<std::pair<std::string, std::string>>& overrides) {
    Resolution r = resolve(e.name, e.keys, file, overrides);
    if (!r.ok()) return r;  // semantic checks need well-typed values
    Checker ck(r.config, r.violations);
    e.check(ck);
    return r;
}

inline unsigned resolve_workers(const ResolvedConfig& c) {
    const auto t = c.get_uint("threads");
    if (t == 0) return std::max(1u, std::thread::hardware_concurrency());
    return static_cast<unsigned>(std::min<std::uint64_t>(t, 1024));
}

inline std::filesystem::path resolve_out_dir(const ResolvedConfig& c) {
    const std::string out = c.get_string("out");
    if (!out.empty()) return out;
    if (const char* env = std::getenv("VLAB_OUT_DIR"); env && *env) return std::filesystem::path(env) / c.experiment;
    return std::filesystem::path("vlab-out") / c.experiment;
}

struct RunOutcome {
    std::filesystem::path out_dir;
    std::vector<Artifact> artifacts;
    double wall_clock_seconds = 0.0;
};

inline std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Runs a checked configuration and writes manifest.json next to the artifacts.
/// On failure the manifest records the error and the exception is rethrown.
inline RunOutcome execute(const Experiment& e, const ResolvedConfig& c, std::ostream& log) {
    RunOutcome out;
    out.out_dir = resolve_out_dir(c);
    const unsigned workers = resolve_workers(c);
    ArtifactWriter w(out.out_dir);
    const std::string started = utc_timestamp();
    const auto t0 = std::chrono::steady_clock::now();
    std::string error;
    std::exception_ptr failure;
    try {
        e.run(c, w, workers, log);
    } catch (const std::exception& ex) {
        error = ex.what();
        failure = std::current_exception();
    }
    out.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.artifacts = w.artifacts();

    nlohmann::ordered_json m;
    m["tool"] = "vlab";
    m["version"] = kVersion;
    m["experiment"] = e.name;
    m["seed"] = c.get_uint("seed");
    m["workers"] = workers;
    m["config"] = c.to_json(true);
    m["started_utc"] = started;
    m["wall_clock_seconds"] = out.wall_clock_seconds;
    m["status"] = error.empty() ? "ok" : "error";
    if (!error.empty()) m["error"] = error;
    auto arts = nlohmann::ordered_json::array();
    for (const auto& a : out.artifacts) {
        nlohmann::ordered_json j;
        j["file"] = a.file;
        j["kind"] = a.kind;
        j["description"] = a.description;
        std::error_code ec;
        const auto size = std::filesystem::file_size(out.out_dir / a.file, ec);
        if (!ec) j["bytes"] = size;
        arts.push_back(j);
    }
    m["artifacts"] = arts;
    {
        std::ofstream mf(out.out_dir / "manifest.json", std::ios::binary | std::ios::trunc);
        mf << m.dump(2) << '\n';
    }
    if (failure) std::rethrow_exception(failure);
    return out;
}

}  // namespace vlab::cli
