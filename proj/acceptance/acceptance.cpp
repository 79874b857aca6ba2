// Acceptance suite: one PASS/FAIL line per criterion, exit code 1 if any fails.
//
//   acceptance [--only 1,5,11] [--workers N] [--scratch DIR] [--list]
//
// Tolerances and budgets are fixed below. Runtime budgets assume a single core.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "vlab/cli/experiments.hpp"
#include "vlab/diagnostics.hpp"
#include "vlab/models/mlp.hpp"
#include "vlab/optimizers.hpp"
#include "vlab/quadlab.hpp"
#include "vlab/stability.hpp"
#include "vlab/training.hpp"

namespace {

using namespace vlab;
namespace fs = std::filesystem;

struct Outcome {
    bool pass = false;
    std::string measured;
    std::string tolerance;
};

struct Criterion {
    int id;
    std::string name;
    double budget_seconds;
    std::function<Outcome()> run;
};

struct Options {
    unsigned workers = 1;
    fs::path scratch;
};

Options g_opt;

std::string fmt(double x, int prec = 4) {
    std::ostringstream s;
    s << std::setprecision(prec) << x;
    return s.str();
}

double now_seconds() {
    using clock = std::chrono::steady_clock;
    static const auto t0 = clock::now();
    return std::chrono::duration<double>(clock::now() - t0).count();
}

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
};

// Welford accumulator.
struct Moments {
    std::size_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;
    void add(double x) {
        ++n;
        const double d = x - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (x - mean);
    }
    double variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
    MeanSe mean_se() const { return {mean, std::sqrt(variance() / static_cast<double>(n))}; }
};

// ---------------------------------------------------------------------------
// 1. variational factor
// ---------------------------------------------------------------------------

Outcome vf_properties() {
    const std::size_t n = 10000;
    const double lo = std::log(1e-9), hi = std::log(1e12);
    double worst_residual = 0.0;
    std::size_t range_fail = 0, mono_fail = 0;
    for (const double rho : {0.01, 0.02, 0.05, 0.1, 0.2}) {
        double prev = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double z = std::exp(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1));
            const double vf = variational_factor(z, rho);
            if (!(vf > 0.0 && vf < 1.0)) ++range_fail;
            if (i > 0 && !(vf > prev)) ++mono_fail;
            prev = vf;
            // lambda + lambda^3 / z = 2 / rho at lambda = (2/rho) VF
            const double lam = 2.0 / rho * vf;
            const double res = std::abs(lam + lam * lam * lam / z - 2.0 / rho) / (2.0 / rho);
            worst_residual = std::max(worst_residual, res);
        }
    }
    const bool ok = range_fail == 0 && mono_fail == 0 && worst_residual < 1e-10;
    return {ok,
            "out-of-range " + std::to_string(range_fail) + ", non-increasing " + std::to_string(mono_fail) +
                ", max residual " + fmt(worst_residual, 3),
            "VF in (0,1), strictly increasing, residual < 1e-10"};
}

// ---------------------------------------------------------------------------
// 2. one GD step descends for every m iff every lambda <= 2/rho
// ---------------------------------------------------------------------------

Outcome gd_lemma() {
    RandomStream root(101);
    const double rho = 0.1, top = 2.0 / rho;
    std::size_t wrong = 0, below = 0, above = 0;
    for (std::size_t k = 0; k < 1000; ++k) {
        RandomStream s = root.child(k);
        const std::size_t d = 1 + s.uniform_index(64);
        const bool stable = k % 2 == 0;
        const double delta = 1e-3 * std::pow(500.0, s.uniform());  // 1e-3 .. 0.5
        const double lmax = top * (stable ? 1.0 - delta : 1.0 + delta);
        Vector vals(d);
        vals[0] = lmax;
        for (std::size_t i = 1; i < d; ++i) vals[i] = 0.1 + (lmax - 0.1) * s.uniform();
        std::sort(vals.begin(), vals.end(), std::greater<>());
        const QuadraticProblem p(vals, random_orthogonal(d, s));
        if (stable) {
            ++below;
            // every probe descends
            for (int j = 0; j < 10; ++j) {
                Vector m(d);
                for (auto& x : m) x = s.normal();
                if (!(gd_loss_change(p, m, rho) < 0.0)) {
                    ++wrong;
                    break;
                }
            }
        } else {
            ++above;
            // the top eigenvector ascends
            Vector m(d);
            for (std::size_t r = 0; r < d; ++r) m[r] = p.eigenvectors()(r, 0);
            if (!(gd_loss_change(p, m, rho) > 0.0)) ++wrong;
        }
    }
    return {wrong == 0,
            std::to_string(wrong) + " mismatches over " + std::to_string(below) + " stable + " +
                std::to_string(above) + " unstable quadratics",
            "0 mismatches"};
}

// ---------------------------------------------------------------------------
// 3. expected one-step loss change: closed form vs Monte Carlo
// ---------------------------------------------------------------------------

Outcome expected_descent() {
    RandomStream root(202);
    const std::size_t configs = 50, draws = 1000000;
    std::size_t misses = 0;
    double worst = 0.0;
    for (std::size_t k = 0; k < configs; ++k) {
        RandomStream s = root.child(k);
        const std::size_t d = 2 + s.uniform_index(5);
        const double rho = 0.02 + 0.18 * s.uniform();
        const auto p = QuadraticProblem::random(d, 0.2, 2.5 / rho, s);
        const int ns = 1 + static_cast<int>(s.uniform_index(3));
        Vector var(d);
        const bool diag = k % 2 == 1;
        const double base = 0.01 + 0.5 * s.uniform();
        for (auto& v : var) v = diag ? base * (0.2 + 1.8 * s.uniform()) : base;
        const PosteriorSpec spec = diag ? PosteriorSpec::diagonal(var, ns) : PosteriorSpec::isotropic(base, ns);
        Vector m(d);
        for (auto& x : m) x = s.normal();

        const double closed = expected_loss_change(p, m, rho, spec);

        // Direct simulation: m' = m - rho Q (m + mean_i eps_i).
        const Matrix& q = p.matrix();
        const double l0 = p.loss(m);
        RandomStream mc = root.child(k).child(1);
        Moments acc;
        Vector x(d), next(d);
        for (std::size_t t = 0; t < draws; ++t) {
            for (std::size_t i = 0; i < d; ++i) {
                double e = 0.0;
                for (int j = 0; j < ns; ++j) e += std::sqrt(var[i]) * mc.normal();
                x[i] = m[i] + e / ns;
            }
            for (std::size_t i = 0; i < d; ++i) {
                double g = 0.0;
                for (std::size_t j = 0; j < d; ++j) g += q(i, j) * x[j];
                next[i] = m[i] - rho * g;
            }
            acc.add(p.loss(next) - l0);
        }
        const auto ms = acc.mean_se();
        const double zscore = std::abs(ms.mean - closed) / ms.se;
        worst = std::max(worst, zscore);
        if (zscore > 3.0) ++misses;
    }
    return {misses == 0,
            std::to_string(misses) + "/" + std::to_string(configs) + " configs outside 3 SE, worst |z| " + fmt(worst, 3),
            "all 50 within 3 SE"};
}

// ---------------------------------------------------------------------------
// 4. covariance of the averaged perturbed gradient
// ---------------------------------------------------------------------------

Outcome gradient_covariance() {
    RandomStream root(303);
    const std::size_t trials = 100000, d = 5;
    const auto p = QuadraticProblem::random(d, 0.5, 12.0, root);
    Vector m(d);
    for (auto& x : m) x = root.normal();
    const GradOracle grad = [&](std::span<const double> th, std::span<double> g) {
        const Vector r = p.gradient(th);
        std::copy(r.begin(), r.end(), g.begin());
    };
    const std::vector<std::pair<std::string, PosteriorSpec>> specs{
        {"isotropic N_s=1", PosteriorSpec::isotropic(0.05, 1)},
        {"diagonal N_s=4", PosteriorSpec::diagonal({0.02, 0.05, 0.1, 0.2, 0.01}, 4)},
        {"student-t(10) N_s=2", PosteriorSpec::student_t(0.05, 2, 10.0)}};
    double worst = 0.0;
    std::string detail;
    for (std::size_t k = 0; k < specs.size(); ++k) {
        const auto& spec = specs[k].second;
        std::vector<Vector> means(trials);
        const RandomStream s = root.child(k + 1);
        parallel_for(trials, g_opt.workers, [&](std::size_t t) {
            means[t] = detail::perturbed_gradients(grad, m, spec, s.child(t), 1, false, "acceptance").mean;
        });
        Vector mu(d, 0.0);
        for (const auto& v : means) axpy(1.0 / trials, v, mu);
        Matrix cov(d, d);
        for (const auto& v : means)
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) cov(i, j) += (v[i] - mu[i]) * (v[j] - mu[j]) / (trials - 1.0);
        // Q Sigma Q / N_s
        const Matrix& q = p.matrix();
        Matrix expect(d, d);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                double acc = 0.0;
                for (std::size_t r = 0; r < d; ++r) acc += q(i, r) * spec.variance(r) * q(r, j);
                expect(i, j) = acc / spec.n_samples;
            }
        const double rel = frobenius_norm(subtract(cov, expect)) / frobenius_norm(expect);
        worst = std::max(worst, rel);
        detail += (k ? ", " : "") + specs[k].first + " " + fmt(100 * rel, 3) + "%";
    }
    return {worst < 0.05, detail, "relative Frobenius error < 5%"};
}

// ---------------------------------------------------------------------------
// 5. descent heatmap contour vs theory
// ---------------------------------------------------------------------------

Outcome heatmap_contour() {
    GridExperimentConfig cfg;  // 50 x 50, rho 0.1, N_s 1, 10 trials
    const auto h = descent_heatmap(cfg, g_opt.workers);
    const double a = contour_agreement(h, 1.0);
    return {a >= 0.9, "columns within one cell: " + fmt(100 * a, 3) + "%", ">= 90%"};
}

// ---------------------------------------------------------------------------
// 6. stability boundary over (N_s, sigma^2)
// ---------------------------------------------------------------------------

Outcome boundary_shape() {
    BoundaryConfig cfg;
    const auto b = stability_boundary(cfg, g_opt.workers);
    const bool ok = b.monotonicity_violations == 0 && b.r_squared > 0.9;
    return {ok,
            "monotonicity violations " + std::to_string(b.monotonicity_violations) + ", slope " + fmt(b.slope) +
                ", R^2 " + fmt(b.r_squared),
            "0 violations, R^2 > 0.9"};
}

// ---------------------------------------------------------------------------
// 7. stationary variance vs N_s
// ---------------------------------------------------------------------------

Outcome stationary_variance() {
    const std::vector<int> ns{1000, 200, 100, 50, 20, 10, 5};
    const RandomStream root(404);
    std::vector<IterateHistogram> h(ns.size());
    parallel_for(ns.size(), g_opt.workers, [&](std::size_t k) {
        h[k] = iterate_histogram(15.0, 0.1, 0.01, ns[k], 20000, 10000, root.child(k));
    });
    std::size_t fails = 0;
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k < ns.size(); ++k) {
        const double diff = h[k].variance - h[k - 1].variance;
        const double se = std::hypot(h[k].variance_se, h[k - 1].variance_se);
        const double zscore = diff / se;
        worst = std::min(worst, zscore);
        if (!(zscore > 3.0)) ++fails;
    }
    return {fails == 0,
            std::to_string(fails) + " of 6 pairs not significant, weakest increase " + fmt(worst, 3) + " SE",
            "each step up > 3 SE"};
}

// ---------------------------------------------------------------------------
// 8. smoothed quartic
// ---------------------------------------------------------------------------

Outcome quartic_smoothing() {
    const RandomStream root(505);
    // (a) Monte Carlo curvature matches 12 theta^2 - 4 + 12 sigma^2
    std::size_t mc_fail = 0, cell = 0;
    double worst_z = 0.0;
    for (const double theta : {0.0, 0.5, 1.0})
        for (const double s2 : {0.05, 0.2}) {
            Moments acc;
            const RandomStream s = root.child(cell++);
            for (std::size_t r = 0; r < 4000; ++r) acc.add(averaged_curvature_mc(theta, s2, 10, s.child(r)));
            const auto ms = acc.mean_se();
            const double zscore = std::abs(ms.mean - (12 * theta * theta - 4 + 12 * s2)) / ms.se;
            worst_z = std::max(worst_z, zscore);
            if (zscore > 3.0) ++mc_fail;
        }
    // (b) curvature at the smoothed minimizer is 8 - 24 sigma^2
    double worst_min = 0.0;
    for (const double s2 : {0.0, 0.01, 0.05, 0.1, 0.2, 0.3}) {
        const auto m = smoothed_quartic_minimizer(s2);
        if (!m) {
            worst_min = std::numeric_limits<double>::infinity();
            continue;
        }
        worst_min = std::max(worst_min, std::abs(smoothed_quartic(*m, s2).curvature - (8 - 24 * s2)));
    }
    // (c) estimator variance ~ 1/N_s
    std::vector<double> lx, ly;
    const RandomStream vs = root.child(100);
    for (int ns = 1; ns <= 128; ns *= 2) {
        Moments acc;
        const RandomStream s = vs.child(static_cast<std::uint64_t>(ns));
        for (std::size_t r = 0; r < 4000; ++r) acc.add(averaged_curvature_mc(0.5, 0.1, ns, s.child(r)));
        lx.push_back(std::log(ns));
        ly.push_back(std::log(acc.variance()));
    }
    const double xb = stable_mean(lx), yb = stable_mean(ly);
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxy += (lx[i] - xb) * (ly[i] - yb);
        sxx += (lx[i] - xb) * (lx[i] - xb);
    }
    const double slope = sxy / sxx;
    const bool ok = mc_fail == 0 && worst_min < 1e-12 && std::abs(slope + 1.0) <= 0.15;
    return {ok,
            "MC cells outside 3 SE " + std::to_string(mc_fail) + "/6 (worst " + fmt(worst_z, 3) +
                "), minimizer curvature error " + fmt(worst_min, 3) + ", variance slope " + fmt(slope),
            "3 SE, 1e-12, slope -1 +- 0.15"};
}

// ---------------------------------------------------------------------------
// 9. MLP gradient and Hessian-vector oracles
// ---------------------------------------------------------------------------

Outcome mlp_oracles() {
    RandomStream root(606);
    RandomStream ds = root.child(0);
    const Dataset data = synth_dataset(3, 8, 5, 1.5, ds);
    const Mlp net({5, 6, 6, 3}, Activation::Tanh);
    const std::size_t n = net.param_count();
    double g_err = 0, h_err = 0, sym_err = 0;
    for (std::size_t k = 0; k < 100; ++k) {
        RandomStream s = root.child(k + 1);
        const Vector th = net.init(s, 1.5);
        Vector u(n), v(n);
        for (auto& x : u) x = s.normal();
        for (auto& x : v) x = s.normal();
        scale(1.0 / norm2(u), u);
        scale(1.0 / norm2(v), v);

        const double h1 = 1e-5;
        Vector tp = th, tm = th;
        axpy(h1, v, tp);
        axpy(-h1, v, tm);
        const double fd = (net.loss(tp, data) - net.loss(tm, data)) / (2 * h1);
        const double an = dot(net.grad(th, data), v);
        g_err = std::max(g_err, std::abs(fd - an) / std::max(1.0, std::abs(an)));

        const Vector hv = net.hvp(th, data, {}, v);
        const Vector gp = net.grad(tp, data), gm = net.grad(tm, data);
        Vector fdh(n);
        for (std::size_t i = 0; i < n; ++i) fdh[i] = (gp[i] - gm[i]) / (2 * h1);
        Vector diff = fdh;
        axpy(-1.0, hv, diff);
        h_err = std::max(h_err, norm2(diff) / std::max(1.0, norm2(hv)));

        const Vector hu = net.hvp(th, data, {}, u);
        const double scale_h = std::max({1.0, norm2(hu), norm2(hv)});
        sym_err = std::max(sym_err, std::abs(dot(u, hv) - dot(v, hu)) / scale_h);
    }
    const bool ok = g_err < 1e-6 && h_err < 1e-5 && sym_err < 1e-10;
    return {ok,
            "grad FD " + fmt(g_err, 3) + ", HVP FD " + fmt(h_err, 3) + ", symmetry " + fmt(sym_err, 3),
            "< 1e-6, < 1e-5, < 1e-10"};
}

// ---------------------------------------------------------------------------
// 10. Lanczos vs dense eigensolver
// ---------------------------------------------------------------------------

Outcome lanczos_top3() {
    RandomStream root(707);
    const std::size_t d = 64;
    double worst = 0.0;
    std::size_t unconverged = 0;
    for (std::size_t k = 0; k < 100; ++k) {
        RandomStream s = root.child(k);
        Vector vals(d);
        for (auto& x : vals) x = 0.01 * std::pow(1e4, s.uniform());
        const Matrix a = compose_symmetric(vals, random_orthogonal(d, s));
        const auto dense = symmetric_eig(a);
        const HvpOracle op = [&a](std::span<const double> x, std::span<double> y) {
            const Vector r = matvec(a, x);
            std::copy(r.begin(), r.end(), y.begin());
        };
        const auto lz = top_eigen(op, d, 3, 200, 1e-12, s);
        if (!lz.converged) ++unconverged;
        for (std::size_t i = 0; i < 3; ++i)
            worst = std::max(worst, std::abs(lz.values[i] - dense.values[i]) / std::abs(dense.values[i]));
    }
    return {worst < 1e-8, "max relative error " + fmt(worst, 3) + ", unconverged " + std::to_string(unconverged),
            "< 1e-8"};
}

// ---------------------------------------------------------------------------
// MLP runs shared by 11-13
// ---------------------------------------------------------------------------

std::map<std::string, TrainResult>& run_cache() {
    static std::map<std::string, TrainResult> c;
    return c;
}

double g_max_run_seconds = 0.0;

// Default training configuration with the given overrides.
const TrainResult& train_run(const std::vector<std::pair<std::string, std::string>>& overrides) {
    std::string key;
    for (const auto& [k, v] : overrides) key += k + "=" + v + ";";
    auto& cache = run_cache();
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    const auto* e = cli::find_experiment("train");
    const auto r = cli::resolve_and_check(*e, {}, overrides);
    if (!r.ok()) throw std::runtime_error("acceptance: bad training overrides: " + r.violations[0].describe());
    const TrainConfig t = cli::detail::train_config_from(r.config, g_opt.workers);
    TrainResult res = train_mlp(t);
    g_max_run_seconds = std::max(g_max_run_seconds, res.elapsed_seconds);
    std::cout << "    run " << key << " final sharpness " << fmt(res.final_sharpness) << ", gap "
              << fmt(res.tracking_gap, 3) << " (" << fmt(res.elapsed_seconds, 3) << " s)" << std::endl;
    return cache.emplace(key, std::move(res)).first->second;
}

std::vector<std::pair<std::string, std::string>> vgd(double rho, double s2, int ns, const std::string& family = "",
                                                     double alpha = 0.0) {
    std::vector<std::pair<std::string, std::string>> o{{"optimizer.kind", "vgd"},
                                                       {"optimizer.rho", fmt(rho, 6)},
                                                       {"perturbation.sigma2", fmt(s2, 6)},
                                                       {"perturbation.n_samples", std::to_string(ns)}};
    if (!family.empty()) {
        o.push_back({"perturbation.family", family});
        o.push_back({"perturbation.alpha", fmt(alpha, 6)});
    }
    return o;
}

// ---------------------------------------------------------------------------
// 11. sharpness tracks (2/rho) VF under VGD
// ---------------------------------------------------------------------------

Outcome sharpness_tracking() {
    g_max_run_seconds = 0.0;
    std::size_t fails = 0;
    std::string detail;
    for (const double rho : {0.01, 0.02, 0.05}) {
        const auto& gd = train_run({{"optimizer.kind", "gd"}, {"optimizer.rho", fmt(rho, 6)}});
        for (const double s2 : {1e-5, 1e-4}) {
            const auto& v = train_run(vgd(rho, s2, 1));
            const bool ok = !v.diverged && v.tracking_gap < 0.15 && v.final_sharpness < gd.final_sharpness;
            if (!ok) ++fails;
            detail += (detail.empty() ? "" : "; ") + std::string("rho ") + fmt(rho) + " s2 " + fmt(s2) + ": gap " +
                      fmt(v.tracking_gap, 3) + ", sharpness " + fmt(v.final_sharpness) + " vs GD " +
                      fmt(gd.final_sharpness);
        }
    }
    const bool in_budget = g_max_run_seconds < 600.0;
    return {fails == 0 && in_budget,
            std::to_string(fails) + "/6 cells fail; " + detail + "; slowest run " + fmt(g_max_run_seconds, 3) + " s",
            "gap < 0.15 and VGD sharpness < GD, each run < 600 s"};
}

// ---------------------------------------------------------------------------
// 12. ablation over (sigma^2, N_s)
// ---------------------------------------------------------------------------

Outcome ablation() {
    const double rho = 0.05;
    const std::vector<double> s2{1e-5, 3e-5, 1e-4};
    const std::vector<int> ns{1, 2, 4};
    std::vector<std::vector<double>> sharp(ns.size(), std::vector<double>(s2.size()));
    for (std::size_t i = 0; i < ns.size(); ++i)
        for (std::size_t j = 0; j < s2.size(); ++j) sharp[i][j] = train_run(vgd(rho, s2[j], ns[i])).final_sharpness;
    std::size_t inversions = 0;
    for (std::size_t i = 0; i < ns.size(); ++i)
        for (std::size_t j = 0; j + 1 < s2.size(); ++j)
            if (!(sharp[i][j + 1] <= sharp[i][j])) ++inversions;
    for (std::size_t j = 0; j < s2.size(); ++j)
        for (std::size_t i = 0; i + 1 < ns.size(); ++i)
            if (!(sharp[i + 1][j] >= sharp[i][j])) ++inversions;
    // second-half means are printed for reference only
    std::string grid;
    for (std::size_t i = 0; i < ns.size(); ++i) {
        grid += (i ? " | " : "") + std::string("N_s ") + std::to_string(ns[i]) + ":";
        for (std::size_t j = 0; j < s2.size(); ++j)
            grid += " " + fmt(sharp[i][j]) + " (mean " + fmt(train_run(vgd(rho, s2[j], ns[i])).mean_sharpness) + ")";
    }
    return {inversions <= 1, std::to_string(inversions) + " inversions; " + grid, "<= 1 adjacent inversion"};
}

// ---------------------------------------------------------------------------
// 13. heavy-tailed perturbations at matched variance
// ---------------------------------------------------------------------------

Outcome heavy_tail() {
    const std::vector<double> alphas{1000.0, 10.0, 3.0};
    std::vector<double> sharp, mean;
    for (const double a : alphas) {
        const auto& r = train_run(vgd(0.05, 1e-4, 1, "student-t", a));
        sharp.push_back(r.final_sharpness);
        mean.push_back(r.mean_sharpness);
    }
    std::size_t bad = 0;
    for (std::size_t i = 0; i + 1 < sharp.size(); ++i)
        if (!(sharp[i + 1] <= sharp[i])) ++bad;
    return {bad == 0,
            "final sharpness alpha 1000/10/3: " + fmt(sharp[0]) + " / " + fmt(sharp[1]) + " / " + fmt(sharp[2]) +
                " (second-half means, reference only: " + fmt(mean[0]) + " / " + fmt(mean[1]) + " / " + fmt(mean[2]) +
                ")",
            "non-increasing as alpha decreases"};
}

// ---------------------------------------------------------------------------
// 14. Stein estimator and Adam vs IVON preconditioned sharpness
// ---------------------------------------------------------------------------

nlohmann::json read_json(const fs::path& p) {
    std::ifstream in(p);
    return nlohmann::json::parse(in);
}

Outcome von_ivon() {
    RandomStream root(808);
    const std::size_t d = 8, samples = 100000;
    const auto p = QuadraticProblem::random(d, 0.5, 20.0, root);
    Vector m(d);
    for (auto& x : m) x = root.normal();
    Vector var(d);
    for (auto& v : var) v = 0.01 + 0.1 * root.uniform();
    std::vector<Moments> acc(d);
    const RandomStream s = root.child(1);
    for (std::size_t t = 0; t < samples; ++t) {
        RandomStream st = s.child(t);
        Vector eps(d), th = m;
        for (std::size_t i = 0; i < d; ++i) eps[i] = std::sqrt(var[i]) * st.normal();
        axpy(1.0, eps, th);
        const std::vector<Vector> g{p.gradient(th)}, e{eps};
        const Vector h = stein_hessian_estimate(g, e, var);
        for (std::size_t i = 0; i < d; ++i) acc[i].add(h[i]);
    }
    std::size_t stein_fail = 0;
    double worst_z = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const auto ms = acc[i].mean_se();
        const double zscore = std::abs(ms.mean - p.matrix()(i, i)) / ms.se;
        worst_z = std::max(worst_z, zscore);
        if (zscore > 3.0) ++stein_fail;
    }

    const auto* e = cli::find_experiment("von-compare");
    const fs::path out = g_opt.scratch / "von-compare";
    fs::remove_all(out);
    const auto r = cli::resolve_and_check(*e, {}, {{"out", out.string()}, {"threads", std::to_string(g_opt.workers)}});
    if (!r.ok()) throw std::runtime_error("von-compare defaults rejected");
    std::ostringstream log;
    cli::execute(*e, r.config, log);
    const auto sum = read_json(out / "summary.json");
    auto num = [](const nlohmann::json& j) { return j.is_number() ? j.get<double>() : std::nan(""); };
    const double adam = num(sum["adam"]["normalized_precond_sharpness_second_half"]);
    const double ivon = num(sum["ivon"]["normalized_precond_sharpness_second_half"]);
    const bool below = ivon < adam;
    const bool hover = adam >= 0.5 && adam <= 1.5;
    const bool ok = stein_fail == 0 && below && hover;
    return {ok,
            "Stein coords outside 3 SE " + std::to_string(stein_fail) + "/8 (worst " + fmt(worst_z, 3) +
                "); rho*precond/2: adam " + fmt(adam) + ", ivon " + fmt(ivon),
            "3 SE; ivon < adam; adam in [0.5, 1.5]"};
}

// ---------------------------------------------------------------------------
// 15. byte-identical artifacts across worker counts
// ---------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::map<std::string, std::string> artifact_bytes(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().filename() == "manifest.json") continue;
        files[entry.path().filename().string()] = slurp(entry.path());
    }
    return files;
}

Outcome determinism() {
    const std::string small_mlp_data =
        "data.classes=3;data.per_class=10;data.test_per_class=4;data.input_dim=6;model.hidden=8;steps=40;"
        "log_every=10";
    const std::vector<std::pair<std::string, std::string>> runs{
        {"quad-heatmap", "inv_sigma2.count=12;lambda.count=10"},
        {"stability-boundary", "n_samples=1,3,5;sigma2.count=9;steps=100;trials=3"},
        {"quad-histogram", "n_samples=100,10;steps=2000"},
        {"quad-trajectory", "steps=50"},
        {"smoothing", "realizations=200;variance.realizations=200;variance.n_samples=1,4,16"},
        {"escape", "runs=5;steps=200;sigma2=0,0.1"},
        {"train", small_mlp_data + ";optimizer.kind=vgd;perturbation.sigma2=1e-3;perturbation.n_samples=4;"
                                   "batch_size=12;elbo_samples=3"},
        {"spectrum", small_mlp_data + ";optimizer.kind=vgd;perturbation.sigma2=1e-3;perturbation.n_samples=3"},
        {"von-compare", small_mlp_data},
        {"elbo-sweep", small_mlp_data + ";ivon.rho=0.1;batch_sizes=0,10;elbo_samples=3"},
    };
    std::size_t mismatched = 0, compared = 0;
    std::string which;
    for (const auto& [name, sets] : runs) {
        const auto* e = cli::find_experiment(name);
        if (!e) throw std::runtime_error("unknown experiment " + name);
        std::map<std::string, std::string> reference;
        for (const unsigned workers : {1u, 4u, 8u}) {
            std::vector<std::pair<std::string, std::string>> ov;
            std::stringstream ss(sets);
            std::string item;
            while (std::getline(ss, item, ';')) ov.push_back(cli::parse_assignment(item));
            const fs::path out = g_opt.scratch / "determinism" / name / std::to_string(workers);
            fs::remove_all(out);
            ov.push_back({"out", out.string()});
            ov.push_back({"threads", std::to_string(workers)});
            ov.push_back({"seed", "17"});
            const auto r = cli::resolve_and_check(*e, {}, ov);
            if (!r.ok()) throw std::runtime_error(name + ": " + r.violations[0].describe());
            std::ostringstream log;
            cli::execute(*e, r.config, log);
            auto files = artifact_bytes(out);
            if (workers == 1) {
                reference = std::move(files);
                continue;
            }
            ++compared;
            if (files != reference) {
                ++mismatched;
                which += " " + name + "@" + std::to_string(workers);
            }
        }
    }
    return {mismatched == 0,
            std::to_string(mismatched) + " of " + std::to_string(compared) + " comparisons differ" +
                (which.empty() ? "" : ":" + which) + " (" + std::to_string(runs.size()) + " experiments)",
            "0 differences at 1/4/8 workers"};
}

std::vector<Criterion> criteria() {
    return {
        {1, "variational factor", 1.0, vf_properties},
        {2, "GD descent lemma", 5.0, gd_lemma},
        {3, "expected descent closed form", 60.0, expected_descent},
        {4, "perturbed-gradient covariance", 30.0, gradient_covariance},
        {5, "heatmap contour vs theory", 120.0, heatmap_contour},
        {6, "stability boundary", 120.0, boundary_shape},
        {7, "stationary variance vs N_s", 60.0, stationary_variance},
        {8, "smoothed quartic curvature", 60.0, quartic_smoothing},
        {9, "MLP grad/HVP oracles", 30.0, mlp_oracles},
        {10, "Lanczos top-3", 30.0, lanczos_top3},
        // per-run limit checked inside; the sweep has nine runs
        {11, "sharpness tracks (2/rho) VF", 5400.0, sharpness_tracking},
        {12, "ablation over sigma^2 and N_s", 1800.0, ablation},
        {13, "heavy-tailed perturbations", 1200.0, heavy_tail},
        {14, "Stein estimate and IVON vs Adam", 1200.0, von_ivon},
        {15, "determinism across workers", 300.0, determinism},
    };
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vlab acceptance suite"};
    std::vector<int> only;
    bool list = false;
    std::string scratch = (fs::temp_directory_path() / "vlab-acceptance").string();
    app.add_option("--only", only, "criterion ids to run (default all)")->delimiter(',');
    app.add_option("--workers", g_opt.workers, "worker threads for parallel sections")->check(CLI::Range(1u, 1024u));
    app.add_option("--scratch", scratch, "directory for experiment outputs");
    app.add_flag("--list", list, "list criteria and exit");
    CLI11_PARSE(app, argc, argv);
    g_opt.scratch = scratch;

    const auto all = criteria();
    if (list) {
        for (const auto& c : all) std::cout << c.id << "  " << c.name << " (budget " << c.budget_seconds << " s)\n";
        return 0;
    }
    const std::set<int> pick(only.begin(), only.end());
    std::size_t failed = 0, ran = 0;
    for (const auto& c : all) {
        if (!pick.empty() && !pick.count(c.id)) continue;
        ++ran;
        std::cout << "... " << c.id << " " << c.name << std::endl;
        const double t0 = now_seconds();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& ex) {
            o = {false, std::string("error: ") + ex.what(), ""};
        }
        const double dt = now_seconds() - t0;
        const bool in_time = dt < c.budget_seconds;
        const bool pass = o.pass && in_time;
        if (!pass) ++failed;
        std::cout << (pass ? "PASS" : "FAIL") << "  [" << std::setw(2) << c.id << "] " << c.name << ": " << o.measured
                  << " (need " << o.tolerance << ") [" << fmt(dt, 3) << " s of " << c.budget_seconds << " s"
                  << (in_time ? "" : ", over budget") << "]" << std::endl;
    }
    std::cout << (ran - failed) << "/" << ran << " criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
