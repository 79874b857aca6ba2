#pragma once

// Toy-landscape experiments: quadratic trajectories, descent-probability
// heatmaps, stability boundaries, iterate histograms, quartic smoothing and a
// double-well escape demo.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vlab/diagnostics.hpp"
#include "vlab/error.hpp"
#include "vlab/numerics/linalg.hpp"
#include "vlab/numerics/parallel.hpp"
#include "vlab/numerics/random.hpp"
#include "vlab/numerics/summation.hpp"
#include "vlab/optimizers.hpp"
#include "vlab/stability.hpp"

namespace vlab {

// ---------------------------------------------------------------------------
// Quadratic trajectories
// ---------------------------------------------------------------------------

enum class QuadOptimizer { Gd, Vgd };

struct QuadTrajectory {
    TrajectoryRecord record;
    Vector loss;        ///< loss before step 0, then after each completed step
    Vector iterate_norm;
    Vector final_iterate;
    StabilityClass classification = StabilityClass::Converged;
    bool truncated = false;  ///< stopped early on a non-finite value
};

/// Runs `steps` updates from m0. Step t draws from stream.child(t). Every
/// `log_every` steps (and the last one) a row with per-mode thresholds is
/// recorded; pass a record opened on a file to stream rows to disk.
inline QuadTrajectory run_quadratic_trajectory(const QuadraticProblem& problem, QuadOptimizer optimizer,
                                               const PosteriorSpec& spec, std::span<const double> m0, double rho,
                                               std::size_t steps, const RandomStream& stream,
                                               TrajectoryRecord record = {}, std::size_t log_every = 1) {
    if (steps < 1) throw ContractError("run_quadratic_trajectory: steps must be >= 1");
    if (m0.size() != problem.dim()) throw ContractError("run_quadratic_trajectory: m0 has wrong dimension");
    if (!(rho > 0.0)) throw InvalidSpecError("run_quadratic_trajectory: rho must be positive");
    spec.validate(problem.dim());
    log_every = std::max<std::size_t>(log_every, 1);

    QuadTrajectory out;
    out.record = std::move(record);
    const GradOracle grad = [&](std::span<const double> th, std::span<double> g) {
        const Vector v = problem.gradient(th);
        std::copy(v.begin(), v.end(), g.begin());
    };
    VgdState vgd;
    GdState gd;
    vgd.m.assign(m0.begin(), m0.end());
    vgd.spec = spec;
    vgd.rho = rho;
    gd.m = vgd.m;
    gd.rho = rho;
    const Vector& m = optimizer == QuadOptimizer::Gd ? gd.m : vgd.m;

    auto log_row = [&](std::size_t t, double loss, double norm) {
        TrajectoryRow row;
        row.step = t;
        row.loss = loss;
        row.iterate_norm = norm;
        if (std::isfinite(loss)) {
            const Vector g = problem.gradient(m);
            row.grad_norm = norm2(g);
            const auto diag = mode_diagnostics(problem, optimizer == QuadOptimizer::Gd ? PosteriorSpec{} : spec, m, rho);
            for (const auto& mode : diag.modes) {
                row.top_eigs.push_back(mode.lambda);
                row.thresholds.push_back(mode.threshold);
                row.z.push_back(mode.z);
                if (mode.z_clamped && std::find(row.flags.begin(), row.flags.end(), "z-clamped") == row.flags.end())
                    row.flags.push_back("z-clamped");
            }
            row.sharpness = diag.modes.front().lambda;
            row.normalized_sharpness = diag.modes.front().lambda * rho / 2.0;
            row.vf = diag.modes.front().vf;
        }
        out.record.record_step(std::move(row));
    };

    double loss = problem.loss(m);
    out.loss.push_back(loss);
    out.iterate_norm.push_back(norm2(m));
    log_row(0, loss, out.iterate_norm.back());
    for (std::size_t t = 0; t < steps; ++t) {
        if (optimizer == QuadOptimizer::Gd)
            gd_step(gd, grad);
        else
            vgd_step(vgd, grad, stream.child(t));
        loss = problem.loss(m);
        const double norm = norm2(m);
        out.loss.push_back(loss);
        out.iterate_norm.push_back(norm);
        const bool bad = !std::isfinite(loss) || !std::isfinite(norm);
        if (bad || (t + 1) % log_every == 0 || t + 1 == steps) log_row(t + 1, loss, norm);
        if (bad) {
            out.truncated = true;
            break;
        }
    }
    out.final_iterate = m;
    if (out.truncated) {
        out.classification = StabilityClass::Divergent;
    } else {
        ClassifyOptions opts;
        opts.min_length = std::min<std::size_t>(opts.min_length, out.loss.size());
        out.classification = classify_stability(out.loss, out.iterate_norm, opts);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Grid experiments
// ---------------------------------------------------------------------------

struct GridAxis {
    std::string name;
    double min = 0.0;
    double max = 1.0;
    std::size_t count = 2;
    bool log = false;

    void validate() const {
        if (count < 2) throw InvalidSpecError("axis '" + name + "': count must be >= 2");
        if (!(min < max) || !std::isfinite(min) || !std::isfinite(max))
            throw InvalidSpecError("axis '" + name + "': need finite min < max");
        if (log && !(min > 0.0)) throw InvalidSpecError("axis '" + name + "': log axis needs min > 0");
    }

    std::vector<double> values() const {
        validate();
        std::vector<double> v(count);
        for (std::size_t i = 0; i < count; ++i) {
            const double f = static_cast<double>(i) / static_cast<double>(count - 1);
            v[i] = log ? min * std::pow(max / min, f) : min + (max - min) * f;
        }
        v.back() = max;
        return v;
    }

    /// Fractional grid index of x (linear or logarithmic position).
    double position(double x) const {
        const double f = log ? std::log(x / min) / std::log(max / min) : (x - min) / (max - min);
        return f * static_cast<double>(count - 1);
    }
};

/// Descent-probability grid over (1/sigma^2, lambda) on the 1-D quadratic l = lambda m^2 / 2.
struct GridExperimentConfig {
    GridAxis x{"inv_sigma2", 0.1, 100.0, 50, true};  ///< columns: 1/sigma^2
    GridAxis y{"lambda", 0.5, 25.0, 50, false};      ///< rows: lambda
    double rho = 0.1;
    int n_samples = 1;
    double m0 = 1.0;
    std::size_t trials = 10;
    std::uint64_t seed = 0;

    void validate() const {
        x.validate();
        y.validate();
        if (!(x.min > 0.0)) throw InvalidSpecError("heatmap: 1/sigma^2 axis must be positive");
        if (!(y.min > 0.0)) throw InvalidSpecError("heatmap: lambda axis must be positive");
        if (!(rho > 0.0)) throw InvalidSpecError("heatmap: rho must be positive");
        if (n_samples < 1) throw InvalidSpecError("heatmap: n_samples must be >= 1");
        if (trials < 1) throw InvalidSpecError("heatmap: trials must be >= 1");
        if (!std::isfinite(m0) || m0 == 0.0) throw InvalidSpecError("heatmap: m0 must be finite and non-zero");
    }
};

/// lambda solving lambda = (2/rho) VF(z(lambda)) with z = N_s (lambda m)^2 / sigma^2,
/// found by bisection on (0, 2/rho). sigma2 = 0 gives 2/rho.
inline double theory_threshold_lambda(double sigma2, double rho, int n_samples, double m) {
    const double top = 2.0 / rho;
    if (sigma2 == 0.0) return top;
    auto f = [&](double lambda) {
        const double z = std::max(n_samples * lambda * lambda * m * m / sigma2, kZFloor);
        return lambda - stability_threshold(z, rho);
    };
    double lo = 0.0;
    double hi = top;
    for (int it = 0; it < 200 && hi - lo > 1e-15 * top; ++it) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) < 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

struct HeatmapResult {
    std::vector<double> x;  ///< 1/sigma^2 per column
    std::vector<double> y;  ///< lambda per row
    Matrix probability;     ///< rows = lambda, cols = 1/sigma^2
    std::vector<double> theory_lambda;
    std::vector<double> theory_position;                 ///< fractional row index of the theory curve
    std::vector<std::optional<double>> contour_position; ///< fractional row index of the empirical 0.5 crossing
};

/// Fractional row index where a column first falls below `level` scanning up the
/// lambda axis (linear interpolation between rows). Empty if it never crosses.
inline std::optional<double> contour_crossing(const Matrix& p, std::size_t col, double level = 0.5) {
    if (p(0, col) < level) return 0.0;
    for (std::size_t r = 1; r < p.rows(); ++r) {
        if (p(r, col) < level) {
            const double a = p(r - 1, col);
            const double b = p(r, col);
            return static_cast<double>(r - 1) + (a - level) / (a - b);
        }
    }
    return std::nullopt;
}

/// Cell (row, col) draws trial t from RandomStream(seed, {row, col, t}).
inline HeatmapResult descent_heatmap(const GridExperimentConfig& cfg, unsigned workers = 1) {
    cfg.validate();
    HeatmapResult out;
    out.x = cfg.x.values();
    out.y = cfg.y.values();
    out.probability = Matrix(out.y.size(), out.x.size());
    const RandomStream root(cfg.seed);
    const std::size_t cells = out.x.size() * out.y.size();
    parallel_for(cells, workers, [&](std::size_t idx) {
        const std::size_t r = idx / out.x.size();
        const std::size_t c = idx % out.x.size();
        const double sigma2 = 1.0 / out.x[c];
        out.probability(r, c) = descent_probability_mc(out.y[r], cfg.m0, cfg.rho, sigma2, cfg.n_samples, cfg.trials,
                                                       root.child(r).child(c));
    });
    for (std::size_t c = 0; c < out.x.size(); ++c) {
        const double lam = theory_threshold_lambda(1.0 / out.x[c], cfg.rho, cfg.n_samples, cfg.m0);
        out.theory_lambda.push_back(lam);
        out.theory_position.push_back(cfg.y.position(lam));
        out.contour_position.push_back(contour_crossing(out.probability, c));
    }
    return out;
}

/// Fraction of columns whose empirical contour lies within `cells` rows of the theory curve.
inline double contour_agreement(const HeatmapResult& h, double cells = 1.0) {
    std::size_t hits = 0;
    for (std::size_t c = 0; c < h.x.size(); ++c) {
        // A column that never crosses agrees only if the theory curve is off the top of the grid.
        const double emp = h.contour_position[c].value_or(static_cast<double>(h.y.size() - 1));
        if (std::abs(emp - h.theory_position[c]) <= cells) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(h.x.size());
}

/// Hard-thresholded heatmap: 1 where probability >= level.
inline Matrix threshold_matrix(const Matrix& p, double level = 0.5) {
    Matrix out(p.rows(), p.cols());
    for (std::size_t r = 0; r < p.rows(); ++r)
        for (std::size_t c = 0; c < p.cols(); ++c) out(r, c) = p(r, c) >= level ? 1.0 : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Stability boundary over (N_s, sigma^2)
// ---------------------------------------------------------------------------

struct BoundaryConfig {
    std::vector<int> n_samples{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    GridAxis sigma2{"sigma2", 1e3, 1e8, 51, true};
    double lambda = 15.0;
    double rho = 0.1;
    double m0 = 1.0;
    std::size_t steps = 400;
    std::size_t trials = 5;  ///< trajectories per cell; the cell takes the majority class
    std::uint64_t seed = 0;

    void validate() const {
        sigma2.validate();
        if (n_samples.empty()) throw InvalidSpecError("boundary: need at least one N_s value");
        for (const int n : n_samples)
            if (n < 1) throw InvalidSpecError("boundary: N_s values must be >= 1");
        if (!(rho > 0.0) || !(lambda > 0.0)) throw InvalidSpecError("boundary: rho and lambda must be positive");
        if (steps < 8) throw InvalidSpecError("boundary: need at least 8 steps");
        if (trials < 1) throw InvalidSpecError("boundary: trials must be >= 1");
        if (!std::isfinite(m0) || m0 == 0.0) throw InvalidSpecError("boundary: m0 must be finite and non-zero");
    }
};

struct BoundaryResult {
    std::vector<int> n_samples;  ///< columns
    std::vector<double> sigma2;  ///< rows
    std::vector<std::vector<StabilityClass>> classes;  ///< [row][col], majority over trials
    std::vector<std::vector<double>> divergent_fraction;  ///< [row][col]
    /// sigma^2 = N_s c / z* from the one-step threshold at m0 (empty when lambda >= 2/rho).
    std::vector<double> theory_sigma2;
    /// Per column: geometric midpoint between the largest stable and smallest
    /// unstable variance; empty when the column does not switch.
    std::vector<std::optional<double>> empirical_sigma2;
    double slope = 0.0;      ///< least-squares line through the origin
    double r_squared = 0.0;  ///< of that fit
    std::size_t monotonicity_violations = 0;

    bool stable(std::size_t row, std::size_t col) const { return classes[row][col] != StabilityClass::Divergent; }
};

/// Least-squares y = k x through the origin; returns (k, R^2) with R^2 computed
/// against the mean of y.
inline std::pair<double, double> fit_through_origin(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw ContractError("fit_through_origin: need >= 2 paired points");
    CompensatedSum sxy, sxx, sy;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy.add(x[i] * y[i]);
        sxx.add(x[i] * x[i]);
        sy.add(y[i]);
    }
    const double k = sxy.value() / sxx.value();
    const double ybar = sy.value() / static_cast<double>(y.size());
    CompensatedSum res, tot;
    for (std::size_t i = 0; i < x.size(); ++i) {
        res.add(std::pow(y[i] - k * x[i], 2));
        tot.add(std::pow(y[i] - ybar, 2));
    }
    const double r2 = tot.value() > 0.0 ? 1.0 - res.value() / tot.value() : (res.value() == 0.0 ? 1.0 : 0.0);
    return {k, r2};
}

/// Each cell runs `trials` 1-D VGD trajectories from m0; trial k of cell
/// (row, col) uses root.child(row).child(col).child(k), step t at child(t).
inline BoundaryResult stability_boundary(const BoundaryConfig& cfg, unsigned workers = 1) {
    cfg.validate();
    BoundaryResult out;
    out.n_samples = cfg.n_samples;
    out.sigma2 = cfg.sigma2.values();
    const std::size_t rows = out.sigma2.size();
    const std::size_t cols = out.n_samples.size();
    out.classes.assign(rows, std::vector<StabilityClass>(cols, StabilityClass::Converged));
    out.divergent_fraction.assign(rows, std::vector<double>(cols, 0.0));
    const RandomStream root(cfg.seed);
    parallel_for(rows * cols, workers, [&](std::size_t idx) {
        const std::size_t r = idx / cols;
        const std::size_t c = idx % cols;
        std::size_t votes[3] = {0, 0, 0};
        Vector loss, norm;
        loss.reserve(cfg.steps + 1);
        norm.reserve(cfg.steps + 1);
        for (std::size_t k = 0; k < cfg.trials; ++k) {
            const RandomStream cell = root.child(r).child(c).child(k);
            loss.clear();
            norm.clear();
            double m = cfg.m0;
            loss.push_back(0.5 * cfg.lambda * m * m);
            norm.push_back(std::abs(m));
            for (std::size_t t = 0; t < cfg.steps; ++t) {
                RandomStream s = cell.child(t);
                m = vgd_step_1d(cfg.lambda, m, cfg.rho, out.sigma2[r], out.n_samples[c], s);
                loss.push_back(0.5 * cfg.lambda * m * m);
                norm.push_back(std::abs(m));
                if (!std::isfinite(m)) break;
            }
            ++votes[static_cast<int>(classify_stability(loss, norm))];
        }
        const auto div = votes[static_cast<int>(StabilityClass::Divergent)];
        out.divergent_fraction[r][c] = static_cast<double>(div) / static_cast<double>(cfg.trials);
        if (2 * div > cfg.trials) out.classes[r][c] = StabilityClass::Divergent;
        else if (votes[static_cast<int>(StabilityClass::StochasticallyStable)] > votes[static_cast<int>(StabilityClass::Converged)])
            out.classes[r][c] = StabilityClass::StochasticallyStable;
        else out.classes[r][c] = StabilityClass::Converged;
    });

    const double c_const = std::pow(cfg.lambda * cfg.m0, 2);
    const bool below = cfg.lambda * cfg.rho < 2.0;
    const double zstar = below ? critical_z(cfg.lambda, cfg.rho) : 0.0;
    std::vector<double> xs, ys;
    for (std::size_t c = 0; c < cols; ++c) {
        if (below) out.theory_sigma2.push_back(out.n_samples[c] * c_const / zstar);
        std::optional<double> boundary;
        for (std::size_t r = 1; r < rows; ++r) {
            if (out.stable(r - 1, c) && !out.stable(r, c)) {
                boundary = std::sqrt(out.sigma2[r - 1] * out.sigma2[r]);
                break;
            }
        }
        out.empirical_sigma2.push_back(boundary);
        if (boundary) {
            xs.push_back(out.n_samples[c]);
            ys.push_back(*boundary);
        }
    }
    if (xs.size() >= 2) std::tie(out.slope, out.r_squared) = fit_through_origin(xs, ys);

    // Monotone region: unstable cells stay unstable for larger sigma^2 and
    // stable cells stay stable for larger N_s (columns sorted by N_s).
    std::vector<std::size_t> order(cols);
    for (std::size_t i = 0; i < cols; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return out.n_samples[a] < out.n_samples[b]; });
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k < cols; ++k) {
            const std::size_t c = order[k];
            if (r + 1 < rows && !out.stable(r, c) && out.stable(r + 1, c)) ++out.monotonicity_violations;
            if (k + 1 < cols && out.stable(r, c) && !out.stable(r, order[k + 1])) ++out.monotonicity_violations;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Iterate histograms
// ---------------------------------------------------------------------------

struct Histogram {
    std::vector<double> edges;  ///< bins + 1, strictly increasing
    std::vector<std::size_t> counts;
    std::size_t total = 0;

    std::size_t bins() const noexcept { return counts.size(); }

    /// Symmetric uniform bins on [-half_width, half_width]; values outside land in the end bins.
    static Histogram symmetric(std::size_t bins, double half_width) {
        if (bins < 1) throw ContractError("Histogram: need at least one bin");
        if (!(half_width > 0.0) || !std::isfinite(half_width))
            throw ContractError("Histogram: half width must be positive");
        Histogram h;
        h.counts.assign(bins, 0);
        h.edges.resize(bins + 1);
        for (std::size_t i = 0; i <= bins; ++i)
            h.edges[i] = -half_width + 2.0 * half_width * static_cast<double>(i) / static_cast<double>(bins);
        h.edges.back() = half_width;
        return h;
    }

    std::size_t bin_of(double x) const noexcept {
        const double lo = edges.front();
        const double hi = edges.back();
        const double f = (x - lo) / (hi - lo) * static_cast<double>(bins());
        if (!(f > 0.0)) return 0;
        return std::min(bins() - 1, static_cast<std::size_t>(f));
    }

    void add(double x) noexcept {
        ++counts[bin_of(x)];
        ++total;
    }

    /// Width of the occupied range, from the lowest to the highest non-empty bin edge.
    double occupied_width() const noexcept {
        std::size_t lo = bins(), hi = 0;
        for (std::size_t i = 0; i < bins(); ++i)
            if (counts[i]) {
                lo = std::min(lo, i);
                hi = i;
            }
        return lo > hi ? 0.0 : edges[hi + 1] - edges[lo];
    }
};

struct IterateHistogram {
    Histogram histogram;
    std::size_t samples = 0;
    double mean = 0.0;
    double variance = 0.0;     ///< post-burn-in sample variance
    double variance_se = 0.0;  ///< batch-means standard error of `variance`
    double max_abs = 0.0;
};

inline constexpr std::size_t kHistogramBins = 51;
inline constexpr std::size_t kVarianceBatches = 20;

/// 1-D VGD on l = lambda m^2 / 2 from m0; iterates after `burn_in` steps are
/// binned. Step t draws from stream.child(t). half_width = 0 picks max |m|.
inline IterateHistogram iterate_histogram(double lambda, double rho, double sigma2, int n_samples, std::size_t steps,
                                          std::size_t burn_in, const RandomStream& stream, double m0 = 1.0,
                                          std::size_t bins = kHistogramBins, double half_width = 0.0) {
    if (!(steps > burn_in)) throw ContractError("iterate_histogram: steps must exceed burn_in");
    if (!(lambda > 0.0) || !(rho > 0.0)) throw InvalidSpecError("iterate_histogram: lambda and rho must be positive");
    if (n_samples < 1) throw InvalidSpecError("iterate_histogram: n_samples must be >= 1");
    if (!(sigma2 >= 0.0)) throw InvalidSpecError("iterate_histogram: sigma2 must be non-negative");

    Vector kept;
    kept.reserve(steps - burn_in);
    Vector loss{0.5 * lambda * m0 * m0}, norm{std::abs(m0)};
    double m = m0;
    for (std::size_t t = 0; t < steps; ++t) {
        RandomStream s = stream.child(t);
        m = vgd_step_1d(lambda, m, rho, sigma2, n_samples, s);
        if (!std::isfinite(m))
            throw NumericalError("iterate_histogram: iterate became non-finite at step " + std::to_string(t + 1) +
                                 " (lambda=" + std::to_string(lambda) + ", rho=" + std::to_string(rho) +
                                 ", sigma2=" + std::to_string(sigma2) + ", N_s=" + std::to_string(n_samples) + ")");
        loss.push_back(0.5 * lambda * m * m);
        norm.push_back(std::abs(m));
        if (t + 1 > burn_in) kept.push_back(m);
    }
    if (norm.size() >= 8 && classify_stability(loss, norm) == StabilityClass::Divergent)
        throw NumericalError("iterate_histogram: run diverged (final |m| = " + std::to_string(std::abs(m)) +
                             ", lambda=" + std::to_string(lambda) + ", rho=" + std::to_string(rho) +
                             ", sigma2=" + std::to_string(sigma2) + ", N_s=" + std::to_string(n_samples) + ")");

    IterateHistogram out;
    out.samples = kept.size();
    for (const double x : kept) out.max_abs = std::max(out.max_abs, std::abs(x));
    const double hw = half_width > 0.0 ? half_width : std::max(out.max_abs, 1e-6 * std::max(1.0, std::abs(m0)));
    out.histogram = Histogram::symmetric(bins, hw);
    for (const double x : kept) out.histogram.add(x);

    out.mean = stable_mean(kept);
    Vector sq(kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) sq[i] = (kept[i] - out.mean) * (kept[i] - out.mean);
    out.variance = stable_mean(sq);
    const std::size_t nb = std::min(kVarianceBatches, sq.size());
    if (nb >= 2) {
        const std::size_t len = sq.size() / nb;
        Vector means(nb);
        for (std::size_t b = 0; b < nb; ++b) means[b] = stable_mean(std::span<const double>(sq).subspan(b * len, len));
        const double mu = stable_mean(means);
        CompensatedSum ss;
        for (const double v : means) ss.add((v - mu) * (v - mu));
        out.variance_se = std::sqrt(ss.value() / static_cast<double>(nb - 1) / static_cast<double>(nb));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Quartic smoothing
// ---------------------------------------------------------------------------

struct SmoothedValue {
    double value = 0.0;
    double curvature = 0.0;
};

/// Gaussian smoothing of l(m) = (m^2 - 1)^2 with variance sigma2.
inline SmoothedValue smoothed_quartic(double m, double sigma2) {
    if (!(sigma2 >= 0.0)) throw InvalidSpecError("smoothed_quartic: sigma2 must be non-negative");
    const double m2 = m * m;
    return {m2 * m2 + m2 * (6.0 * sigma2 - 2.0) + (3.0 * sigma2 * sigma2 - 2.0 * sigma2 + 1.0),
            12.0 * m2 - 4.0 + 12.0 * sigma2};
}

/// Positive minimizer sqrt(1 - 3 sigma2) of the smoothed quartic, if it exists.
inline std::optional<double> smoothed_quartic_minimizer(double sigma2) {
    if (!(sigma2 >= 0.0)) throw InvalidSpecError("smoothed_quartic_minimizer: sigma2 must be non-negative");
    if (!(sigma2 < 1.0 / 3.0)) return std::nullopt;
    return std::sqrt(1.0 - 3.0 * sigma2);
}

/// One realization of (1/N_s) sum_i l''(theta + eps_i) with l'' = 12 x^2 - 4.
/// Sample i uses stream.child(i).
inline double averaged_curvature_mc(double theta, double sigma2, int n_samples, const RandomStream& stream) {
    if (n_samples < 1) throw ContractError("averaged_curvature_mc: n_samples must be >= 1");
    if (!(sigma2 >= 0.0)) throw InvalidSpecError("averaged_curvature_mc: sigma2 must be non-negative");
    const double sd = std::sqrt(sigma2);
    CompensatedSum acc;
    for (int i = 0; i < n_samples; ++i) {
        double x = theta;
        if (sd > 0.0) {
            RandomStream s = stream.child(static_cast<std::uint64_t>(i));
            x += sd * s.normal();
        }
        acc.add(12.0 * x * x - 4.0);
    }
    return acc.value() / n_samples;
}

// ---------------------------------------------------------------------------
// Double-well escape
// ---------------------------------------------------------------------------

/// l(theta) = (theta^2 - 1)^2 (1 + 0.8 tanh theta): minima at +1 (curvature
/// about 12.9) and -1 (about 3.1), bounded below by zero.
struct DoubleWell {
    static constexpr double kTilt = 0.8;

    static double loss(double x) {
        const double a = x * x - 1.0;
        return a * a * (1.0 + kTilt * std::tanh(x));
    }

    static double grad(double x) {
        const double a = x * x - 1.0;
        const double t = std::tanh(x);
        return 4.0 * x * a * (1.0 + kTilt * t) + a * a * kTilt * (1.0 - t * t);
    }

    static double curvature(double x) {
        const double a = x * x - 1.0;
        const double t = std::tanh(x);
        const double s2 = 1.0 - t * t;
        return (12.0 * x * x - 4.0) * (1.0 + kTilt * t) + 8.0 * x * a * kTilt * s2 - 2.0 * a * a * kTilt * s2 * t;
    }
};

enum class Basin { Sharp, Flat, Divergent };

inline std::string to_string(Basin b) {
    switch (b) {
        case Basin::Sharp: return "sharp";
        case Basin::Flat: return "flat";
        case Basin::Divergent: return "divergent";
    }
    return "unknown";
}

struct EscapeResult {
    Vector theta;  ///< theta_0 .. theta_T (shorter if the run blew up)
    Vector loss;
    Basin basin = Basin::Sharp;
    StabilityClass classification = StabilityClass::Converged;
};

inline constexpr double kEscapeBlowup = 1e6;

/// VGD on the double well from m0; step t draws from stream.child(t). The basin is
/// the sign of the final iterate (positive: sharp).
inline EscapeResult double_well_escape(double rho, double sigma2, int n_samples, std::size_t steps, double m0,
                                       const RandomStream& stream) {
    if (!(rho > 0.0)) throw InvalidSpecError("double_well_escape: rho must be positive");
    if (!(sigma2 >= 0.0)) throw InvalidSpecError("double_well_escape: sigma2 must be non-negative");
    if (n_samples < 1) throw InvalidSpecError("double_well_escape: n_samples must be >= 1");
    if (steps < 1) throw ContractError("double_well_escape: steps must be >= 1");
    EscapeResult out;
    const double sd = std::sqrt(sigma2);
    double x = m0;
    out.theta.push_back(x);
    out.loss.push_back(DoubleWell::loss(x));
    bool blew_up = false;
    for (std::size_t t = 0; t < steps; ++t) {
        double g;
        if (sigma2 == 0.0) {
            g = DoubleWell::grad(x);
        } else {
            RandomStream s = stream.child(t);
            CompensatedSum acc;
            for (int i = 0; i < n_samples; ++i) acc.add(DoubleWell::grad(x + sd * s.normal()));
            g = acc.value() / n_samples;
        }
        x -= rho * g;
        out.theta.push_back(x);
        out.loss.push_back(DoubleWell::loss(x));
        if (!std::isfinite(x) || std::abs(x) > kEscapeBlowup) {
            blew_up = true;
            break;
        }
    }
    if (blew_up) {
        out.classification = StabilityClass::Divergent;
    } else {
        // Distance to the occupied minimum is the norm that should settle.
        Vector dist(out.theta.size());
        for (std::size_t i = 0; i < dist.size(); ++i) dist[i] = std::abs(std::abs(out.theta[i]) - 1.0);
        Vector loss = out.loss;
        for (double& l : loss) l = std::max(l, 0.0);
        if (dist.size() >= 8) {
            ClassifyOptions opts;
            opts.reference_loss = std::max(out.loss.front(), 1.0);
            out.classification = classify_stability(loss, dist, opts);
        }
    }
    if (out.classification == StabilityClass::Divergent)
        out.basin = Basin::Divergent;
    else
        out.basin = out.theta.back() > 0.0 ? Basin::Sharp : Basin::Flat;
    return out;
}

}  // namespace vlab
