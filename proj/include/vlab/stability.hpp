#pragma once

// Closed-form stability thresholds for variational (weight-perturbed) gradient
// descent on quadratics, exact expected one-step loss change, and Monte-Carlo
// descent experiments on the 1-D quadratic l(m) = (lambda/2) m^2.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "vlab/error.hpp"
#include "vlab/numerics/distributions.hpp"
#include "vlab/numerics/linalg.hpp"
#include "vlab/numerics/parallel.hpp"
#include "vlab/numerics/random.hpp"
#include "vlab/numerics/summation.hpp"

namespace vlab {

/// Smallest z passed to the variational factor; exact gradient/mode orthogonality maps here.
inline constexpr double kZFloor = 1e-12;

// ---------------------------------------------------------------------------
// Posterior description
// ---------------------------------------------------------------------------

enum class PerturbationFamily { GaussianIsotropic, GaussianDiagonal, StudentT };

inline std::string to_string(PerturbationFamily f) {
    switch (f) {
        case PerturbationFamily::GaussianIsotropic: return "gaussian-isotropic";
        case PerturbationFamily::GaussianDiagonal: return "gaussian-diagonal";
        case PerturbationFamily::StudentT: return "student-t";
    }
    return "unknown";
}

inline PerturbationFamily parse_family(const std::string& s) {
    if (s == "gaussian-isotropic" || s == "gaussian") return PerturbationFamily::GaussianIsotropic;
    if (s == "gaussian-diagonal") return PerturbationFamily::GaussianDiagonal;
    if (s == "student-t") return PerturbationFamily::StudentT;
    throw InvalidSpecError("unknown perturbation family '" + s + "'");
}

/// Shape of the weight perturbation. `sigma2` holds either one value (broadcast
/// to every coordinate) or one value per coordinate; the effective per-coordinate
/// variance is temperature * sigma2.
struct PosteriorSpec {
    PerturbationFamily family = PerturbationFamily::GaussianIsotropic;
    Vector sigma2{0.0};
    int n_samples = 1;
    double alpha = std::numeric_limits<double>::infinity();
    double temperature = 1.0;

    static PosteriorSpec isotropic(double sigma2, int n_samples, double temperature = 1.0) {
        return {PerturbationFamily::GaussianIsotropic, {sigma2}, n_samples,
                std::numeric_limits<double>::infinity(), temperature};
    }

    static PosteriorSpec diagonal(Vector sigma2, int n_samples, double temperature = 1.0) {
        return {PerturbationFamily::GaussianDiagonal, std::move(sigma2), n_samples,
                std::numeric_limits<double>::infinity(), temperature};
    }

    static PosteriorSpec student_t(double sigma2, int n_samples, double alpha, double temperature = 1.0) {
        return {PerturbationFamily::StudentT, {sigma2}, n_samples, alpha, temperature};
    }

    void validate() const {
        if (n_samples < 1) throw InvalidSpecError("PosteriorSpec: n_samples must be >= 1");
        if (!(temperature > 0.0) || !std::isfinite(temperature))
            throw InvalidSpecError("PosteriorSpec: temperature must be positive and finite");
        if (sigma2.empty()) throw InvalidSpecError("PosteriorSpec: sigma2 must not be empty");
        for (const double s : sigma2)
            if (!std::isfinite(s) || s < 0.0)
                throw InvalidSpecError("PosteriorSpec: variances must be finite and non-negative");
        if (family == PerturbationFamily::StudentT && !(alpha > 2.0))
            throw InvalidSpecError("PosteriorSpec: student-t needs alpha > 2");
        if (family == PerturbationFamily::GaussianIsotropic && sigma2.size() != 1)
            throw InvalidSpecError("PosteriorSpec: isotropic family takes a single variance");
    }

    void validate(std::size_t dim) const {
        validate();
        if (sigma2.size() != 1 && sigma2.size() != dim)
            throw InvalidSpecError("PosteriorSpec: sigma2 has " + std::to_string(sigma2.size()) +
                                   " entries for dimension " + std::to_string(dim));
    }

    /// Effective variance tau * sigma2 of coordinate i.
    double variance(std::size_t i) const noexcept {
        return temperature * (sigma2.size() == 1 ? sigma2[0] : sigma2[i]);
    }

    Vector variances(std::size_t dim) const {
        Vector v(dim);
        for (std::size_t i = 0; i < dim; ++i) v[i] = variance(i);
        return v;
    }

    bool is_degenerate() const noexcept {
        return std::all_of(sigma2.begin(), sigma2.end(), [](double s) { return s == 0.0; });
    }

    /// One perturbation vector epsilon ~ q of length dim.
    Vector sample(RandomStream& stream, std::size_t dim) const {
        if (family == PerturbationFamily::StudentT) return sample_student_t(stream, StudentT{alpha, variances(dim)});
        return sample_gaussian_diag(stream, DiagGaussian{variances(dim)});
    }
};

// ---------------------------------------------------------------------------
// Quadratic problem l(m) = 1/2 m^T Q m with Q = sum_i lambda_i v_i v_i^T
// ---------------------------------------------------------------------------

class QuadraticProblem {
public:
    QuadraticProblem(Vector eigenvalues, Matrix eigenvectors)
        : eigenvalues_(std::move(eigenvalues)), eigenvectors_(std::move(eigenvectors)) {
        const std::size_t d = eigenvalues_.size();
        if (d == 0) throw ContractError("QuadraticProblem: empty spectrum");
        if (eigenvectors_.rows() != d || eigenvectors_.cols() != d)
            throw ContractError("QuadraticProblem: eigenvector matrix must be d x d");
        for (std::size_t i = 0; i < d; ++i) {
            if (!(eigenvalues_[i] > 0.0) || !std::isfinite(eigenvalues_[i]))
                throw ContractError("QuadraticProblem: eigenvalues must be positive and finite");
            if (i > 0 && eigenvalues_[i] > eigenvalues_[i - 1])
                throw ContractError("QuadraticProblem: eigenvalues must be sorted descending");
        }
        const Matrix gram = matmul(eigenvectors_.transpose(), eigenvectors_);
        if (frobenius_norm(subtract(gram, Matrix::identity(d))) >= 1e-9)
            throw ContractError("QuadraticProblem: eigenvectors are not orthonormal");
        q_ = compose_symmetric(eigenvalues_, eigenvectors_);
    }

    /// Axis-aligned problem Q = diag(values); values are sorted descending.
    static QuadraticProblem diagonal(Vector values) {
        std::sort(values.begin(), values.end(), std::greater<>());
        return QuadraticProblem(values, Matrix::identity(values.size()));
    }

    static QuadraticProblem from_matrix(const Matrix& q) {
        auto eig = symmetric_eig(q);
        return QuadraticProblem(std::move(eig.values), std::move(eig.vectors));
    }

    /// Random rotation of a log-uniform spectrum in [lambda_min, lambda_max].
    static QuadraticProblem random(std::size_t dim, double lambda_min, double lambda_max, RandomStream& stream) {
        Vector values(dim);
        for (auto& v : values) v = lambda_min * std::pow(lambda_max / lambda_min, stream.uniform());
        std::sort(values.begin(), values.end(), std::greater<>());
        return QuadraticProblem(values, random_orthogonal(dim, stream));
    }

    std::size_t dim() const noexcept { return eigenvalues_.size(); }
    const Vector& eigenvalues() const noexcept { return eigenvalues_; }
    const Matrix& eigenvectors() const noexcept { return eigenvectors_; }
    const Matrix& matrix() const noexcept { return q_; }

    double loss(std::span<const double> m) const { return 0.5 * dot(m, matvec(q_, m)); }
    Vector gradient(std::span<const double> m) const { return matvec(q_, m); }

    /// Projections v_i^T x for every mode.
    Vector project(std::span<const double> x) const {
        Vector p(dim(), 0.0);
        for (std::size_t i = 0; i < dim(); ++i)
            for (std::size_t r = 0; r < dim(); ++r) p[i] += eigenvectors_(r, i) * x[r];
        return p;
    }

private:
    Vector eigenvalues_;
    Matrix eigenvectors_;
    Matrix q_;
};

// ---------------------------------------------------------------------------
// Variational factor
// ---------------------------------------------------------------------------

/// VF(z) = rho sqrt(z/3) sinh(asinh((3/rho) sqrt(3/z)) / 3).
/// (2/rho) VF(z) is the positive root of lambda + lambda^3 / z = 2/rho, so VF
/// solves VF + w VF^3 = 1 with w = 4 / (rho^2 z). For small w the hyperbolic
/// form is replaced by the series 1 - w + 3 w^2.
inline double variational_factor(double z, double rho) {
    if (!(rho > 0.0) || !std::isfinite(rho)) throw DomainError("variational_factor: rho must be positive");
    if (std::isnan(z) || !(z > 0.0)) throw DomainError("variational_factor: z must be positive");
    if (std::isinf(z)) return 1.0;
    const double y = (3.0 / rho) * std::sqrt(3.0 / z);
    if (y < 1e-4) {
        const double w = 4.0 / (rho * rho * z);
        return 1.0 - w + 3.0 * w * w;
    }
    return rho * std::sqrt(z / 3.0) * std::sinh(std::asinh(y) / 3.0);
}

/// Stability threshold (2/rho) VF(z).
inline double stability_threshold(double z, double rho) { return 2.0 / rho * variational_factor(z, rho); }

/// z such that (2/rho) VF(z) equals lambda, for 0 < lambda < 2/rho.
inline double critical_z(double lambda, double rho) {
    const double v = 0.5 * rho * lambda;
    if (!(v > 0.0) || !(v < 1.0)) throw DomainError("critical_z: need 0 < lambda < 2/rho");
    const double w = (1.0 - v) / (v * v * v);
    return 4.0 / (rho * rho * w);
}

// ---------------------------------------------------------------------------
// Per-mode diagnostics
// ---------------------------------------------------------------------------

struct ModeInfo {
    double lambda = 0.0;
    double z = 0.0;
    double vf = 0.0;
    double threshold = 0.0;
    double margin = 0.0;
    bool z_clamped = false;
};

struct ModeDiagnostics {
    std::vector<ModeInfo> modes;
};

namespace detail {

/// Effective variances sorted descending; the i-th largest pairs with mode i.
inline Vector paired_variances(const PosteriorSpec& spec, std::size_t dim) {
    Vector v = spec.variances(dim);
    std::sort(v.begin(), v.end(), std::greater<>());
    return v;
}

inline double clamp_z(double z, bool& clamped) {
    clamped = false;
    if (std::isnan(z) || z < kZFloor) {
        clamped = true;
        return kZFloor;
    }
    return z;
}

}  // namespace detail

/// z_i = N_s (lambda_i m^T v_i)^2 / (tau sigma_i^2). Zero-variance modes get +inf
/// (they behave like GD); values below kZFloor are clamped to it.
inline Vector mode_z(const QuadraticProblem& problem, const PosteriorSpec& spec, std::span<const double> m) {
    spec.validate(problem.dim());
    if (m.size() != problem.dim()) throw ContractError("mode_z: iterate dimension mismatch");
    const Vector proj = problem.project(m);
    const Vector var = detail::paired_variances(spec, problem.dim());
    Vector z(problem.dim());
    for (std::size_t i = 0; i < problem.dim(); ++i) {
        const double c = std::pow(problem.eigenvalues()[i] * proj[i], 2);
        bool clamped = false;
        z[i] = var[i] == 0.0 ? std::numeric_limits<double>::infinity()
                             : detail::clamp_z(spec.n_samples * c / var[i], clamped);
    }
    return z;
}

inline ModeDiagnostics mode_diagnostics(const QuadraticProblem& problem, const PosteriorSpec& spec,
                                        std::span<const double> m, double rho) {
    const Vector z = mode_z(problem, spec, m);
    const Vector proj = problem.project(m);
    const Vector var = detail::paired_variances(spec, problem.dim());
    ModeDiagnostics out;
    out.modes.reserve(problem.dim());
    for (std::size_t i = 0; i < problem.dim(); ++i) {
        ModeInfo info;
        info.lambda = problem.eigenvalues()[i];
        info.z = z[i];
        info.z_clamped = var[i] != 0.0 && spec.n_samples * std::pow(info.lambda * proj[i], 2) / var[i] < kZFloor;
        info.vf = variational_factor(info.z, rho);
        info.threshold = 2.0 / rho * info.vf;
        info.margin = info.threshold - info.lambda;
        out.modes.push_back(info);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Expected loss change and descent conditions
// ---------------------------------------------------------------------------

/// Exact E[l(m')] - l(m) for m' = m - rho * (1/N_s) sum_i grad l(m + eps_i):
///   -rho g^T (I - rho/2 Q) g + rho^2 / (2 N_s) Tr(Sigma Q^3),  g = Q m.
/// Only the covariance of the perturbation enters, so this holds for every family.
inline double expected_loss_change(const QuadraticProblem& problem, std::span<const double> m, double rho,
                                   const PosteriorSpec& spec) {
    spec.validate(problem.dim());
    if (m.size() != problem.dim()) throw ContractError("expected_loss_change: dimension mismatch");
    const Vector g = problem.gradient(m);
    const Vector qg = problem.gradient(g);
    const double deterministic = -rho * (dot(g, g) - 0.5 * rho * dot(g, qg));
    if (spec.is_degenerate()) return deterministic;
    // Tr(Sigma Q^3) = sum_j var_j sum_k lambda_k^3 V_jk^2
    const auto& lam = problem.eigenvalues();
    const auto& v = problem.eigenvectors();
    CompensatedSum trace;
    for (std::size_t j = 0; j < problem.dim(); ++j) {
        double q3jj = 0.0;
        for (std::size_t k = 0; k < problem.dim(); ++k) q3jj += lam[k] * lam[k] * lam[k] * v(j, k) * v(j, k);
        trace.add(spec.variance(j) * q3jj);
    }
    return deterministic + rho * rho / (2.0 * spec.n_samples) * trace.value();
}

/// Exact one-step GD loss change l(m - rho Q m) - l(m).
inline double gd_loss_change(const QuadraticProblem& problem, std::span<const double> m, double rho) {
    Vector next(m.begin(), m.end());
    axpy(-rho, problem.gradient(m), next);
    return problem.loss(next) - problem.loss(m);
}

/// Per-mode upper-bound terms
///   f_i = -rho a_i + rho^2/2 lambda_i a_i + rho^2/(2 N_s) sigma_i^2 lambda_i^3,  a_i = (v_i^T g)^2,
/// with the i-th largest variance paired to mode i. Their sum bounds the
/// expected change from above and equals it for isotropic covariance.
inline Vector per_mode_descent_terms(const QuadraticProblem& problem, std::span<const double> m, double rho,
                                     const PosteriorSpec& spec) {
    spec.validate(problem.dim());
    const Vector proj = problem.project(problem.gradient(m));
    const Vector var = detail::paired_variances(spec, problem.dim());
    Vector f(problem.dim());
    for (std::size_t i = 0; i < problem.dim(); ++i) {
        const double lam = problem.eigenvalues()[i];
        const double a = proj[i] * proj[i];
        f[i] = -rho * a + 0.5 * rho * rho * lam * a + rho * rho / (2.0 * spec.n_samples) * var[i] * lam * lam * lam;
    }
    return f;
}

struct SufficientCheck {
    std::vector<bool> per_mode;
    bool overall = false;
    ModeDiagnostics diagnostics;
};

/// Mode i passes iff lambda_i < (2/rho) VF(z_i) (strict). Passing every mode
/// guarantees a negative expected loss change; the converse does not hold.
inline SufficientCheck sufficient_descent_check(const QuadraticProblem& problem, std::span<const double> m,
                                                double rho, const PosteriorSpec& spec) {
    SufficientCheck out;
    out.diagnostics = mode_diagnostics(problem, spec, m, rho);
    out.overall = true;
    for (const auto& mode : out.diagnostics.modes) {
        const bool ok = mode.lambda < mode.threshold;
        out.per_mode.push_back(ok);
        out.overall = out.overall && ok;
    }
    return out;
}

/// Exact condition for descent in expectation.
inline bool necessary_sufficient_check(const QuadraticProblem& problem, std::span<const double> m, double rho,
                                       const PosteriorSpec& spec) {
    return expected_loss_change(problem, m, rho, spec) < 0.0;
}

// ---------------------------------------------------------------------------
// 1-D Monte-Carlo experiments on l(m) = (lambda/2) m^2
// ---------------------------------------------------------------------------

/// One VGD step on the 1-D quadratic; returns the new iterate.
inline double vgd_step_1d(double lambda, double m, double rho, double sigma2, int n_samples, RandomStream& stream) {
    if (sigma2 == 0.0) return m - rho * (lambda * m);
    const double sd = std::sqrt(sigma2);
    CompensatedSum acc;
    for (int i = 0; i < n_samples; ++i) acc.add(lambda * (m + sd * stream.normal()));
    return m - rho * (acc.value() / n_samples);
}

/// Exact E[Delta l] for the 1-D quadratic.
inline double expected_loss_change_1d(double lambda, double m, double rho, double sigma2, int n_samples) {
    const double g = lambda * m;
    return -rho * g * g * (1.0 - 0.5 * rho * lambda) + rho * rho * lambda * lambda * lambda * sigma2 / (2.0 * n_samples);
}

struct DescentEstimate {
    std::size_t successes = 0;
    std::size_t trials = 0;
    double probability() const noexcept { return trials ? static_cast<double>(successes) / trials : 0.0; }
};

/// Fraction of independent trials in which one VGD step strictly decreased the
/// loss. Trial t draws from stream.child(t).
inline DescentEstimate descent_count_mc(double lambda, double m, double rho, double sigma2, int n_samples,
                                        std::size_t trials, const RandomStream& stream, unsigned workers = 1) {
    if (trials < 1) throw ContractError("descent_probability_mc: trials must be >= 1");
    if (n_samples < 1) throw InvalidSpecError("descent_probability_mc: n_samples must be >= 1");
    if (!(sigma2 >= 0.0)) throw InvalidSpecError("descent_probability_mc: sigma2 must be non-negative");
    const double before = 0.5 * lambda * m * m;
    std::vector<char> decreased(trials, 0);
    parallel_for(trials, workers, [&](std::size_t t) {
        RandomStream s = stream.child(t);
        const double next = vgd_step_1d(lambda, m, rho, sigma2, n_samples, s);
        decreased[t] = 0.5 * lambda * next * next < before;
    });
    DescentEstimate est;
    est.trials = trials;
    for (const char d : decreased) est.successes += d ? 1 : 0;
    return est;
}

inline double descent_probability_mc(double lambda, double m, double rho, double sigma2, int n_samples,
                                     std::size_t trials, const RandomStream& stream, unsigned workers = 1) {
    return descent_count_mc(lambda, m, rho, sigma2, n_samples, trials, stream, workers).probability();
}

struct MarginTrendPoint {
    int n_samples = 1;
    double expected_change = 0.0;  ///< -delta
    double failure_probability = 0.0;
    double standard_error = 0.0;
};

/// Empirical P(Delta l >= 0) for each sample count. Every configuration must
/// have a strictly negative expected change.
inline std::vector<MarginTrendPoint> descent_margin_trend(double lambda, double m, double rho, double sigma2,
                                                          std::span<const int> n_samples_list, std::size_t trials,
                                                          const RandomStream& stream, unsigned workers = 1) {
    std::vector<MarginTrendPoint> out;
    for (std::size_t k = 0; k < n_samples_list.size(); ++k) {
        const int ns = n_samples_list[k];
        MarginTrendPoint p;
        p.n_samples = ns;
        p.expected_change = expected_loss_change_1d(lambda, m, rho, sigma2, ns);
        if (!(p.expected_change < 0.0))
            throw PreconditionError("descent_margin_trend: expected loss change is not negative at N_s = " +
                                    std::to_string(ns));
        const auto est = descent_count_mc(lambda, m, rho, sigma2, ns, trials, stream.child(k), workers);
        p.failure_probability = 1.0 - est.probability();
        p.standard_error = std::sqrt(std::max(p.failure_probability * (1.0 - p.failure_probability), 1.0 / trials) /
                                     static_cast<double>(trials));
        out.push_back(p);
    }
    return out;
}

/// True if the sequence never increases by more than `z` combined standard errors.
inline bool weakly_decreasing_within_noise(std::span<const MarginTrendPoint> points, double z = 3.0) {
    for (std::size_t i = 1; i < points.size(); ++i) {
        const double se = std::hypot(points[i].standard_error, points[i - 1].standard_error);
        if (points[i].failure_probability - points[i - 1].failure_probability > z * se) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Trajectory classification
// ---------------------------------------------------------------------------

enum class StabilityClass { Converged, StochasticallyStable, Divergent };

inline std::string to_string(StabilityClass c) {
    switch (c) {
        case StabilityClass::Converged: return "converged";
        case StabilityClass::StochasticallyStable: return "stochastically-stable";
        case StabilityClass::Divergent: return "divergent";
    }
    return "unknown";
}

struct ClassifyOptions {
    std::size_t min_length = 8;
    double divergence_factor = 1e6;
    double convergence_rtol = 1e-6;
    double reference_loss = 0.0;  ///< divergence reference; 0 means the first loss
};

/// Classifies a trajectory from its loss and iterate-norm traces:
///  - any non-finite value, or mean loss over the last quarter >= factor x initial loss: divergent;
///  - iterate norms over the last quarter all below rtol x initial norm: converged;
///  - last two quarter-window means of the norm within 2 pooled SDs: stochastically stable;
///  - otherwise the trend decides (falling: converged, rising: divergent).
inline StabilityClass classify_stability(std::span<const double> loss_trace, std::span<const double> norm_trace,
                                         const ClassifyOptions& opts = {}) {
    if (loss_trace.size() != norm_trace.size())
        throw ContractError("classify_stability: traces must have equal length");
    if (loss_trace.size() < opts.min_length)
        throw ContractError("classify_stability: traces shorter than the minimum window");
    if (!all_finite(loss_trace) || !all_finite(norm_trace)) return StabilityClass::Divergent;

    const std::size_t n = loss_trace.size();
    const std::size_t w = n / 4;
    const auto tail_loss = loss_trace.subspan(n - w);
    const double ref_loss =
        std::max(opts.reference_loss > 0.0 ? opts.reference_loss : loss_trace[0], std::numeric_limits<double>::min());
    if (stable_mean(tail_loss) >= opts.divergence_factor * ref_loss) return StabilityClass::Divergent;

    const auto q4 = norm_trace.subspan(n - w);
    const auto q3 = norm_trace.subspan(n - 2 * w, w);
    const double ref_norm = norm_trace[0] > 0.0 ? norm_trace[0] : 1e-6;
    if (*std::max_element(q4.begin(), q4.end()) <= opts.convergence_rtol * ref_norm) return StabilityClass::Converged;

    auto mean_var = [](std::span<const double> x) {
        const double mu = stable_mean(x);
        CompensatedSum ss;
        for (const double v : x) ss.add((v - mu) * (v - mu));
        return std::pair{mu, ss.value() / static_cast<double>(x.size() > 1 ? x.size() - 1 : 1)};
    };
    const auto [m3, v3] = mean_var(q3);
    const auto [m4, v4] = mean_var(q4);
    const double pooled_sd = std::sqrt(0.5 * (v3 + v4));
    if (std::abs(m4 - m3) <= 2.0 * pooled_sd) return StabilityClass::StochasticallyStable;
    return m4 < m3 ? StabilityClass::Converged : StabilityClass::Divergent;
}

}  // namespace vlab
