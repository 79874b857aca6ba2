#pragma once

// Update rules on a flat parameter vector. Every optimizer sees the loss only
// through a gradient oracle, so the same code drives quadratics and MLPs.

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vlab/error.hpp"
#include "vlab/numerics/linalg.hpp"
#include "vlab/numerics/parallel.hpp"
#include "vlab/numerics/random.hpp"
#include "vlab/numerics/summation.hpp"
#include "vlab/stability.hpp"

namespace vlab {

/// grad(theta, out): writes the gradient at theta into out.
using GradOracle = std::function<void(std::span<const double>, std::span<double>)>;
using LossOracle = std::function<double(std::span<const double>)>;

inline constexpr double kDivisionFloor = 1e-12;
inline constexpr double kPrecisionFloor = 1e-8;

namespace detail {

inline Vector checked_grad(const GradOracle& grad, std::span<const double> theta, const char* who) {
    Vector g(theta.size());
    grad(theta, g);
    if (!all_finite(g)) throw NumericalError(std::string(who) + ": non-finite gradient");
    return g;
}

/// Perturbed gradients at m + eps_i, eps_i ~ spec, sample i drawn from stream.child(i).
/// Returns the fixed-order compensated mean; per-sample gradients and noise are
/// optionally retained for the Stein estimator.
struct PerturbedGrads {
    Vector mean;
    std::vector<Vector> grads;
    std::vector<Vector> noise;
};

inline PerturbedGrads perturbed_gradients(const GradOracle& grad, std::span<const double> m, const PosteriorSpec& spec,
                                          const RandomStream& stream, unsigned workers, bool keep, const char* who) {
    const std::size_t d = m.size();
    const auto ns = static_cast<std::size_t>(spec.n_samples);
    std::vector<Vector> grads(ns), noise(ns);
    parallel_for(ns, workers, [&](std::size_t i) {
        RandomStream s = stream.child(i);
        Vector eps = spec.sample(s, d);
        Vector theta(m.begin(), m.end());
        axpy(1.0, eps, theta);
        grads[i].assign(d, 0.0);
        grad(theta, grads[i]);
        noise[i] = std::move(eps);
    });
    CompensatedVectorSum acc(d);
    for (std::size_t i = 0; i < ns; ++i) {
        if (!all_finite(grads[i]))
            throw NumericalError(std::string(who) + ": non-finite perturbed gradient at sample " + std::to_string(i));
        acc.add(grads[i]);
    }
    PerturbedGrads out;
    out.mean = acc.value();
    scale(1.0 / static_cast<double>(ns), out.mean);
    if (keep) {
        out.grads = std::move(grads);
        out.noise = std::move(noise);
    }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// GD and variational GD
// ---------------------------------------------------------------------------

struct GdState {
    Vector m;
    double rho = 0.1;
    std::size_t t = 0;
    Vector last_grad;
};

inline void gd_step(GdState& s, const GradOracle& grad) {
    s.last_grad = detail::checked_grad(grad, s.m, "gd_step");
    axpy(-s.rho, s.last_grad, s.m);
    ++s.t;
}

struct VgdState {
    Vector m;
    PosteriorSpec spec;
    double rho = 0.1;
    std::size_t t = 0;
    Vector last_grad;  ///< averaged perturbed gradient of the last step
};

/// m' = m - rho * mean_i grad(m + eps_i). Sample i uses stream.child(i), so the
/// result does not depend on `workers`. A degenerate spec takes one plain gradient.
inline void vgd_step(VgdState& s, const GradOracle& grad, const RandomStream& stream, unsigned workers = 1) {
    s.spec.validate(s.m.size());
    if (s.spec.is_degenerate()) {
        s.last_grad = detail::checked_grad(grad, s.m, "vgd_step");
    } else {
        s.last_grad = detail::perturbed_gradients(grad, s.m, s.spec, stream, workers, false, "vgd_step").mean;
    }
    axpy(-s.rho, s.last_grad, s.m);
    ++s.t;
}

// ---------------------------------------------------------------------------
// Adam without momentum
// ---------------------------------------------------------------------------

struct AdamState {
    Vector m;
    Vector v;
    std::size_t t = 0;
    double rho = 1e-3;
    double beta2 = 0.999;
    double eps = kDivisionFloor;
    Vector last_grad;

    AdamState() = default;
    AdamState(Vector mean, double rho_, double beta2_, double eps_ = kDivisionFloor)
        : m(std::move(mean)), v(m.size(), 0.0), rho(rho_), beta2(beta2_), eps(eps_) {}

    /// Bias-corrected root second moment p = sqrt(v / (1 - beta2^t)).
    Vector preconditioner() const {
        Vector p(v.size(), 0.0);
        if (t == 0) return p;
        const double corr = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < v.size(); ++i) p[i] = std::sqrt(v[i] / corr);
        return p;
    }

    /// Diagonal the effective step divides by: p + eps.
    Vector effective_precision() const {
        Vector p = preconditioner();
        for (double& x : p) x += eps;
        return p;
    }
};

inline void adam_step(AdamState& s, const GradOracle& grad) {
    if (!(s.beta2 >= 0.0 && s.beta2 < 1.0)) throw InvalidSpecError("adam_step: beta2 must lie in [0, 1)");
    if (s.v.size() != s.m.size()) throw ContractError("adam_step: state vectors differ in length");
    s.last_grad = detail::checked_grad(grad, s.m, "adam_step");
    const double corr = 1.0 - std::pow(s.beta2, static_cast<double>(s.t + 1));
    for (std::size_t i = 0; i < s.m.size(); ++i) {
        const double g = s.last_grad[i];
        s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g * g;
        const double p = std::sqrt(s.v[i] / corr);
        s.m[i] -= s.rho * g / (p + s.eps);
    }
    ++s.t;
}

// ---------------------------------------------------------------------------
// VON (closed form on quadratics) and IVON-style Stein estimator
// ---------------------------------------------------------------------------

/// Posterior q = N(m, temperature * diag(P + damping)^-1). `damping` is zero
/// unless configured; it enters both the posterior variance and the step.
struct VonState {
    Vector m;
    Vector P;
    double rho = 0.1;
    double beta2 = 0.1;
    double temperature = 1.0;
    int n_samples = 1;
    double damping = 0.0;
    std::size_t t = 0;
    Vector last_grad;
    Vector last_hessian;        ///< most recent diagonal Hessian estimate
    std::size_t last_clamped = 0;  ///< entries of P clamped at the floor in the last step
    bool all_clamped = false;

    Vector effective_precision() const {
        Vector p = P;
        for (double& x : p) x += damping;
        return p;
    }

    Vector posterior_variance() const {
        Vector v(P.size());
        for (std::size_t i = 0; i < P.size(); ++i) v[i] = temperature / (P[i] + damping);
        return v;
    }

    void validate() const {
        if (P.size() != m.size()) throw ContractError("VonState: precision and mean differ in length");
        if (!(beta2 >= 0.0 && beta2 <= 1.0)) throw InvalidSpecError("VonState: beta2 must lie in [0, 1]");
        if (!(temperature >= 0.0) || !std::isfinite(temperature))
            throw InvalidSpecError("VonState: temperature must be finite and non-negative");
        if (n_samples < 1) throw InvalidSpecError("VonState: n_samples must be >= 1");
        if (!(damping >= 0.0)) throw InvalidSpecError("VonState: damping must be non-negative");
        for (const double p : P)
            if (!(p > 0.0) || !std::isfinite(p)) throw NumericalError("VonState: precision entries must be positive");
    }
};

/// P' = (1 - beta2) P + beta2 diag(Q);  m' = m - rho P'^-1 Q m.
inline void von_step_exact_quadratic(VonState& s, const QuadraticProblem& problem) {
    if (problem.dim() != s.m.size()) throw ContractError("von_step_exact_quadratic: dimension mismatch");
    if (s.P.size() != s.m.size()) throw ContractError("von_step_exact_quadratic: precision has wrong length");
    const Matrix q = problem.matrix();
    s.last_grad = problem.gradient(s.m);
    Vector p_next(s.P.size());
    for (std::size_t i = 0; i < s.P.size(); ++i) {
        p_next[i] = (1.0 - s.beta2) * s.P[i] + s.beta2 * q(i, i);
        if (!(p_next[i] > 0.0)) throw NumericalError("von_step_exact_quadratic: non-positive precision entry");
    }
    s.P = std::move(p_next);
    s.last_hessian.resize(s.P.size());
    for (std::size_t i = 0; i < s.P.size(); ++i) {
        s.last_hessian[i] = q(i, i);
        s.m[i] -= s.rho * s.last_grad[i] / (s.P[i] + s.damping);
    }
    ++s.t;
}

/// Stein diagonal-Hessian estimate h = mean_i grad_i * eps_i / sigma2 from given samples.
inline Vector stein_hessian_estimate(std::span<const Vector> grads, std::span<const Vector> noise,
                                     std::span<const double> sigma2) {
    if (grads.empty() || grads.size() != noise.size()) throw ContractError("stein_hessian_estimate: bad sample sets");
    const std::size_t d = sigma2.size();
    CompensatedVectorSum acc(d);
    Vector term(d);
    for (std::size_t i = 0; i < grads.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) term[j] = grads[i][j] * noise[i][j] / sigma2[j];
        acc.add(term);
    }
    Vector h = acc.value();
    scale(1.0 / static_cast<double>(grads.size()), h);
    return h;
}

/// One IVON-style step: sample theta_i = m + eps_i from q, estimate the diagonal
/// Hessian by Stein's identity, update the precision with the floor, then take
/// the preconditioned mean step with the averaged gradient.
inline void ivon_step(VonState& s, const GradOracle& grad, const RandomStream& stream, unsigned workers = 1) {
    s.validate();
    const Vector var = s.posterior_variance();
    for (const double v : var)
        if (!(v > 0.0) || !std::isfinite(v))
            throw PreconditionError("ivon_step: posterior variance must be positive and finite");
    const PosteriorSpec spec = PosteriorSpec::diagonal(var, s.n_samples);
    auto pg = detail::perturbed_gradients(grad, s.m, spec, stream, workers, true, "ivon_step");
    s.last_hessian = stein_hessian_estimate(pg.grads, pg.noise, var);
    s.last_clamped = 0;
    for (std::size_t i = 0; i < s.P.size(); ++i) {
        double p = (1.0 - s.beta2) * s.P[i] + s.beta2 * s.last_hessian[i];
        if (!(p >= kPrecisionFloor)) {
            p = kPrecisionFloor;
            ++s.last_clamped;
        }
        s.P[i] = p;
    }
    s.all_clamped = s.last_clamped == s.P.size();
    s.last_grad = std::move(pg.mean);
    for (std::size_t i = 0; i < s.m.size(); ++i) s.m[i] -= s.rho * s.last_grad[i] / (s.P[i] + s.damping);
    ++s.t;
}

// ---------------------------------------------------------------------------
// Variational objective
// ---------------------------------------------------------------------------

struct ElboEstimate {
    double value = 0.0;           ///< expected_loss - entropy
    double expected_loss = 0.0;   ///< Monte-Carlo mean of l(m + eps)
    double entropy = 0.0;         ///< 1/2 sum log(2 pi e tau sigma_i^2)
    double standard_error = 0.0;  ///< of the expected-loss estimate
};

inline double gaussian_entropy(std::span<const double> variances) {
    CompensatedSum acc;
    for (const double v : variances) {
        if (!(v > 0.0) || !std::isfinite(v)) throw PreconditionError("entropy: variances must be positive and finite");
        acc.add(0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * v));
    }
    return acc.value();
}

/// Sample i is drawn from stream.child(i).
inline ElboEstimate elbo_estimate(std::span<const double> mean, const PosteriorSpec& spec, const LossOracle& loss,
                                  const RandomStream& stream, unsigned workers = 1) {
    spec.validate(mean.size());
    if (spec.family == PerturbationFamily::StudentT)
        throw PreconditionError("elbo_estimate: entropy is only available for Gaussian posteriors");
    const Vector var = spec.variances(mean.size());
    ElboEstimate out;
    out.entropy = gaussian_entropy(var);
    const auto ns = static_cast<std::size_t>(spec.n_samples);
    Vector values(ns);
    parallel_for(ns, workers, [&](std::size_t i) {
        RandomStream s = stream.child(i);
        Vector theta(mean.begin(), mean.end());
        axpy(1.0, spec.sample(s, mean.size()), theta);
        values[i] = loss(theta);
    });
    out.expected_loss = stable_mean(values);
    if (ns > 1) {
        CompensatedSum ss;
        for (const double v : values) ss.add((v - out.expected_loss) * (v - out.expected_loss));
        out.standard_error = std::sqrt(ss.value() / static_cast<double>(ns - 1) / static_cast<double>(ns));
    }
    out.value = out.expected_loss - out.entropy;
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints (JSON, version 1). Non-finite numbers are stored as strings.
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline nlohmann::json number_to_json(double x) {
    if (std::isfinite(x)) return x;
    if (std::isnan(x)) return "nan";
    return x > 0 ? "inf" : "-inf";
}

inline double number_from_json(const nlohmann::json& j) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    }
    throw ParseError("checkpoint: expected a number", 0);
}

inline nlohmann::json vector_to_json(std::span<const double> v) {
    auto a = nlohmann::json::array();
    for (const double x : v) a.push_back(number_to_json(x));
    return a;
}

inline Vector vector_from_json(const nlohmann::json& j) {
    Vector v;
    for (const auto& x : j) v.push_back(number_from_json(x));
    return v;
}

inline void check_header(const nlohmann::json& j, const std::string& kind) {
    if (!j.contains("version") || j.at("version").get<int>() != kCheckpointVersion)
        throw ParseError("checkpoint: unsupported version", 0);
    if (j.value("kind", std::string{}) != kind) throw ParseError("checkpoint: expected kind '" + kind + "'", 0);
}

inline nlohmann::json spec_to_json(const PosteriorSpec& s) {
    return {{"family", to_string(s.family)},
            {"sigma2", vector_to_json(s.sigma2)},
            {"n_samples", s.n_samples},
            {"alpha", number_to_json(s.alpha)},
            {"temperature", number_to_json(s.temperature)}};
}

inline PosteriorSpec spec_from_json(const nlohmann::json& j) {
    PosteriorSpec s;
    s.family = parse_family(j.at("family").get<std::string>());
    s.sigma2 = vector_from_json(j.at("sigma2"));
    s.n_samples = j.at("n_samples").get<int>();
    s.alpha = number_from_json(j.at("alpha"));
    s.temperature = number_from_json(j.at("temperature"));
    return s;
}

}  // namespace detail

inline nlohmann::json to_checkpoint(const GdState& s) {
    return {{"version", kCheckpointVersion}, {"kind", "gd"}, {"m", detail::vector_to_json(s.m)},
            {"rho", s.rho}, {"t", s.t}};
}

inline nlohmann::json to_checkpoint(const VgdState& s) {
    return {{"version", kCheckpointVersion}, {"kind", "vgd"}, {"m", detail::vector_to_json(s.m)},
            {"rho", s.rho}, {"t", s.t}, {"spec", detail::spec_to_json(s.spec)}};
}

inline nlohmann::json to_checkpoint(const AdamState& s) {
    return {{"version", kCheckpointVersion}, {"kind", "adam"}, {"m", detail::vector_to_json(s.m)},
            {"v", detail::vector_to_json(s.v)}, {"t", s.t}, {"rho", s.rho}, {"beta2", s.beta2}, {"eps", s.eps}};
}

inline nlohmann::json to_checkpoint(const VonState& s) {
    return {{"version", kCheckpointVersion}, {"kind", "von"},        {"m", detail::vector_to_json(s.m)},
            {"P", detail::vector_to_json(s.P)},  {"rho", s.rho},     {"beta2", s.beta2},
            {"temperature", s.temperature},      {"n_samples", s.n_samples},
            {"damping", s.damping},              {"t", s.t}};
}

inline GdState gd_from_checkpoint(const nlohmann::json& j) {
    detail::check_header(j, "gd");
    GdState s;
    s.m = detail::vector_from_json(j.at("m"));
    s.rho = j.at("rho").get<double>();
    s.t = j.at("t").get<std::size_t>();
    return s;
}

inline VgdState vgd_from_checkpoint(const nlohmann::json& j) {
    detail::check_header(j, "vgd");
    VgdState s;
    s.m = detail::vector_from_json(j.at("m"));
    s.rho = j.at("rho").get<double>();
    s.t = j.at("t").get<std::size_t>();
    s.spec = detail::spec_from_json(j.at("spec"));
    return s;
}

inline AdamState adam_from_checkpoint(const nlohmann::json& j) {
    detail::check_header(j, "adam");
    AdamState s;
    s.m = detail::vector_from_json(j.at("m"));
    s.v = detail::vector_from_json(j.at("v"));
    s.t = j.at("t").get<std::size_t>();
    s.rho = j.at("rho").get<double>();
    s.beta2 = j.at("beta2").get<double>();
    s.eps = j.at("eps").get<double>();
    return s;
}

inline VonState von_from_checkpoint(const nlohmann::json& j) {
    detail::check_header(j, "von");
    VonState s;
    s.m = detail::vector_from_json(j.at("m"));
    s.P = detail::vector_from_json(j.at("P"));
    s.rho = j.at("rho").get<double>();
    s.beta2 = j.at("beta2").get<double>();
    s.temperature = j.at("temperature").get<double>();
    s.n_samples = j.at("n_samples").get<int>();
    s.damping = j.at("damping").get<double>();
    s.t = j.at("t").get<std::size_t>();
    return s;
}

}  // namespace vlab
