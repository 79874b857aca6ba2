#pragma once

// Spectral measurements through Hessian-vector products, threshold tracking
// against the variational factor, and append-only trajectory logs.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vlab/error.hpp"
#include "vlab/numerics/linalg.hpp"
#include "vlab/numerics/random.hpp"
#include "vlab/stability.hpp"

namespace vlab {

/// hvp(v, out): writes H v into out.
using HvpOracle = std::function<void(std::span<const double>, std::span<double>)>;

inline constexpr std::size_t kMaxTopK = 16;

struct SpectralResult {
    Vector values;                ///< descending
    std::vector<Vector> vectors;  ///< unit norm, vectors[i] pairs with values[i]
    Vector residuals;             ///< ||H v - lambda v||
    std::size_t iterations = 0;   ///< operator applications
    bool converged = false;       ///< every residual <= tol * max(1, |lambda|)
};

namespace detail {

inline Vector random_unit(std::size_t dim, RandomStream& stream) {
    Vector v(dim);
    for (double& x : v) x = stream.normal();
    scale(1.0 / norm2(v), v);
    return v;
}

/// Removes the components of w along every basis vector (classical Gram-Schmidt, applied twice).
inline void reorthogonalize(std::span<double> w, const std::vector<Vector>& basis) {
    for (int pass = 0; pass < 2; ++pass)
        for (const auto& q : basis) axpy(-dot(q, w), q, w);
}

inline double residual_norm(const HvpOracle& hvp, std::span<const double> v, double lambda, Vector& scratch) {
    hvp(v, scratch);
    axpy(-lambda, v, scratch);
    return norm2(scratch);
}

}  // namespace detail

/// Top-k (largest algebraic) eigenpairs of a symmetric operator by Lanczos with
/// full reorthogonalization. Ritz pairs are accepted when the Lanczos residual
/// bound falls below tol * max(1, |theta|); reported residuals are recomputed
/// explicitly. Hitting max_iters returns the best pairs with converged = false.
inline SpectralResult top_eigen(const HvpOracle& hvp, std::size_t dim, std::size_t k, std::size_t max_iters,
                                double tol, RandomStream& stream, std::span<const double> start = {}) {
    if (dim == 0) throw ContractError("top_eigen: dimension must be positive");
    if (k == 0 || k > std::min(dim, kMaxTopK)) throw ContractError("top_eigen: need 1 <= k <= min(dim, 16)");
    if (!(tol > 0.0)) throw ContractError("top_eigen: tolerance must be positive");
    if (!start.empty() && start.size() != dim) throw ContractError("top_eigen: start vector has wrong length");

    const std::size_t max_basis = std::min(dim, std::max(max_iters, k));
    std::vector<Vector> basis;
    Vector alpha, beta;  // beta[j] couples basis j and j+1
    SpectralResult out;

    Vector q;
    if (!start.empty() && norm2(start) > 0.0 && all_finite(start)) {
        q.assign(start.begin(), start.end());
        scale(1.0 / norm2(q), q);
    } else {
        q = detail::random_unit(dim, stream);
    }

    Vector w(dim);
    SymmetricEigen ritz;
    double scale_est = 0.0;
    std::size_t since_check = 0;
    bool done = false;
    while (!done) {
        basis.push_back(q);
        hvp(basis.back(), w);
        ++out.iterations;
        if (!all_finite(w)) throw NumericalError("top_eigen: operator returned non-finite values");
        const std::size_t j = basis.size() - 1;
        const double a = dot(basis[j], w);
        alpha.push_back(a);
        axpy(-a, basis[j], w);
        if (j > 0) axpy(-beta[j - 1], basis[j - 1], w);
        detail::reorthogonalize(w, basis);
        double b = norm2(w);
        scale_est = std::max({scale_est, std::abs(a), b});
        const bool exhausted = basis.size() >= max_basis;
        const bool invariant = b <= 1e-13 * std::max(1.0, scale_est);

        ++since_check;
        const bool check = exhausted || invariant || (basis.size() >= k && since_check >= 4);
        if (check) {
            since_check = 0;
            const std::size_t m = basis.size();
            Matrix t(m, m);
            for (std::size_t i = 0; i < m; ++i) {
                t(i, i) = alpha[i];
                if (i + 1 < m) t(i, i + 1) = t(i + 1, i) = beta[i];
            }
            ritz = symmetric_eig(t);
            bool ok = m >= k;
            for (std::size_t i = 0; ok && i < k; ++i) {
                const double bound = std::abs(b * ritz.vectors(m - 1, i));
                ok = bound <= 0.1 * tol * std::max(1.0, std::abs(ritz.values[i]));
            }
            if (ok || exhausted) done = true;
        }
        if (done) break;
        if (invariant) {
            // Krylov space closed: continue from a fresh direction orthogonal to it.
            Vector fresh = detail::random_unit(dim, stream);
            detail::reorthogonalize(fresh, basis);
            const double nf = norm2(fresh);
            if (nf <= 1e-10) break;
            scale(1.0 / nf, fresh);
            beta.push_back(0.0);
            q = std::move(fresh);
        } else {
            beta.push_back(b);
            scale(1.0 / b, w);
            q = w;
        }
    }

    const std::size_t m = basis.size();
    if (ritz.values.size() != m) {
        Matrix t(m, m);
        for (std::size_t i = 0; i < m; ++i) {
            t(i, i) = alpha[i];
            if (i + 1 < m) t(i, i + 1) = t(i + 1, i) = beta[i];
        }
        ritz = symmetric_eig(t);
    }
    const std::size_t kk = std::min(k, m);
    Vector scratch(dim);
    out.converged = kk == k;
    for (std::size_t i = 0; i < kk; ++i) {
        Vector y(dim, 0.0);
        for (std::size_t j = 0; j < m; ++j) axpy(ritz.vectors(j, i), basis[j], y);
        scale(1.0 / norm2(y), y);
        const double lambda = ritz.values[i];
        const double r = detail::residual_norm(hvp, y, lambda, scratch);
        ++out.iterations;
        out.values.push_back(lambda);
        out.vectors.push_back(std::move(y));
        out.residuals.push_back(r);
        if (!(r <= tol * std::max(1.0, std::abs(lambda)))) out.converged = false;
    }
    return out;
}

/// Dominant eigenpair of H + shift I by power iteration; the reported value has
/// the shift removed. Stops when ||H v - lambda v|| <= tol * max(1, |lambda|).
inline SpectralResult power_iteration(const HvpOracle& hvp, std::size_t dim, double shift, std::size_t max_iters,
                                      double tol, RandomStream& stream) {
    if (dim == 0) throw ContractError("power_iteration: dimension must be positive");
    SpectralResult out;
    Vector v = detail::random_unit(dim, stream);
    Vector hv(dim);
    double lambda = 0.0;
    double r = std::numeric_limits<double>::infinity();
    for (std::size_t it = 0; it < max_iters; ++it) {
        hvp(v, hv);
        ++out.iterations;
        if (!all_finite(hv)) throw NumericalError("power_iteration: operator returned non-finite values");
        lambda = dot(v, hv);
        Vector res = hv;
        axpy(-lambda, v, res);
        r = norm2(res);
        if (r <= tol * std::max(1.0, std::abs(lambda))) {
            out.converged = true;
            break;
        }
        axpy(shift, v, hv);
        const double n = norm2(hv);
        if (!(n > 0.0)) break;
        scale(1.0 / n, hv);
        v.swap(hv);
    }
    out.values.push_back(lambda);
    out.vectors.push_back(std::move(v));
    out.residuals.push_back(r);
    return out;
}

/// Largest-magnitude eigenvalue of a possibly indefinite operator. An upper bound
/// c on the spectral radius is estimated by probing; power iteration on H + cI
/// and cI - H then yields both spectral ends, and the larger magnitude wins.
inline SpectralResult extreme_eigen(const HvpOracle& hvp, std::size_t dim, std::size_t max_iters, double tol,
                                    RandomStream& stream, std::size_t probes = 20) {
    Vector v = detail::random_unit(dim, stream);
    Vector hv(dim);
    double bound = 0.0;
    for (std::size_t i = 0; i < probes; ++i) {
        hvp(v, hv);
        const double n = norm2(hv);
        bound = std::max(bound, n);
        if (!(n > 0.0)) break;
        scale(1.0 / n, hv);
        v.swap(hv);
    }
    const double c = 2.0 * bound + 1e-300;
    auto upper = power_iteration(hvp, dim, c, max_iters, tol, stream);
    const HvpOracle negated = [&](std::span<const double> x, std::span<double> y) {
        hvp(x, y);
        for (double& e : y) e = -e;
    };
    auto lower = power_iteration(negated, dim, c, max_iters, tol, stream);
    lower.values[0] = -lower.values[0];
    lower.iterations += upper.iterations + probes;
    upper.iterations = lower.iterations;
    return std::abs(lower.values[0]) > std::abs(upper.values[0]) ? lower : upper;
}

/// Top eigenpairs of P^{-1/2} H P^{-1/2}, which shares its spectrum with P^{-1} H.
inline SpectralResult preconditioned_spectrum(const HvpOracle& hvp, std::span<const double> precond, std::size_t k,
                                              std::size_t max_iters, double tol, RandomStream& stream,
                                              std::span<const double> start = {}) {
    Vector s(precond.size());
    for (std::size_t i = 0; i < precond.size(); ++i) {
        if (!(precond[i] > 0.0) || !std::isfinite(precond[i]))
            throw NumericalError("preconditioned_sharpness: preconditioner entries must be positive");
        s[i] = 1.0 / std::sqrt(precond[i]);
    }
    Vector tmp(precond.size());
    const HvpOracle op = [&](std::span<const double> x, std::span<double> y) {
        for (std::size_t i = 0; i < x.size(); ++i) tmp[i] = s[i] * x[i];
        hvp(tmp, y);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] *= s[i];
    };
    return top_eigen(op, precond.size(), k, max_iters, tol, stream, start);
}

inline double preconditioned_sharpness(const HvpOracle& hvp, std::span<const double> precond, double tol,
                                       RandomStream& stream, std::size_t max_iters = 200) {
    return preconditioned_spectrum(hvp, precond, 1, max_iters, tol, stream).values.at(0);
}

// ---------------------------------------------------------------------------
// Threshold tracking
// ---------------------------------------------------------------------------

struct ModeThreshold {
    double lambda = 0.0;
    double c = 0.0;  ///< (v_i^T grad)^2
    double z = 0.0;
    double vf = 1.0;
    double threshold = 0.0;  ///< (2/rho) VF(z)
    bool z_clamped = false;
};

/// Per-mode thresholds with c_i = (v_i^T grad)^2 and z_i = N_s c_i / (tau sigma_i^2).
/// Variances are paired with modes in descending order, as on quadratics.
inline std::vector<ModeThreshold> spectrum_vs_thresholds(const SpectralResult& spectrum, std::span<const double> grad,
                                                         double rho, const PosteriorSpec& spec) {
    if (!(rho > 0.0)) throw DomainError("spectrum_vs_thresholds: rho must be positive");
    spec.validate(grad.size());
    const Vector var = detail::paired_variances(spec, grad.size());
    std::vector<ModeThreshold> out;
    for (std::size_t i = 0; i < spectrum.values.size(); ++i) {
        if (spectrum.vectors[i].size() != grad.size())
            throw ContractError("spectrum_vs_thresholds: eigenvector length differs from gradient");
        ModeThreshold mt;
        mt.lambda = spectrum.values[i];
        const double proj = dot(spectrum.vectors[i], grad);
        mt.c = proj * proj;
        mt.z = var[i] == 0.0 ? std::numeric_limits<double>::infinity()
                             : detail::clamp_z(spec.n_samples * mt.c / var[i], mt.z_clamped);
        mt.vf = variational_factor(mt.z, rho);
        mt.threshold = 2.0 / rho * mt.vf;
        out.push_back(mt);
    }
    return out;
}

struct HypothesisPoint {
    double sharpness = 0.0;
    double normalized_sharpness = 0.0;  ///< lambda_1 / (2/rho)
    double vf = 1.0;                    ///< VF(z_1)
    double z = 0.0;
    bool z_clamped = false;
};

inline HypothesisPoint hypothesis_tracker(const SpectralResult& spectrum, std::span<const double> grad, double rho,
                                          const PosteriorSpec& spec) {
    if (spectrum.values.empty()) throw ContractError("hypothesis_tracker: need the leading eigenpair");
    SpectralResult lead;
    lead.values = {spectrum.values[0]};
    lead.vectors = {spectrum.vectors[0]};
    const auto mt = spectrum_vs_thresholds(lead, grad, rho, spec).front();
    return {mt.lambda, mt.lambda * rho / 2.0, mt.vf, mt.z, mt.z_clamped};
}

// ---------------------------------------------------------------------------
// Trajectory log
// ---------------------------------------------------------------------------

/// One logged step. Unset optional fields are written as null.
struct TrajectoryRow {
    std::size_t step = 0;
    double loss = 0.0;
    std::optional<double> iterate_norm;
    std::optional<double> grad_norm;
    std::optional<double> train_acc;
    std::optional<double> test_acc;
    std::optional<double> sharpness;
    std::vector<double> top_eigs;
    std::vector<double> thresholds;
    std::vector<double> z;
    std::optional<double> normalized_sharpness;
    std::optional<double> vf;
    std::optional<double> precond_sharpness;
    std::optional<double> elbo;
    std::optional<double> wall_clock;
    std::vector<std::string> flags;
};

/// Field order of every JSONL data row.
inline const std::vector<std::string>& trajectory_fields() {
    static const std::vector<std::string> f{"step",      "loss",      "iterate_norm", "grad_norm",
                                            "train_acc", "test_acc",  "sharpness",    "top_eigs",
                                            "thresholds", "z",        "normalized_sharpness", "vf",
                                            "precond_sharpness", "elbo", "wall_clock", "flags"};
    return f;
}

namespace detail {

inline nlohmann::ordered_json scalar_field(const std::string& name, std::optional<double> v,
                                           std::vector<std::string>& flags) {
    if (!v) return nullptr;
    if (!std::isfinite(*v)) {
        flags.push_back("non-finite:" + name);
        return nullptr;
    }
    return *v;
}

inline nlohmann::ordered_json array_field(const std::string& name, const std::vector<double>& v,
                                          std::vector<std::string>& flags) {
    auto a = nlohmann::ordered_json::array();
    bool bad = false;
    for (const double x : v) {
        if (std::isfinite(x)) {
            a.push_back(x);
        } else if (std::isinf(x) && x > 0) {
            a.push_back("inf");  // z of a noiseless mode
        } else {
            a.push_back(nullptr);
            bad = true;
        }
    }
    if (bad) flags.push_back("non-finite:" + name);
    return a;
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const TrajectoryRow& r) {
    std::vector<std::string> flags = r.flags;
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["loss"] = detail::scalar_field("loss", r.loss, flags);
    j["iterate_norm"] = detail::scalar_field("iterate_norm", r.iterate_norm, flags);
    j["grad_norm"] = detail::scalar_field("grad_norm", r.grad_norm, flags);
    j["train_acc"] = detail::scalar_field("train_acc", r.train_acc, flags);
    j["test_acc"] = detail::scalar_field("test_acc", r.test_acc, flags);
    j["sharpness"] = detail::scalar_field("sharpness", r.sharpness, flags);
    j["top_eigs"] = detail::array_field("top_eigs", r.top_eigs, flags);
    j["thresholds"] = detail::array_field("thresholds", r.thresholds, flags);
    j["z"] = detail::array_field("z", r.z, flags);
    j["normalized_sharpness"] = detail::scalar_field("normalized_sharpness", r.normalized_sharpness, flags);
    j["vf"] = detail::scalar_field("vf", r.vf, flags);
    j["precond_sharpness"] = detail::scalar_field("precond_sharpness", r.precond_sharpness, flags);
    j["elbo"] = detail::scalar_field("elbo", r.elbo, flags);
    j["wall_clock"] = detail::scalar_field("wall_clock", r.wall_clock, flags);
    j["flags"] = flags;
    return j;
}

/// Append-only trajectory. With a path, the first line is a meta record and each
/// row is written and flushed as it is recorded.
class TrajectoryRecord {
public:
    TrajectoryRecord() = default;

    TrajectoryRecord(const std::string& jsonl_path, const nlohmann::ordered_json& meta)
        : out_(std::make_shared<std::ofstream>(jsonl_path, std::ios::binary | std::ios::trunc)) {
        if (!*out_) throw Error("cannot open trajectory file '" + jsonl_path + "'");
        nlohmann::ordered_json m;
        m["type"] = "meta";
        m["fields"] = trajectory_fields();
        m["meta"] = meta;
        *out_ << m.dump() << '\n';
        out_->flush();
    }

    void record_step(TrajectoryRow row) {
        if (!rows_.empty() && row.step <= rows_.back().step)
            throw ContractError("record_step: step " + std::to_string(row.step) + " does not follow step " +
                                std::to_string(rows_.back().step));
        if (out_) {
            *out_ << to_json(row).dump() << '\n';
            out_->flush();
        }
        rows_.push_back(std::move(row));
    }

    const std::vector<TrajectoryRow>& rows() const noexcept { return rows_; }
    std::size_t size() const noexcept { return rows_.size(); }
    bool empty() const noexcept { return rows_.empty(); }

private:
    std::shared_ptr<std::ofstream> out_;
    std::vector<TrajectoryRow> rows_;
};

}  // namespace vlab
