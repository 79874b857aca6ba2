#pragma once

#include <cmath>
#include <string>

#include "vlab/error.hpp"
#include "vlab/numerics/linalg.hpp"
#include "vlab/numerics/random.hpp"

namespace vlab {

/// Zero-mean Gaussian with diagonal covariance diag(sigma2).
struct DiagGaussian {
    Vector sigma2;

    std::size_t dim() const noexcept { return sigma2.size(); }

    void validate() const {
        if (sigma2.empty()) throw InvalidSpecError("DiagGaussian: dimension must be positive");
        for (std::size_t i = 0; i < sigma2.size(); ++i)
            if (!std::isfinite(sigma2[i]) || sigma2[i] < 0.0)
                throw InvalidSpecError("DiagGaussian: variance at index " + std::to_string(i) +
                                       " must be finite and non-negative");
    }
};

/// Zero-mean Student-t, rescaled per coordinate so its variance equals target_sigma2.
struct StudentT {
    double alpha = 3.0;
    Vector target_sigma2;

    std::size_t dim() const noexcept { return target_sigma2.size(); }

    /// Multiplier applied to a unit Student-t draw so the variance is target_sigma2.
    static double unit_variance_scale(double alpha) noexcept { return std::sqrt((alpha - 2.0) / alpha); }

    void validate() const {
        if (!(alpha > 2.0) || !std::isfinite(alpha))
            throw InvalidSpecError("StudentT: alpha must exceed 2 for the variance to exist");
        DiagGaussian{target_sigma2}.validate();
    }
};

inline Vector sample_gaussian_diag(RandomStream& stream, const DiagGaussian& spec) {
    spec.validate();
    Vector out(spec.dim());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double z = stream.normal();
        out[i] = spec.sigma2[i] == 0.0 ? 0.0 : std::sqrt(spec.sigma2[i]) * z;
    }
    return out;
}

inline Vector sample_student_t(RandomStream& stream, const StudentT& spec) {
    spec.validate();
    const double unit = StudentT::unit_variance_scale(spec.alpha);
    Vector out(spec.dim());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double t = stream.student_t(spec.alpha);
        out[i] = spec.target_sigma2[i] == 0.0 ? 0.0 : unit * std::sqrt(spec.target_sigma2[i]) * t;
    }
    return out;
}

inline double normal_cdf(double x) noexcept { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace vlab
