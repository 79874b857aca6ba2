#include <gtest/gtest.h>

#include <cmath>

#include "vlab/stability.hpp"

using namespace vlab;

namespace {

// Residual of -rho + (rho^2/2) l + (rho^2/(2z)) l^3 at l = (2/rho) VF(z), relative to rho.
double cubic_residual(double z, double rho) {
    const double l = stability_threshold(z, rho);
    return std::abs(-rho + 0.5 * rho * rho * l + rho * rho / (2.0 * z) * l * l * l) / rho;
}

}  // namespace

TEST(VariationalFactor, RootOfCubic) {
    EXPECT_LT(cubic_residual(100.0, 0.1), 1e-10);
    for (const double rho : {0.01, 0.1, 1.0})
        for (const double z : {1e-6, 1e-2, 1.0, 1e3, 1e9}) EXPECT_LT(cubic_residual(z, rho), 1e-10) << z << " " << rho;
}

TEST(VariationalFactor, LimitsAndMonotonicity) {
    EXPECT_EQ(variational_factor(std::numeric_limits<double>::infinity(), 0.1), 1.0);
    EXPECT_NEAR(variational_factor(1e14, 0.1), 1.0, 1e-10);
    double prev = 0.0;
    for (double z = 1e-9; z < 1e12; z *= 1.3) {
        const double v = variational_factor(z, 0.05);
        EXPECT_GT(v, prev);
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
        prev = v;
    }
}

TEST(VariationalFactor, DomainErrors) {
    EXPECT_THROW(variational_factor(0.0, 0.1), DomainError);
    EXPECT_THROW(variational_factor(-1.0, 0.1), DomainError);
    EXPECT_THROW(variational_factor(std::nan(""), 0.1), DomainError);
    EXPECT_THROW(variational_factor(1.0, 0.0), DomainError);
}

TEST(VariationalFactor, CriticalZInvertsThreshold) {
    for (const double lam : {1.0, 5.0, 15.0, 19.9}) {
        const double z = critical_z(lam, 0.1);
        EXPECT_NEAR(stability_threshold(z, 0.1), lam, 1e-10 * lam);
    }
    EXPECT_THROW(critical_z(20.0, 0.1), DomainError);
}

TEST(ModeZ, DirectEvaluation) {
    const auto p = QuadraticProblem::diagonal({2.0, 1.0});
    const Vector m{1.0, 0.0};
    const Vector z = mode_z(p, PosteriorSpec::isotropic(1.0, 4), m);
    EXPECT_DOUBLE_EQ(z[0], 16.0);
    EXPECT_EQ(z[1], kZFloor);  // orthogonal mode is clamped
    const auto d = mode_diagnostics(p, PosteriorSpec::isotropic(1.0, 4), m, 0.1);
    EXPECT_FALSE(d.modes[0].z_clamped);
    EXPECT_TRUE(d.modes[1].z_clamped);
}

TEST(ModeZ, DoublingSamplesDoublesZ) {
    RandomStream s(4);
    const auto p = QuadraticProblem::random(6, 0.5, 20.0, s);
    Vector m(6);
    for (auto& x : m) x = s.normal();
    const Vector a = mode_z(p, PosteriorSpec::isotropic(0.3, 3), m);
    const Vector b = mode_z(p, PosteriorSpec::isotropic(0.3, 6), m);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(b[i], 2.0 * a[i], 1e-12 * b[i]);
}

TEST(ExpectedLossChange, ZeroNoiseIsGd) {
    const auto p = QuadraticProblem::diagonal({1.0});
    const Vector m{1.0};
    EXPECT_NEAR(expected_loss_change(p, m, 0.1, PosteriorSpec::isotropic(0.0, 1)), -0.095, 1e-15);
    EXPECT_NEAR(gd_loss_change(p, m, 0.1), -0.095, 1e-15);
    const auto q = QuadraticProblem::diagonal({20.0});
    EXPECT_NEAR(expected_loss_change(q, m, 0.1, PosteriorSpec::isotropic(0.0, 1)), 0.0, 1e-12);
}

TEST(ExpectedLossChange, OneDimensionalMonteCarlo) {
    // lambda = 1, m = 1, rho = 0.1, sigma^2 = 0.5, N_s = 2, 1e6 draws.
    const double exact = expected_loss_change_1d(1.0, 1.0, 0.1, 0.5, 2);
    const auto p = QuadraticProblem::diagonal({1.0});
    EXPECT_NEAR(exact, expected_loss_change(p, Vector{1.0}, 0.1, PosteriorSpec::isotropic(0.5, 2)), 1e-15);
    const RandomStream root(99);
    const std::size_t n = 1000000;
    CompensatedSum sum, sq;
    for (std::size_t t = 0; t < n; ++t) {
        RandomStream s = root.child(t);
        const double next = vgd_step_1d(1.0, 1.0, 0.1, 0.5, 2, s);
        const double d = 0.5 * next * next - 0.5;
        sum.add(d);
        sq.add(d * d);
    }
    const double mean = sum.value() / n;
    const double se = std::sqrt((sq.value() / n - mean * mean) / n);
    EXPECT_LT(std::abs(mean - exact), 3.0 * se);
}

TEST(DescentChecks, SufficientImpliesNegativeExpectation) {
    RandomStream s(8);
    int passes = 0;
    for (int k = 0; k < 300; ++k) {
        const auto p = QuadraticProblem::random(8, 0.1, 30.0, s);
        Vector m(8);
        for (auto& x : m) x = s.normal();
        const double rho = 0.02 + 0.1 * s.uniform();
        const auto spec = PosteriorSpec::isotropic(std::pow(10.0, -3.0 + 3.0 * s.uniform()), 1 + static_cast<int>(s.uniform_index(5)));
        const auto suff = sufficient_descent_check(p, m, rho, spec);
        const bool nec = necessary_sufficient_check(p, m, rho, spec);
        EXPECT_EQ(nec, expected_loss_change(p, m, rho, spec) < 0.0);
        if (suff.overall) {
            ++passes;
            EXPECT_TRUE(nec);
        }
    }
    EXPECT_GT(passes, 10);
}

TEST(DescentChecks, SufficiencyOnlyCounterexample) {
    // Mode 1 sits 1% above its threshold; the other modes have large margins and
    // carry enough gradient that the expectation still decreases.
    const double rho = 0.1;
    const auto spec = PosteriorSpec::isotropic(1.0, 1);
    const double z1 = 50.0;
    const double thr = stability_threshold(z1, rho);
    const double lam1 = 1.01 * thr;
    // z1 = (lambda1 m1)^2 / sigma^2 fixes m1.
    const double m1 = std::sqrt(z1) / lam1;
    const auto p = QuadraticProblem::diagonal({lam1, 1.0});
    const Vector m{m1, 30.0};
    const auto suff = sufficient_descent_check(p, m, rho, spec);
    EXPECT_FALSE(suff.per_mode[0]);
    EXPECT_TRUE(suff.per_mode[1]);
    EXPECT_FALSE(suff.overall);
    EXPECT_LT(expected_loss_change(p, m, rho, spec), 0.0);
}

TEST(DescentChecks, ZeroNoiseReducesToLemma) {
    const auto spec = PosteriorSpec::isotropic(0.0, 1);
    const Vector m{1.0, 1.0};
    EXPECT_TRUE(sufficient_descent_check(QuadraticProblem::diagonal({19.0, 3.0}), m, 0.1, spec).overall);
    EXPECT_FALSE(sufficient_descent_check(QuadraticProblem::diagonal({21.0, 3.0}), m, 0.1, spec).overall);
}

TEST(DescentChecks, PerModeBoundTightForIsotropic) {
    RandomStream s(12);
    const auto p = QuadraticProblem::random(5, 0.5, 10.0, s);
    Vector m(5);
    for (auto& x : m) x = s.normal();
    const auto spec = PosteriorSpec::isotropic(0.2, 3);
    const Vector f = per_mode_descent_terms(p, m, 0.07, spec);
    double sum = 0.0;
    for (const double x : f) sum += x;
    const double exact = expected_loss_change(p, m, 0.07, spec);
    EXPECT_NEAR(sum, exact, 1e-12 * std::abs(exact) + 1e-14);
}

TEST(DescentChecks, PerModeBoundIsUpperBoundForDiagonal) {
    RandomStream s(13);
    for (int k = 0; k < 50; ++k) {
        const auto p = QuadraticProblem::random(5, 0.5, 10.0, s);
        Vector m(5), var(5);
        for (auto& x : m) x = s.normal();
        for (auto& v : var) v = s.uniform();
        const auto spec = PosteriorSpec::diagonal(var, 2);
        const Vector f = per_mode_descent_terms(p, m, 0.05, spec);
        double sum = 0.0;
        for (const double x : f) sum += x;
        EXPECT_GE(sum, expected_loss_change(p, m, 0.05, spec) - 1e-12);
    }
}

TEST(DescentProbability, DeterministicLimits) {
    const RandomStream s(1);
    EXPECT_EQ(descent_probability_mc(15.0, 1.0, 0.1, 0.0, 1, 100, s), 1.0);
    EXPECT_EQ(descent_probability_mc(25.0, 1.0, 0.1, 0.0, 1, 100, s), 0.0);
}

TEST(DescentProbability, WorkerCountInvariant) {
    const RandomStream s(5);
    const auto a = descent_count_mc(10.0, 1.0, 0.1, 0.5, 2, 1000, s, 1);
    const auto b = descent_count_mc(10.0, 1.0, 0.1, 0.5, 2, 1000, s, 4);
    EXPECT_EQ(a.successes, b.successes);
}

TEST(DescentProbability, SignOfStartIrrelevant) {
    const RandomStream s(6);
    // The noise enters symmetrically, so m0 -> -m0 with the same draws mirrors
    // the trajectory only in distribution; compare probabilities within MC noise.
    const double a = descent_probability_mc(12.0, 1.0, 0.1, 0.3, 1, 20000, s.child(0));
    const double b = descent_probability_mc(12.0, -1.0, 0.1, 0.3, 1, 20000, s.child(1));
    EXPECT_NEAR(a, b, 4.0 * std::sqrt(0.25 / 20000) * std::sqrt(2.0));
}

TEST(MarginTrend, FailureProbabilityWeaklyDecreasing) {
    const std::vector<int> ns{1, 2, 5, 10, 50};
    const auto pts = descent_margin_trend(5.0, 1.0, 0.1, 0.05, ns, 20000, RandomStream(3));
    EXPECT_TRUE(weakly_decreasing_within_noise(pts));
    const auto zero = descent_margin_trend(5.0, 1.0, 0.1, 0.0, ns, 1000, RandomStream(3));
    for (const auto& p : zero) EXPECT_EQ(p.failure_probability, 0.0);
    const auto big_margin = descent_margin_trend(1.0, 10.0, 0.1, 1e-4, ns, 1000, RandomStream(3));
    for (const auto& p : big_margin) EXPECT_EQ(p.failure_probability, 0.0);
}

TEST(MarginTrend, RejectsNonNegativeExpectation) {
    const std::vector<int> ns{1};
    EXPECT_THROW(descent_margin_trend(25.0, 1.0, 0.1, 0.0, ns, 10, RandomStream(0)), PreconditionError);
}

namespace {

StabilityClass classify_1d(double lambda, double rho, double sigma2, std::size_t steps, std::uint64_t seed) {
    const RandomStream root(seed);
    Vector loss, norm;
    double m = 1.0;
    loss.push_back(0.5 * lambda);
    norm.push_back(1.0);
    for (std::size_t t = 0; t < steps; ++t) {
        RandomStream s = root.child(t);
        m = vgd_step_1d(lambda, m, rho, sigma2, 1, s);
        loss.push_back(0.5 * lambda * m * m);
        norm.push_back(std::abs(m));
    }
    return classify_stability(loss, norm);
}

}  // namespace

TEST(Classify, QuadraticRegimes) {
    EXPECT_EQ(classify_1d(10.0, 0.1, 0.0, 400, 0), StabilityClass::Converged);
    EXPECT_EQ(classify_1d(25.0, 0.1, 0.0, 400, 0), StabilityClass::Divergent);
    EXPECT_EQ(classify_1d(10.0, 0.1, 0.01, 400, 0), StabilityClass::StochasticallyStable);
}

TEST(Classify, NonFiniteAndShortTraces) {
    const Vector bad{1, 2, 3, 4, 5, 6, 7, std::numeric_limits<double>::infinity()};
    EXPECT_EQ(classify_stability(bad, bad), StabilityClass::Divergent);
    const Vector short_trace{1, 2, 3};
    EXPECT_THROW(classify_stability(short_trace, short_trace), ContractError);
}

TEST(PosteriorSpecValidation, Rejects) {
    EXPECT_THROW(PosteriorSpec::isotropic(-1.0, 1).validate(), InvalidSpecError);
    EXPECT_THROW(PosteriorSpec::isotropic(1.0, 0).validate(), InvalidSpecError);
    EXPECT_THROW(PosteriorSpec::student_t(1.0, 1, 2.0).validate(), InvalidSpecError);
    EXPECT_THROW(PosteriorSpec::diagonal({1.0, 2.0}, 1).validate(3), InvalidSpecError);
    EXPECT_NO_THROW(PosteriorSpec::diagonal({1.0, 2.0, 3.0}, 1).validate(3));
}
