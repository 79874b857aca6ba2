#include <gtest/gtest.h>

#include <cmath>

#include "vlab/quadlab.hpp"

using namespace vlab;

TEST(QuadTrajectory, ZeroNoiseVgdMatchesGd) {
    RandomStream s(2);
    const auto p = QuadraticProblem::random(4, 1.0, 15.0, s);
    const Vector m0{1.0, -0.5, 0.3, 2.0};
    const auto spec = PosteriorSpec::isotropic(0.0, 3);
    const auto a = run_quadratic_trajectory(p, QuadOptimizer::Gd, spec, m0, 0.1, 50, RandomStream(1));
    const auto b = run_quadratic_trajectory(p, QuadOptimizer::Vgd, spec, m0, 0.1, 50, RandomStream(9));
    EXPECT_EQ(a.loss, b.loss);
    EXPECT_EQ(a.final_iterate, b.final_iterate);
}

TEST(QuadTrajectory, DeterministicAndChecksShapes) {
    const auto p = QuadraticProblem::diagonal({18.0, 6.0, 1.0});
    const Vector m0{1.0, 1.0, 1.0};
    const auto spec = PosteriorSpec::isotropic(0.05, 1);
    const auto a = run_quadratic_trajectory(p, QuadOptimizer::Vgd, spec, m0, 0.1, 100, RandomStream(3));
    const auto b = run_quadratic_trajectory(p, QuadOptimizer::Vgd, spec, m0, 0.1, 100, RandomStream(3));
    EXPECT_EQ(a.loss, b.loss);
    EXPECT_EQ(a.loss.size(), 101u);
    EXPECT_EQ(a.record.rows().size(), 101u);
    const Vector bad{1.0};
    EXPECT_THROW(run_quadratic_trajectory(p, QuadOptimizer::Vgd, spec, bad, 0.1, 10, RandomStream(0)), ContractError);
    EXPECT_THROW(run_quadratic_trajectory(p, QuadOptimizer::Vgd, spec, m0, 0.0, 10, RandomStream(0)),
                 InvalidSpecError);
}

TEST(QuadTrajectory, GdAboveThresholdDiverges) {
    const auto p = QuadraticProblem::diagonal({21.0});
    const Vector m0{1.0};
    const auto r = run_quadratic_trajectory(p, QuadOptimizer::Gd, PosteriorSpec::isotropic(0.0, 1), m0, 0.1, 400,
                                            RandomStream(0));
    EXPECT_EQ(r.classification, StabilityClass::Divergent);
}

TEST(Heatmap, TheoryCurve) {
    EXPECT_DOUBLE_EQ(theory_threshold_lambda(0.0, 0.1, 1, 1.0), 20.0);
    double prev = 20.0;
    for (const double s2 : {1e-3, 1e-2, 0.1, 1.0, 10.0}) {
        const double lam = theory_threshold_lambda(s2, 0.1, 1, 1.0);
        EXPECT_LT(lam, prev);
        const double z = lam * lam / s2;
        EXPECT_NEAR(lam, stability_threshold(z, 0.1), 1e-9 * lam);
        prev = lam;
    }
}

TEST(Heatmap, ContourCrossingInterpolates) {
    Matrix p(4, 2);
    const double col0[] = {1.0, 0.8, 0.2, 0.0};
    for (std::size_t r = 0; r < 4; ++r) {
        p(r, 0) = col0[r];
        p(r, 1) = 1.0;
    }
    EXPECT_NEAR(*contour_crossing(p, 0), 1.5, 1e-15);
    EXPECT_FALSE(contour_crossing(p, 1).has_value());
}

TEST(Heatmap, SmallGridWorkerInvariantAndSeparates) {
    GridExperimentConfig cfg;
    cfg.x.count = 6;
    cfg.y.count = 8;
    cfg.trials = 50;
    const auto a = descent_heatmap(cfg, 1);
    const auto b = descent_heatmap(cfg, 4);
    for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t c = 0; c < 6; ++c) ASSERT_EQ(a.probability(r, c), b.probability(r, c));
    // Lowest-noise column: lambda = 0.5 always descends, lambda = 25 rarely does.
    EXPECT_EQ(a.probability(0, 5), 1.0);
    EXPECT_LT(a.probability(7, 5), 0.1);
    EXPECT_GE(contour_agreement(a, 8.0), 1.0);
}

TEST(Heatmap, RejectsBadConfig) {
    GridExperimentConfig cfg;
    cfg.n_samples = 0;
    EXPECT_THROW(descent_heatmap(cfg), InvalidSpecError);
    cfg.n_samples = 1;
    cfg.x.count = 1;
    EXPECT_THROW(descent_heatmap(cfg), InvalidSpecError);
}

TEST(Boundary, FitThroughOrigin) {
    const std::vector<double> x{1, 2, 3, 4};
    const std::vector<double> y{2.5, 5.0, 7.5, 10.0};
    const auto [k, r2] = fit_through_origin(x, y);
    EXPECT_NEAR(k, 2.5, 1e-15);
    EXPECT_NEAR(r2, 1.0, 1e-15);
}

TEST(Boundary, SmallRunDeterministicAndMonotone) {
    BoundaryConfig cfg;
    cfg.n_samples = {1, 2, 4};
    cfg.sigma2.count = 11;
    cfg.trials = 3;
    const auto a = stability_boundary(cfg, 1);
    const auto b = stability_boundary(cfg, 3);
    EXPECT_EQ(a.classes, b.classes);
    EXPECT_EQ(a.divergent_fraction, b.divergent_fraction);
    // Lowest sigma2 is stable, the largest diverges for every N_s.
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_TRUE(a.stable(0, c));
        EXPECT_FALSE(a.stable(10, c));
    }
    // More samples never lower the empirical boundary.
    for (std::size_t c = 1; c < 3; ++c) {
        if (a.empirical_sigma2[c - 1] && a.empirical_sigma2[c]) {
            EXPECT_GE(*a.empirical_sigma2[c], *a.empirical_sigma2[c - 1]);
        }
    }
}

TEST(Histogram, MassConservedAndBinning) {
    auto h = Histogram::symmetric(4, 2.0);
    for (const double x : {-5.0, -2.0, -0.1, 0.0, 1.9, 2.0, 7.0}) h.add(x);
    EXPECT_EQ(h.total, 7u);
    std::size_t sum = 0;
    for (const auto c : h.counts) sum += c;
    EXPECT_EQ(sum, 7u);
    EXPECT_EQ(h.counts[0], 2u);
    EXPECT_EQ(h.counts[3], 3u);
    EXPECT_THROW(Histogram::symmetric(0, 1.0), ContractError);
}

TEST(Histogram, StationaryVarianceMatchesAr1) {
    // m' = (1 - rho lambda) m - rho lambda e, Var e = sigma2 / N_s.
    const double lambda = 15.0, rho = 0.1, sigma2 = 0.01;
    for (const int ns : {1, 10}) {
        const auto r = iterate_histogram(lambda, rho, sigma2, ns, 40000, 2000, RandomStream(7).child(ns));
        const double a = 1.0 - rho * lambda;
        const double expected = rho * rho * lambda * lambda * sigma2 / ns / (1.0 - a * a);
        EXPECT_EQ(r.histogram.total, 38000u);
        EXPECT_NEAR(r.variance, expected, 5.0 * r.variance_se) << ns;
    }
}

TEST(Histogram, ZeroNoiseCollapses) {
    const auto r = iterate_histogram(15.0, 0.1, 0.0, 1, 2000, 1000, RandomStream(0));
    EXPECT_LT(r.max_abs, 1e-100);
}

TEST(Smoothing, ClosedForms) {
    const auto v = smoothed_quartic(0.0, 0.0);
    EXPECT_EQ(v.value, 1.0);
    EXPECT_EQ(v.curvature, -4.0);
    EXPECT_NEAR(*smoothed_quartic_minimizer(0.1), std::sqrt(0.7), 1e-15);
    EXPECT_FALSE(smoothed_quartic_minimizer(0.4).has_value());
    for (const double s2 : {0.0, 0.05, 0.1, 0.2}) {
        const double m = *smoothed_quartic_minimizer(s2);
        EXPECT_NEAR(smoothed_quartic(m, s2).curvature, 8.0 - 24.0 * s2, 1e-12);
    }
}

TEST(Smoothing, MonteCarloMatchesSmoothedValue) {
    // E[(x^2 - 1)^2], x ~ N(m, s2), against the closed form.
    RandomStream s(31);
    const double m = 0.7, s2 = 0.15;
    const int n = 400000;
    CompensatedSum acc;
    for (int i = 0; i < n; ++i) {
        const double x = m + std::sqrt(s2) * s.normal();
        acc.add(std::pow(x * x - 1.0, 2));
    }
    EXPECT_NEAR(acc.value() / n, smoothed_quartic(m, s2).value, 0.01);
}

TEST(Smoothing, AveragedCurvatureUnbiased) {
    const double theta = 0.5, s2 = 0.1;
    CompensatedSum acc;
    const int reps = 20000;
    for (int r = 0; r < reps; ++r) acc.add(averaged_curvature_mc(theta, s2, 4, RandomStream(5).child(r)));
    EXPECT_NEAR(acc.value() / reps, smoothed_quartic(theta, s2).curvature, 0.05);
    EXPECT_EQ(averaged_curvature_mc(theta, 0.0, 4, RandomStream(0)), 12.0 * 0.25 - 4.0);
}

TEST(DoubleWell, DerivativesConsistent) {
    for (const double x : {-1.5, -1.0, -0.3, 0.0, 0.4, 1.0, 1.7}) {
        const double h = 1e-5;
        EXPECT_NEAR(DoubleWell::grad(x), (DoubleWell::loss(x + h) - DoubleWell::loss(x - h)) / (2 * h), 1e-6);
        EXPECT_NEAR(DoubleWell::curvature(x), (DoubleWell::grad(x + h) - DoubleWell::grad(x - h)) / (2 * h), 1e-5);
    }
    EXPECT_NEAR(DoubleWell::grad(1.0), 0.0, 1e-15);
    EXPECT_NEAR(DoubleWell::grad(-1.0), 0.0, 1e-15);
}

TEST(DoubleWell, EscapeRegimes) {
    const auto still = double_well_escape(0.1, 0.0, 1, 2000, 1.0, RandomStream(0));
    EXPECT_EQ(still.basin, Basin::Sharp);
    const auto wild = double_well_escape(0.1, 50.0, 1, 2000, 1.0, RandomStream(0));
    EXPECT_EQ(wild.basin, Basin::Divergent);
    const auto a = double_well_escape(0.1, 0.05, 1, 500, 1.0, RandomStream(4));
    const auto b = double_well_escape(0.1, 0.05, 1, 500, 1.0, RandomStream(4));
    EXPECT_EQ(a.theta, b.theta);
}
