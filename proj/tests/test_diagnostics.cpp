#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "vlab/diagnostics.hpp"

using namespace vlab;
namespace fs = std::filesystem;

namespace {

HvpOracle matrix_op(const Matrix& a) {
    return [a](std::span<const double> x, std::span<double> y) {
        const Vector r = matvec(a, x);
        std::copy(r.begin(), r.end(), y.begin());
    };
}

Matrix random_spd(std::size_t n, RandomStream& s, Vector* values = nullptr) {
    Vector v(n);
    for (auto& x : v) x = 0.1 + 10.0 * s.uniform();
    if (values) *values = v;
    return compose_symmetric(v, random_orthogonal(n, s));
}

}  // namespace

TEST(TopEigen, DiagonalOperator) {
    const Matrix d = Matrix::diagonal(Vector{3.0, 1.0, 0.5});
    RandomStream s(1);
    const auto r = top_eigen(matrix_op(d), 3, 2, 50, 1e-10, s);
    ASSERT_TRUE(r.converged);
    EXPECT_NEAR(r.values[0], 3.0, 1e-10);
    EXPECT_NEAR(r.values[1], 1.0, 1e-10);
    EXPECT_NEAR(std::abs(r.vectors[0][0]), 1.0, 1e-8);
}

TEST(TopEigen, RandomSpdMatchesDenseSolver) {
    RandomStream s(2);
    Vector vals;
    const Matrix a = random_spd(40, s, &vals);
    const auto dense = symmetric_eig(a);
    const auto r = top_eigen(matrix_op(a), 40, 5, 200, 1e-9, s);
    ASSERT_TRUE(r.converged);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_NEAR(r.values[i], dense.values[i], 1e-7 * dense.values[0]);
        EXPECT_LE(r.residuals[i], 1e-9 * std::max(1.0, std::abs(r.values[i])) * 10.0);
    }
}

TEST(TopEigen, WarmStartAndContracts) {
    RandomStream s(3);
    const Matrix a = random_spd(20, s);
    const auto cold = top_eigen(matrix_op(a), 20, 1, 200, 1e-10, s);
    const auto warm = top_eigen(matrix_op(a), 20, 1, 200, 1e-10, s, cold.vectors[0]);
    EXPECT_NEAR(warm.values[0], cold.values[0], 1e-9 * cold.values[0]);
    EXPECT_LE(warm.iterations, cold.iterations);
    EXPECT_THROW(top_eigen(matrix_op(a), 20, 0, 10, 1e-6, s), ContractError);
    EXPECT_THROW(top_eigen(matrix_op(a), 20, 17, 10, 1e-6, s), ContractError);
    const auto capped = top_eigen(matrix_op(a), 20, 3, 2, 1e-14, s);
    EXPECT_FALSE(capped.converged);
}

TEST(PowerIteration, IndefiniteOperator) {
    const Matrix d = Matrix::diagonal(Vector{2.0, -5.0, 1.0});
    RandomStream s(4);
    const auto top = top_eigen(matrix_op(d), 3, 1, 50, 1e-10, s);
    EXPECT_NEAR(top.values[0], 2.0, 1e-9);
    const auto ext = extreme_eigen(matrix_op(d), 3, 5000, 1e-9, s);
    EXPECT_NEAR(ext.values[0], -5.0, 1e-7);
    const auto p = power_iteration(matrix_op(Matrix::diagonal(Vector{4.0, 1.0})), 2, 0.0, 2000, 1e-10, s);
    EXPECT_NEAR(p.values[0], 4.0, 1e-9);
}

TEST(Preconditioned, MatchesDenseGeneralizedProblem) {
    RandomStream s(5);
    const Matrix a = random_spd(12, s);
    Vector p(12);
    for (auto& x : p) x = 0.5 + 3.0 * s.uniform();
    Matrix scaled(12, 12);
    for (std::size_t i = 0; i < 12; ++i)
        for (std::size_t j = 0; j < 12; ++j) scaled(i, j) = a(i, j) / std::sqrt(p[i] * p[j]);
    const double expect = symmetric_eig(scaled).values[0];
    EXPECT_NEAR(preconditioned_sharpness(matrix_op(a), p, 1e-10, s), expect, 1e-8 * expect);
}

TEST(Preconditioned, ExactDiagonalPreconditionerGivesOne) {
    const Matrix d = Matrix::diagonal(Vector{7.0, 3.0, 0.2});
    RandomStream s(6);
    const Vector p{7.0, 3.0, 0.2};
    EXPECT_NEAR(preconditioned_sharpness(matrix_op(d), p, 1e-12, s), 1.0, 1e-10);
    const Vector ones{1.0, 1.0, 1.0};
    EXPECT_NEAR(preconditioned_sharpness(matrix_op(d), ones, 1e-12, s), 7.0, 1e-9);
    const Vector bad{1.0, 0.0, 1.0};
    EXPECT_THROW(preconditioned_sharpness(matrix_op(d), bad, 1e-8, s), NumericalError);
}

TEST(Hypothesis, MatchesModeDiagnosticsOnQuadratic) {
    RandomStream s(7);
    const auto prob = QuadraticProblem::random(6, 0.5, 18.0, s);
    Vector m(6);
    for (auto& x : m) x = s.normal();
    const double rho = 0.1;
    const auto spec = PosteriorSpec::isotropic(0.05, 3);
    const auto diag = mode_diagnostics(prob, spec, m, rho);

    SpectralResult exact;
    exact.values = prob.eigenvalues();
    for (std::size_t i = 0; i < 6; ++i) {
        Vector v(6);
        for (std::size_t r = 0; r < 6; ++r) v[r] = prob.eigenvectors()(r, i);
        exact.vectors.push_back(v);
    }
    const Vector g = prob.gradient(m);
    const auto mt = spectrum_vs_thresholds(exact, g, rho, spec);
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_NEAR(mt[i].z, diag.modes[i].z, 1e-10 * diag.modes[i].z);
        EXPECT_NEAR(mt[i].threshold, diag.modes[i].threshold, 1e-10 * diag.modes[i].threshold);
    }
    const auto h = hypothesis_tracker(exact, g, rho, spec);
    EXPECT_DOUBLE_EQ(h.normalized_sharpness, exact.values[0] * rho / 2.0);
    EXPECT_NEAR(h.vf, diag.modes[0].vf, 1e-12);

    // Lanczos estimate of the same operator gives the same lead threshold.
    const Matrix q = prob.matrix();
    const auto lz = top_eigen(matrix_op(q), 6, 1, 100, 1e-12, s);
    EXPECT_NEAR(hypothesis_tracker(lz, g, rho, spec).vf, h.vf, 1e-8);
}

TEST(Hypothesis, ZeroNoiseGivesVfOne) {
    SpectralResult r;
    r.values = {10.0};
    r.vectors = {{1.0, 0.0}};
    const Vector g{0.3, 0.4};
    const auto h = hypothesis_tracker(r, g, 0.1, PosteriorSpec::isotropic(0.0, 1));
    EXPECT_EQ(h.vf, 1.0);
    EXPECT_DOUBLE_EQ(h.normalized_sharpness, 0.5);
    const Vector zero{0.0, 0.4};
    EXPECT_TRUE(hypothesis_tracker(r, zero, 0.1, PosteriorSpec::isotropic(1.0, 1)).z_clamped);
}

TEST(TrajectoryRecord, OrderingAndSerialization) {
    const fs::path path = fs::temp_directory_path() / "vlab_test_traj.jsonl";
    {
        TrajectoryRecord rec(path.string(), {{"run", "t"}});
        TrajectoryRow a;
        a.step = 0;
        a.loss = 1.5;
        a.z = {std::numeric_limits<double>::infinity()};
        rec.record_step(a);
        TrajectoryRow b;
        b.step = 5;
        b.loss = std::nan("");
        rec.record_step(b);
        TrajectoryRow c;
        c.step = 5;
        EXPECT_THROW(rec.record_step(c), ContractError);
        EXPECT_EQ(rec.size(), 2u);
    }
    std::ifstream in(path);
    std::string line;
    std::vector<nlohmann::json> lines;
    std::vector<std::string> raw;
    while (std::getline(in, line)) {
        raw.push_back(line);
        lines.push_back(nlohmann::json::parse(line));
    }
    ASSERT_EQ(lines.size(), 3u);
    EXPECT_EQ(lines[0]["type"], "meta");
    EXPECT_EQ(lines[0]["meta"]["run"], "t");
    EXPECT_EQ(lines[1]["z"][0], "inf");
    EXPECT_TRUE(lines[2]["loss"].is_null());
    EXPECT_EQ(lines[2]["flags"][0], "non-finite:loss");
    // Field order is fixed.
    std::size_t k = 0;
    for (auto it = lines[1].begin(); it != lines[1].end(); ++it) ++k;
    EXPECT_EQ(k, trajectory_fields().size());
    const auto ordered = nlohmann::ordered_json::parse(raw[1]);
    std::size_t i = 0;
    for (auto it = ordered.begin(); it != ordered.end(); ++it, ++i) EXPECT_EQ(it.key(), trajectory_fields()[i]);
}
