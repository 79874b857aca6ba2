#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "vlab/models/dataset.hpp"
#include "vlab/models/mlp.hpp"

using namespace vlab;
namespace fs = std::filesystem;

namespace {

fs::path write_tmp(const std::string& name, const std::string& body) {
    const fs::path p = fs::temp_directory_path() / ("vlab_test_models_" + name);
    std::ofstream(p) << body;
    return p;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

struct Fixture {
    Dataset data;
    Mlp net{{6, 8, 5, 3}};
    Vector theta;

    Fixture() {
        RandomStream s(77);
        data = synth_dataset(3, 7, 6, 2.0, s);
        theta = net.init(s, 1.5);
    }
};

}  // namespace

TEST(Dataset, SameSeedBitIdentical) {
    RandomStream a(3), b(3);
    const auto x = synth_dataset(4, 10, 8, 1.0, a);
    const auto y = synth_dataset(4, 10, 8, 1.0, b);
    EXPECT_TRUE(std::ranges::equal(x.inputs.data(), y.inputs.data()));
    EXPECT_EQ(x.labels, y.labels);
    for (std::size_t j = 0; j < x.size(); ++j) {
        double sum = 0.0;
        for (const double v : x.targets.row(j)) sum += v;
        EXPECT_EQ(sum, 1.0);
    }
}

TEST(Dataset, ZeroSeparationIsChanceForNearestMean) {
    RandomStream s(5);
    const auto train = synth_dataset(4, 500, 8, 0.0, s);
    const auto test = synth_dataset(4, 2500, 8, 0.0, s);
    Matrix means(4, 8);
    for (std::size_t j = 0; j < train.size(); ++j)
        for (std::size_t f = 0; f < 8; ++f) means(train.labels[j], f) += train.inputs(j, f) / 500.0;
    std::size_t hits = 0;
    for (std::size_t j = 0; j < test.size(); ++j) {
        int best = 0;
        double bd = 1e300;
        for (int c = 0; c < 4; ++c) {
            double d = 0.0;
            for (std::size_t f = 0; f < 8; ++f) d += std::pow(test.inputs(j, f) - means(c, f), 2);
            if (d < bd) bd = d, best = c;
        }
        if (best == test.labels[j]) ++hits;
    }
    const double acc = static_cast<double>(hits) / test.size();
    EXPECT_NEAR(acc, 0.25, 4.0 * std::sqrt(0.25 * 0.75 / test.size()));
}

TEST(Dataset, WideSeparationIsLinearlySeparable) {
    RandomStream s(9);
    const auto d = synth_dataset(2, 100, 5, 10.0, s);
    // Perceptron with bias.
    Vector w(6, 0.0);
    bool clean = false;
    for (int epoch = 0; epoch < 1000 && !clean; ++epoch) {
        clean = true;
        for (std::size_t j = 0; j < d.size(); ++j) {
            const double y = d.labels[j] == 1 ? 1.0 : -1.0;
            double a = w[5];
            for (std::size_t f = 0; f < 5; ++f) a += w[f] * d.inputs(j, f);
            if (y * a <= 0.0) {
                clean = false;
                for (std::size_t f = 0; f < 5; ++f) w[f] += y * d.inputs(j, f);
                w[5] += y;
            }
        }
    }
    EXPECT_TRUE(clean);
}

TEST(Dataset, CsvToyFileShapes) {
    const auto p = write_tmp("toy.csv", "a,b,label\n1,2,x\n2,4,y\n3,5,x\n");
    const auto r = load_csv_dataset(p.string(), "label");
    EXPECT_EQ(r.dataset.inputs.rows(), 3u);
    EXPECT_EQ(r.dataset.inputs.cols(), 2u);
    EXPECT_EQ(r.dataset.targets.rows(), 3u);
    EXPECT_EQ(r.dataset.targets.cols(), 2u);
    EXPECT_EQ(r.class_names, (std::vector<std::string>{"x", "y"}));
    EXPECT_TRUE(r.warnings.empty());
    double mean = 0.0, sq = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
        mean += r.dataset.inputs(j, 0) / 3.0;
        sq += r.dataset.inputs(j, 0) * r.dataset.inputs(j, 0) / 3.0;
    }
    EXPECT_NEAR(mean, 0.0, 1e-15);
    EXPECT_NEAR(sq, 1.0, 1e-14);
}

TEST(Dataset, CsvZeroVarianceColumnWarns) {
    const auto p = write_tmp("flat.csv", "a,b,label\n1,7,0\n2,7,1\n3,7,0\n");
    const auto r = load_csv_dataset(p.string(), "label");
    ASSERT_EQ(r.warnings.size(), 1u);
    EXPECT_NE(r.warnings[0].find("'b'"), std::string::npos);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(r.dataset.inputs(j, 1), 0.0);
}

TEST(Dataset, CsvErrorsCarryLineNumbers) {
    auto line_of = [](const std::string& body, const std::string& label = "label") -> std::size_t {
        try {
            load_csv_dataset(write_tmp("bad.csv", body).string(), label);
        } catch (const ParseError& e) {
            return e.line();
        }
        return 999;
    };
    EXPECT_EQ(line_of("1,2,3\n4,5,6\n"), 1u);                   // missing header
    EXPECT_EQ(line_of("a,b,label\n1,2,0\n1,2\n"), 3u);          // ragged
    EXPECT_EQ(line_of("a,b,label\n1,2,0\n\n1,zz,1\n"), 4u);     // non-numeric
    EXPECT_EQ(line_of("a,b,label\n1,2,0\n", "cls"), 1u);        // unknown label column
    EXPECT_THROW(load_csv_dataset("/nonexistent/vlab.csv", "label"), ParseError);
}

TEST(Dataset, BatchScheduleIsPermutation) {
    BatchSchedule a(23, 5, RandomStream(1)), b(23, 5, RandomStream(1));
    EXPECT_EQ(a.batches_per_epoch(), 5u);
    std::vector<int> seen(23, 0);
    for (std::size_t k = 0; k < 5; ++k) {
        const auto ba = a.at_step(k);
        EXPECT_EQ(ba, b.at_step(k));
        for (const auto i : ba) ++seen[i];
    }
    for (const int c : seen) EXPECT_EQ(c, 1);
    EXPECT_NE(a.batch(0, 0), a.batch(1, 0));
}

TEST(Loss, Examples) {
    Dataset d;
    d.inputs = Matrix(1, 1);
    d.targets = Matrix(1, 1);
    d.labels = {0};
    d.classes = 1;
    Mlp lin({1, 1}, Activation::Identity);
    EXPECT_EQ(lin.loss(Vector{0.0, 0.0}, d), 0.0);
    EXPECT_EQ(lin.loss(Vector{0.0, 2.0}, d), 2.0);

    Fixture f;
    Dataset twice = f.data;
    twice.inputs = Matrix(2 * f.data.size(), f.data.input_dim());
    twice.targets = Matrix(2 * f.data.size(), 3);
    twice.labels.clear();
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t j = 0; j < f.data.size(); ++j) {
            const std::size_t k = r * f.data.size() + j;
            for (std::size_t c = 0; c < f.data.input_dim(); ++c) twice.inputs(k, c) = f.data.inputs(j, c);
            for (std::size_t c = 0; c < 3; ++c) twice.targets(k, c) = f.data.targets(j, c);
            twice.labels.push_back(f.data.labels[j]);
        }
    EXPECT_NEAR(f.net.loss(f.theta, twice), f.net.loss(f.theta, f.data), 1e-14);
    EXPECT_GE(f.net.loss(f.theta, f.data), 0.0);
}

TEST(Gradient, MatchesCentralDifferences) {
    Fixture f;
    const Vector g = f.net.grad(f.theta, f.data);
    RandomStream s(3);
    for (int probe = 0; probe < 120; ++probe) {
        const std::size_t i = s.uniform_index(f.theta.size());
        Vector tp = f.theta, tm = f.theta;
        const double h = 1e-5;
        tp[i] += h;
        tm[i] -= h;
        const double fd = (f.net.loss(tp, f.data) - f.net.loss(tm, f.data)) / (2 * h);
        EXPECT_LT(rel_err(g[i], fd), 1e-6) << i;
    }
}

TEST(Gradient, ZeroAtInterpolation) {
    // Linear model, targets generated by the model itself.
    Mlp lin({3, 2}, Activation::Identity);
    RandomStream s(4);
    Dataset d = synth_dataset(2, 5, 3, 1.0, s);
    const Vector theta = lin.init(s);
    const Matrix out = lin.forward(theta, d);
    d.targets = out;
    EXPECT_EQ(lin.loss(theta, d), 0.0);
    for (const double x : lin.grad(theta, d)) EXPECT_LT(std::abs(x), 1e-12);
}

TEST(Gradient, ScaledTargetsMatchFiniteDifferences) {
    Fixture f;
    Dataset d = f.data;
    for (std::size_t j = 0; j < d.size(); ++j)
        for (std::size_t c = 0; c < 3; ++c) d.targets(j, c) *= 3.0;
    const Vector g = f.net.grad(f.theta, d);
    for (std::size_t i = 0; i < f.theta.size(); i += 7) {
        Vector tp = f.theta, tm = f.theta;
        tp[i] += 1e-5;
        tm[i] -= 1e-5;
        EXPECT_LT(rel_err(g[i], (f.net.loss(tp, d) - f.net.loss(tm, d)) / 2e-5), 1e-6);
    }
}

TEST(Hvp, LinearModelMatchesDenseHessian) {
    const std::size_t p = 3, k = 2;
    Mlp lin({p, k}, Activation::Identity);
    RandomStream s(6);
    const Dataset d = synth_dataset(2, 4, p, 1.0, s);
    const Vector theta = lin.init(s);
    const std::size_t n = d.size(), dim = lin.param_count();
    // Parameters: W (row o, column i at o*p + i), then b.
    Matrix h(dim, dim);
    auto idx_w = [&](std::size_t o, std::size_t i) { return o * p + i; };
    auto idx_b = [&](std::size_t o) { return k * p + o; };
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t o = 0; o < k; ++o) {
            for (std::size_t i = 0; i < p; ++i) {
                for (std::size_t i2 = 0; i2 < p; ++i2) h(idx_w(o, i), idx_w(o, i2)) += d.inputs(j, i) * d.inputs(j, i2) / n;
                h(idx_w(o, i), idx_b(o)) += d.inputs(j, i) / n;
                h(idx_b(o), idx_w(o, i)) += d.inputs(j, i) / n;
            }
            h(idx_b(o), idx_b(o)) += 1.0 / n;
        }
    }
    for (std::size_t e = 0; e < dim; ++e) {
        Vector v(dim, 0.0);
        v[e] = 1.0;
        const Vector hv = lin.hvp(theta, d, {}, v);
        for (std::size_t r = 0; r < dim; ++r) EXPECT_NEAR(hv[r], h(r, e), 1e-14);
    }
}

TEST(Hvp, LinearSymmetricAndFiniteDifference) {
    Fixture f;
    RandomStream s(8);
    Vector u(f.theta.size()), v(f.theta.size());
    for (auto& x : u) x = s.normal();
    for (auto& x : v) x = s.normal();
    const Vector hu = f.net.hvp(f.theta, f.data, {}, u);
    const Vector hv = f.net.hvp(f.theta, f.data, {}, v);
    Vector uv(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) uv[i] = u[i] + v[i];
    const Vector huv = f.net.hvp(f.theta, f.data, {}, uv);
    double scale = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) scale = std::max(scale, std::abs(huv[i]));
    for (std::size_t i = 0; i < u.size(); ++i) EXPECT_LE(std::abs(huv[i] - hu[i] - hv[i]), 1e-12 * scale);
    double uhv = 0.0, vhu = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        uhv += u[i] * hv[i];
        vhu += v[i] * hu[i];
    }
    EXPECT_LT(rel_err(uhv, vhu), 1e-10);
    // Directional finite difference of the gradient.
    const double h = 1e-5;
    Vector tp = f.theta, tm = f.theta;
    for (std::size_t i = 0; i < v.size(); ++i) {
        tp[i] += h * v[i];
        tm[i] -= h * v[i];
    }
    const Vector gp = f.net.grad(tp, f.data), gm = f.net.grad(tm, f.data);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        num += std::pow((gp[i] - gm[i]) / (2 * h) - hv[i], 2);
        den += hv[i] * hv[i];
    }
    EXPECT_LT(std::sqrt(num / den), 1e-5);
}

TEST(Hvp, BatchSubsetMatchesSubDataset) {
    Fixture f;
    const Batch b{0, 3, 5, 11};
    Dataset sub;
    sub.classes = 3;
    sub.inputs = Matrix(4, f.data.input_dim());
    sub.targets = Matrix(4, 3);
    for (std::size_t k = 0; k < 4; ++k) {
        for (std::size_t c = 0; c < f.data.input_dim(); ++c) sub.inputs(k, c) = f.data.inputs(b[k], c);
        for (std::size_t c = 0; c < 3; ++c) sub.targets(k, c) = f.data.targets(b[k], c);
        sub.labels.push_back(f.data.labels[b[k]]);
    }
    EXPECT_EQ(f.net.loss(f.theta, f.data, b), f.net.loss(f.theta, sub));
    EXPECT_EQ(f.net.grad(f.theta, f.data, b), f.net.grad(f.theta, sub));
}

TEST(Accuracy, Examples) {
    // Interpolating linear model: targets set to its own outputs, labels to their argmax.
    Mlp lin({3, 3}, Activation::Identity);
    RandomStream s(10);
    Dataset d = synth_dataset(3, 6, 3, 1.0, s);
    const Vector theta = lin.init(s);
    const Matrix out = lin.forward(theta, d);
    for (std::size_t j = 0; j < d.size(); ++j) {
        int best = 0;
        for (int c = 1; c < 3; ++c)
            if (out(j, c) > out(j, best)) best = c;
        d.labels[j] = best;
    }
    EXPECT_EQ(lin.accuracy(theta, d), 1.0);

    // Zero weights: constant output, ties go to class 0, so balanced data gives 1/3.
    const Vector zero(lin.param_count(), 0.0);
    const Dataset bal = synth_dataset(3, 6, 3, 1.0, s);
    EXPECT_NEAR(lin.accuracy(zero, bal), 1.0 / 3.0, 1e-15);

    Batch fwd(bal.size()), rev(bal.size());
    for (std::size_t j = 0; j < bal.size(); ++j) {
        fwd[j] = j;
        rev[j] = bal.size() - 1 - j;
    }
    const Fixture f;
    EXPECT_EQ(f.net.accuracy(f.theta, f.data, Batch{0, 1, 2, 3, 4}), f.net.accuracy(f.theta, f.data, Batch{4, 3, 2, 1, 0}));
}

TEST(Mlp, ContractErrors) {
    EXPECT_THROW(Mlp({3}), ContractError);
    EXPECT_THROW(Mlp({3, 0, 2}), ContractError);
    Fixture f;
    const Vector short_theta(5);
    EXPECT_THROW(f.net.loss(short_theta, f.data), ContractError);
    EXPECT_THROW(f.net.loss(f.theta, f.data, Batch{999}), ContractError);
}
