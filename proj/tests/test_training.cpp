#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "vlab/training.hpp"

using namespace vlab;

namespace {

TrainConfig small(OptimizerKind k) {
    TrainConfig c;
    c.data.classes = 3;
    c.data.per_class = 8;
    c.data.test_per_class = 4;
    c.data.input_dim = 5;
    c.hidden = {6};
    c.optimizer = k;
    c.steps = 30;
    c.log_every = 10;
    c.eig_max_iters = 60;
    c.seed = 11;
    return c;
}

}  // namespace

TEST(Training, ZeroNoiseVgdRowsMatchGd) {
    auto g = small(OptimizerKind::Gd);
    auto v = small(OptimizerKind::Vgd);
    v.spec = PosteriorSpec::isotropic(0.0, 4);
    const auto a = train_mlp(g);
    const auto b = train_mlp(v);
    ASSERT_EQ(a.record.size(), b.record.size());
    for (std::size_t i = 0; i < a.record.size(); ++i) {
        EXPECT_EQ(a.record.rows()[i].loss, b.record.rows()[i].loss);
        EXPECT_EQ(a.record.rows()[i].sharpness, b.record.rows()[i].sharpness);
    }
    EXPECT_EQ(a.params, b.params);
}

TEST(Training, WorkerCountDoesNotChangeResults) {
    auto c = small(OptimizerKind::Vgd);
    c.spec = PosteriorSpec::isotropic(1e-3, 8);
    c.batch_size = 10;
    c.elbo_samples = 4;
    const auto a = train_mlp(c);
    c.workers = 4;
    const auto b = train_mlp(c);
    EXPECT_EQ(a.params, b.params);
    ASSERT_EQ(a.record.size(), b.record.size());
    for (std::size_t i = 0; i < a.record.size(); ++i) {
        EXPECT_EQ(to_json(a.record.rows()[i]).dump(), to_json(b.record.rows()[i]).dump());
    }
}

TEST(Training, LogsExpectedRows) {
    const auto r = train_mlp(small(OptimizerKind::Gd));
    ASSERT_EQ(r.record.size(), 4u);  // steps 0, 10, 20, 30
    EXPECT_EQ(r.record.rows().back().step, 30u);
    for (const auto& row : r.record.rows()) {
        ASSERT_TRUE(row.sharpness.has_value());
        ASSERT_TRUE(row.normalized_sharpness.has_value());
        EXPECT_DOUBLE_EQ(*row.normalized_sharpness, *row.sharpness * 0.05 / 2.0);
        EXPECT_EQ(row.vf, 1.0);  // no noise
        EXPECT_FALSE(row.precond_sharpness.has_value());
    }
    EXPECT_LT(r.record.rows().back().loss, r.record.rows().front().loss);
    EXPECT_FALSE(r.diverged);
}

TEST(Training, AdamAndIvonLogPreconditionedSharpness) {
    auto a = small(OptimizerKind::Adam);
    a.rho = 1e-3;
    const auto ra = train_mlp(a);
    const auto& first = ra.record.rows().front();
    EXPECT_FALSE(first.precond_sharpness.has_value());
    EXPECT_NE(std::find(first.flags.begin(), first.flags.end(), "preconditioner-uninitialized"), first.flags.end());
    EXPECT_TRUE(ra.record.rows().back().precond_sharpness.has_value());

    auto i = small(OptimizerKind::Ivon);
    i.rho = 0.2;
    i.temperature = 2e-4;
    i.damping = 10.0;
    i.elbo_samples = 4;
    const auto ri = train_mlp(i);
    for (const auto& row : ri.record.rows()) {
        EXPECT_TRUE(row.precond_sharpness.has_value());
        EXPECT_TRUE(row.elbo.has_value());
    }
}

TEST(Training, DivergenceIsRecorded) {
    auto c = small(OptimizerKind::Gd);
    c.rho = 50.0;
    c.steps = 200;
    const auto r = train_mlp(c);
    EXPECT_TRUE(r.diverged);
    EXPECT_FALSE(r.divergence_reason.empty());
    EXPECT_EQ(r.classification, StabilityClass::Divergent);
}

TEST(Training, InvalidConfigsRejected) {
    auto c = small(OptimizerKind::Gd);
    c.rho = 0.0;
    EXPECT_THROW(train_mlp(c), InvalidSpecError);
    c = small(OptimizerKind::Vgd);
    c.spec = PosteriorSpec::isotropic(1e-3, 0);
    EXPECT_THROW(train_mlp(c), InvalidSpecError);
    c = small(OptimizerKind::Adam);
    c.beta2 = 1.0;
    EXPECT_THROW(train_mlp(c), InvalidSpecError);
    EXPECT_THROW(parse_optimizer("sgdm"), InvalidSpecError);
    EXPECT_EQ(parse_optimizer("ivon"), OptimizerKind::Ivon);
}

TEST(Training, SyntheticDataScaledAndSplit) {
    DataConfig d;
    d.classes = 3;
    d.per_class = 5;
    d.test_per_class = 2;
    d.input_dim = 4;
    d.input_scale = 10.0;
    const auto a = build_data(d, 3);
    EXPECT_EQ(a.train.size(), 15u);
    ASSERT_TRUE(a.test.has_value());
    EXPECT_EQ(a.test->size(), 6u);
    const auto b = build_data(d, 3);
    EXPECT_TRUE(std::ranges::equal(a.train.inputs.data(), b.train.inputs.data()));
    d.input_scale = 1.0;
    const auto c = build_data(d, 3);
    EXPECT_NEAR(a.train.inputs(0, 0), 10.0 * c.train.inputs(0, 0), 1e-12);
}
