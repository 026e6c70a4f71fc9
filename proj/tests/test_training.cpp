#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "mumlp/training.hpp"

using namespace mumlp;

namespace {

// Four well-separated Gaussian classes, interleaved along a 1-pixel-high
// strip; every pixel is labelled.
struct GaussianData {
    HsiCube cube;
    LabelMap labels;
};

GaussianData gaussian_classes(std::size_t per_class, std::size_t bands, double separation, double noise, std::uint64_t seed) {
    const std::size_t classes = 4, n = per_class * classes;
    GaussianData d{{n, 1, bands, std::vector<float>(n * bands)}, {n, 1, classes, std::vector<std::uint16_t>(n)}};
    RngStream rng(seed);
    std::vector<double> means(classes * bands);
    for (auto& m : means) m = separation * rng.normal();
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % classes;
        d.labels.labels[i] = static_cast<std::uint16_t>(c + 1);
        for (std::size_t b = 0; b < bands; ++b) d.cube.data[i * bands + b] = static_cast<float>(means[c * bands + b] + noise * rng.normal());
    }
    return d;
}

ModelConfig tiny_model(std::size_t bands, std::size_t classes) {
    ModelConfig c;
    c.bands = bands;
    c.classes = classes;
    c.pixel_c = 16;
    c.msc_hidden = 16;
    c.n_msc_stack = 1;
    c.n_umlp_stack = 1;
    c.u_depth = 1;
    return c;
}

}  // namespace

TEST(ScheduleTest, ExponentialDecay) {
    TrainConfig cfg;
    EXPECT_EQ(lr_at_epoch(cfg, 0), 2e-4);
    EXPECT_NEAR(lr_at_epoch(cfg, 10), 2e-4 * std::pow(0.98, 10), 1e-18);
    double prev = lr_at_epoch(cfg, 0);
    for (std::size_t e = 1; e < 500; ++e) {
        const double lr = lr_at_epoch(cfg, e);
        EXPECT_LE(lr, prev);
        prev = lr;
    }
    cfg.lr_gamma = 1.0;
    EXPECT_EQ(lr_at_epoch(cfg, 123), cfg.lr0);
}

TEST(AdamTest, ZeroGradientZeroDecayLeavesParameters) {
    auto p = Tensor<double>::from({4}, {1, -2, 3, 0.5}, true);
    p.zero_grad();
    std::vector<Tensor<double>> ps{p};
    OptimizerState<double> st;
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    for (int i = 0; i < 5; ++i) adam_step(std::span(ps), st, 0.1, cfg);
    EXPECT_EQ(std::vector<double>(p.data().begin(), p.data().end()), (std::vector<double>{1, -2, 3, 0.5}));
}

TEST(AdamTest, FirstStepIsSignOfGradient) {
    // From m = v = 0, bias correction gives m_hat = g and v_hat = g^2, so the
    // step is lr * g / (|g| + eps).
    auto p = Tensor<double>::from({3}, {0.0, 0.0, 0.0}, true);
    const std::vector<double> g{3.0, -0.02, 1e3};
    p.node()->grad = g;
    std::vector<Tensor<double>> ps{p};
    OptimizerState<double> st;
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    adam_step(std::span(ps), st, 0.1, cfg);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(p.data()[i], -0.1 * g[i] / (std::fabs(g[i]) + 1e-8), 1e-12);
}

TEST(AdamTest, MatchesReferenceTrajectory) {
    // Straight-line update equations with decoupled decay before the moment step.
    TrainConfig cfg;
    cfg.weight_decay = 0.01;
    auto p = Tensor<double>::from({2}, {0.7, -1.3}, true);
    std::vector<Tensor<double>> ps{p};
    OptimizerState<double> st;
    std::vector<double> ref{0.7, -1.3}, m(2, 0.0), v(2, 0.0);
    for (int step = 1; step <= 25; ++step) {
        const double lr = 0.05 * std::pow(0.9, step);
        p.zero_grad();
        backward(sum(mul(mul(p, p), p)));  // d/dp p^3 = 3p^2
        std::vector<double> grad(p.grad().begin(), p.grad().end());
        adam_step(std::span(ps), st, lr, cfg);
        for (int i = 0; i < 2; ++i) {
            const double gi = 3.0 * ref[i] * ref[i];
            EXPECT_NEAR(grad[i], gi, 1e-12);
            ref[i] -= lr * cfg.weight_decay * ref[i];
            m[i] = 0.9 * m[i] + 0.1 * gi;
            v[i] = 0.999 * v[i] + 0.001 * gi * gi;
            const double mh = m[i] / (1 - std::pow(0.9, step)), vh = v[i] / (1 - std::pow(0.999, step));
            ref[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
            EXPECT_NEAR(p.data()[i], ref[i], 1e-12) << "step " << step;
        }
    }
}

TEST(AdamTest, QuadraticBowlConverges) {
    auto p = Tensor<double>::from({3}, {1.0, -2.0, 0.5}, true);
    std::vector<Tensor<double>> ps{p};
    OptimizerState<double> st;
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    cfg.lr0 = 0.04;
    cfg.lr_gamma = 0.995;
    double prev = std::sqrt(5.25);
    for (std::size_t s = 0; s < 200; ++s) {
        p.zero_grad();
        backward(sum(mul(p, p)));
        adam_step(std::span(ps), st, lr_at_epoch(cfg, s), cfg);
        double norm = 0.0;
        for (double x : p.data()) norm += x * x;
        norm = std::sqrt(norm);
        EXPECT_LT(norm, prev) << "step " << s;
        prev = norm;
    }
    EXPECT_LT(prev, 1e-3);
}

TEST(AdamTest, WeightDecayIsApplied) {
    TrainConfig with, without;
    without.weight_decay = 0.0;
    with.weight_decay = 8e-7;
    auto a = Tensor<float>::from({2}, {0.5f, -0.25f}, true), b = Tensor<float>::from({2}, {0.5f, -0.25f}, true);
    std::vector<Tensor<float>> pa{a}, pb{b};
    OptimizerState<float> sa, sb;
    adam_step(std::span(pa), sa, 1.0, with);  // no gradient: only decay acts
    adam_step(std::span(pb), sb, 1.0, without);
    EXPECT_NE(a.data()[0], b.data()[0]);
    EXPECT_EQ(b.data()[0], 0.5f);
}

TEST(AdamTest, StateSizeMismatch) {
    auto a = Tensor<float>::from({2}, {1, 2}, true);
    std::vector<Tensor<float>> one{a}, two{a, a};
    OptimizerState<float> st;
    TrainConfig cfg;
    adam_step(std::span(one), st, 0.1, cfg);
    try {
        adam_step(std::span(two), st, 0.1, cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
    }
}

TEST(ArgmaxTest, TiesGoToLowestIndex) {
    const std::vector<float> row{1.0f, 3.0f, 3.0f, -1.0f};
    EXPECT_EQ(argmax<float>(row), 1u);
    const std::vector<float> flat(5, 0.0f);
    EXPECT_EQ(argmax<float>(flat), 0u);
}

TEST(EvaluateTest, ForcedClassGivesOneColumn) {
    auto data = gaussian_classes(10, 6, 3.0, 0.5, 1);
    auto cfg = tiny_model(6, 4);
    Model<float> model(cfg, 2);
    for (auto& w : model.param("head.weight").data()) w = 0.0f;
    auto bias = model.param("head.bias").data();
    std::fill(bias.begin(), bias.end(), 0.0f);
    bias[2] = 5.0f;
    std::vector<std::size_t> all(40);
    std::iota(all.begin(), all.end(), 0);
    auto ev = evaluate_model(model, data.cube, data.labels, all, 7, 3);
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t p = 0; p < 4; ++p) {
            if (p != 2) {
                EXPECT_EQ(ev.confusion.at(t, p), 0u);
            }
        }
    EXPECT_EQ(ev.confusion.col_sum(2), 40u);
}

TEST(EvaluateTest, ConservationAndRowSums) {
    auto data = gaussian_classes(25, 5, 1.0, 1.0, 3);
    Model<float> model(tiny_model(5, 4), 4);
    std::vector<std::size_t> part;
    for (std::size_t i = 0; i < 100; i += 3) part.push_back(i);
    auto ev = evaluate_model(model, data.cube, data.labels, part, 8, 4);
    EXPECT_EQ(ev.confusion.total(), part.size());
    std::vector<std::uint64_t> truth(4, 0);
    for (auto i : part) ++truth[data.labels.labels[i] - 1u];
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(ev.confusion.row_sum(c), truth[c]);
    // Thread count and batch size do not change predictions.
    auto serial = evaluate_model(model, data.cube, data.labels, part, 1000, 1);
    EXPECT_EQ(serial.predictions, ev.predictions);
    EXPECT_THROW(evaluate_model(model, data.cube, data.labels, std::vector<std::size_t>{}), Error);
}

TEST(TrainTest, ZeroEpochsReturnsInitialModel) {
    auto data = gaussian_classes(10, 4, 3.0, 0.5, 5);
    auto split = split_pixels(data.labels, {0.3, 0.3}, 1);
    Model<float> model(tiny_model(4, 4), 6);
    TrainConfig cfg;
    cfg.epochs = 0;
    auto r = train_model(model, data.cube, data.labels, split, cfg);
    EXPECT_TRUE(r.history.empty());
    for (std::size_t i = 0; i < model.num_tensors(); ++i) {
        auto a = model.tensor(i).data(), b = r.best.tensor(i).data();
        EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
    }
}

TEST(TrainTest, SameSeedIsBitIdentical) {
    auto data = gaussian_classes(20, 6, 2.0, 0.8, 7);
    auto split = split_pixels(data.labels, {0.4, 0.2}, 3);
    Model<float> model(tiny_model(6, 4), 8);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 8;
    cfg.lr0 = 1e-3;
    auto a = train_model(model, data.cube, data.labels, split, cfg, 1);
    auto b = train_model(model, data.cube, data.labels, split, cfg, 3);
    ASSERT_EQ(a.history.size(), 5u);
    for (std::size_t e = 0; e < 5; ++e) {
        EXPECT_EQ(a.history[e].train_loss, b.history[e].train_loss);
        EXPECT_EQ(a.history[e].val_oa, b.history[e].val_oa);
        EXPECT_EQ(a.history[e].lr, lr_at_epoch(cfg, e));
    }
    EXPECT_EQ(a.best_epoch, b.best_epoch);
    for (std::size_t i = 0; i < a.best.num_tensors(); ++i) {
        auto x = a.best.tensor(i).data(), y = b.best.tensor(i).data();
        EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin())) << a.best.name(i);
    }
    cfg.seed = 43;
    auto c = train_model(model, data.cube, data.labels, split, cfg);
    EXPECT_NE(a.history.back().train_loss, c.history.back().train_loss);
}

TEST(TrainTest, SyntheticGaussianOverfit) {
    // 200 training pixels of four separated classes, z-scored per band as the
    // training pipeline does.
    auto data = gaussian_classes(100, 8, 3.0, 0.5, 9);
    data.cube = normalize_cube(data.cube).cube;
    PixelSplit split;
    for (std::size_t i = 0; i < 400; ++i) (i < 200 ? split.train : (i < 260 ? split.val : split.test)).push_back(i);
    auto mc = tiny_model(8, 4);
    mc.pixel_c = 32;
    mc.msc_hidden = 32;
    mc.u_depth = 2;
    Model<float> model(mc, 10);
    TrainConfig cfg;  // lr 2e-4, weight decay 8e-7
    cfg.epochs = 300;
    cfg.batch_size = 16;
    auto r = train_model(model, data.cube, data.labels, split, cfg);
    auto train = classification_scores(evaluate_model(r.best, data.cube, data.labels, split.train).confusion);
    auto test = classification_scores(evaluate_model(r.best, data.cube, data.labels, split.test).confusion);
    EXPECT_GE(train.oa, 0.99);
    EXPECT_GE(test.oa, 0.95);
    EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
}

TEST(TrainTest, NonFiniteLossReportsEpochAndBatch) {
    auto data = gaussian_classes(10, 4, 3.0, 0.5, 5);
    auto split = split_pixels(data.labels, {0.3, 0.3}, 1);
    Model<float> model(tiny_model(4, 4), 6);
    model.param("head.bias").data()[0] = std::numeric_limits<float>::infinity();
    TrainConfig cfg;
    cfg.epochs = 1;
    try {
        train_model(model, data.cube, data.labels, split, cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NonFiniteLoss);
        EXPECT_NE(std::string(e.what()).find("epoch 0"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("batch 0"), std::string::npos) << e.what();
    }
}
