#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "densfix/losses.hpp"
#include "densfix/models.hpp"
#include "gradcheck.hpp"

using namespace densfix;
using densfix::testing::check_gradients;

TEST(Models, InitIsDeterministicAndShaped) {
    EXPECT_EQ(mlp_init({4, 3}, Activation::Relu, 7), mlp_init({4, 3}, Activation::Relu, 7));
    EXPECT_NE(mlp_init({4, 3}, Activation::Relu, 7), mlp_init({4, 3}, Activation::Relu, 8));
    const auto p = mlp_init({4, 8, 3}, Activation::Relu, 1);
    ASSERT_EQ(p.layers.size(), 2u);
    EXPECT_EQ(p.layers[0].weight.shape(), (Shape{8, 4}));
    EXPECT_EQ(p.layers[1].weight.shape(), (Shape{3, 8}));
    EXPECT_EQ(p.layers[0].activation, Activation::Relu);
    EXPECT_EQ(p.layers[1].activation, Activation::Identity);
    for (double b : p.layers[0].bias.values()) EXPECT_EQ(b, 0.0);
    EXPECT_THROW(mlp_init({4}, Activation::Relu, 0), InvalidArgument);
    EXPECT_THROW(mlp_init({4, 0, 2}, Activation::Relu, 0), InvalidArgument);
}

TEST(Models, InitScaleMatchesHeRule) {
    // 100 x 100 = 10000 weights in the first layer, fan_in 100.
    const auto p = mlp_init({100, 100, 2}, Activation::Relu, 3);
    double s = 0.0, s2 = 0.0;
    for (double w : p.layers[0].weight.values()) {
        s += w;
        s2 += w * w;
    }
    const double n = 10000.0, mean = s / n;
    const double sd = std::sqrt(s2 / n - mean * mean);
    EXPECT_NEAR(sd / std::sqrt(2.0 / 100.0), 1.0, 0.1);
}

TEST(Models, ZeroParametersGiveUniformSoftmax) {
    auto p = mlp_init({3, 5, 4}, Activation::Relu, 2);
    for (auto& l : p.layers) {
        for (double& w : l.weight.values()) w = 0.0;
    }
    const Tensor x = Tensor::matrix({{1, 2, 3}, {-1, 0, 4}});
    const Tensor logits = mlp_predict(p, x);
    for (double v : logits.values()) EXPECT_EQ(v, 0.0);
    const Tensor probs = softmax_rows(logits);
    for (double v : probs.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Models, SingleLinearLayerIsAffine) {
    const auto p = mlp_init({3, 2}, Activation::Relu, 4);
    const Tensor x = Tensor::matrix({{0.5, -1.0, 2.0}});
    const Tensor y = mlp_predict(p, x);
    for (std::size_t o = 0; o < 2; ++o) {
        double expected = p.layers[0].bias[o];
        for (std::size_t i = 0; i < 3; ++i) expected += p.layers[0].weight(o, i) * x(0, i);
        EXPECT_NEAR(y(0, o), expected, 1e-15);
    }
}

TEST(Models, ForwardShapeAndDeterminism) {
    const auto p = mlp_init({2, 6, 6, 5}, Activation::Relu, 5);
    const Tensor x = Tensor::matrix({{0.1, 0.2}, {0.3, -0.4}, {1.0, 2.0}});
    const Tensor a = mlp_predict(p, x), b = mlp_predict(p, x);
    EXPECT_EQ(a.shape(), (Shape{3, 5}));
    EXPECT_EQ(a, b);
    EXPECT_THROW(mlp_predict(p, Tensor::matrix({{1, 2, 3}})), ShapeError);
}

TEST(Models, EndToEndGradientThroughDensityFixingLoss) {
    const auto init = mlp_init({4, 16, 3}, Activation::Relu, 6);
    Rng rng(6);
    Tensor x({5, 4});
    for (double& v : x.values()) v = rng.normal();
    const std::vector<std::size_t> t{0, 1, 2, 2, 1};
    DensityFixingConfig cfg;
    cfg.gamma = 1.5;
    const CategoricalPrior prior({0.5, 0.3, 0.2});
    std::vector<Tensor> inputs;
    for (const auto& l : init.layers) {
        inputs.push_back(l.weight);
        inputs.push_back(l.bias);
    }
    auto r = check_gradients(
        [&](ad::Graph& g, const std::vector<ad::Var>& v) {
            BoundParams b{{v[0], v[2]}, {v[1], v[3]}};
            return density_fixing_loss(mlp_forward(init, b, g.constant(x)), t, prior, cfg);
        },
        inputs);
    EXPECT_TRUE(r.passed(1e-5)) << r.worst;
}

TEST(Models, GanPairArchitecture) {
    const GanPair pair = gan_init();
    ASSERT_EQ(pair.generator.layers.size(), 4u);
    EXPECT_EQ(pair.generator.layers[0].weight.shape(), (Shape{512, 8}));
    EXPECT_EQ(pair.generator.layers[1].weight.shape(), (Shape{512, 512}));
    EXPECT_EQ(pair.generator.layers[2].weight.shape(), (Shape{512, 512}));
    EXPECT_EQ(pair.generator.layers[3].weight.shape(), (Shape{2, 512}));
    ASSERT_EQ(pair.discriminator.layers.size(), 4u);
    EXPECT_EQ(pair.discriminator.layers[0].weight.shape(), (Shape{512, 2}));
    EXPECT_EQ(pair.discriminator.layers[3].weight.shape(), (Shape{1, 512}));
    for (std::size_t l = 0; l < 3; ++l) {
        EXPECT_EQ(pair.generator.layers[l].activation, Activation::Relu);
        EXPECT_EQ(pair.discriminator.layers[l].activation, Activation::Relu);
    }
    EXPECT_EQ(pair.discriminator.layers[3].activation, Activation::Sigmoid);
}

TEST(Models, GanOutputsAndDeterminism) {
    const GanPair a = gan_init(8, 3, 32), b = gan_init(8, 3, 32);
    EXPECT_EQ(a.generator, b.generator);
    EXPECT_EQ(a.discriminator, b.discriminator);
    Rng rng(1);
    Tensor z({16, 8});
    for (double& v : z.values()) v = rng.normal();
    const Tensor fake = mlp_predict(a.generator, z);
    EXPECT_EQ(fake.shape(), (Shape{16, 2}));
    const Tensor d = mlp_predict(a.discriminator, fake.gather_rows(std::vector<std::size_t>{0, 1, 2}));
    for (double v : d.values()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
    }
}

TEST(Models, SaveLoadRoundTrip) {
    const auto p = mlp_init({3, 7, 2}, Activation::Sigmoid, 9);
    std::stringstream ss;
    save_params(ss, p);
    EXPECT_EQ(load_params(ss), p);
    std::stringstream bad("not a manifest\n");
    EXPECT_ANY_THROW(load_params(bad));
}
