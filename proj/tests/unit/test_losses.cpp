#include <gtest/gtest.h>

#include <cmath>

#include "densfix/losses.hpp"
#include "densfix/rng.hpp"
#include "gradcheck.hpp"

using namespace densfix;
using densfix::testing::check_gradients;

namespace {

Tensor random_logits(std::size_t n, std::size_t k, Rng& rng, double scale = 1.5) {
    std::vector<double> v(n * k);
    for (double& x : v) x = scale * rng.normal();
    return Tensor(Shape{n, k}, std::move(v));
}

std::vector<double> random_simplex(std::size_t k, Rng& rng) {
    std::vector<double> p(k);
    double s = 0.0;
    for (double& x : p) s += (x = rng.uniform(0.05, 1.0));
    for (double& x : p) x /= s;
    double t = 0.0;
    for (std::size_t i = 0; i + 1 < k; ++i) t += p[i];
    p[k - 1] = 1.0 - t;
    return p;
}

// Independent scalar KL used as the oracle.
double kl_oracle(const std::vector<double>& p, const std::vector<double>& q) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) s += p[i] * std::log(p[i] / q[i]);
    }
    return s;
}

} // namespace

TEST(CrossEntropy, Examples) {
    ad::Graph g;
    const std::vector<std::size_t> t0{0};
    EXPECT_NEAR(cross_entropy(g.constant(Tensor::matrix({{1000.0, -1000.0}})), t0).value().item(), 0.0, 1e-12);
    const std::vector<std::size_t> t3{3};
    EXPECT_NEAR(cross_entropy(g.constant(Tensor({1, 10}, 0.0)), t3).value().item(), std::log(10.0), 1e-12);
    const Tensor two = Tensor::matrix({{1.0, 2.0, 0.5}, {-1.0, 0.0, 3.0}});
    const std::vector<std::size_t> t{1, 0};
    const double both = cross_entropy(g.constant(two), t).value().item();
    const double r0 = cross_entropy(g.constant(two.gather_rows(std::vector<std::size_t>{0})), std::vector<std::size_t>{1}).value().item();
    const double r1 = cross_entropy(g.constant(two.gather_rows(std::vector<std::size_t>{1})), std::vector<std::size_t>{0}).value().item();
    EXPECT_NEAR(both, 0.5 * (r0 + r1), 1e-15);
    EXPECT_THROW(cross_entropy(g.constant(two), std::vector<std::size_t>{1, 3}), InvalidArgument);
}

TEST(MarginalPrediction, Examples) {
    ad::Graph g;
    EXPECT_EQ(marginal_prediction(g.constant(Tensor::matrix({{1, 0}, {0, 1}}))).value(), Tensor::vector({0.5, 0.5}));
    EXPECT_EQ(marginal_prediction(g.constant(Tensor::matrix({{0.2, 0.8}}))).value(), Tensor::vector({0.2, 0.8}));
    Rng rng(1);
    const Tensor m = marginal_prediction(ad::softmax(g.constant(random_logits(100, 6, rng)))).value();
    double s = 0.0;
    for (double x : m.values()) s += x;
    EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(KlDivergence, Examples) {
    ad::Graph g;
    const auto half = uniform_prior(2);
    EXPECT_EQ(kl_divergence(g.parameter(Tensor::vector({0.5, 0.5})), half).value().item(), 0.0);
    EXPECT_NEAR(kl_divergence(g.parameter(Tensor::vector({1.0, 0.0})), half).value().item(), std::log(2.0), 1e-15);
    EXPECT_THROW(kl_divergence(g.parameter(Tensor::vector({0.5, 0.5})), CategoricalPrior({1.0, 0.0})), AbsoluteContinuityError);
    // Mass at or below eps0 where q vanishes is tolerated.
    EXPECT_NO_THROW(kl_divergence(g.parameter(Tensor::vector({1.0 - 1e-13, 1e-13})), CategoricalPrior({1.0, 0.0})));
}

TEST(KlDivergence, PropertySuite) {
    Rng rng(2);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t k = 2 + rng.index(9);
        const auto p = random_simplex(k, rng), q = random_simplex(k, rng);
        const double d = kl_divergence(p, q);
        EXPECT_GE(d, 0.0);
        EXPECT_NEAR(d, kl_oracle(p, q), 1e-12);
        EXPECT_LE(std::abs(kl_divergence(p, p)), 1e-12);
    }
}

TEST(KlDivergence, GradientMatchesFiniteDifferences) {
    Rng rng(3);
    const auto prior = CategoricalPrior(random_simplex(5, rng));
    const Tensor p = Tensor::vector(random_simplex(5, rng));
    auto r = check_gradients([&](ad::Graph&, const std::vector<ad::Var>& v) { return kl_divergence(v[0], prior); }, {p});
    EXPECT_TRUE(r.passed(1e-5)) << r.worst;
}

TEST(DensityFixing, GammaZeroIsCrossEntropyExactly) {
    Rng rng(4);
    ad::Graph g;
    ad::Var logits = g.parameter(random_logits(8, 3, rng));
    const std::vector<std::size_t> t{0, 1, 2, 0, 1, 2, 0, 1};
    DensityFixingConfig cfg;
    cfg.gamma = 0.0;
    const double ce = cross_entropy(logits, t).value().item();
    for (DfMode mode : {DfMode::Marginal, DfMode::PerSample}) {
        cfg.mode = mode;
        const auto terms = density_fixing_terms(logits, t, uniform_prior(3), cfg);
        EXPECT_EQ(terms.total.value().item(), ce);
        EXPECT_EQ(terms.total.id(), terms.cross_entropy.id());
        EXPECT_FALSE(terms.regularizer.has_value());
    }
}

TEST(DensityFixing, MarginalEqualToPriorAddsNothing) {
    ad::Graph g;
    // Rows that mirror each other average to the uniform marginal.
    ad::Var logits = g.parameter(Tensor::matrix({{2.0, 0.0}, {0.0, 2.0}}));
    const std::vector<std::size_t> t{0, 1};
    DensityFixingConfig cfg;
    cfg.gamma = 3.0;
    const auto terms = density_fixing_terms(logits, t, uniform_prior(2), cfg);
    EXPECT_NEAR(terms.regularizer->value().item(), 0.0, 1e-15);
    EXPECT_NEAR(terms.total.value().item(), terms.cross_entropy.value().item(), 1e-15);
}

TEST(DensityFixing, ScalarExample) {
    ad::Graph g;
    // Every row predicts [0.9, 0.1], so the marginal is [0.9, 0.1].
    const double z = std::log(9.0);
    ad::Var logits = g.parameter(Tensor::matrix({{z, 0.0}, {z, 0.0}}));
    const std::vector<std::size_t> t{0, 1};
    DensityFixingConfig cfg;
    cfg.gamma = 2.0;
    const auto terms = density_fixing_terms(logits, t, uniform_prior(2), cfg);
    const double expected_kl = 0.9 * std::log(1.8) + 0.1 * std::log(0.2);
    EXPECT_NEAR(expected_kl, 0.368064, 1e-6);
    EXPECT_NEAR(terms.regularizer->value().item(), expected_kl, 1e-14);
    EXPECT_NEAR(terms.total.value().item(), terms.cross_entropy.value().item() + 2.0 * expected_kl, 1e-14);
}

TEST(DensityFixing, MonotoneInGamma) {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        ad::Graph g;
        const std::size_t k = 2 + rng.index(5), n = 1 + rng.index(10);
        ad::Var logits = g.parameter(random_logits(n, k, rng));
        std::vector<std::size_t> t(n);
        for (auto& y : t) y = rng.index(k);
        const CategoricalPrior prior(random_simplex(k, rng));
        DensityFixingConfig cfg;
        cfg.mode = trial % 2 ? DfMode::PerSample : DfMode::Marginal;
        double prev = -1.0;
        for (double gamma : {0.0, 0.1, 0.5, 1.0, 4.0}) {
            cfg.gamma = gamma;
            const double v = density_fixing_loss(logits, t, prior, cfg).value().item();
            EXPECT_GE(v, prev);
            prev = v;
        }
    }
}

TEST(DensityFixing, GradientsInBothModes) {
    Rng rng(6);
    for (DfMode mode : {DfMode::Marginal, DfMode::PerSample}) {
        const std::vector<std::size_t> t{0, 2, 1, 3, 3};
        const CategoricalPrior prior(random_simplex(4, rng));
        DensityFixingConfig cfg;
        cfg.gamma = 1.7;
        cfg.mode = mode;
        auto r = check_gradients([&](ad::Graph&, const std::vector<ad::Var>& v) { return density_fixing_loss(v[0], t, prior, cfg); },
                                 {random_logits(5, 4, rng)});
        EXPECT_TRUE(r.passed(1e-5)) << to_string(mode) << ": " << r.worst;
    }
}

TEST(DensityFixing, MarginalModeNeedsPositivePrior) {
    ad::Graph g;
    ad::Var logits = g.parameter(Tensor::matrix({{0.0, 1.0}}));
    DensityFixingConfig cfg;
    EXPECT_THROW(density_fixing_loss(logits, std::vector<std::size_t>{0}, CategoricalPrior({1.0, 0.0}), cfg), AbsoluteContinuityError);
    cfg.gamma = -1.0;
    EXPECT_THROW(density_fixing_loss(logits, std::vector<std::size_t>{0}, uniform_prior(2), cfg), InvalidArgument);
    cfg.gamma = 1.0;
    EXPECT_THROW(density_fixing_loss(logits, std::vector<std::size_t>{0}, uniform_prior(3), cfg), ShapeError);
}

TEST(Decomposition, PriorEqualToMarginal) {
    const Tensor logits = Tensor::matrix({{0.3, -0.2, 1.0}, {2.0, 0.1, -1.0}});
    const std::vector<std::size_t> t{2, 0};
    ad::Graph g;
    const Tensor m = marginal_prediction(ad::softmax(g.constant(logits))).value();
    std::vector<double> mv(m.values().begin(), m.values().end());
    mv[2] = 1.0 - mv[0] - mv[1];
    const auto sides = likelihood_decomposition_check(logits, t, CategoricalPrior(mv));
    const double loglik = -2.0 * cross_entropy(g.constant(logits), t).value().item();
    EXPECT_NEAR(sides.lhs, loglik, 1e-12);
    EXPECT_NEAR(sides.rhs, loglik, 1e-12);
}

TEST(Decomposition, SingleSampleByHand) {
    // One row with p = [0.8, 0.2], target 0, q = [0.5, 0.5]: m = p.
    const double z = std::log(4.0);
    const auto sides = likelihood_decomposition_check(Tensor::matrix({{z, 0.0}}), std::vector<std::size_t>{0}, uniform_prior(2));
    const double expected = std::log(0.8) - (0.8 * std::log(1.6) + 0.2 * std::log(0.4));
    EXPECT_NEAR(sides.lhs, expected, 1e-14);
    EXPECT_NEAR(sides.rhs, expected, 1e-14);
}

TEST(Decomposition, RandomBatchesAgree) {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t k = 2 + rng.index(6), n = 1 + rng.index(30);
        std::vector<std::size_t> t(n);
        for (auto& y : t) y = rng.index(k);
        const auto s = likelihood_decomposition_check(random_logits(n, k, rng), t, CategoricalPrior(random_simplex(k, rng)));
        EXPECT_LE(std::abs(s.lhs - s.rhs), 1e-10);
    }
}

TEST(KnowledgeDistillation, Endpoints) {
    Rng rng(8);
    ad::Graph g;
    ad::Var logits = g.parameter(random_logits(4, 3, rng));
    const std::vector<std::size_t> t{0, 1, 2, 1};
    const Tensor student = ad::softmax(logits).value();
    KDConfig cfg;
    cfg.alpha = 1.0;
    EXPECT_EQ(knowledge_distillation_loss(logits, student, t, cfg).value().item(), cross_entropy(logits, t).value().item());
    cfg.alpha = 0.0;
    // Teacher equal to the student leaves nothing to distil.
    EXPECT_NEAR(knowledge_distillation_loss(logits, student, t, cfg).value().item(), 0.0, 1e-14);
}

TEST(KnowledgeDistillation, UniformTeacherComposition) {
    ad::Graph g;
    const double z = std::log(4.0);
    // Student rows [0.8, 0.2], teacher uniform.
    ad::Var logits = g.parameter(Tensor::matrix({{z, 0.0}, {z, 0.0}}));
    const std::vector<std::size_t> t{0, 1};
    KDConfig cfg;
    cfg.alpha = 0.5;
    const double ce = -(std::log(0.8) + std::log(0.2)) / 2.0;
    const double kl = 0.8 * std::log(1.6) + 0.2 * std::log(0.4);
    const Tensor teacher = Tensor::matrix({{0.5, 0.5}, {0.5, 0.5}});
    EXPECT_NEAR(knowledge_distillation_loss(logits, teacher, t, cfg).value().item(), 0.5 * ce + 0.5 * kl, 1e-14);
}

TEST(KnowledgeDistillation, TemperatureSoftensBothSides) {
    const Tensor p = Tensor::matrix({{0.64, 0.36}});
    const Tensor soft = temper_probs(p, 2.0);
    EXPECT_NEAR(soft(0, 0), 0.8 / 1.4, 1e-14);
    EXPECT_EQ(temper_probs(p, 1.0), p);
    ad::Graph g;
    ad::Var logits = g.parameter(Tensor::matrix({{std::log(0.64), std::log(0.36)}}));
    KDConfig cfg;
    cfg.alpha = 0.0;
    cfg.temperature = 2.0;
    EXPECT_NEAR(knowledge_distillation_loss(logits, p, std::vector<std::size_t>{0}, cfg).value().item(), 0.0, 1e-14);
}

TEST(KnowledgeDistillation, GradientsAndErrors) {
    Rng rng(9);
    Tensor teacher({3, 4});
    for (std::size_t r = 0; r < 3; ++r) {
        const auto row = random_simplex(4, rng);
        for (std::size_t c = 0; c < 4; ++c) teacher(r, c) = row[c];
    }
    const std::vector<std::size_t> t{1, 3, 0};
    KDConfig cfg;
    cfg.alpha = 0.3;
    cfg.temperature = 1.5;
    auto r = check_gradients([&](ad::Graph&, const std::vector<ad::Var>& v) { return knowledge_distillation_loss(v[0], teacher, t, cfg); },
                             {random_logits(3, 4, rng)});
    EXPECT_TRUE(r.passed(1e-5)) << r.worst;

    ad::Graph g;
    ad::Var logits = g.parameter(random_logits(3, 4, rng));
    EXPECT_THROW(knowledge_distillation_loss(logits, Tensor({3, 4}, 0.25).gather_rows(std::vector<std::size_t>{0, 1}), t, cfg),
                 ShapeError);
    EXPECT_THROW(knowledge_distillation_loss(logits, Tensor({3, 4}, 0.3), t, cfg), DomainError);
    cfg.alpha = 1.5;
    EXPECT_THROW(knowledge_distillation_loss(logits, teacher, t, cfg), InvalidArgument);
}

TEST(Gan, DiscriminatorRegularizerExamples) {
    ad::Graph g;
    const auto prior = bernoulli_prior(0.5);
    // Mean output 0.9 over real and fake.
    ad::Var real = g.parameter(Tensor::vector({0.9, 0.9}));
    ad::Var fake = g.parameter(Tensor::vector({0.9, 0.9}));
    const auto d0 = discriminator_loss(real, fake, prior, 0.0);
    const auto d1 = discriminator_loss(real, fake, prior, 1.0);
    EXPECT_NEAR(d1.mean_output, 0.9, 1e-15);
    EXPECT_NEAR(d1.total.value().item() - d0.total.value().item(), 0.9 * std::log(1.8) + 0.1 * std::log(0.2), 1e-12);
    const double bce = -std::log(0.9) - std::log(0.1);
    EXPECT_NEAR(d0.total.value().item(), bce, 1e-12);

    ad::Var half = g.parameter(Tensor::vector({0.2, 0.8}));
    ad::Var half2 = g.parameter(Tensor::vector({0.5}));
    const auto d = discriminator_loss(half, half2, prior, 3.0);
    EXPECT_NEAR(d.regularizer.value().item(), 0.0, 1e-15);
}

TEST(Gan, OutputsAreClampedAndGeneratorIsNonSaturating) {
    ad::Graph g;
    ad::Var real = g.parameter(Tensor::vector({1.0}));
    ad::Var fake = g.parameter(Tensor::vector({0.0}));
    const auto d = discriminator_loss(real, fake, bernoulli_prior(0.5), 1.0);
    EXPECT_TRUE(std::isfinite(d.total.value().item()));
    const double gl = generator_loss(fake).value().item();
    EXPECT_NEAR(gl, -std::log(kEps0), 1e-9);
    ad::Var good = g.parameter(Tensor::vector({0.7}));
    EXPECT_NEAR(generator_loss(good).value().item(), -std::log(0.7), 1e-15);
    EXPECT_THROW(discriminator_loss(real, fake, uniform_prior(3), 1.0), InvalidArgument);
}

TEST(Gan, GradientsMatchFiniteDifferences) {
    const auto prior = bernoulli_prior(0.3);
    auto r = check_gradients(
        [&](ad::Graph&, const std::vector<ad::Var>& v) {
            const auto l = gan_losses(v[0], v[1], prior, 2.0);
            return l.d_loss + l.g_loss;
        },
        {Tensor::vector({0.6, 0.8, 0.3}), Tensor::vector({0.2, 0.45})});
    EXPECT_TRUE(r.passed(1e-5)) << r.worst;
}
