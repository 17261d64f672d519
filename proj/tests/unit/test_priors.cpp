#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "densfix/priors.hpp"
#include "densfix/rng.hpp"

using namespace densfix;

TEST(Priors, EstimateFromCounts) {
    EXPECT_EQ(estimate_prior(std::vector<std::size_t>{0, 0, 1, 1}, 2).vec(), (std::vector<double>{0.5, 0.5}));
    EXPECT_EQ(estimate_prior(std::vector<std::size_t>{0, 0, 0, 1}, 2).vec(), (std::vector<double>{0.75, 0.25}));
    const auto p = estimate_prior(std::vector<std::size_t>{2, 2, 2}, 3);
    EXPECT_EQ(p.vec(), (std::vector<double>{0.0, 0.0, 1.0}));
    EXPECT_FALSE(p.strictly_positive());
}

TEST(Priors, EstimateConvergesToSource) {
    Rng rng(11);
    const std::vector<double> src{0.2, 0.3, 0.5};
    std::vector<std::size_t> labels;
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        labels.push_back(u < 0.2 ? 0 : (u < 0.5 ? 1 : 2));
    }
    const auto est = estimate_prior(labels, 3);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(est[k], src[k], 0.02);
}

TEST(Priors, EstimateIsPermutationInvariantAndValid) {
    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t k = 2 + rng.index(8), n = 1 + rng.index(200);
        std::vector<std::size_t> labels(n);
        for (auto& y : labels) y = rng.index(k);
        const auto a = estimate_prior(labels, k);
        rng.shuffle(std::span(labels));
        EXPECT_EQ(a, estimate_prior(labels, k));
        EXPECT_NEAR(compensated_sum(a.probs()), 1.0, 1e-12);
    }
}

TEST(Priors, EstimateErrors) {
    EXPECT_THROW(estimate_prior(std::vector<std::size_t>{}, 2), InvalidArgument);
    EXPECT_THROW(estimate_prior(std::vector<std::size_t>{0, 2}, 2), InvalidArgument);
}

TEST(Priors, Uniform) {
    EXPECT_EQ(uniform_prior(2).vec(), (std::vector<double>{0.5, 0.5}));
    const auto u10 = uniform_prior(10);
    for (double p : u10.probs()) EXPECT_EQ(p, 0.1);
    EXPECT_EQ(compensated_sum(uniform_prior(3).probs()), 1.0);
    EXPECT_THROW(uniform_prior(1), InvalidArgument);
}

TEST(Priors, Bernoulli) {
    EXPECT_EQ(bernoulli_prior(0.5).vec(), (std::vector<double>{0.5, 0.5}));
    const auto b = bernoulli_prior(0.9);
    EXPECT_NEAR(b[0], 0.1, 1e-15);
    EXPECT_EQ(b[1], 0.9);
    EXPECT_THROW(bernoulli_prior(0.0), DomainError);
    EXPECT_THROW(bernoulli_prior(1.0), DomainError);
}

TEST(Priors, CategoricalInvariants) {
    EXPECT_THROW(CategoricalPrior({1.0}), InvalidArgument);
    EXPECT_THROW(CategoricalPrior({0.5, 0.6}), DomainError);
    EXPECT_THROW(CategoricalPrior({1.5, -0.5}), DomainError);
    EXPECT_NO_THROW(CategoricalPrior({0.0, 1.0}));
}

TEST(Priors, EtaClosedForms) {
    EXPECT_EQ(eta_uniform(2), 1.0);
    EXPECT_DOUBLE_EQ(eta_uniform(11), 0.01);
    EXPECT_LT(eta_uniform(101), eta_uniform(11));
    EXPECT_EQ(eta_bernoulli(0.5), 4.0);
    EXPECT_NEAR(eta_bernoulli(0.1), 11.111111111111, 1e-9);
    EXPECT_DOUBLE_EQ(eta_bernoulli(0.3), eta_bernoulli(0.7));
    EXPECT_THROW(eta_uniform(1), InvalidArgument);
    EXPECT_THROW(eta_bernoulli(0.0), DomainError);
    EXPECT_THROW(eta_bernoulli(1.0), DomainError);
}

TEST(Priors, EtaBernoulliMinimumAtHalf) {
    for (double xi : linear_grid(0.01, 0.99, 99)) {
        const double eta = eta_bernoulli(xi);
        if (std::abs(xi - 0.5) < 1e-12) EXPECT_NEAR(eta, 4.0, 1e-9);
        else EXPECT_GT(eta, 4.0);
    }
    // Farther from 1/2 means stronger regularization.
    for (double a = 0.05; a < 0.45; a += 0.05) EXPECT_GT(eta_bernoulli(0.5 - a - 0.01), eta_bernoulli(0.5 - a));
}

TEST(Priors, EtaCurves) {
    const auto grid = linear_grid(0.1, 0.9, 9);
    const auto c = emit_eta_curves(2, 20, grid);
    ASSERT_EQ(c.uniform.size(), 19u);
    for (std::size_t i = 1; i < c.uniform.size(); ++i) EXPECT_LT(c.uniform[i].second, c.uniform[i - 1].second);
    const auto mn = std::min_element(c.bernoulli.begin(), c.bernoulli.end(), [](auto a, auto b) { return a.second < b.second; });
    EXPECT_NEAR(mn->first, 0.5, 1e-12);
    EXPECT_NEAR(mn->second, 4.0, 1e-12);
    EXPECT_EQ(emit_eta_curves(3, 3, std::vector<double>{0.4}).uniform.size(), 1u);
    EXPECT_THROW(emit_eta_curves(5, 4, grid), InvalidArgument);
    EXPECT_THROW(emit_eta_curves(2, 4, std::vector<double>{}), InvalidArgument);
}

TEST(Priors, SpecParsing) {
    EXPECT_EQ(to_string(parse_prior_spec("uniform")), "uniform");
    EXPECT_EQ(to_string(parse_prior_spec("estimate")), "estimate");
    EXPECT_EQ(to_string(parse_prior_spec("bernoulli:0.25")), "bernoulli:0.25");
    EXPECT_EQ(to_string(parse_prior_spec("0.2,0.3,0.5")), "0.2,0.3,0.5");
    EXPECT_THROW(parse_prior_spec("bernoulli:1.5"), DomainError);
    EXPECT_THROW(parse_prior_spec("0.2,0.2"), DomainError);
    EXPECT_THROW(parse_prior_spec("banana"), InvalidArgument);

    const std::vector<std::size_t> labels{0, 1, 1, 1};
    EXPECT_EQ(resolve_prior(parse_prior_spec("estimate"), 2, labels).vec(), (std::vector<double>{0.25, 0.75}));
    EXPECT_EQ(resolve_prior(parse_prior_spec("uniform"), 4).vec(), uniform_prior(4).vec());
    EXPECT_THROW(resolve_prior(parse_prior_spec("bernoulli:0.3"), 3), InvalidArgument);
    EXPECT_THROW(resolve_prior(parse_prior_spec("0.5,0.5"), 3), InvalidArgument);
}
