#include <gtest/gtest.h>

#include <cmath>

#include "densfix/experiments.hpp"

using namespace densfix;

namespace {

Dataset mixture(std::size_t k, std::size_t n, double sep, std::uint64_t seed, std::vector<double> w = {}) {
    MixtureSpec s;
    s.num_classes = k;
    s.n = n;
    s.separation = sep;
    s.seed = seed;
    s.class_weights = std::move(w);
    return make_gaussian_mixture(s);
}

TrainConfig small_config(double gamma) {
    TrainConfig c;
    c.epochs = 5;
    c.batch_size = 16;
    c.learning_rate = 0.05;
    c.seed = 3;
    c.df.gamma = gamma;
    return c;
}

std::vector<ModelParams> trajectory_supervised(const Dataset& train, const Dataset& test, const TrainConfig& cfg) {
    ModelParams m = mlp_init({2, 8, 3}, Activation::Relu, 1);
    std::vector<ModelParams> traj;
    train_supervised(m, train, test, cfg, [&](std::size_t, const ModelParams& p) { traj.push_back(p); });
    return traj;
}

} // namespace

TEST(Training, GammaZeroMatchesPlainCrossEntropy) {
    const auto train = mixture(3, 120, 3.0, 1), test = mixture(3, 60, 3.0, 2);
    const auto cfg = small_config(0.0);
    const auto a = trajectory_supervised(train, test, cfg);

    // Independent plain-CE loop over the same batch order.
    ModelParams m = mlp_init({2, 8, 3}, Activation::Relu, 1);
    SgdOptimizer opt(cfg.optimizer, cfg.learning_rate, cfg.momentum);
    EpochBatches batches(train.size(), cfg.batch_size, derive_seed(cfg.seed, stream::kBatches));
    std::vector<ModelParams> b;
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        for (const auto& idx : batches.next_epoch()) {
            ad::Graph g;
            const BoundParams bound = bind(g, m);
            Labels t;
            for (auto i : idx) t.push_back((*train.labels)[i]);
            ad::Var loss = cross_entropy(mlp_forward(m, bound, g.constant(train.inputs.gather_rows(idx))), t);
            g.backward(loss);
            opt.step(m, bound);
            b.push_back(m);
        }
    }
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i], b[i]) << "step " << i;
}

TEST(Training, ReportInvariantsAndDeterminism) {
    const auto train = mixture(3, 150, 2.5, 4), test = mixture(3, 90, 2.5, 5);
    auto cfg = small_config(1.0);
    cfg.eval_every = 2;
    ModelParams m1 = mlp_init({2, 8, 3}, Activation::Relu, 2), m2 = m1;
    const auto r1 = train_supervised(m1, train, test, cfg);
    const auto r2 = train_supervised(m2, train, test, cfg);
    EXPECT_EQ(r1, r2);
    EXPECT_EQ(r1.to_csv(), r2.to_csv());
    ASSERT_EQ(r1.rows.size(), 3u);  // epochs 2, 4 and the final epoch 5
    EXPECT_EQ(r1.rows.back().epoch, 5u);
    for (const auto& r : r1.rows) EXPECT_EQ(r.gap, r.test_loss - r.train_loss);
    EXPECT_EQ(r1.to_csv().substr(0, kReportCsvHeader.size()), kReportCsvHeader);
}

TEST(Training, SeparableDataIsLearned) {
    const auto train = mixture(2, 400, 6.0, 6), test = mixture(2, 400, 6.0, 7);
    TrainConfig cfg = small_config(1.0);
    cfg.epochs = 50;
    ModelParams m = mlp_init({2, 16, 2}, Activation::Relu, 3);
    const auto r = train_supervised(m, train, test, cfg);
    EXPECT_LT(r.final_row().train_err, 0.05);
}

TEST(Training, RegularizerShrinksOnImbalancedTestSet) {
    // Balanced training set, uniform prior, test set skewed toward class 0.
    const auto train = mixture(3, 300, 2.0, 8), test = mixture(3, 300, 2.0, 9, {0.8, 0.1, 0.1});
    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.batch_size = 300;
    cfg.optimizer = OptimizerKind::Sgd;
    cfg.learning_rate = 0.05;
    cfg.seed = 1;
    cfg.df.gamma = 2.0;
    ModelParams m = mlp_init({2, 16, 3}, Activation::Relu, 4);
    const auto r = train_supervised(m, train, test, cfg);
    for (std::size_t e = r.rows.size() - 10; e < r.rows.size(); ++e) EXPECT_LE(r.rows[e].reg_term, r.rows[e - 1].reg_term) << "epoch " << e + 1;
}

TEST(Training, DivergenceIsReported) {
    const auto train = mixture(2, 40, 3.0, 1), test = mixture(2, 20, 3.0, 2);
    TrainConfig cfg = small_config(0.0);
    cfg.learning_rate = 1e200;
    ModelParams m = mlp_init({2, 4, 2}, Activation::Relu, 1);
    EXPECT_THROW(train_supervised(m, train, test, cfg), DivergenceError);
}

TEST(Training, ConfigValidation) {
    TrainConfig cfg;
    cfg.epochs = 0;
    EXPECT_THROW(cfg.validate(), InvalidArgument);
    cfg = TrainConfig{};
    cfg.batch_size = 0;
    EXPECT_THROW(cfg.validate(), InvalidArgument);
    cfg = TrainConfig{};
    cfg.learning_rate = 0.0;
    EXPECT_THROW(cfg.validate(), InvalidArgument);
}

TEST(SemiSupervised, GammaZeroIgnoresUnlabeledData) {
    const auto data = mixture(4, 400, 2.5, 10), test = mixture(4, 100, 2.5, 11);
    const auto split = split_semi(data, 0.2, 3);
    auto cfg = small_config(0.0);
    ModelParams a = mlp_init({2, 8, 4}, Activation::Relu, 5), b = a;
    std::vector<ModelParams> ta, tb;
    train_semi_supervised(a, split.labeled, split.unlabeled, test, cfg, [&](std::size_t, const ModelParams& p) { ta.push_back(p); });
    train_supervised(b, split.labeled, test, cfg, [&](std::size_t, const ModelParams& p) { tb.push_back(p); });
    ASSERT_EQ(ta.size(), tb.size());
    for (std::size_t i = 0; i < ta.size(); ++i) ASSERT_EQ(ta[i], tb[i]) << "step " << i;
}

TEST(SemiSupervised, SealedLabelsAreNeverRead) {
    const auto data = mixture(3, 300, 2.5, 12), test = mixture(3, 90, 2.5, 13);
    const auto split = split_semi(data, 0.2, 4);
    Dataset corrupted = split.unlabeled;
    for (auto& y : *corrupted.sealed_labels) y = (y + 1) % 3;
    const auto cfg = small_config(1.0);
    ModelParams a = mlp_init({2, 8, 3}, Activation::Relu, 6), b = a;
    const auto ra = train_semi_supervised(a, split.labeled, split.unlabeled, test, cfg);
    const auto rb = train_semi_supervised(b, split.labeled, corrupted, test, cfg);
    EXPECT_EQ(a, b);
    EXPECT_EQ(ra, rb);
}

TEST(SemiSupervised, MarginalAtPriorAddsNoGradient) {
    // Two mirrored unlabeled points give a uniform batch marginal under a
    // model that is symmetric in its two logits.
    ModelParams m;
    m.layers.push_back({Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}}), Tensor::vector({0.0, 0.0}), Activation::Identity});
    ad::Graph g;
    const BoundParams b = bind(g, m);
    ad::Var probs = ad::softmax(mlp_forward(m, b, g.constant(Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}}))));
    ad::Var kl = kl_divergence(marginal_prediction(probs), uniform_prior(2));
    g.backward(kl);
    for (double v : b.weights[0].grad().values()) EXPECT_NEAR(v, 0.0, 1e-15);
    for (double v : b.biases[0].grad().values()) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(SemiSupervised, GapNonIncreasingInGammaOverSeeds) {
    DataConfig data;
    data.n_train = 400;
    data.n_test = 1000;
    ModelConfig model;
    TrainConfig base;
    base.epochs = 60;
    const std::vector<double> gammas{0.0, 0.5, 1.0};
    const auto rows = run_semisup_grid(data, model, base, 0.2, gammas, seed_range(200, 10));
    const auto means = mean_by_gamma(rows);
    ASSERT_EQ(means.size(), 3u);
    for (std::size_t i = 1; i < means.size(); ++i) EXPECT_LE(means[i].mean_gap, means[i - 1].mean_gap) << "gamma " << means[i].gamma;
}

TEST(KnowledgeDistillationTraining, AlphaOneIsSupervisedCrossEntropy) {
    const auto train = mixture(3, 120, 3.0, 14), test = mixture(3, 60, 3.0, 15);
    auto cfg = small_config(0.0);
    cfg.kd.alpha = 1.0;
    const ModelParams teacher = mlp_init({2, 16, 3}, Activation::Relu, 9);
    ModelParams a = mlp_init({2, 8, 3}, Activation::Relu, 7), b = a;
    train_kd(a, teacher, train, test, cfg);
    train_supervised(b, train, test, cfg);
    EXPECT_EQ(a, b);
}

TEST(KnowledgeDistillationTraining, SelfTeacherStartsAtZero) {
    const auto train = mixture(3, 120, 3.0, 16), test = mixture(3, 60, 3.0, 17);
    auto cfg = small_config(0.0);
    cfg.epochs = 1;
    cfg.kd.alpha = 0.0;
    ModelParams student = mlp_init({2, 8, 3}, Activation::Relu, 8);
    const ModelParams teacher = student;
    const Tensor teacher_probs = softmax_rows(mlp_predict(teacher, train.inputs));
    ad::Graph g;
    ad::Var kd = knowledge_distillation_loss(mlp_forward(g, student, g.constant(train.inputs)), teacher_probs, *train.labels, cfg.kd);
    EXPECT_NEAR(kd.value().item(), 0.0, 1e-15);
    // The gradient vanishes up to rounding, so the student stays put.
    const auto r = train_kd(student, teacher, train, test, cfg);
    EXPECT_LT(r.rows[0].reg_term, 1e-20);
    for (std::size_t l = 0; l < student.layers.size(); ++l) {
        for (std::size_t i = 0; i < student.layers[l].weight.size(); ++i) {
            EXPECT_NEAR(student.layers[l].weight[i], teacher.layers[l].weight[i], 1e-12);
        }
    }
}

TEST(Sweep, SingleCellEqualsDirectCall) {
    const auto train = mixture(3, 120, 3.0, 18), test = mixture(3, 60, 3.0, 19);
    const auto base = small_config(0.0);
    auto factory = [](std::uint64_t s) { return mlp_init({2, 8, 3}, Activation::Relu, s); };
    const auto rows = gamma_sweep(base, {0.0}, {7}, factory, train, test);
    ASSERT_EQ(rows.size(), 1u);
    auto cfg = base;
    cfg.seed = 7;
    ModelParams m = factory(7);
    const auto r = train_supervised(m, train, test, cfg);
    EXPECT_EQ(rows[0].test_err, r.final_row().test_err);
    EXPECT_EQ(rows[0].gap, r.final_row().gap);
    EXPECT_EQ(rows[0].status, "ok");
}

TEST(Sweep, OrderingAndErrorRows) {
    const auto train = mixture(3, 60, 3.0, 20), test = mixture(3, 30, 3.0, 21);
    auto base = small_config(0.0);
    base.epochs = 1;
    auto factory = [](std::uint64_t s) { return mlp_init({2, 4, 3}, Activation::Relu, s); };
    const auto rows = gamma_sweep(base, {2.0, 0.0, 1.0, 4.0}, {5, 3}, factory, train, test);
    ASSERT_EQ(rows.size(), 8u);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        EXPECT_TRUE(rows[i - 1].gamma < rows[i].gamma || (rows[i - 1].gamma == rows[i].gamma && rows[i - 1].seed < rows[i].seed));
    }
    auto bad = base;
    bad.learning_rate = 1e200;
    const auto err = gamma_sweep(bad, {0.0}, {1}, factory, train, test);
    EXPECT_NE(err[0].status, "ok");
    EXPECT_TRUE(std::isnan(err[0].test_err));
    EXPECT_EQ(sweep_to_csv(rows).substr(0, kSweepCsvHeader.size()), kSweepCsvHeader);
}

TEST(Gan, ShortRunProducesSnapshotsAndBalancedRegularizer) {
    RingConfig ring;
    ring.n = 256;
    ring.hidden = 16;
    GanConfig cfg;
    cfg.epochs = 4;
    cfg.snapshot_every = 2;
    cfg.snapshot_points = 64;
    const auto r1 = run_gan(ring, cfg, 1.0, 3), r2 = run_gan(ring, cfg, 1.0, 3);
    ASSERT_EQ(r1.rows.size(), 4u);
    ASSERT_EQ(r1.snapshots.size(), 2u);
    EXPECT_EQ(r1.snapshots[1].epoch, 4u);
    EXPECT_EQ(r1.to_csv(), r2.to_csv());
    EXPECT_EQ(r1.snapshots[1].to_text(), r2.snapshots[1].to_text());
    std::size_t lines = 0;
    for (char c : r1.snapshots[0].to_text()) lines += c == '\n';
    EXPECT_EQ(lines, 64u);
    for (const auto& row : r1.rows) {
        EXPECT_GE(row.reg_term, 0.0);
        EXPECT_GE(row.coverage, row.epoch % 2 == 0 ? 0 : -1);
    }
}

TEST(Gan, CoverageCounting) {
    const auto centers = ring_centers(4, 1.0);
    const Tensor pts = Tensor::matrix({{1.0, 0.0}, {0.99, 0.01}, {0.0, 1.0}, {5.0, 5.0}});
    EXPECT_EQ(mode_coverage(pts, centers, 0.1, 0.25), 2);
    EXPECT_EQ(mode_coverage(pts, centers, 0.1, 0.5), 1);
    EXPECT_NEAR(default_coverage_radius(centers), 0.5 * std::sqrt(2.0), 1e-15);
}
