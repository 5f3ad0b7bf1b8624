#include "modurec/training.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace modurec;

namespace {

/// Synthetic instance with every fourth training event moved to the holdout.
std::pair<SplitBundle, FeatureMatrices> with_holdout(const GradCheckSize& size, std::uint64_t seed) {
    auto [split, features] = synthetic_problem(size, seed);
    std::vector<RatingEvent> train, hold;
    for (std::size_t k = 0; k < split.train.events.size(); ++k) {
        (k % 4 == 3 ? hold : train).push_back(split.train.events[k]);
    }
    split.holdout = split.train.with_events(hold);
    split.train = split.train.with_events(train);
    std::tie(split.user_train_counts, split.item_train_counts) = rating_counts(split.train);
    return {split, features};
}

TrainConfig small_config(Variant v) {
    TrainConfig c;
    c.model.variant = v;
    c.model.latent_dim = 4;
    c.model.time_hidden = {3, 4};
    c.epochs = 5;
    c.seed = 3;
    return c;
}

std::vector<double> flatten(ModelParams<double>& p) {
    std::vector<double> out;
    for (auto& t : tensors(p)) out.insert(out.end(), t.data.begin(), t.data.end());
    return out;
}

}  // namespace

TEST(Loss, ZeroWhenPredictionsMatch) {
    Rng rng(1);
    Matrix<double> r(3, 4);
    for (Eigen::Index k = 0; k < r.size(); ++k) r.data()[k] = rng.uniform(1, 5);
    const Matrix<double> mask = Matrix<double>::Ones(3, 4);
    const auto ae = AutoencoderParams<double>::init(4, 2, rng);
    EXPECT_EQ(masked_l2_loss(r, r, mask, 0.0, ae), 0.0);
}

TEST(Loss, SingleEntry) {
    const auto ae = AutoencoderParams<double>::zeros(2, 1);
    Matrix<double> rhat = Matrix<double>::Constant(2, 2, 9.0), r = Matrix<double>::Zero(2, 2),
                   mask = Matrix<double>::Zero(2, 2);
    rhat(1, 0) = 4;
    r(1, 0) = 3;
    mask(1, 0) = 1;
    EXPECT_DOUBLE_EQ(masked_l2_loss(rhat, r, mask, 0.0, ae), 1.0);
}

TEST(Loss, MatchesScalarLoop) {
    Rng rng(2);
    Matrix<double> rhat(3, 3), r(3, 3), mask = Matrix<double>::Zero(3, 3);
    for (Eigen::Index k = 0; k < 9; ++k) {
        rhat.data()[k] = rng.uniform(0, 6);
        r.data()[k] = static_cast<double>(1 + rng.below(5));
    }
    mask(0, 0) = mask(0, 2) = mask(1, 1) = mask(2, 0) = 1;
    const auto ae = AutoencoderParams<double>::init(3, 2, rng);
    const double lambda = 0.05;
    double data = 0;
    for (int u = 0; u < 3; ++u) {
        for (int i = 0; i < 3; ++i) {
            if (mask(u, i) != 0) data += (rhat(u, i) - r(u, i)) * (rhat(u, i) - r(u, i));
        }
    }
    double reg = 0;
    for (Eigen::Index k = 0; k < ae.w_enc.size(); ++k) reg += ae.w_enc.data()[k] * ae.w_enc.data()[k];
    for (Eigen::Index k = 0; k < ae.w_dec.size(); ++k) reg += ae.w_dec.data()[k] * ae.w_dec.data()[k];
    EXPECT_NEAR(masked_l2_loss(rhat, r, mask, lambda, ae), data / 4 + lambda * reg, 1e-12);
}

TEST(Loss, EmptyMaskRejected) {
    const auto ae = AutoencoderParams<double>::zeros(2, 1);
    const Matrix<double> z = Matrix<double>::Zero(2, 2);
    EXPECT_THROW(masked_l2_loss(z, z, z, 0.0, ae), Error);
}

TEST(Train, ZeroLearningRateIsNullStep) {
    for (auto v : {Variant::Base, Variant::DFT}) {
        const auto [split, features] = with_holdout({}, 11);
        auto cfg = small_config(v);
        cfg.learning_rate = 0.0;
        cfg.patience = 100;
        const auto report = train<double>(split, features, cfg);
        ASSERT_EQ(report.epochs.size(), 5u);
        for (const auto& e : report.epochs) EXPECT_EQ(e.holdout_rmse, report.epochs.front().holdout_rmse);

        const auto data = TrainingData<double>::build(split, features);
        Rng rng(cfg.seed);
        auto fresh = Modurec<double>(cfg.model, data).init(rng);
        auto kept = report.params;
        EXPECT_EQ(flatten(kept), flatten(fresh));
    }
}

TEST(Train, SgdStepMatchesFiniteDifferenceGradient) {
    for (auto v : {Variant::Base, Variant::DT, Variant::DFT}) {
        GradCheckSize size;
        size.users = 5;
        size.items = 5;
        const auto [split, features] = synthetic_problem(size, 21);
        auto cfg = small_config(v);
        cfg.model.dropout_input = 0.0;
        cfg.model.dropout_embedding = 0.0;
        cfg.optimizer = OptimizerKind::SGD;
        cfg.learning_rate = 0.05;
        const auto lambda = cfg.weight_decay;

        const auto data = TrainingData<double>::build(split, features);
        const Modurec<double> model(cfg.model, data);
        Rng rng(cfg.seed);
        auto params = model.init(rng);
        auto before = params;

        auto objective = [&](const ModelParams<double>& p) {
            Rng unused(0);
            const auto f = model.forward(p, false, unused);
            return masked_l2_loss(f.output(), f.target, f.target_mask, lambda, p.ae);
        };
        auto probe = before;
        auto refs = tensors(probe);
        std::vector<double> expected;
        const double eps = 1e-6;
        for (auto& t : refs) {
            for (auto& slot : t.data) {
                const double saved = slot;
                if (!is_active(cfg.model, t.name)) {
                    expected.push_back(saved);
                    continue;
                }
                slot = saved + eps;
                const double up = objective(probe);
                slot = saved - eps;
                const double down = objective(probe);
                slot = saved;
                expected.push_back(saved - cfg.learning_rate * (up - down) / (2 * eps));
            }
        }

        Optimizer<double> opt(cfg, params);
        Rng step_rng(1);
        train_step(model, params, opt, lambda, step_rng);
        const auto got = flatten(params);
        ASSERT_EQ(got.size(), expected.size());
        for (std::size_t k = 0; k < got.size(); ++k) EXPECT_NEAR(got[k], expected[k], 1e-8) << to_string(v) << " " << k;
    }
}

TEST(Train, DeterministicUnderSeed) {
    const auto [split, features] = with_holdout({}, 12);
    auto cfg = small_config(Variant::DFT);
    cfg.epochs = 8;
    cfg.batch_rows = 2;
    const auto a = train<double>(split, features, cfg);
    const auto b = train<double>(split, features, cfg);
    ASSERT_EQ(a.epochs.size(), b.epochs.size());
    for (std::size_t k = 0; k < a.epochs.size(); ++k) {
        EXPECT_EQ(a.epochs[k].train_loss, b.epochs[k].train_loss);
        EXPECT_EQ(a.epochs[k].holdout_rmse, b.epochs[k].holdout_rmse);
    }
    EXPECT_EQ(a.best_epoch, b.best_epoch);
    EXPECT_EQ(a.best_holdout_rmse, b.best_holdout_rmse);
}

TEST(Train, SmallSgdStepsDecreaseLoss) {
    for (auto v : {Variant::Base, Variant::DT, Variant::DFT}) {
        const auto [split, features] = synthetic_problem({}, 13);
        auto cfg = small_config(v);
        cfg.optimizer = OptimizerKind::SGD;
        cfg.learning_rate = 1e-4;
        cfg.model.dropout_input = 0.0;
        cfg.model.dropout_embedding = 0.0;
        const auto data = TrainingData<double>::build(split, features);
        const Modurec<double> model(cfg.model, data);
        Rng rng(cfg.seed);
        auto params = model.init(rng);
        Optimizer<double> opt(cfg, params);
        double prev = std::numeric_limits<double>::infinity();
        for (int step = 0; step < 10; ++step) {
            const double loss = train_step(model, params, opt, cfg.weight_decay, rng);
            EXPECT_LT(loss, prev) << to_string(v) << " step " << step;
            prev = loss;
        }
    }
}

TEST(Train, RestoresBestHoldoutParameters) {
    const auto [split, features] = with_holdout({}, 14);
    auto cfg = small_config(Variant::DT);
    cfg.epochs = 40;
    cfg.learning_rate = 0.05;
    cfg.patience = 5;
    const auto report = train<double>(split, features, cfg);
    const auto data = TrainingData<double>::build(split, features);
    const Modurec<double> model(cfg.model, data);
    EXPECT_DOUBLE_EQ(rmse_on(model.predict(report.params), split.holdout.events), report.best_holdout_rmse);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& e : report.epochs) best = std::min(best, e.holdout_rmse);
    EXPECT_LE(report.best_holdout_rmse, best);
    EXPECT_LE(static_cast<int>(report.epochs.size()), report.best_epoch + cfg.patience);
}

TEST(Train, RowBatchesCoverBothOrientations) {
    for (auto o : {Orientation::AsWritten, Orientation::Transposed}) {
        const auto [split, features] = with_holdout({}, 15);
        auto cfg = small_config(Variant::DFT);
        cfg.model.orientation = o;
        cfg.batch_rows = 3;
        cfg.learning_rate = 1e-2;
        cfg.epochs = 30;
        cfg.patience = 30;
        const auto report = train<double>(split, features, cfg);
        ASSERT_EQ(report.epochs.size(), 30u);
        EXPECT_LT(report.epochs.back().train_loss, report.epochs.front().train_loss);
    }
}

TEST(Train, RejectsBadConfig) {
    const auto [split, features] = synthetic_problem({}, 16);
    auto cfg = small_config(Variant::Base);
    cfg.epochs = 0;
    EXPECT_THROW(train<double>(split, features, cfg), ConfigError);
    cfg = small_config(Variant::D);
    cfg.model.dropout_input = 1.0;
    EXPECT_THROW(train<double>(split, features, cfg), ConfigError);
}

TEST(Train, DivergenceIsReported) {
    const auto [split, features] = synthetic_problem({}, 17);
    auto cfg = small_config(Variant::Base);
    cfg.optimizer = OptimizerKind::SGD;
    cfg.learning_rate = 1e200;
    EXPECT_THROW(train<double>(split, features, cfg), DivergenceError);
}

namespace {

// Plain Autorec written out directly: H = sigmoid(R V + b), Rhat = H W + c,
// one full-batch SGD step on the masked L2 objective.
struct PlainAutorec {
    Matrix<double> v, w;
    RowVector<double> b, c;

    void sgd_step(const Matrix<double>& r, const Matrix<double>& mask, double lambda, double lr) {
        const Eigen::Index rows = r.rows(), width = r.cols(), d = v.cols();
        Matrix<double> h(rows, d), out(rows, width);
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index k = 0; k < d; ++k) {
                double z = b(k);
                for (Eigen::Index j = 0; j < width; ++j) z += r(i, j) * v(j, k);
                h(i, k) = 1.0 / (1.0 + std::exp(-z));
            }
            for (Eigen::Index j = 0; j < width; ++j) {
                double z = c(j);
                for (Eigen::Index k = 0; k < d; ++k) z += h(i, k) * w(k, j);
                out(i, j) = z;
            }
        }
        const double n = mask.sum();
        Matrix<double> dout = (2.0 / n) * (out - r).cwiseProduct(mask);
        Matrix<double> gw = h.transpose() * dout + 2 * lambda * w;
        RowVector<double> gc = dout.colwise().sum();
        Matrix<double> dz = (dout * w.transpose()).cwiseProduct(h).cwiseProduct((1.0 - h.array()).matrix());
        Matrix<double> gv = r.transpose() * dz + 2 * lambda * v;
        RowVector<double> gb = dz.colwise().sum();
        v -= lr * gv;
        w -= lr * gw;
        b -= lr * gb;
        c -= lr * gc;
    }
};

}  // namespace

TEST(Train, BaseVariantReducesToPlainAutorec) {
    for (auto o : {Orientation::AsWritten, Orientation::Transposed}) {
        const auto [split, features] = synthetic_problem({}, 18);
        auto cfg = small_config(Variant::Base);
        cfg.model.orientation = o;
        cfg.optimizer = OptimizerKind::SGD;
        cfg.learning_rate = 0.1;
        const auto data = TrainingData<double>::build(split, features);
        const Modurec<double> model(cfg.model, data);
        Rng rng(cfg.seed);
        auto params = model.init(rng);
        Optimizer<double> opt(cfg, params);
        train_step(model, params, opt, cfg.weight_decay, rng);

        Matrix<double> r = to_masked_matrix<double>(split.train).values;
        Matrix<double> mask = to_masked_matrix<double>(split.train).mask;
        if (o == Orientation::Transposed) {
            r.transposeInPlace();
            mask.transposeInPlace();
        }
        Rng plain_rng(cfg.seed);
        const auto init = AutoencoderParams<double>::init(r.cols(), cfg.model.latent_dim, plain_rng);
        PlainAutorec plain{init.w_enc, init.w_dec, init.b_enc, init.b_dec};
        plain.sgd_step(r, mask, cfg.weight_decay, cfg.learning_rate);

        EXPECT_LT((params.ae.w_enc - plain.v).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LT((params.ae.w_dec - plain.w).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LT((params.ae.b_enc - plain.b).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LT((params.ae.b_dec - plain.c).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Train, IdentityModulationMatchesBaseForward) {
    // DT with FiLM at (1, 0, 0) feeds the autoencoder exactly R.
    const auto [split, features] = synthetic_problem({}, 19);
    auto base_cfg = small_config(Variant::Base).model;
    auto dt_cfg = small_config(Variant::DT).model;
    const auto data = TrainingData<double>::build(split, features);
    const Modurec<double> base(base_cfg, data), dt(dt_cfg, data);
    Rng rng(4);
    const auto p = dt.init(rng);
    EXPECT_EQ(base.predict(p), dt.predict(p));
}

TEST(GradientCheck, AllVariantsPass) {
    for (auto v : {Variant::Base, Variant::D, Variant::DT, Variant::DFT}) {
        ModelConfig cfg;
        cfg.variant = v;
        const auto report = gradient_check(cfg);
        EXPECT_LT(report.max_error(), 1e-4) << to_string(v);
        EXPECT_FALSE(report.by_group().empty());
    }
}

TEST(GradientCheck, CombinerModesAndOrientations) {
    for (auto mode : {CombinerMode::Static, CombinerMode::Adaptive}) {
        for (auto o : {Orientation::AsWritten, Orientation::Transposed}) {
            for (auto rule : {ColdRule::EitherZero, ColdRule::BothZero}) {
                ModelConfig cfg;
                cfg.combiner = mode;
                cfg.orientation = o;
                cfg.cold_rule = rule;
                EXPECT_LT(gradient_check(cfg).max_error(), 1e-4) << to_string(mode) << " " << to_string(o);
            }
        }
    }
}

TEST(GradientCheck, BaseReportsModulationInactive) {
    ModelConfig cfg;
    cfg.variant = Variant::Base;
    const auto report = gradient_check(cfg);
    for (const auto& t : report.tensors) EXPECT_EQ(t.active, t.name.starts_with("ae.")) << t.name;
    const auto groups = report.by_group();
    EXPECT_EQ(groups.size(), 1u);
}

TEST(GradientCheck, DftCoversEveryGroup) {
    const auto report = gradient_check(ModelConfig{});
    std::size_t active = 0;
    for (const auto& t : report.tensors) active += t.active ? 1 : 0;
    // 6 TimeNN tensors, 3 FiLM scalars, Theta, 3 combiner scalars, 4 autoencoder tensors
    EXPECT_EQ(active, 17u);
}

TEST(TrainStock, LossDecreasesOverFirstEpochs) {
    MODUREC_REQUIRE_ML100K();
    const auto dir = modurec::testing::ml100k_dir();
    const auto [ds, features] = parse_ml100k(dir + "/u.data", dir + "/u.user", dir + "/u.item");
    const auto split = load_ml100k_split(dir + "/u1.base", dir + "/u1.test", 0.1, 1, &ds);
    TrainConfig cfg;
    cfg.epochs = 5;
    const auto report = train<double>(split, features, cfg);
    ASSERT_EQ(report.epochs.size(), 5u);
    for (std::size_t k = 1; k < report.epochs.size(); ++k) {
        EXPECT_LT(report.epochs[k].train_loss, report.epochs[k - 1].train_loss);
    }
}
