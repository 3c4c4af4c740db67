#include <cmath>
#include <cstdint>
#include <vector>

#include <gtest/gtest.h>

#include "mmgf/dataset.hpp"
#include "mmgf/train.hpp"
#include "testutil.hpp"

namespace {

using namespace mmgf;

TrainConfig small_config() {
    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.hidden = 8;
    cfg.embed_dim = 8;
    cfg.fuse_dim = 8;
    cfg.knn_k = 5;
    cfg.folds = 2;
    cfg.encoder.latent_dim = 8;
    cfg.encoder.pretrain_epochs = 10;
    return cfg;
}

SynthConfig small_data(std::uint64_t seed) {
    SynthConfig sc;
    sc.n = 60;
    sc.image_size = 16;
    sc.n_clinical = 12;
    sc.separation = 2.0;
    sc.seed = seed;
    return sc;
}

bool same_values(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) return false;
    for (std::size_t i = 0; i < a.numel(); ++i)
        if (a.at(i) != b.at(i)) return false;
    return true;
}

TEST(ScalerTest, FitsOnTrainingRowsOnly) {
    Tensor x = Tensor::zeros({4, 2});
    // column 0: train rows {0, 2}, column 1 constant on train rows
    x.at(0, 0) = 0.0;
    x.at(1, 0) = 100.0;
    x.at(2, 0) = 2.0;
    x.at(3, 0) = -50.0;
    x.at(0, 1) = 5.0;
    x.at(1, 1) = 9.0;
    x.at(2, 1) = 5.0;
    x.at(3, 1) = 7.0;
    std::vector<std::uint8_t> mask = {1, 0, 1, 0};
    Scaler s = fit_scaler(x, mask);
    EXPECT_DOUBLE_EQ(s.mean[0], 1.0);
    EXPECT_DOUBLE_EQ(s.stdev[0], 1.0);
    EXPECT_DOUBLE_EQ(s.mean[1], 5.0);
    EXPECT_DOUBLE_EQ(s.stdev[1], 1.0);  // constant on train rows: centered only

    Tensor z = apply_scaler(x, s);
    EXPECT_DOUBLE_EQ(z.at(0, 0), -1.0);
    EXPECT_DOUBLE_EQ(z.at(2, 0), 1.0);
    EXPECT_DOUBLE_EQ(z.at(1, 0), 99.0);   // held-out rows transformed, not fit
    EXPECT_DOUBLE_EQ(z.at(3, 0), -51.0);
    EXPECT_DOUBLE_EQ(z.at(1, 1), 4.0);
}

TEST(ScalerTest, RejectsEmptyMaskAndBadShapes) {
    Tensor x = Tensor::zeros({3, 2});
    std::vector<std::uint8_t> empty_mask = {0, 0, 0};
    EXPECT_THROW(fit_scaler(x, empty_mask), ContractError);
    std::vector<std::uint8_t> short_mask = {1, 1};
    EXPECT_THROW(fit_scaler(x, short_mask), ShapeError);
    Scaler s;
    s.mean = {0.0};
    s.stdev = {1.0};
    EXPECT_THROW(apply_scaler(x, s), ShapeError);
}

TEST(TrainConfigTest, RejectsInvalidSettings) {
    TrainConfig cfg;
    cfg.epochs = 0;
    EXPECT_THROW(validate_train_config(cfg), ParamError);
    cfg = TrainConfig{};
    cfg.folds = 1;
    EXPECT_THROW(validate_train_config(cfg), ParamError);
    cfg = TrainConfig{};
    cfg.lr = -0.1;
    EXPECT_THROW(validate_train_config(cfg), ParamError);
    cfg = TrainConfig{};
    cfg.beta = 1.5;
    EXPECT_THROW(validate_train_config(cfg), ParamError);
    cfg = TrainConfig{};
    cfg.knn_k = 0;
    EXPECT_THROW(validate_train_config(cfg), ParamError);
    cfg = TrainConfig{};
    cfg.delta = -1.0;
    EXPECT_THROW(validate_train_config(cfg), ParamError);
    EXPECT_NO_THROW(validate_train_config(TrainConfig{}));
}

TEST(FoldContextTest, MasksHeldOutLabelRows) {
    MultimodalDataset data = synth_generate(small_data(3));
    TrainConfig cfg = small_config();
    std::vector<FoldMasks> folds = kfold_split(data.classes(), cfg.folds, cfg.seed);
    Tensor qm = Tensor::zeros({data.size(), 4});
    make_rng(11);
    std::mt19937_64 rng = make_rng(11);
    qm = testutil::random_tensor({data.size(), 4}, rng);
    FoldContext ctx = make_fold_context(qm, data.clinical, data.labels, folds[0], cfg);
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (folds[0].train[i]) {
            EXPECT_DOUBLE_EQ(ctx.labels_masked.at(i, 0), data.labels.at(i, 0));
            EXPECT_DOUBLE_EQ(ctx.labels_masked.at(i, 1), data.labels.at(i, 1));
        } else {
            EXPECT_DOUBLE_EQ(ctx.labels_masked.at(i, 0), 0.0);
            EXPECT_DOUBLE_EQ(ctx.labels_masked.at(i, 1), 0.0);
        }
    }
    EXPECT_TRUE(ctx.g_m.self_looped);
    EXPECT_TRUE(ctx.g_f.self_looped);
}

TEST(ModelForwardTest, ProbabilityRowsSumToOne) {
    MultimodalDataset data = synth_generate(small_data(5));
    TrainConfig cfg = small_config();
    std::vector<FoldMasks> folds = kfold_split(data.classes(), cfg.folds, cfg.seed);
    std::mt19937_64 rng = make_rng(4);
    Tensor qm = testutil::random_tensor({data.size(), 6}, rng);
    FoldContext ctx = make_fold_context(qm, data.clinical, data.labels, folds[0], cfg);
    ModelParams params = init_model(cfg, 6, data.clinical.dim(1), 2, 99);
    ForwardOutputs fwd = model_forward(ctx, params, true);
    ASSERT_EQ(fwd.prob.dim(0), data.size());
    ASSERT_EQ(fwd.prob.dim(1), 2u);
    for (std::size_t i = 0; i < data.size(); ++i) {
        double row = fwd.prob.at(i, 0) + fwd.prob.at(i, 1);
        EXPECT_NEAR(row, 1.0, 1e-12);
        EXPECT_GE(fwd.prob.at(i, 0), 0.0);
    }
    EXPECT_EQ(fwd.similarity.dim(0), data.size());
    EXPECT_EQ(fwd.similarity.dim(1), data.size());
}

// With beta = 0 the contrastive term enters the total with weight zero, so
// every recorded total must equal ce_image + ce_clinical + diag exactly (up
// to float addition) while pos/neg are still reported.
TEST(TrainFoldTest, BetaZeroTotalIsClassificationPlusDiag) {
    MultimodalDataset data = synth_generate(small_data(7));
    TrainConfig cfg = small_config();
    cfg.beta = 0.0;
    cfg.epochs = 15;
    std::vector<FoldMasks> folds = kfold_split(data.classes(), cfg.folds, cfg.seed);
    std::mt19937_64 rng = make_rng(21);
    Tensor qm = testutil::random_tensor({data.size(), 8}, rng);
    FoldContext ctx = make_fold_context(qm, data.clinical, data.labels, folds[0], cfg);
    TrainedFold tf = train_fold_model(ctx, cfg, 123);
    ASSERT_EQ(tf.history.size(), cfg.epochs);
    for (const EpochLosses& e : tf.history) {
        EXPECT_NEAR(e.total, e.ce_image + e.ce_clinical + e.diag, 1e-12);
        EXPECT_TRUE(std::isfinite(e.pos));
        EXPECT_TRUE(std::isfinite(e.neg));
        EXPECT_DOUBLE_EQ(e.contrastive, e.pos + e.neg);
    }
}

TEST(TrainFoldTest, BetaOneTotalIsContrastivePlusDiag) {
    MultimodalDataset data = synth_generate(small_data(7));
    TrainConfig cfg = small_config();
    cfg.beta = 1.0;
    cfg.epochs = 15;
    std::vector<FoldMasks> folds = kfold_split(data.classes(), cfg.folds, cfg.seed);
    std::mt19937_64 rng = make_rng(22);
    Tensor qm = testutil::random_tensor({data.size(), 8}, rng);
    FoldContext ctx = make_fold_context(qm, data.clinical, data.labels, folds[0], cfg);
    TrainedFold tf = train_fold_model(ctx, cfg, 123);
    for (const EpochLosses& e : tf.history)
        EXPECT_NEAR(e.total, e.contrastive + e.diag, 1e-12);
}

TEST(TrainFoldTest, ZeroLearningRateFreezesParameters) {
    MultimodalDataset data = synth_generate(small_data(9));
    TrainConfig cfg = small_config();
    cfg.lr = 0.0;
    cfg.epochs = 8;
    std::vector<FoldMasks> folds = kfold_split(data.classes(), cfg.folds, cfg.seed);
    std::mt19937_64 rng = make_rng(31);
    Tensor qm = testutil::random_tensor({data.size(), 8}, rng);
    FoldContext ctx = make_fold_context(qm, data.clinical, data.labels, folds[0], cfg);
    ModelParams reference = init_model(cfg, 8, data.clinical.dim(1), 2, 55);
    std::vector<Tensor> ref_params = reference.all();
    TrainedFold tf = train_fold_model(ctx, cfg, 55);
    std::vector<Tensor> trained = tf.params.all();
    ASSERT_EQ(trained.size(), ref_params.size());
    for (std::size_t i = 0; i < trained.size(); ++i)
        EXPECT_TRUE(same_values(trained[i], ref_params[i])) << "parameter " << i << " moved";
    for (const EpochLosses& e : tf.history) {
        EXPECT_DOUBLE_EQ(e.total, tf.history[0].total);
        EXPECT_DOUBLE_EQ(e.ce_image, tf.history[0].ce_image);
    }
}

// Corrupting held-out label rows must not change training in any way: the
// fold context zeroes them before the loop ever sees a label.
TEST(TrainFoldTest, HeldOutLabelsCannotLeakIntoTraining) {
    MultimodalDataset data = synth_generate(small_data(11));
    TrainConfig cfg = small_config();
    cfg.epochs = 10;
    std::vector<FoldMasks> folds = kfold_split(data.classes(), cfg.folds, cfg.seed);
    std::mt19937_64 rng = make_rng(41);
    Tensor qm = testutil::random_tensor({data.size(), 8}, rng);

    Tensor corrupted = Tensor::zeros({data.size(), 2});
    for (std::size_t i = 0; i < data.size(); ++i)
        for (std::size_t j = 0; j < 2; ++j) corrupted.at(i, j) = data.labels.at(i, j);
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (folds[0].train[i]) continue;
        corrupted.at(i, 0) = 0.37;
        corrupted.at(i, 1) = -4.0;
    }

    FoldContext clean = make_fold_context(qm, data.clinical, data.labels, folds[0], cfg);
    FoldContext dirty = make_fold_context(qm, data.clinical, corrupted, folds[0], cfg);
    TrainedFold tf_clean = train_fold_model(clean, cfg, 77);
    TrainedFold tf_dirty = train_fold_model(dirty, cfg, 77);
    std::vector<Tensor> a = tf_clean.params.all();
    std::vector<Tensor> b = tf_dirty.params.all();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(same_values(a[i], b[i]));
    ASSERT_EQ(tf_clean.history.size(), tf_dirty.history.size());
    for (std::size_t e = 0; e < tf_clean.history.size(); ++e)
        EXPECT_DOUBLE_EQ(tf_clean.history[e].total, tf_dirty.history[e].total);
}

// A feature large enough that the raw Gram similarity overflows produces a
// non-finite contrastive term; the loop must name the epoch and component.
TEST(TrainFoldTest, OverflowingLossRaisesDivergenceAtFirstEpoch) {
    MultimodalDataset data = synth_generate(small_data(13));
    TrainConfig cfg = small_config();
    cfg.epochs = 5;
    cfg.normalize_similarity = false;
    std::vector<FoldMasks> folds = kfold_split(data.classes(), cfg.folds, cfg.seed);
    std::mt19937_64 rng = make_rng(51);
    Tensor qm = testutil::random_tensor({data.size(), 8}, rng);
    FoldContext ctx = make_fold_context(qm, data.clinical, data.labels, folds[0], cfg);
    ctx.qm_std.at(0, 0) = 1e200;
    try {
        train_fold_model(ctx, cfg, 9);
        FAIL() << "expected DivergenceError";
    } catch (const DivergenceError& e) {
        EXPECT_EQ(e.epoch, 0);
        EXPECT_FALSE(e.component.empty());
    }
}

TEST(TrainFoldTest, LossDecreasesForMostSeeds) {
    std::size_t improved = 0;
    const std::size_t n_seeds = 10;
    for (std::uint64_t seed = 1; seed <= n_seeds; ++seed) {
        MultimodalDataset data = synth_generate(small_data(seed));
        TrainConfig cfg = small_config();
        cfg.epochs = 60;
        cfg.seed = seed;
        std::vector<FoldMasks> folds = kfold_split(data.classes(), cfg.folds, cfg.seed);
        std::mt19937_64 rng = make_rng(seed);
        Tensor qm = testutil::random_tensor({data.size(), 8}, rng);
        FoldContext ctx = make_fold_context(qm, data.clinical, data.labels, folds[0], cfg);
        TrainedFold tf = train_fold_model(ctx, cfg, derive_seed(seed, 1));
        if (tf.history.back().total < tf.history.front().total) ++improved;
    }
    EXPECT_GE(improved, 8u) << improved << "/" << n_seeds << " seeds improved";
}

TEST(AggregationTest, MeanAndStdOfFoldScores) {
    std::vector<double> aucs = {0.9, 0.95};
    EXPECT_DOUBLE_EQ(mean_of(aucs), 0.925);
    EXPECT_NEAR(std_of(aucs), 0.025, 1e-12);
    EXPECT_DOUBLE_EQ(mean_of({}), 0.0);
    EXPECT_DOUBLE_EQ(std_of({0.5}), 0.0);
}

TEST(RunCvTest, ProducesPooledReportAndPerFoldModels) {
    MultimodalDataset data = synth_generate(small_data(17));
    TrainConfig cfg = small_config();
    cfg.epochs = 25;
    CvResult cv = run_cv(data, cfg);
    ASSERT_EQ(cv.folds.size(), cfg.folds);
    EXPECT_EQ(cv.pooled.confusion[0][0] + cv.pooled.confusion[0][1] +
                  cv.pooled.confusion[1][0] + cv.pooled.confusion[1][1],
              data.size());
    std::vector<std::uint8_t> seen(data.size(), 0);
    for (const FoldResult& fr : cv.folds) {
        EXPECT_TRUE(fr.model.params.fusion.all().size() > 0);
        for (std::size_t idx : fr.test_indices) {
            EXPECT_FALSE(seen[idx]) << "row " << idx << " held out twice";
            seen[idx] = 1;
        }
        ASSERT_EQ(fr.report.loss_history.size(), cfg.epochs);
    }
    for (std::size_t i = 0; i < data.size(); ++i) EXPECT_TRUE(seen[i]);
    EXPECT_GT(cv.fold_auc_mean, 0.0);
    EXPECT_TRUE(cv.encoder.all().size() > 0);
    ASSERT_EQ(cv.pretrain_history.size(), cfg.encoder.pretrain_epochs);
    EXPECT_EQ(cv.first_fold_history.size(), cfg.epochs);
}

TEST(RunCvTest, FixedSplitProtocolTrainsSingleModel) {
    MultimodalDataset data = synth_generate(small_data(19));
    TrainConfig cfg = small_config();
    cfg.epochs = 20;
    cfg.protocol = Protocol::fixed;
    cfg.fixed_train_size = 45;
    CvResult cv = run_cv(data, cfg);
    ASSERT_EQ(cv.folds.size(), 1u);
    EXPECT_EQ(cv.folds[0].test_indices.size(), 15u);
    EXPECT_EQ(cv.folds[0].test_prob.dim(0), 15u);
}

TEST(RunCvTest, DeterministicForFixedSeed) {
    MultimodalDataset data = synth_generate(small_data(23));
    TrainConfig cfg = small_config();
    cfg.epochs = 20;
    cfg.seed = 5;
    CvResult a = run_cv(data, cfg);
    CvResult b = run_cv(data, cfg);
    EXPECT_DOUBLE_EQ(a.pooled.accuracy, b.pooled.accuracy);
    EXPECT_DOUBLE_EQ(a.fold_auc_mean, b.fold_auc_mean);
    EXPECT_DOUBLE_EQ(a.fold_auc_std, b.fold_auc_std);
    ASSERT_EQ(a.folds.size(), b.folds.size());
    for (std::size_t f = 0; f < a.folds.size(); ++f) {
        std::vector<Tensor> pa = a.folds[f].model.params.all();
        std::vector<Tensor> pb = b.folds[f].model.params.all();
        ASSERT_EQ(pa.size(), pb.size());
        for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(same_values(pa[i], pb[i]));
        EXPECT_TRUE(same_values(a.folds[f].test_prob, b.folds[f].test_prob));
    }
    for (std::size_t e = 0; e < a.first_fold_history.size(); ++e)
        EXPECT_DOUBLE_EQ(a.first_fold_history[e].total, b.first_fold_history[e].total);
}

TEST(RunCvTest, DifferentSeedsChangeTheSplit) {
    MultimodalDataset data = synth_generate(small_data(29));
    TrainConfig cfg = small_config();
    cfg.epochs = 2;
    cfg.seed = 1;
    CvResult a = run_cv(data, cfg);
    cfg.seed = 2;
    CvResult b = run_cv(data, cfg);
    EXPECT_NE(a.folds[0].test_indices, b.folds[0].test_indices);
}

}  // namespace
