#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <gtest/gtest.h>
#include "test_util.hpp"
#include <comlasso/comlasso.hpp>

using namespace comlasso;

namespace {

ProblemSpec permuted(const ProblemSpec& prob, std::mt19937_64& rng)
{
    std::vector<int> rows(static_cast<std::size_t>(prob.n()));
    std::iota(rows.begin(), rows.end(), 0);
    std::shuffle(rows.begin(), rows.end(), rng);
    return detail::subset_rows(prob, rows);
}

// Well separated two-class toy: y = sign(x1 - x2), |x1 - x2| >= 1.
ProblemSpec separable_toy()
{
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> U(-1, 1);
    const int n = 12;
    Matrix X(n, 3);
    Vector y(n);
    for (int i = 0; i < n; ++i) {
        const double s = i % 2 ? 1.0 : -1.0;
        const double gap = 1.0 + std::abs(U(rng));
        X(i, 1) = U(rng);
        X(i, 0) = X(i, 1) + s * gap;
        X(i, 2) = U(rng);
        y[i] = s;
    }
    return {X, y, make_builtin_loss("squared-hinge"), GroupStructure::single(3), Task::classification};
}

} // namespace

TEST(Bic, EmptyModelHasZeroDf)
{
    std::mt19937_64 rng(1);
    const auto prob = fixtures::regression_problem(20, 6, 1, rng);
    const auto path = run_path(prob);
    const auto rep = bic_along_path(prob, path);
    ASSERT_EQ(rep.points.size(), path.kinks.size());
    EXPECT_EQ(rep.points[0].df, 0);
    EXPECT_NEAR(rep.points[0].value, 20 * std::log(prob.y.squaredNorm() / 20), 1e-12);
    for (std::size_t t = 0; t < rep.points.size(); ++t) {
        const int nz = static_cast<int>((path.kinks[t].beta.array() != 0).count());
        EXPECT_EQ(rep.points[t].df, std::max(nz - 1, 0));
    }
}

TEST(Bic, ZeroResidualIsFloored)
{
    Matrix X = Matrix::Identity(2, 2);
    Vector y(2);
    y << 1, -1;
    const ProblemSpec prob(X, y, make_builtin_loss("quadratic"), GroupStructure::single(2));
    const auto path = run_path(prob);
    ASSERT_EQ(path.kinks.back().beta, y);
    const auto rep = bic_along_path(prob, path);
    EXPECT_TRUE(std::isfinite(rep.points.back().value));
    EXPECT_FALSE(rep.warnings.empty());
    EXPECT_EQ(rep.chosen, static_cast<int>(rep.points.size()) - 1);
}

TEST(Bic, TiesGoToLargerLambda)
{
    std::vector<CriterionPoint> pts{{3, 0, 1.0}, {2, 1, 0.5}, {1, 2, 0.5}, {0, 3, 0.7}};
    EXPECT_EQ(argmin_first(pts), 1);
}

TEST(Bic, RejectsClassification)
{
    const auto prob = separable_toy();
    EXPECT_THROW(bic_along_path(prob, run_path(prob)), InputError);
}

TEST(Bic, RecoversTrueSupportOnSyntheticDesign)
{
    int covered = 0;
    for (int seed = 0; seed < 50; ++seed) {
        const auto s = generate_synthetic(100, {30}, 1000 + seed);
        const auto prob = s.problem();
        const auto path = run_path(prob);
        const auto rep = bic_along_path(prob, path);
        const Vector b = path.kinks[rep.chosen].beta;
        bool ok = true;
        for (int j = 0; j < 30; ++j) ok &= s.beta[j] == 0 || b[j] != 0;
        covered += ok;
    }
    EXPECT_GE(covered, 40);
}

TEST(Adaptive, UnitWeightsAreIdentity)
{
    std::mt19937_64 rng(2);
    const auto prob = fixtures::regression_problem(15, 6, 2, rng);
    const auto t = adaptive_reparametrize(prob, Vector::Ones(6));
    EXPECT_EQ(t.problem.X, prob.X);
    EXPECT_EQ(t.problem.groups.d(), prob.groups.d());
    EXPECT_EQ(t.problem.groups.sizes(), prob.groups.sizes());
}

TEST(Adaptive, ConstantWeightsRescaleLambda)
{
    std::mt19937_64 rng(3);
    const auto prob = fixtures::regression_problem(20, 8, 2, rng);
    const double c = 2.5;
    const auto path = adaptive_path(prob, Vector::Constant(8, c));
    const double lm = path.lambda_max();
    EXPECT_NEAR(lm * c, lambda_max(prob).lambda, 1e-10);
    for (double f : {0.9, 0.5, 0.2}) {
        const double lam = f * lm;
        const auto o = solve_fixed_lambda(prob, c * lam);
        EXPECT_LT((path.beta_at(lam) - o.beta).lpNorm<Eigen::Infinity>(), 1e-5);
    }
}

TEST(Adaptive, MatchesWeightedOracleAndKeepsConstraint)
{
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> U(0.3, 3.0);
    for (int rep = 0; rep < 5; ++rep) {
        const auto prob = fixtures::regression_problem(20, 9, 3, rng, make_builtin_loss("quadratic"), true);
        Vector w(9);
        for (auto& v : w) v = U(rng);
        const auto path = adaptive_path(prob, w);
        for (const auto& k : path.kinks) {
            EXPECT_LT(prob.groups.constraint_residuals(k.beta).lpNorm<Eigen::Infinity>(), 1e-10);
        }
        OracleOptions oo;
        oo.penalty_weights = w;
        for (double f : {0.7, 0.3, 0.1}) {
            const double lam = f * path.lambda_max();
            const auto o = solve_fixed_lambda(prob, lam, oo);
            EXPECT_LT((path.beta_at(lam) - o.beta).lpNorm<Eigen::Infinity>(), 1e-5);
        }
    }
}

TEST(Adaptive, RejectsBadWeights)
{
    std::mt19937_64 rng(5);
    const auto prob = fixtures::regression_problem(10, 4, 1, rng);
    Vector w = Vector::Ones(4);
    w[2] = 0;
    EXPECT_THROW(adaptive_reparametrize(prob, w), InputError);
    w[2] = INFINITY;
    EXPECT_THROW(adaptive_reparametrize(prob, w), InputError);
    EXPECT_THROW(adaptive_reparametrize(prob, Vector::Ones(3)), InputError);
}

TEST(Adaptive, PilotWeights)
{
    std::mt19937_64 rng(6);
    const auto tall = fixtures::regression_problem(30, 5, 1, rng);
    const auto pt = pilot_weights(tall);
    EXPECT_FALSE(pt.fallback);
    // unpenalized constrained fit: zero gradient up to the multiplier
    const Vector g = loss_gradient(tall, pt.beta);
    EXPECT_LT((g.array() - g.mean()).abs().maxCoeff(), 1e-8);
    EXPECT_LT(std::abs(pt.beta.sum()), 1e-10);

    const auto wide = fixtures::regression_problem(8, 12, 1, rng);
    const auto pw = pilot_weights(wide);
    EXPECT_TRUE(pw.fallback);
    EXPECT_TRUE(pw.weights.allFinite());
    EXPECT_GT(pw.weights.minCoeff(), 0);
}

TEST(CrossValidation, FoldsPartitionRows)
{
    std::mt19937_64 rng(7);
    const auto prob = fixtures::regression_problem(23, 6, 1, rng);
    CvOptions opt;
    opt.folds = 5;
    const auto cv = cross_validate(prob, opt);
    std::vector<int> count(5, 0);
    for (int f : cv.fold_of) {
        ASSERT_GE(f, 0);
        ASSERT_LT(f, 5);
        ++count[f];
    }
    EXPECT_EQ(*std::max_element(count.begin(), count.end()) - *std::min_element(count.begin(), count.end()), 1);
    EXPECT_EQ(std::accumulate(count.begin(), count.end(), 0), 23);
    for (std::size_t t = 1; t < cv.report.points.size(); ++t) {
        EXPECT_LT(cv.report.points[t].lambda, cv.report.points[t - 1].lambda);
    }
    EXPECT_THROW(cross_validate(prob, {.folds = 1}), InputError);
    EXPECT_THROW(cross_validate(prob, {.folds = 24}), InputError);
}

TEST(CrossValidation, HeldOutRowsNeverTrain)
{
    std::mt19937_64 rng(8);
    const auto prob = fixtures::regression_problem(15, 5, 1, rng);
    const auto cv = cross_validate(prob, {.folds = 3, .seed = 4});
    const auto canon = detail::canonical_order(prob);
    std::vector<double> err(cv.report.points.size(), 0.0);
    for (int f = 0; f < 3; ++f) {
        std::vector<int> train;
        for (int i : canon)
            if (cv.fold_of[i] != f) train.push_back(i);
        const auto path = run_path(detail::subset_rows(prob, train));
        ASSERT_EQ(path.kinks.size(), cv.fold_paths[f].kinks.size());
        for (std::size_t t = 0; t < path.kinks.size(); ++t)
            EXPECT_EQ(path.kinks[t].beta, cv.fold_paths[f].kinks[t].beta);
        for (std::size_t g = 0; g < err.size(); ++g) {
            const Vector b = path.beta_at(cv.report.points[g].lambda);
            for (int i = 0; i < 15; ++i) {
                if (cv.fold_of[i] != f) continue;
                const double r = prob.y[i] - prob.X.row(i).dot(b);
                err[g] += r * r / 15;
            }
        }
    }
    for (std::size_t g = 0; g < err.size(); ++g) EXPECT_NEAR(err[g], cv.report.points[g].value, 1e-12);
}

TEST(CrossValidation, SeparableToyReachesZeroLooError)
{
    const auto prob = separable_toy();
    const auto cv = cross_validate(prob, {.folds = 0});
    double best = 1;
    for (const auto& pt : cv.report.points) best = std::min(best, pt.value);
    EXPECT_EQ(best, 0.0);
    EXPECT_EQ(cv.report.points[cv.report.chosen].value, 0.0);
}

TEST(CrossValidation, ClassificationSmokeOnSmallGroups)
{
    std::mt19937_64 rng(9);
    const auto prob = fixtures::classification_problem(28, 15, 4, rng);
    const auto cv = cross_validate(prob, {.folds = 0});
    EXPECT_FALSE(cv.report.points.empty());
    for (const auto& pt : cv.report.points) {
        EXPECT_GE(pt.value, 0);
        EXPECT_LE(pt.value, 1);
    }
}

TEST(CrossValidation, PureNoisePrefersEmptyEnd)
{
    int near_empty = 0;
    for (int seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(500 + seed);
        auto prob = fixtures::regression_problem(40, 10, 1, rng);
        std::normal_distribution<double> N(0, 1);
        for (Index i = 0; i < prob.n(); ++i) prob.y[i] = N(rng);
        const auto cv = cross_validate(prob, {.folds = 5, .seed = static_cast<std::uint64_t>(seed)});
        near_empty += cv.report.chosen_lambda() >= 0.5 * cv.full_path.lambda_max();
    }
    EXPECT_GE(near_empty, 14);
}

TEST(CrossValidation, InvariantToRowOrderAndJobs)
{
    std::mt19937_64 rng(10);
    const auto prob = fixtures::regression_problem(20, 6, 2, rng);
    const auto a = cross_validate(prob, {.folds = 4, .seed = 3});
    const auto b = cross_validate(permuted(prob, rng), {.folds = 4, .seed = 3, .jobs = 3});
    ASSERT_EQ(a.report.points.size(), b.report.points.size());
    for (std::size_t t = 0; t < a.report.points.size(); ++t) {
        EXPECT_EQ(a.report.points[t].lambda, b.report.points[t].lambda);
        EXPECT_NEAR(a.report.points[t].value, b.report.points[t].value, 1e-12);
    }
    EXPECT_EQ(a.report.chosen, b.report.chosen);
}

TEST(Stability, FullDataSingleDrawIsCvActiveSet)
{
    std::mt19937_64 rng(11);
    const auto prob = fixtures::regression_problem(30, 8, 2, rng);
    StabilityOptions opt;
    opt.subsamples = 1;
    opt.weakness = 1;
    opt.fraction = 1;
    const auto rep = stability_selection(prob, opt);
    const auto cv = cross_validate(prob, {.folds = 5, .seed = opt.seed});
    const Vector b = cv.full_path.beta_at(cv.report.chosen_lambda());
    ASSERT_EQ(rep.probabilities.size(), 8u);
    for (int j = 0; j < 8; ++j) EXPECT_EQ(rep.probabilities[j], b[j] != 0 ? 1.0 : 0.0);
}

TEST(Stability, ReproducibleBoundedAndOrderFree)
{
    std::mt19937_64 rng(12);
    const auto prob = fixtures::regression_problem(30, 9, 3, rng);
    StabilityOptions opt;
    opt.subsamples = 25;
    opt.seed = 77;
    const auto a = stability_selection(prob, opt);
    opt.jobs = 3;
    const auto b = stability_selection(permuted(prob, rng), opt);
    EXPECT_EQ(a.subsamples_used, 25);
    ASSERT_EQ(a.probabilities.size(), b.probabilities.size());
    for (std::size_t j = 0; j < a.probabilities.size(); ++j) {
        EXPECT_GE(a.probabilities[j], 0);
        EXPECT_LE(a.probabilities[j], 1);
        EXPECT_EQ(a.probabilities[j], b.probabilities[j]);
    }
}

TEST(Stability, ConstantColumnSubsamplesSkipped)
{
    std::mt19937_64 rng(13);
    auto prob = fixtures::regression_problem(20, 6, 1, rng);
    prob.X.col(3).setConstant(0.5);
    prob.X(0, 3) = 1.5;   // only one row differs
    StabilityOptions opt;
    opt.subsamples = 20;
    const auto rep = stability_selection(prob, opt);
    EXPECT_GT(rep.subsamples_skipped, 0);
    EXPECT_EQ(rep.subsamples_used + rep.subsamples_skipped, 20);
    EXPECT_FALSE(rep.warnings.empty());
}

TEST(Stability, TrueCoefficientsSelectedMoreOften)
{
    const auto s = generate_synthetic(100, {10, 10, 10}, 21);
    StabilityOptions opt;
    opt.subsamples = 40;
    opt.seed = 5;
    const auto rep = stability_selection(s.problem(), opt);
    double on = 0, off = 0;
    int n_on = 0;
    for (int j = 0; j < 30; ++j) {
        if (s.beta[j] != 0) {
            on += rep.probabilities[j];
            ++n_on;
        } else {
            off += rep.probabilities[j];
        }
    }
    EXPECT_EQ(n_on, 6);
    EXPECT_GE(on / 6 - off / 24, 0.2);
}

TEST(Stability, RejectsBadOptions)
{
    std::mt19937_64 rng(14);
    const auto prob = fixtures::regression_problem(20, 6, 1, rng);
    EXPECT_THROW(stability_selection(prob, {.weakness = 0}), InputError);
    EXPECT_THROW(stability_selection(prob, {.weakness = 1.5}), InputError);
    EXPECT_THROW(stability_selection(prob, {.subsamples = 0}), InputError);
}
