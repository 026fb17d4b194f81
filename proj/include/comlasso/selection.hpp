#pragma once
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <vector>
#include <Eigen/Dense>
#include <comlasso/error.hpp>
#include <comlasso/kkt.hpp>
#include <comlasso/oracle.hpp>
#include <comlasso/path_solver.hpp>
#include <comlasso/problem.hpp>

namespace comlasso {

struct CriterionPoint
{
    double lambda = 0;
    int df = 0;          // |A| - 1, clipped at 0
    double value = 0;
};

struct SelectionReport
{
    std::vector<CriterionPoint> points;
    int chosen = -1;                     // index into points
    std::vector<double> probabilities;   // stability selection only
    std::vector<std::string> warnings;
    int subsamples_used = 0;
    int subsamples_skipped = 0;

    double chosen_lambda() const { return chosen >= 0 ? points[chosen].lambda : 0.0; }
};

inline int active_count(const Vector& beta)
{
    return static_cast<int>((beta.array() != 0).count());
}

inline int degrees_of_freedom(const Vector& beta) { return std::max(active_count(beta) - 1, 0); }

// Smallest value, first occurrence; points run from large to small lambda.
inline int argmin_first(const std::vector<CriterionPoint>& pts)
{
    int best = -1;
    for (int t = 0; t < static_cast<int>(pts.size()); ++t) {
        if (best < 0 || pts[t].value < pts[best].value) best = t;
    }
    return best;
}

/**
 * Gaussian BIC at every kink: n log(RSS/n) + log(n) df. A zero RSS would give
 * -inf; it is floored (RSS/n >= 1e-300) and a warning recorded.
 */
inline SelectionReport bic_along_path(const ProblemSpec& prob, const SolutionPath& path)
{
    if (prob.task != Task::regression) throw InputError("bic: needs a regression problem");
    SelectionReport rep;
    const double n = static_cast<double>(prob.n());
    for (const auto& k : path.kinks) {
        const double rss = (prob.y - prob.X * k.beta).squaredNorm();
        double ratio = rss / n;
        if (!(ratio >= 1e-300)) {
            ratio = 1e-300;
            rep.warnings.push_back("zero residual sum of squares at lambda " + std::to_string(k.lambda) +
                                   "; criterion floored");
        }
        const int df = degrees_of_freedom(k.beta);
        rep.points.push_back({k.lambda, df, n * std::log(ratio) + std::log(n) * df});
    }
    rep.chosen = argmin_first(rep.points);
    return rep;
}

// ------------------------------------------------------------ adaptive lasso

/**
 * Weighted penalty lambda sum_j w_j |beta_j| as a plain problem in
 * gamma = w .* beta: columns X_j / w_j and constraint weights d_j / w_j.
 * Multipliers are unchanged by the map.
 */
struct AdaptiveTransform
{
    ProblemSpec problem;
    Vector weights;

    Vector to_beta(const Vector& gamma) const { return gamma.cwiseQuotient(weights); }

    SolutionPath back_map(const SolutionPath& gamma_path) const
    {
        SolutionPath out = gamma_path;
        for (auto& k : out.kinks) k.beta = to_beta(k.beta);
        return out;
    }
};

inline AdaptiveTransform adaptive_reparametrize(const ProblemSpec& prob, const Vector& weights)
{
    if (weights.size() != prob.p()) throw InputError("adaptive weights: expected " + std::to_string(prob.p()) + " entries");
    for (Index j = 0; j < weights.size(); ++j) {
        if (!std::isfinite(weights[j]) || !(weights[j] > 0)) {
            throw InputError("adaptive weights: entry " + std::to_string(j + 1) +
                             " must be positive and finite");
        }
    }
    const Vector inv = weights.cwiseInverse();
    AdaptiveTransform t{ProblemSpec(prob.X * inv.asDiagonal(), prob.y, prob.loss,
                                    GroupStructure(prob.groups.sizes(), prob.groups.d().cwiseProduct(inv)),
                                    prob.task),
                        weights};
    return t;
}

struct PilotEstimate
{
    Vector beta;
    Vector weights;       // 1 / |beta|, with tiny entries floored
    bool fallback = false; // true when the unpenalized fit was replaced by a tiny-lambda fit
};

/**
 * Pilot weights from an unpenalized fit: the constrained least-squares solution
 * for quadratic loss with full column rank, otherwise the oracle at
 * 1e-6 lambda_max. Coefficients below 1e-8 |beta|_inf count as 1e-8 |beta|_inf
 * so every weight stays finite.
 */
inline PilotEstimate pilot_weights(const ProblemSpec& prob)
{
    PilotEstimate out;
    const Index p = prob.p();
    const int K = prob.groups.n_groups();
    const bool quadratic = prob.loss.kind() == ResidualKind::residual && prob.loss.segments().size() == 1;
    bool done = false;
    if (quadratic && prob.n() > p) {
        Eigen::ColPivHouseholderQR<Matrix> qr(prob.X);
        if (qr.rank() == p) {
            const double a2 = 2 * prob.loss.segments()[0].a;
            const double b = prob.loss.segments()[0].b;
            // stationarity of sum a r^2 + b r with r = y - X beta, plus D mu
            Matrix M = Matrix::Zero(p + K, p + K);
            M.topLeftCorner(p, p) = a2 * prob.X.transpose() * prob.X;
            for (int j = 0; j < p; ++j) {
                M(j, p + prob.groups.group_of(j)) = prob.groups.d(j);
                M(p + prob.groups.group_of(j), j) = prob.groups.d(j);
            }
            Vector rhs = Vector::Zero(p + K);
            rhs.head(p) = prob.X.transpose() * (a2 * prob.y + b * Vector::Ones(prob.n()));
            out.beta = M.fullPivLu().solve(rhs).head(p);
            done = out.beta.allFinite();
        }
    }
    if (!done) {
        const double lm = lambda_max(prob).lambda;
        out.beta = solve_fixed_lambda(prob, 1e-6 * lm).beta;
        out.fallback = true;
    }
    const double scale = out.beta.lpNorm<Eigen::Infinity>();
    if (!(scale > 0)) throw InputError("pilot estimate is identically zero; no adaptive weights");
    out.weights = out.beta.cwiseAbs().cwiseMax(1e-8 * scale).cwiseInverse();
    return out;
}

// Adaptive path in the original coordinates.
inline SolutionPath adaptive_path(const ProblemSpec& prob, const Vector& weights,
                                  const PathOptions& opt = {})
{
    const auto t = adaptive_reparametrize(prob, weights);
    return t.back_map(run_path(t.problem, opt));
}

// ------------------------------------------------------- resampling helpers

namespace detail {

// Runs fn(0..count-1) on up to jobs threads; results go to caller-owned slots.
template <class Fn>
void parallel_for(int count, int jobs, Fn&& fn)
{
    jobs = std::max(1, std::min(jobs, count));
    if (jobs == 1) {
        for (int t = 0; t < count; ++t) fn(t);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(count);
    auto worker = [&]() {
        for (int t; (t = next.fetch_add(1)) < count;) {
            try {
                fn(t);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < jobs; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

// Row order independent of how the data were listed: sort by (y, x_i).
inline std::vector<int> canonical_order(const ProblemSpec& prob)
{
    std::vector<int> idx(static_cast<std::size_t>(prob.n()));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (prob.y[a] != prob.y[b]) return prob.y[a] < prob.y[b];
        for (Index j = 0; j < prob.p(); ++j) {
            if (prob.X(a, j) != prob.X(b, j)) return prob.X(a, j) < prob.X(b, j);
        }
        return false;
    });
    return idx;
}

inline ProblemSpec subset_rows(const ProblemSpec& prob, const std::vector<int>& rows)
{
    const auto m = static_cast<Index>(rows.size());
    Matrix X(m, prob.p());
    Vector y(m);
    for (Index i = 0; i < m; ++i) {
        X.row(i) = prob.X.row(rows[i]);
        y[i] = prob.y[rows[i]];
    }
    return {std::move(X), std::move(y), prob.loss, prob.groups, prob.task};
}

inline double prediction_error(const ProblemSpec& prob, int row, const Vector& beta)
{
    const double eta = prob.X.row(row).dot(beta);
    if (prob.task == Task::classification) return prob.y[row] * eta > 0 ? 0.0 : 1.0;
    const double r = prob.y[row] - eta;
    return r * r;
}

} // namespace detail

// ---------------------------------------------------------- cross-validation

struct CvOptions
{
    int folds = 5;              // 0 or n means leave-one-out
    std::uint64_t seed = 1;
    int jobs = 1;
    PathOptions path;
};

struct CvResult
{
    SelectionReport report;     // value = mean held-out error; df from the full-data path
    std::vector<int> fold_of;   // fold index of every row
    SolutionPath full_path;
    std::vector<SolutionPath> fold_paths;
    int truncated_folds = 0;    // fold paths that stopped early
};

/**
 * K-fold cross-validation over the union of all kink lambdas (full data and
 * every fold). Errors are squared error for regression and misclassification
 * (eta = 0 counts as wrong) for classification, pooled over held-out rows.
 * Folds are dealt from a seeded shuffle of the canonical row order, so the
 * result does not depend on how rows are listed.
 */
inline CvResult cross_validate(const ProblemSpec& prob, const CvOptions& opt = {})
{
    const int n = static_cast<int>(prob.n());
    const int folds = opt.folds == 0 ? n : opt.folds;
    if (folds < 2 || folds > n) {
        throw InputError("cv: need 2 <= folds <= n (n = " + std::to_string(n) + ")");
    }
    CvResult out;
    std::vector<int> order = detail::canonical_order(prob);
    std::mt19937_64 rng(opt.seed);
    std::shuffle(order.begin(), order.end(), rng);
    out.fold_of.assign(n, 0);
    for (int t = 0; t < n; ++t) out.fold_of[order[t]] = t % folds;

    // rows of each split, listed in canonical order
    const std::vector<int> canon = detail::canonical_order(prob);
    std::vector<std::vector<int>> train(folds), test(folds);
    for (int i : canon) {
        for (int f = 0; f < folds; ++f) (out.fold_of[i] == f ? test[f] : train[f]).push_back(i);
    }

    std::vector<SolutionPath> paths(folds + 1);
    detail::parallel_for(folds + 1, opt.jobs, [&](int f) {
        paths[f] = run_path(detail::subset_rows(prob, f == folds ? canon : train[f]), opt.path);
    });
    out.full_path = paths[folds];
    out.fold_paths.assign(paths.begin(), paths.begin() + folds);

    std::vector<double> grid;
    for (const auto& path : paths) {
        for (const auto& k : path.kinks) grid.push_back(k.lambda);
    }
    std::sort(grid.begin(), grid.end(), std::greater<>());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

    std::vector<double> err(grid.size(), 0.0);
    for (int f = 0; f < folds; ++f) {
        if (paths[f].status != PathStatus::completed) ++out.truncated_folds;
        for (std::size_t g = 0; g < grid.size(); ++g) {
            const Vector beta = paths[f].beta_at(grid[g]);
            for (int i : test[f]) err[g] += detail::prediction_error(prob, i, beta);
        }
    }
    for (std::size_t g = 0; g < grid.size(); ++g) {
        out.report.points.push_back({grid[g], degrees_of_freedom(out.full_path.beta_at(grid[g])),
                                     err[g] / n});
    }
    out.report.chosen = argmin_first(out.report.points);
    if (out.truncated_folds > 0) {
        out.report.warnings.push_back(std::to_string(out.truncated_folds) +
                                      " fold path(s) stopped early; their last kink is used below it");
    }
    return out;
}

// ------------------------------------------------------ stability selection

struct StabilityOptions
{
    int subsamples = 100;
    double weakness = 0.5;           // multipliers uniform on [weakness, 1]
    double fraction = 0.5;           // subsample size floor(fraction n)
    int cv_folds = 5;
    std::uint64_t seed = 1;
    int jobs = 1;
    PathOptions path;
};

/**
 * Randomized lasso over subsamples. lambda comes from one cross-validation on
 * the full data; a subsample of m rows is read at lambda m / n because the loss
 * is a sum over rows. Each subsample gets penalty weights 1 / W_j with W_j
 * uniform on [weakness, 1]; probability = share of used subsamples in which the
 * coefficient is nonzero. Subsamples with a constant column are skipped.
 */
inline SelectionReport stability_selection(const ProblemSpec& prob, const StabilityOptions& opt = {})
{
    if (!(opt.weakness > 0 && opt.weakness <= 1)) throw InputError("stability: weakness must lie in (0, 1]");
    if (opt.subsamples < 1) throw InputError("stability: need at least one subsample");
    if (!(opt.fraction > 0 && opt.fraction <= 1)) throw InputError("stability: fraction must lie in (0, 1]");
    const int n = static_cast<int>(prob.n());
    const int m = static_cast<int>(std::floor(opt.fraction * n));
    if (m < 2) throw InputError("stability: subsample would have fewer than two rows");

    CvOptions cvo;
    cvo.folds = opt.cv_folds;
    cvo.seed = opt.seed;
    cvo.jobs = opt.jobs;
    cvo.path = opt.path;
    const CvResult cv = cross_validate(prob, cvo);
    SelectionReport rep = cv.report;
    const double lam = rep.chosen_lambda() * m / n;
    const std::vector<int> canon = detail::canonical_order(prob);
    const Index p = prob.p();

    // slot per subsample: selection indicator, or empty when skipped
    std::vector<std::vector<char>> picked(opt.subsamples);
    std::vector<char> truncated(opt.subsamples, 0);
    detail::parallel_for(opt.subsamples, opt.jobs, [&](int b) {
        std::seed_seq seq{static_cast<std::uint32_t>(opt.seed), static_cast<std::uint32_t>(opt.seed >> 32),
                          static_cast<std::uint32_t>(b)};
        std::mt19937_64 rng(seq);
        std::vector<int> pos(n);
        std::iota(pos.begin(), pos.end(), 0);
        std::shuffle(pos.begin(), pos.end(), rng);
        pos.resize(m);
        std::sort(pos.begin(), pos.end());
        std::vector<int> rows(m);
        for (int t = 0; t < m; ++t) rows[t] = canon[pos[t]];
        std::uniform_real_distribution<double> U(opt.weakness, 1.0);
        Vector w(p);
        for (Index j = 0; j < p; ++j) w[j] = 1.0 / U(rng);

        const ProblemSpec sub = detail::subset_rows(prob, rows);
        for (Index j = 0; j < p; ++j) {
            if (sub.X.col(j).maxCoeff() == sub.X.col(j).minCoeff()) return;
        }
        const SolutionPath path = adaptive_path(sub, w, opt.path);
        truncated[b] = path.status != PathStatus::completed;
        const Vector beta = path.beta_at(lam);
        picked[b].resize(p);
        for (Index j = 0; j < p; ++j) picked[b][j] = beta[j] != 0;
    });

    rep.probabilities.assign(p, 0.0);
    int n_trunc = 0;
    for (int b = 0; b < opt.subsamples; ++b) {
        if (picked[b].empty()) {
            ++rep.subsamples_skipped;
            continue;
        }
        ++rep.subsamples_used;
        n_trunc += truncated[b];
        for (Index j = 0; j < p; ++j) rep.probabilities[j] += picked[b][j];
    }
    if (rep.subsamples_used > 0) {
        for (auto& v : rep.probabilities) v /= rep.subsamples_used;
    }
    if (rep.subsamples_skipped > 0) {
        rep.warnings.push_back(std::to_string(rep.subsamples_skipped) +
                               " subsample(s) skipped: constant column");
    }
    if (n_trunc > 0) {
        rep.warnings.push_back(std::to_string(n_trunc) + " subsample path(s) stopped early");
    }
    return rep;
}

} // namespace comlasso
