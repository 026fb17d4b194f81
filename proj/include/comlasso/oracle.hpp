#pragma once
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>
#include <Eigen/Dense>
#include <comlasso/error.hpp>
#include <comlasso/problem.hpp>

namespace comlasso {

struct OracleOptions
{
    int max_iter = 200000;
    double tol = 1e-9;      // stationarity residual relative to max(1, lambda, |grad L(0)|)
    int power_iter = 50;
    Vector start;           // initial iterate; empty means zero
    Vector penalty_weights; // lambda sum_j w_j |beta_j|; empty means all ones
};

struct OracleResult
{
    Vector beta;
    double objective = 0;
    bool converged = false;
    int iterations = 0;
};

namespace detail {

// Orthogonal projection onto {beta : d_k'beta_k = 0 for all k}.
inline void project_null(const GroupStructure& g, Vector& beta)
{
    for (int k = 0; k < g.n_groups(); ++k) {
        auto bk = beta.segment(g.begin(k), g.group_size(k));
        const auto dk = g.d().segment(g.begin(k), g.group_size(k));
        bk -= dk * (dk.dot(bk) / dk.squaredNorm());
    }
}

// Same projection restricted to the support of beta; zeros stay zero.
inline void project_null_on_support(const GroupStructure& g, Vector& beta)
{
    for (int k = 0; k < g.n_groups(); ++k) {
        double num = 0, den = 0;
        for (int j = g.begin(k); j < g.end(k); ++j) {
            if (beta[j] != 0) {
                num += g.d(j) * beta[j];
                den += g.d(j) * g.d(j);
            }
        }
        if (den == 0) continue;
        for (int j = g.begin(k); j < g.end(k); ++j) {
            if (beta[j] != 0) beta[j] -= g.d(j) * num / den;
        }
    }
}

inline void soft_threshold(Vector& v, double t)
{
    for (Index j = 0; j < v.size(); ++j) {
        const double a = std::abs(v[j]) - t;
        v[j] = a > 0 ? std::copysign(a, v[j]) : 0.0;
    }
}

inline void soft_threshold(Vector& v, const Vector& t)
{
    for (Index j = 0; j < v.size(); ++j) {
        const double a = std::abs(v[j]) - t[j];
        v[j] = a > 0 ? std::copysign(a, v[j]) : 0.0;
    }
}

// Largest eigenvalue of X'X by power iteration.
inline double spectral_norm_sq(const Matrix& X, int iters)
{
    Vector v = Vector::Ones(X.cols()) / std::sqrt(double(std::max<Index>(1, X.cols())));
    double est = 0;
    for (int t = 0; t < iters; ++t) {
        const Vector w = X.transpose() * (X * v);
        est = w.norm();
        if (est == 0) return 0;
        v = w / est;
    }
    return est;
}

/**
 * Exact prox of sum_j t_j |b_j| restricted to d_k'b_k = 0, one group at a time:
 * b_j = soft(v_j - mu d_j, t_j) where mu is the root of the nonincreasing
 * piecewise linear g(mu) = sum_j d_j soft(v_j - mu d_j, t_j). Its breakpoints
 * are (v_j -+ t_j)/d_j; outside them every term is active and the slope is
 * -sum d_j^2.
 */
inline void prox_l1_null(const GroupStructure& g, const Vector& v, const Vector& t, Vector& out)
{
    out = v;
    soft_threshold(out, t);
    std::vector<double> bp;
    for (int k = 0; k < g.n_groups(); ++k) {
        bp.clear();
        double S = 0;
        for (int j = g.begin(k); j < g.end(k); ++j) {
            if (g.is_free(j)) continue;
            bp.push_back((v[j] - t[j]) / g.d(j));
            bp.push_back((v[j] + t[j]) / g.d(j));
            S += g.d(j) * g.d(j);
        }
        if (bp.empty()) continue;
        auto gval = [&](double mu) {
            double s = 0;
            for (int j = g.begin(k); j < g.end(k); ++j) {
                if (g.is_free(j)) continue;
                const double a = std::abs(v[j] - mu * g.d(j)) - t[j];
                if (a > 0) s += g.d(j) * std::copysign(a, v[j] - mu * g.d(j));
            }
            return s;
        };
        std::sort(bp.begin(), bp.end());
        double mu;
        const double g0 = gval(bp.front()), g1 = gval(bp.back());
        if (g0 <= 0) {
            mu = bp.front() + g0 / S;
        } else if (g1 >= 0) {
            mu = bp.back() + g1 / S;
        } else {
            // g(bp[lo]) > 0 > g(bp[hi])
            std::size_t lo = 0, hi = bp.size() - 1;
            double glo = g0, ghi = g1;
            while (hi - lo > 1) {
                const std::size_t mid = (lo + hi) / 2;
                const double gm = gval(bp[mid]);
                if (gm > 0) {
                    lo = mid;
                    glo = gm;
                } else {
                    hi = mid;
                    ghi = gm;
                }
            }
            mu = ghi == 0 ? bp[hi] : bp[lo] + glo * (bp[hi] - bp[lo]) / (glo - ghi);
        }
        for (int j = g.begin(k); j < g.end(k); ++j) {
            if (g.is_free(j)) continue;
            const double a = std::abs(v[j] - mu * g.d(j)) - t[j];
            out[j] = a > 0 ? std::copysign(a, v[j] - mu * g.d(j)) : 0.0;
        }
    }
}

} // namespace detail

/**
 * Fixed-lambda solver by accelerated proximal gradient. Each step takes a
 * gradient step on the loss, then the exact prox of the l1 term on the
 * constraint null space; the step halves whenever the quadratic upper bound
 * fails, and momentum restarts when it stops decreasing the objective.
 *
 * Shares nothing with the path solver beyond the loss evaluation.
 */
inline OracleResult solve_fixed_lambda(const ProblemSpec& prob, double lambda,
                                       const OracleOptions& opt = {})
{
    if (lambda < 0) throw InputError("oracle: lambda must be nonnegative");
    const auto& g = prob.groups;
    const Index p = prob.p();
    const Vector w = opt.penalty_weights.size() == 0 ? Vector::Ones(p) : opt.penalty_weights;
    if (w.size() != p || !w.allFinite() || (w.array() < 0).any()) {
        throw InputError("oracle: penalty weights must be p nonnegative finite numbers");
    }
    const double lip = 2 * prob.loss.max_curvature() *
                       detail::spectral_norm_sq(prob.X, opt.power_iter) * 1.01;
    double step = lip > 0 ? 1 / lip : 1.0;

    const double grad_scale =
        std::max({1.0, lambda, loss_gradient(prob, Vector::Zero(p)).lpNorm<Eigen::Infinity>()});

    Vector x = opt.start.size() == p ? opt.start : Vector::Zero(p);
    detail::project_null(g, x);
    Vector y = x, xn(p);
    double momentum = 1;
    OracleResult out;
    for (int it = 1; it <= opt.max_iter; ++it) {
        const Vector grad = loss_gradient(prob, y);
        const double ly = loss_total(prob, y);
        Vector diff;
        while (true) {
            detail::prox_l1_null(g, y - step * grad, (step * lambda) * w, xn);
            diff = xn - y;
            const double bound = ly + grad.dot(diff) + diff.squaredNorm() / (2 * step);
            if (loss_total(prob, xn) <= bound + 1e-12 * std::max(1.0, std::abs(ly))) break;
            step *= 0.5;
        }
        out.iterations = it;
        // gradient mapping diff/step is the stationarity residual, in gradient units
        if (diff.lpNorm<Eigen::Infinity>() <= opt.tol * step * grad_scale) {
            x = xn;
            out.converged = true;
            break;
        }
        if (diff.dot(xn - x) < 0) {
            // gradient-based restart
            momentum = 1;
            y = xn;
        } else {
            const double next = 0.5 * (1 + std::sqrt(1 + 4 * momentum * momentum));
            y = xn + ((momentum - 1) / next) * (xn - x);
            momentum = next;
        }
        x = xn;
    }
    out.beta = x;
    detail::project_null_on_support(g, out.beta);
    out.objective = loss_total(prob, out.beta) + lambda * w.dot(out.beta.cwiseAbs());
    return out;
}

struct BruteForceResult
{
    Vector beta;
    double objective = 0;
    bool on_boundary = false;   // minimizer sits on the grid edge; radius too small to certify
};

/**
 * Exhaustive grid search over the null space of d' for tiny single-group
 * problems (p <= 4). The null space is parameterized by an orthonormal basis;
 * each coordinate ranges over [-radius, radius] with the given step.
 */
inline BruteForceResult brute_force_tiny(const ProblemSpec& prob, double lambda, double radius,
                                         double step)
{
    const Index p = prob.p();
    if (p > 4 || prob.groups.n_groups() != 1) {
        throw InputError("brute force: needs a single group with p <= 4");
    }
    if (!(radius > 0) || !(step > 0)) throw InputError("brute force: radius and step must be positive");
    const Vector d = prob.groups.d();
    Eigen::HouseholderQR<Matrix> qr{Matrix(d)};
    const Matrix Q = qr.householderQ() * Matrix::Identity(p, p);
    const Matrix N = Q.rightCols(p - 1);
    const int per_axis = static_cast<int>(std::floor(2 * radius / step + 0.5)) + 1;
    const int dims = static_cast<int>(p - 1);

    BruteForceResult best;
    best.objective = INFINITY;
    std::vector<int> idx(dims, 0);
    Vector t(dims);
    std::vector<int> best_idx;
    while (true) {
        for (int a = 0; a < dims; ++a) t[a] = -radius + idx[a] * step;
        const Vector beta = N * t;
        const double obj = objective(prob, beta, lambda);
        if (obj < best.objective) {
            best.objective = obj;
            best.beta = beta;
            best_idx = idx;
        }
        int a = 0;
        while (a < dims && ++idx[a] == per_axis) idx[a++] = 0;
        if (a == dims) break;
    }
    for (int v : best_idx) best.on_boundary |= (v == 0 || v == per_axis - 1);
    return best;
}

} // namespace comlasso
