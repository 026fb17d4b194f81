#pragma once
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>
#include <comlasso/error.hpp>
#include <comlasso/problem.hpp>

namespace comlasso {

/**
 * Feasible range of the multiplier mu_k of one group given a gradient:
 * every constrained j in the group needs -lambda <= grad_j + d_j mu_k <= lambda.
 *
 * lower_index is the j whose lower bound is largest, upper_index the j whose
 * upper bound is smallest. The set is empty when lo > hi.
 */
struct DualInterval
{
    int group = -1;
    double lo = -INFINITY;
    double hi = INFINITY;
    int lower_index = -1;
    int upper_index = -1;

    bool empty() const { return lo > hi; }
    double width() const { return hi - lo; }
    double midpoint() const { return 0.5 * (lo + hi); }
};

inline double dual_lower_bound(double grad, double d, double lambda)
{
    return -lambda / std::abs(d) - grad / d;
}

inline double dual_upper_bound(double grad, double d, double lambda)
{
    return lambda / std::abs(d) - grad / d;
}

inline DualInterval dual_feasible_interval(const Vector& gradient, double lambda,
                                           const GroupStructure& groups, int k)
{
    if (lambda < 0) throw InputError("dual interval: lambda must be nonnegative");
    DualInterval out;
    out.group = k;
    for (int j = groups.begin(k); j < groups.end(k); ++j) {
        const double d = groups.d(j);
        if (d == 0) continue;
        const double lo = dual_lower_bound(gradient[j], d, lambda);
        const double hi = dual_upper_bound(gradient[j], d, lambda);
        if (out.lower_index < 0 || lo > out.lo) {
            out.lo = lo;
            out.lower_index = j;
        }
        if (out.upper_index < 0 || hi < out.hi) {
            out.hi = hi;
            out.upper_index = j;
        }
    }
    if (out.lower_index < 0) {
        throw InputError("dual interval: group " + std::to_string(k + 1) +
                         " has no constrained index");
    }
    return out;
}

// Smallest lambda at which beta = 0 is optimal, with the pair that becomes active there.
struct LambdaMax
{
    double lambda = 0;
    int group = -1;
    int upper_index = -1;   // upper dual bound binds; enters with sign -sign(d)
    int lower_index = -1;   // lower dual bound binds; enters with sign +sign(d)
    int free_index = -1;    // set instead of the pair when an unconstrained index wins
    double mu = 0;
    bool trivial = false;   // gradient at zero vanishes; the path is the single point beta = 0
};

/**
 * Closed form of lambda_max: the maximum over groups and ordered pairs (u, l)
 * of constrained indices of
 *
 *     (grad_u / d_u - grad_l / d_l) / (1/|d_u| + 1/|d_l|),
 *
 * and over unconstrained indices of |grad_j|. Ties go to the lexicographically
 * smallest (group, upper, lower).
 */
inline LambdaMax lambda_max(const ProblemSpec& prob, const Vector& grad0)
{
    const auto& g = prob.groups;
    const double scale = std::max(1.0, grad0.lpNorm<Eigen::Infinity>());
    const double tie = 1e-12 * scale;
    LambdaMax best;
    best.lambda = -INFINITY;
    for (int k = 0; k < g.n_groups(); ++k) {
        for (int u = g.begin(k); u < g.end(k); ++u) {
            if (g.is_free(u)) continue;
            const double ru = grad0[u] / g.d(u);
            const double wu = 1 / std::abs(g.d(u));
            for (int l = g.begin(k); l < g.end(k); ++l) {
                if (l == u || g.is_free(l)) continue;
                const double v = (ru - grad0[l] / g.d(l)) / (wu + 1 / std::abs(g.d(l)));
                if (v > best.lambda + tie) {
                    best.lambda = v;
                    best.group = k;
                    best.upper_index = u;
                    best.lower_index = l;
                }
            }
        }
    }
    for (int j = 0; j < g.size(); ++j) {
        if (g.is_free(j) && std::abs(grad0[j]) > best.lambda + tie) {
            best = LambdaMax{};
            best.lambda = std::abs(grad0[j]);
            best.group = g.group_of(j);
            best.free_index = j;
        }
    }
    if (best.lambda <= tie) {
        LambdaMax t;
        t.trivial = true;
        return t;
    }
    if (best.free_index < 0) {
        best.mu = dual_upper_bound(grad0[best.upper_index], g.d(best.upper_index), best.lambda);
    }
    return best;
}

inline LambdaMax lambda_max(const ProblemSpec& prob)
{
    return lambda_max(prob, loss_gradient(prob, Vector::Zero(prob.p())));
}

inline int sign_of(double v) { return (v > 0) - (v < 0); }

// Signs of a newly activated pair: the upper-bound index goes negative relative
// to its d, the lower-bound index positive.
inline std::pair<int, int> initial_signs(int upper_index, int lower_index, const Vector& d)
{
    if (d[upper_index] == 0 || d[lower_index] == 0) {
        throw InputError("initial signs: pair must have nonzero d");
    }
    return {-sign_of(d[upper_index]), sign_of(d[lower_index])};
}

/**
 * Signs read off the binding dual bounds at (gradient, lambda, mu); checks they
 * agree with the d-based rule. Throws InternalError if a bound does not bind.
 */
inline std::pair<int, int> initial_signs(const LambdaMax& lm, const Vector& gradient,
                                         const Vector& d, double tol = 1e-8)
{
    auto side = [&](int j) {
        const double c = gradient[j] + d[j] * lm.mu;
        const double scale = std::max(1.0, lm.lambda);
        if (std::abs(c - lm.lambda) <= tol * scale) return -1;
        if (std::abs(c + lm.lambda) <= tol * scale) return +1;
        throw InternalError("initial signs: no dual bound binds at index " + std::to_string(j));
    };
    const std::pair<int, int> bound{side(lm.upper_index), side(lm.lower_index)};
    if (bound != initial_signs(lm.upper_index, lm.lower_index, d)) {
        throw InternalError("initial signs: binding side disagrees with the sign rule");
    }
    return bound;
}

struct KktReport
{
    bool ok = false;
    Vector mu;                     // one feasible multiplier per group
    double worst_violation = 0;    // absolute, gradient units
    int worst_index = -1;
    double worst_constraint = 0;   // max_k |d_k'beta_k| / max(1, |beta_k|_1)
    double scale = 1;              // max(1, |grad L(0)|_inf)
};

/**
 * Checks stationarity of the active coordinates, the subgradient bound of the
 * inactive ones for some multiplier, and primal feasibility. A coefficient is
 * active iff it is exactly nonzero. The tolerance is relative to
 * max(1, |grad L(0)|_inf) for stationarity and to max(1, |beta_k|_1) for the
 * constraints.
 */
inline KktReport verify_kkt(const ProblemSpec& prob, const Vector& beta, double lambda,
                            double tol = 1e-8)
{
    const auto& g = prob.groups;
    const Vector grad = loss_gradient(prob, beta);
    KktReport rep;
    rep.scale = std::max(1.0, loss_gradient(prob, Vector::Zero(prob.p())).lpNorm<Eigen::Infinity>());
    rep.mu = Vector::Zero(g.n_groups());

    auto note = [&](double v, int j) {
        if (v > rep.worst_violation || rep.worst_index < 0) {
            rep.worst_violation = std::max(v, rep.worst_violation);
            rep.worst_index = j;
        }
    };

    for (int k = 0; k < g.n_groups(); ++k) {
        double num = 0, den = 0;
        for (int j = g.begin(k); j < g.end(k); ++j) {
            if (beta[j] != 0 && !g.is_free(j)) {
                num += g.d(j) * (grad[j] + lambda * sign_of(beta[j]));
                den += g.d(j) * g.d(j);
            }
        }
        double mu;
        if (den > 0) {
            mu = -num / den;
        } else {
            mu = dual_feasible_interval(grad, lambda, g, k).midpoint();
        }
        rep.mu[k] = mu;
        for (int j = g.begin(k); j < g.end(k); ++j) {
            const double c = grad[j] + g.d(j) * mu;
            if (beta[j] != 0) {
                note(std::abs(c + lambda * sign_of(beta[j])), j);
            } else {
                note(std::max(0.0, std::abs(c) - lambda), j);
            }
        }
        const double res = std::abs(g.constraint_residuals(beta)[k]);
        const double l1 = beta.segment(g.begin(k), g.group_size(k)).lpNorm<1>();
        rep.worst_constraint = std::max(rep.worst_constraint, res / std::max(1.0, l1));
    }
    rep.ok = rep.worst_violation <= tol * rep.scale && rep.worst_constraint <= tol;
    return rep;
}

} // namespace comlasso
