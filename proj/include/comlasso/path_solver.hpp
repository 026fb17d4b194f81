#pragma once
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>
#include <Eigen/Dense>
#include <comlasso/kkt.hpp>
#include <comlasso/path.hpp>
#include <comlasso/problem.hpp>

namespace comlasso {

struct PathOptions
{
    int max_kinks = -1;              // <= 0 selects 10 min(n,p) + 100
    double lambda_min = 0;
    double tie_tol = 1e-12;          // step ties, relative to lambda_max
    double terminal_tol = 1e-9;      // events this close to lambda_min (relative to lambda_max) end the path
    double zero_tol = 1e-12;         // |beta_j| below this times max(1, |beta|_inf) is zero
    double codrop_tol = 1e-8;        // lone constrained coefficient left in a group
    double rank_tol = 1e-11;         // pivot threshold of the direction solve
    bool ridge_diagnostic = false;   // on a singular system, report conditioning with a tiny ridge
};

/**
 * Velocity of the path per unit decrease of lambda: beta_A moves by b, the
 * multipliers of the active groups by m.
 */
struct Direction
{
    std::vector<int> active;   // coefficient index of each entry of b
    std::vector<int> groups;   // group index of each entry of m
    Vector b;
    Vector m;
    bool solve_ok = false;
    double rcond = 0;          // reciprocal pivot ratio of the KKT factorization
};

namespace detail {

inline std::vector<int> active_group_list(const PathState& st)
{
    std::vector<int> out;
    for (int k = 0; k < static_cast<int>(st.group_active.size()); ++k) {
        if (st.group_active[k]) out.push_back(k);
    }
    return out;
}

inline Matrix direction_matrix(const ProblemSpec& prob, const PathState& st,
                               const std::vector<int>& groups, const Vector& curvature)
{
    const auto na = static_cast<Index>(st.active.size());
    const auto nk = static_cast<Index>(groups.size());
    Matrix XA(prob.n(), na);
    for (Index a = 0; a < na; ++a) XA.col(a) = prob.X.col(st.active[a]);
    Matrix M = Matrix::Zero(na + nk, na + nk);
    M.topLeftCorner(na, na) = XA.transpose() * curvature.asDiagonal() * XA;
    for (Index a = 0; a < na; ++a) {
        const int j = st.active[a];
        if (prob.groups.is_free(j)) continue;
        const auto it = std::find(groups.begin(), groups.end(), prob.groups.group_of(j));
        if (it == groups.end()) continue;
        const Index c = na + (it - groups.begin());
        M(a, c) = prob.groups.d(j);
        M(c, a) = prob.groups.d(j);
    }
    return M;
}

} // namespace detail

inline Vector curvature_weights(const ProblemSpec& prob, const PathState& st)
{
    Vector w(prob.n());
    for (Index i = 0; i < prob.n(); ++i) w[i] = 2 * prob.loss.segments()[st.segment_index[i]].a;
    return w;
}

/**
 * Solves
 *
 *     [ H      D_A ] [ b ]   [ sign(beta_A) ]
 *     [ D_A'   0   ] [ m ] = [      0       ],   H = sum_i 2 a(r_i) x_iA x_iA'
 *
 * where D_A holds d_j of the constrained active coefficients against their
 * (active) group. A numerically singular system sets solve_ok = false.
 */
inline Direction compute_direction(const ProblemSpec& prob, const PathState& st,
                                   const PathOptions& opt = {})
{
    Direction dir;
    dir.active = st.active;
    dir.groups = detail::active_group_list(st);
    const auto na = static_cast<Index>(dir.active.size());
    const auto nk = static_cast<Index>(dir.groups.size());
    if (na == 0) return dir;

    const Matrix M = detail::direction_matrix(prob, st, dir.groups, curvature_weights(prob, st));
    Vector rhs = Vector::Zero(na + nk);
    for (Index a = 0; a < na; ++a) rhs[a] = st.signs[dir.active[a]];

    Eigen::FullPivLU<Matrix> lu(M);
    lu.setThreshold(opt.rank_tol);
    const double maxpiv = lu.maxPivot();
    const double minpiv = maxpiv > 0 ? lu.matrixLU().diagonal().cwiseAbs().minCoeff() : 0;
    dir.rcond = maxpiv > 0 ? minpiv / maxpiv : 0;
    if (!lu.isInvertible()) return dir;

    const Vector sol = lu.solve(rhs);
    const double resid = (M * sol - rhs).lpNorm<Eigen::Infinity>();
    if (!sol.allFinite() || resid > 1e-8 * std::max(1.0, sol.lpNorm<Eigen::Infinity>())) {
        return dir;
    }
    dir.b = sol.head(na);
    dir.m = sol.tail(nk);
    dir.solve_ok = true;
    return dir;
}

// Per-unit-delta rates shared by the step rules.
struct StepRates
{
    Vector gradient;       // grad L(beta) at the current state
    Vector eta_slope;      // d(X beta)/d delta
    Vector gradient_slope; // d grad L / d delta = X' W X_A b
};

inline StepRates step_rates(const ProblemSpec& prob, const PathState& st, const Direction& dir)
{
    StepRates r;
    const Vector eta = prob.X * st.beta;
    const auto der = loss_gradient_weights(prob, eta, st.segment_index);
    r.gradient = prob.X.transpose() * der.eta_grad;
    r.eta_slope = Vector::Zero(prob.n());
    for (std::size_t a = 0; a < dir.active.size(); ++a) {
        r.eta_slope += dir.b[static_cast<Index>(a)] * prob.X.col(dir.active[a]);
    }
    r.gradient_slope = prob.X.transpose() * der.curvature.cwiseProduct(r.eta_slope);
    return r;
}

inline double step_termination(const PathState& st, double lambda_min = 0)
{
    return std::max(0.0, st.lambda - lambda_min);
}

struct SignDropStep
{
    double delta = INFINITY;
    std::vector<int> indices;
};

// Smallest delta at which an active coefficient reaches zero; ties within tie_abs.
inline SignDropStep step_sign_drop(const PathState& st, const Direction& dir, double tie_abs = 0)
{
    std::vector<std::pair<double, int>> roots;
    for (std::size_t a = 0; a < dir.active.size(); ++a) {
        const int j = dir.active[a];
        const double v = dir.b[static_cast<Index>(a)];
        if (v * st.signs[j] < 0) roots.emplace_back(std::max(0.0, -st.beta[j] / v), j);
    }
    SignDropStep out;
    for (const auto& [d, j] : roots) out.delta = std::min(out.delta, d);
    for (const auto& [d, j] : roots) {
        if (d <= out.delta + tie_abs) out.indices.push_back(j);
    }
    std::sort(out.indices.begin(), out.indices.end());
    return out;
}

struct KnotStep
{
    double delta = INFINITY;
    std::vector<int> observations;
    std::vector<int> new_segments;
};

/**
 * Smallest delta at which a residual (or margin) reaches a knot bounding its
 * current segment. r_i moves with slope -x_i'b for residuals, y_i x_i'b for margins.
 */
inline KnotStep step_knot_hit(const ProblemSpec& prob, const PathState& st,
                              const Vector& eta, const Vector& eta_slope, double tie_abs = 0)
{
    struct Hit { double delta; int obs; int seg; };
    std::vector<Hit> hits;
    for (Index i = 0; i < prob.n(); ++i) {
        const double slope = prob.loss.residual_slope(prob.y[i]) * eta_slope[i];
        const double r = prob.loss.residual(prob.y[i], eta[i]);
        const int s = st.segment_index[i];
        if (slope > 0) {
            const double t = prob.loss.upper_knot(s);
            if (std::isfinite(t)) hits.push_back({std::max(0.0, (t - r) / slope), int(i), s + 1});
        } else if (slope < 0) {
            const double t = prob.loss.lower_knot(s);
            if (std::isfinite(t)) hits.push_back({std::max(0.0, (t - r) / slope), int(i), s - 1});
        }
    }
    KnotStep out;
    for (const auto& h : hits) out.delta = std::min(out.delta, h.delta);
    for (const auto& h : hits) {
        if (h.delta <= out.delta + tie_abs) {
            out.observations.push_back(h.obs);
            out.new_segments.push_back(h.seg);
        }
    }
    return out;
}

struct DualFeasibilityStep
{
    double delta = INFINITY;
    int group = -1;
    int upper_index = -1;
    int lower_index = -1;
    int upper_sign = 0;
    int lower_sign = 0;
    double mu = 0;   // multiplier of the activated group at lambda - delta
};

/**
 * Smallest delta at which the feasible multiplier interval of an inactive group
 * closes. Bounds are affine in delta:
 *
 *     lo_j(delta) = -(lambda - delta)/|d_j| - (g_j + delta v_j)/d_j
 *     hi_j(delta) =  (lambda - delta)/|d_j| - (g_j + delta v_j)/d_j
 *
 * and every ordered pair (u, l) of constrained indices gives one crossing of
 * hi_u and lo_l. Ties go to the lexicographically smallest (group, upper, lower).
 */
inline DualFeasibilityStep step_dual_feasibility(const ProblemSpec& prob, const PathState& st,
                                                 const Vector& gradient,
                                                 const Vector& gradient_slope,
                                                 double tie_abs = 0)
{
    const auto& g = prob.groups;
    DualFeasibilityStep out;
    const double lam = st.lambda;
    for (int k = 0; k < g.n_groups(); ++k) {
        if (st.group_active[k]) continue;
        for (int u = g.begin(k); u < g.end(k); ++u) {
            if (g.is_free(u)) continue;
            const double du = g.d(u);
            const double hi0 = dual_upper_bound(gradient[u], du, lam);
            const double hi_slope = -1 / std::abs(du) - gradient_slope[u] / du;
            for (int l = g.begin(k); l < g.end(k); ++l) {
                if (l == u || g.is_free(l)) continue;
                const double dl = g.d(l);
                const double lo0 = dual_lower_bound(gradient[l], dl, lam);
                const double lo_slope = 1 / std::abs(dl) - gradient_slope[l] / dl;
                const double gap0 = hi0 - lo0;
                const double slope = hi_slope - lo_slope;
                if (!(slope < 0)) continue;
                const double d = std::max(0.0, gap0) / -slope;
                if (d < out.delta - tie_abs) {
                    out.delta = d;
                    out.group = k;
                    out.upper_index = u;
                    out.lower_index = l;
                }
            }
        }
    }
    if (out.group >= 0) {
        const int u = out.upper_index;
        out.mu = dual_upper_bound(gradient[u] + out.delta * gradient_slope[u], g.d(u),
                                  lam - out.delta);
        std::tie(out.upper_sign, out.lower_sign) = initial_signs(u, out.lower_index, g.d());
    }
    return out;
}

struct StationarityStep
{
    double delta = INFINITY;
    std::vector<int> indices;
    std::vector<int> signs;
};

/**
 * Smallest delta at which an inactive coefficient of an active group (or an
 * unconstrained coefficient anywhere) reaches the boundary of
 * |grad_j + d_j mu_k| <= lambda - delta. Reaching +lambda activates it with
 * sign -1, reaching -lambda with sign +1.
 */
inline StationarityStep step_stationarity(const ProblemSpec& prob, const PathState& st,
                                          const Direction& dir, const Vector& gradient,
                                          const Vector& gradient_slope, double tie_abs = 0)
{
    const auto& g = prob.groups;
    Vector m_full = Vector::Zero(g.n_groups());
    for (std::size_t c = 0; c < dir.groups.size(); ++c) {
        m_full[dir.groups[c]] = dir.m[static_cast<Index>(c)];
    }
    struct Hit { double delta; int j; int sign; };
    std::vector<Hit> hits;
    const double lam = st.lambda;
    for (int j = 0; j < g.size(); ++j) {
        if (st.is_active(j)) continue;
        const int k = g.group_of(j);
        const bool free = g.is_free(j);
        if (!free && !st.group_active[k]) continue;
        const double c0 = gradient[j] + (free ? 0.0 : g.d(j) * st.mu[k]);
        const double cs = gradient_slope[j] + (free ? 0.0 : g.d(j) * m_full[k]);
        if (cs + 1 > 0) hits.push_back({std::max(0.0, lam - c0) / (cs + 1), j, -1});
        if (1 - cs > 0) hits.push_back({std::max(0.0, lam + c0) / (1 - cs), j, +1});
    }
    StationarityStep out;
    for (const auto& h : hits) out.delta = std::min(out.delta, h.delta);
    for (const auto& h : hits) {
        if (h.delta <= out.delta + tie_abs &&
            std::find(out.indices.begin(), out.indices.end(), h.j) == out.indices.end()) {
            out.indices.push_back(h.j);
            out.signs.push_back(h.sign);
        }
    }
    return out;
}

// Every candidate step of one iteration.
struct StepCandidates
{
    double termination = INFINITY;
    SignDropStep drop;
    KnotStep knot;
    DualFeasibilityStep dual;
    StationarityStep stationarity;

    double best() const
    {
        return std::min({termination, drop.delta, knot.delta, dual.delta, stationarity.delta});
    }
};

struct AdvanceResult
{
    PathEvent event = PathEvent::terminate;
    bool degenerate = false;
    std::string message;
};

inline void insert_active(PathState& st, int j, int sign)
{
    if (st.signs[j] != 0) return;
    st.signs[j] = sign;
    st.active.insert(std::lower_bound(st.active.begin(), st.active.end(), j), j);
}

inline void remove_active(PathState& st, int j)
{
    st.signs[j] = 0;
    st.beta[j] = 0;
    st.active.erase(std::remove(st.active.begin(), st.active.end(), j), st.active.end());
}

/**
 * Moves the state by delta along dir and applies every event whose candidate
 * lies within tie_abs of delta, in the order drops, knots, pair activation,
 * single activations. A group losing all but one constrained coefficient must
 * lose the last one too (the constraint forces it to zero), otherwise the state
 * is reported degenerate.
 */
inline AdvanceResult advance(const ProblemSpec& prob, PathState& st, const Direction& dir,
                             const StepCandidates& cand, double delta, double tie_abs,
                             const PathOptions& opt = {})
{
    const auto& g = prob.groups;
    for (std::size_t a = 0; a < dir.active.size(); ++a) {
        st.beta[dir.active[a]] += delta * dir.b[static_cast<Index>(a)];
    }
    for (std::size_t c = 0; c < dir.groups.size(); ++c) {
        st.mu[dir.groups[c]] += delta * dir.m[static_cast<Index>(c)];
    }
    st.lambda = std::max(0.0, st.lambda - delta);

    AdvanceResult res;
    bool first = true;
    auto mark = [&](PathEvent e) {
        if (first) res.event = e;
        first = false;
    };

    if (cand.drop.delta <= delta + tie_abs) {
        mark(PathEvent::sign_drop);
        for (int j : cand.drop.indices) remove_active(st, j);
    }
    const double zero = opt.zero_tol * std::max(1.0, st.beta.lpNorm<Eigen::Infinity>());
    for (int j : std::vector<int>(st.active)) {
        if (std::abs(st.beta[j]) < zero) {
            mark(PathEvent::sign_drop);
            remove_active(st, j);
        }
    }
    const double codrop = opt.codrop_tol * std::max(1.0, st.beta.lpNorm<Eigen::Infinity>());
    for (int k = 0; k < g.n_groups(); ++k) {
        if (!st.group_active[k]) continue;
        std::vector<int> members;
        for (int j = g.begin(k); j < g.end(k); ++j) {
            if (st.is_active(j) && !g.is_free(j)) members.push_back(j);
        }
        if (members.size() == 1) {
            if (std::abs(st.beta[members[0]]) > codrop) {
                res.degenerate = true;
                res.message = "group " + std::to_string(k + 1) +
                              " left with a single nonzero constrained coefficient";
                return res;
            }
            remove_active(st, members[0]);
            members.clear();
        }
        if (members.empty()) st.group_active[k] = 0;
    }

    if (cand.knot.delta <= delta + tie_abs) {
        mark(PathEvent::knot_hit);
        for (std::size_t t = 0; t < cand.knot.observations.size(); ++t) {
            st.segment_index[cand.knot.observations[t]] = cand.knot.new_segments[t];
        }
    }
    if (cand.dual.delta <= delta + tie_abs && cand.dual.group >= 0 &&
        !st.group_active[cand.dual.group]) {
        mark(PathEvent::group_activate);
        st.group_active[cand.dual.group] = 1;
        st.mu[cand.dual.group] = cand.dual.mu;
        insert_active(st, cand.dual.upper_index, cand.dual.upper_sign);
        insert_active(st, cand.dual.lower_index, cand.dual.lower_sign);
    }
    if (cand.stationarity.delta <= delta + tie_abs) {
        bool any = false;
        for (std::size_t t = 0; t < cand.stationarity.indices.size(); ++t) {
            const int j = cand.stationarity.indices[t];
            if (!g.is_free(j) && !st.group_active[g.group_of(j)]) continue;
            insert_active(st, j, cand.stationarity.signs[t]);
            any = true;
        }
        if (any) mark(PathEvent::coeff_activate);
    }
    return res;
}

// Counts consecutive zero-length steps; two in a row mean the active set is cycling.
class StallGuard
{
public:
    // Returns true when the path must stop.
    bool record(double delta, double tie_abs)
    {
        zero_steps_ = delta <= tie_abs ? zero_steps_ + 1 : 0;
        return zero_steps_ >= 2;
    }
    bool last_was_zero() const { return zero_steps_ > 0; }

private:
    int zero_steps_ = 0;
};

namespace detail {

inline std::string num(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

inline Kink make_kink(const PathState& st, PathEvent e)
{
    Kink k;
    k.lambda = st.lambda;
    k.beta = st.beta;
    k.mu = Vector::Constant(st.mu.size(), std::numeric_limits<double>::quiet_NaN());
    for (Index c = 0; c < st.mu.size(); ++c) {
        if (st.group_active[c]) k.mu[c] = st.mu[c];
    }
    k.event = e;
    return k;
}

} // namespace detail

/**
 * Traces the exact piecewise linear solution path from lambda_max down to
 * opt.lambda_min (default 0). A singular direction system or a stalled
 * iteration ends the path early with status degenerate_kkt; the kinks found up
 * to that point are still valid.
 */
inline SolutionPath run_path(const ProblemSpec& prob, const PathOptions& opt = {})
{
    const auto& g = prob.groups;
    const Index n = prob.n();
    const Index p = prob.p();
    const int max_kinks =
        opt.max_kinks > 0 ? opt.max_kinks : 10 * static_cast<int>(std::min(n, p)) + 100;

    SolutionPath path;
    const Vector grad0 = loss_gradient(prob, Vector::Zero(p));
    const LambdaMax lm = lambda_max(prob, grad0);

    PathState st;
    st.lambda = lm.trivial ? 0.0 : lm.lambda;
    st.beta = Vector::Zero(p);
    st.mu = Vector::Zero(g.n_groups());
    st.group_active.assign(g.n_groups(), 0);
    st.signs.assign(p, 0);
    st.segment_index = locate_segments(prob, Vector::Zero(n));

    if (!lm.trivial) {
        if (lm.free_index >= 0) {
            insert_active(st, lm.free_index, -sign_of(grad0[lm.free_index]));
        } else {
            const auto [su, sl] = initial_signs(lm, grad0, g.d());
            st.group_active[lm.group] = 1;
            st.mu[lm.group] = lm.mu;
            insert_active(st, lm.upper_index, su);
            insert_active(st, lm.lower_index, sl);
        }
    }
    path.kinks.push_back(detail::make_kink(st, PathEvent::init));
    if (lm.trivial || st.lambda <= opt.lambda_min) {
        path.status = PathStatus::completed;
        return path;
    }

    const double tie_abs = opt.tie_tol * lm.lambda;
    StallGuard stall;
    while (true) {
        if (static_cast<int>(path.kinks.size()) >= max_kinks) {
            path.status = PathStatus::max_kinks_reached;
            return path;
        }
        const Direction dir = compute_direction(prob, st, opt);
        if (!dir.solve_ok) {
            path.status = PathStatus::degenerate_kkt;
            path.message = "singular direction system at lambda " + detail::num(st.lambda) +
                           " with " + std::to_string(st.active.size()) + " active coefficients";
            if (opt.ridge_diagnostic) {
                const Matrix M = detail::direction_matrix(
                    prob, st, detail::active_group_list(st), curvature_weights(prob, st));
                Eigen::JacobiSVD<Matrix> svd(M);
                const auto& sv = svd.singularValues();
                path.message += "; singular values [" + detail::num(sv.minCoeff()) + ", " +
                                detail::num(sv.maxCoeff()) + "]";
            }
            return path;
        }
        const StepRates rates = step_rates(prob, st, dir);
        const Vector eta = prob.X * st.beta;

        StepCandidates cand;
        cand.termination = step_termination(st, opt.lambda_min);
        cand.drop = step_sign_drop(st, dir, tie_abs);
        cand.knot = step_knot_hit(prob, st, eta, rates.eta_slope, tie_abs);
        cand.dual = step_dual_feasibility(prob, st, rates.gradient, rates.gradient_slope, tie_abs);
        cand.stationarity = step_stationarity(prob, st, dir, rates.gradient,
                                              rates.gradient_slope, tie_abs);
        const double delta = cand.best();

        // Near lambda = 0 with p > n the inactive gradients shrink with lambda, so
        // their boundary crossings coincide with termination up to rounding.
        if (delta >= cand.termination - std::max(tie_abs, opt.terminal_tol * lm.lambda)) {
            for (std::size_t a = 0; a < dir.active.size(); ++a) {
                st.beta[dir.active[a]] += cand.termination * dir.b[static_cast<Index>(a)];
            }
            for (std::size_t c = 0; c < dir.groups.size(); ++c) {
                st.mu[dir.groups[c]] += cand.termination * dir.m[static_cast<Index>(c)];
            }
            st.lambda = opt.lambda_min;
            path.kinks.push_back(detail::make_kink(st, PathEvent::terminate));
            path.status = PathStatus::completed;
            return path;
        }

        const AdvanceResult res = advance(prob, st, dir, cand, delta, tie_abs, opt);
        if (res.degenerate) {
            path.status = PathStatus::degenerate_kkt;
            path.message = res.message;
            return path;
        }
        if (stall.record(delta, tie_abs)) {
            path.status = PathStatus::degenerate_kkt;
            path.message = "two consecutive zero-length steps at lambda " + detail::num(st.lambda);
            return path;
        }
        if (stall.last_was_zero()) continue;
        path.kinks.push_back(detail::make_kink(st, res.event));
    }
}

} // namespace comlasso
