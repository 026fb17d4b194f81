#pragma once
#include <cmath>
#include <numeric>
#include <string>
#include <vector>
#include <Eigen/Dense>
#include <comlasso/error.hpp>
#include <comlasso/loss.hpp>

namespace comlasso {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

enum class Task
{
    regression,
    classification
};

/**
 * Consecutive partition of the p coefficients into K groups together with the
 * constraint vector d (d_k'beta_k = 0 for every group k).
 *
 * Indices with d_j == 0 are penalized but unconstrained ("free").
 */
class GroupStructure
{
public:
    GroupStructure() = default;

    GroupStructure(std::vector<int> sizes, Vector d)
        : sizes_(std::move(sizes)), d_(std::move(d))
    {
        if (sizes_.empty()) throw InputError("groups: at least one group required");
        begins_.reserve(sizes_.size() + 1);
        begins_.push_back(0);
        for (int s : sizes_) {
            if (s <= 0) throw InputError("groups: group sizes must be positive");
            begins_.push_back(begins_.back() + s);
        }
        if (begins_.back() != d_.size()) {
            throw InputError("groups: sizes sum to " + std::to_string(begins_.back()) +
                             " but d has length " + std::to_string(d_.size()));
        }
        membership_.resize(d_.size());
        for (int k = 0; k < n_groups(); ++k) {
            int constrained = 0;
            for (int j = begin(k); j < end(k); ++j) {
                membership_[j] = k;
                if (!std::isfinite(d_[j])) throw InputError("groups: non-finite d");
                constrained += d_[j] != 0;
            }
            if (constrained < 2) {
                throw InputError("groups: group " + std::to_string(k + 1) +
                                 " needs at least two indices with nonzero d");
            }
        }
    }

    // Single zero-sum group over p coefficients.
    static GroupStructure single(int p) { return {{p}, Vector::Ones(p)}; }

    // Zero-sum constraint per group.
    static GroupStructure zero_sum(std::vector<int> sizes)
    {
        const int p = std::accumulate(sizes.begin(), sizes.end(), 0);
        return {std::move(sizes), Vector::Ones(p)};
    }

    int n_groups() const { return static_cast<int>(sizes_.size()); }
    int size() const { return static_cast<int>(d_.size()); }
    int begin(int k) const { return begins_[k]; }
    int end(int k) const { return begins_[k + 1]; }
    int group_size(int k) const { return sizes_[k]; }
    int group_of(int j) const { return membership_[j]; }
    const std::vector<int>& sizes() const { return sizes_; }
    const Vector& d() const { return d_; }
    double d(int j) const { return d_[j]; }
    bool is_free(int j) const { return d_[j] == 0; }

    // d_k' beta_k for every group.
    Vector constraint_residuals(const Vector& beta) const
    {
        Vector out(n_groups());
        for (int k = 0; k < n_groups(); ++k) {
            out[k] = d_.segment(begin(k), sizes_[k]).dot(beta.segment(begin(k), sizes_[k]));
        }
        return out;
    }

private:
    std::vector<int> sizes_;
    std::vector<int> begins_;
    std::vector<int> membership_;
    Vector d_;
};

/**
 * Constrained l1 problem: minimize sum_i l(y_i, x_i'beta) + lambda |beta|_1
 * subject to d_k'beta_k = 0. No intercept.
 */
struct ProblemSpec
{
    Matrix X;
    Vector y;
    LossSpec loss;
    GroupStructure groups;
    Task task = Task::regression;

    ProblemSpec() = default;

    ProblemSpec(Matrix X_, Vector y_, LossSpec loss_, GroupStructure groups_,
                Task task_ = Task::regression)
        : X(std::move(X_)), y(std::move(y_)), loss(std::move(loss_)),
          groups(std::move(groups_)), task(task_)
    {
        validate();
    }

    Index n() const { return X.rows(); }
    Index p() const { return X.cols(); }

    void validate() const
    {
        if (X.rows() != y.size()) {
            throw InputError("problem: X has " + std::to_string(X.rows()) +
                             " rows but y has " + std::to_string(y.size()) + " entries");
        }
        if (X.cols() != groups.size()) {
            throw InputError("problem: X has " + std::to_string(X.cols()) +
                             " columns but groups cover " + std::to_string(groups.size()));
        }
        if (!X.allFinite() || !y.allFinite()) throw InputError("problem: non-finite entries");
        if (task == Task::classification) {
            for (Index i = 0; i < y.size(); ++i) {
                if (y[i] != 1.0 && y[i] != -1.0) {
                    throw InputError("problem: classification label at row " +
                                     std::to_string(i + 1) + " is not -1 or +1");
                }
            }
        }
        if ((task == Task::classification) != (loss.kind() == ResidualKind::margin)) {
            throw InputError("problem: margin losses require classification and vice versa");
        }
    }
};

// Per-observation ingredients of the gradient and Hessian at a linear predictor.
struct LossDerivatives
{
    Vector curvature;   // 2 a(r_i)
    Vector eta_grad;    // d l_i / d eta_i
};

// Derivatives with segments fixed by `segment_index` (the path's bookkeeping).
inline LossDerivatives loss_gradient_weights(const ProblemSpec& prob, const Vector& eta,
                                             const std::vector<int>& segment_index)
{
    const auto& segs = prob.loss.segments();
    LossDerivatives out{Vector(prob.n()), Vector(prob.n())};
    for (Index i = 0; i < prob.n(); ++i) {
        const auto& s = segs[segment_index[i]];
        const double r = prob.loss.residual(prob.y[i], eta[i]);
        out.curvature[i] = 2 * s.a;
        out.eta_grad[i] = s.slope(r) * prob.loss.residual_slope(prob.y[i]);
    }
    return out;
}

// Segment of each observation located from its residual (left-closed convention).
inline std::vector<int> locate_segments(const ProblemSpec& prob, const Vector& eta)
{
    std::vector<int> seg(prob.n());
    for (Index i = 0; i < prob.n(); ++i) {
        seg[i] = prob.loss.segment_of(prob.loss.residual(prob.y[i], eta[i]));
    }
    return seg;
}

inline LossDerivatives loss_gradient_weights(const ProblemSpec& prob, const Vector& beta)
{
    const Vector eta = prob.X * beta;
    return loss_gradient_weights(prob, eta, locate_segments(prob, eta));
}

inline Vector loss_gradient(const ProblemSpec& prob, const Vector& beta)
{
    return prob.X.transpose() * loss_gradient_weights(prob, beta).eta_grad;
}

inline double loss_total(const ProblemSpec& prob, const Vector& beta)
{
    const Vector eta = prob.X * beta;
    double s = 0;
    for (Index i = 0; i < prob.n(); ++i) s += loss_value(prob.loss, prob.y[i], eta[i]);
    return s;
}

inline double objective(const ProblemSpec& prob, const Vector& beta, double lambda)
{
    return loss_total(prob, beta) + lambda * beta.lpNorm<1>();
}

} // namespace comlasso
