#pragma once
#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>
#include <comlasso/error.hpp>

namespace comlasso {

// How the scalar argument r of the loss is formed from (y, eta = x'beta).
enum class ResidualKind
{
    residual,   // r = y - eta
    margin      // r = y * eta
};

// Constants of one quadratic piece: l(r) = a r^2 + b r + c.
struct Segment
{
    double a = 0;
    double b = 0;
    double c = 0;

    double value(double r) const { return (a * r + b) * r + c; }
    double slope(double r) const { return 2 * a * r + b; }
};

/**
 * Piecewise quadratic loss in r.
 *
 * knots t_1 < ... < t_m split the real line into m+1 segments. Segment s covers
 * (t_s, t_{s+1}] with t_0 = -inf and t_{m+1} = +inf, so a value exactly on a knot
 * belongs to the segment on its left.
 */
class LossSpec
{
public:
    LossSpec() : LossSpec({}, {Segment{0.5, 0, 0}}, ResidualKind::residual) {}

    LossSpec(std::vector<double> knots, std::vector<Segment> segments, ResidualKind kind)
        : knots_(std::move(knots)), segments_(std::move(segments)), kind_(kind)
    {
        validate();
    }

    const std::vector<double>& knots() const { return knots_; }
    const std::vector<Segment>& segments() const { return segments_; }
    ResidualKind kind() const { return kind_; }
    std::size_t n_segments() const { return segments_.size(); }

    double residual(double y, double eta) const
    {
        return kind_ == ResidualKind::residual ? y - eta : y * eta;
    }

    // d r / d eta at a given y.
    double residual_slope(double y) const
    {
        return kind_ == ResidualKind::residual ? -1.0 : y;
    }

    int segment_of(double r) const
    {
        auto it = std::lower_bound(knots_.begin(), knots_.end(), r);
        return static_cast<int>(it - knots_.begin());
    }

    // Knot bounding segment s from below / above (+-inf when unbounded).
    double lower_knot(int s) const
    {
        return s == 0 ? -INFINITY : knots_[s - 1];
    }
    double upper_knot(int s) const
    {
        return s == static_cast<int>(knots_.size()) ? INFINITY : knots_[s];
    }

    double value_r(double r) const { return segments_[segment_of(r)].value(r); }

    double max_curvature() const
    {
        double m = 0;
        for (const auto& s : segments_) m = std::max(m, s.a);
        return m;
    }

private:
    void validate() const
    {
        if (segments_.size() != knots_.size() + 1) {
            throw InputError("loss: need exactly one more segment than knots");
        }
        for (std::size_t i = 1; i < knots_.size(); ++i) {
            if (!(knots_[i - 1] < knots_[i])) {
                throw InputError("loss: knots must be strictly increasing");
            }
        }
        for (const auto& s : segments_) {
            if (!std::isfinite(s.a) || !std::isfinite(s.b) || !std::isfinite(s.c)) {
                throw InputError("loss: non-finite segment constant");
            }
            if (s.a < 0) throw InputError("loss: negative curvature segment");
        }
        for (std::size_t i = 0; i < knots_.size(); ++i) {
            const double t = knots_[i];
            const auto& left = segments_[i];
            const auto& right = segments_[i + 1];
            const double scale = std::max(1.0, std::abs(left.value(t)));
            if (std::abs(left.value(t) - right.value(t)) > 1e-9 * scale) {
                throw InputError("loss: discontinuous at knot " + std::to_string(t));
            }
            if (left.slope(t) > right.slope(t) + 1e-9 * std::max(1.0, std::abs(left.slope(t)))) {
                throw InputError("loss: not convex at knot " + std::to_string(t));
            }
        }
    }

    std::vector<double> knots_;
    std::vector<Segment> segments_;
    ResidualKind kind_;
};

inline constexpr std::string_view builtin_loss_names[] = {
    "quadratic", "asymmetric-l2", "huber-regression", "squared-hinge", "huber-hinge"};

/**
 * Segment tables of the built-in losses.
 *
 *   quadratic          r^2/2
 *   asymmetric-l2      (1-h) r^2/2 for r <= 0, h r^2/2 otherwise, h in (0,1)
 *   huber-regression   r^2/2 for |r| <= h, h|r| - h^2/2 otherwise, h > 0
 *   squared-hinge      max(0, 1+gamma-r)^2/2 (gamma = 0 is the plain hinge knot)
 *   huber-hinge        max(0,1-r)^2/2 for r >= h, -(1-h) r + (1-h^2)/2 otherwise, h < 1
 *
 * The first three use residuals, the last two margins.
 */
inline LossSpec make_builtin_loss(std::string_view name,
                                  std::optional<double> h = std::nullopt,
                                  std::optional<double> gamma = std::nullopt)
{
    auto need = [&](double fallback) { return h.value_or(fallback); };
    if (gamma && name != "squared-hinge") {
        throw InputError("loss: gamma only applies to squared-hinge");
    }
    if (name == "quadratic") {
        return LossSpec({}, {Segment{0.5, 0, 0}}, ResidualKind::residual);
    }
    if (name == "asymmetric-l2") {
        const double t = need(0.5);
        if (!(t > 0 && t < 1)) throw InputError("loss: asymmetric-l2 needs h in (0,1)");
        return LossSpec({0.0}, {Segment{(1 - t) / 2, 0, 0}, Segment{t / 2, 0, 0}},
                        ResidualKind::residual);
    }
    if (name == "huber-regression") {
        const double t = need(1.0);
        if (!(t > 0) || !std::isfinite(t)) throw InputError("loss: huber-regression needs h > 0");
        return LossSpec({-t, t},
                        {Segment{0, -t, -t * t / 2}, Segment{0.5, 0, 0}, Segment{0, t, -t * t / 2}},
                        ResidualKind::residual);
    }
    if (name == "squared-hinge") {
        if (h) throw InputError("loss: squared-hinge takes no h parameter");
        const double k = 1 + gamma.value_or(0.0);
        if (!std::isfinite(k)) throw InputError("loss: gamma must be finite");
        return LossSpec({k}, {Segment{0.5, -k, k * k / 2}, Segment{0, 0, 0}},
                        ResidualKind::margin);
    }
    if (name == "huber-hinge") {
        const double t = need(0.0);
        if (!(t < 1) || !std::isfinite(t)) throw InputError("loss: huber-hinge needs h < 1");
        return LossSpec({t, 1.0},
                        {Segment{0, t - 1, (1 - t * t) / 2}, Segment{0.5, -1, 0.5}, Segment{0, 0, 0}},
                        ResidualKind::margin);
    }
    throw InputError("loss: unknown loss '" + std::string(name) + "'");
}

inline double loss_value(const LossSpec& loss, double y, double eta)
{
    return loss.value_r(loss.residual(y, eta));
}

// d l / d eta; used by tests and the oracle, independent of any path bookkeeping.
inline double loss_derivative(const LossSpec& loss, double y, double eta)
{
    const double r = loss.residual(y, eta);
    return loss.segments()[loss.segment_of(r)].slope(r) * loss.residual_slope(y);
}

} // namespace comlasso
