#pragma once
#include <cmath>
#include <limits>
#include <string>
#include <string_view>
#include <vector>
#include <comlasso/problem.hpp>

namespace comlasso {

enum class PathEvent
{
    init,
    sign_drop,
    knot_hit,
    group_activate,
    coeff_activate,
    terminate
};

enum class PathStatus
{
    completed,
    degenerate_kkt,
    max_kinks_reached
};

inline std::string_view to_string(PathEvent e)
{
    switch (e) {
        case PathEvent::init: return "init";
        case PathEvent::sign_drop: return "sign-drop";
        case PathEvent::knot_hit: return "knot-hit";
        case PathEvent::group_activate: return "group-activate";
        case PathEvent::coeff_activate: return "coeff-activate";
        case PathEvent::terminate: return "terminate";
    }
    return "?";
}

inline PathEvent parse_event(std::string_view s)
{
    for (auto e : {PathEvent::init, PathEvent::sign_drop, PathEvent::knot_hit,
                   PathEvent::group_activate, PathEvent::coeff_activate, PathEvent::terminate}) {
        if (to_string(e) == s) return e;
    }
    throw InputError("unknown path event '" + std::string(s) + "'");
}

inline std::string_view to_string(PathStatus s)
{
    switch (s) {
        case PathStatus::completed: return "completed";
        case PathStatus::degenerate_kkt: return "degenerate-kkt";
        case PathStatus::max_kinks_reached: return "max-kinks-reached";
    }
    return "?";
}

/**
 * Mutable state of the homotopy at the current lambda.
 *
 * mu holds one multiplier per group; only entries of active groups are
 * meaningful (inactive groups have a feasible interval, not a point).
 */
struct PathState
{
    double lambda = 0;
    Vector beta;
    Vector mu;
    std::vector<int> active;            // sorted coefficient indices
    std::vector<char> group_active;     // per group
    std::vector<int> signs;             // per coefficient, 0 when inactive
    std::vector<int> segment_index;     // per observation

    bool is_active(int j) const { return signs[j] != 0; }
};

struct Kink
{
    double lambda = 0;
    Vector beta;
    Vector mu;          // NaN for groups outside the active group set
    PathEvent event = PathEvent::init;
};

struct SolutionPath
{
    std::vector<Kink> kinks;
    PathStatus status = PathStatus::completed;
    std::string message;   // why the path stopped early, if it did

    bool empty() const { return kinks.empty(); }
    std::size_t size() const { return kinks.size(); }

    double lambda_max() const { return kinks.empty() ? 0.0 : kinks.front().lambda; }

    // Exact path value at lambda: affine between kinks, zero above lambda_max,
    // frozen at the last kink below the reached range.
    Vector beta_at(double lambda) const
    {
        if (kinks.empty()) return {};
        if (lambda >= kinks.front().lambda) return Vector::Zero(kinks.front().beta.size());
        for (std::size_t t = 1; t < kinks.size(); ++t) {
            const auto& hi = kinks[t - 1];
            const auto& lo = kinks[t];
            if (lambda >= lo.lambda) {
                const double w = (hi.lambda - lambda) / (hi.lambda - lo.lambda);
                return (1 - w) * hi.beta + w * lo.beta;
            }
        }
        return kinks.back().beta;
    }
};

} // namespace comlasso
