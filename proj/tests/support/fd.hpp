#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

// Central-difference oracle for the unit tests; kept separate from the
// library's own gradient suite.
namespace testsupport {

inline double rel_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) /
           std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

// Worst relative error of d(objective)/d(values[i]) vs analytic[i].
inline double fd_check(std::vector<double>& values, const std::vector<double>& analytic,
                       const std::function<double()>& objective, double step = 1e-5) {
    double worst = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        values[i] = saved + step;
        const double up = objective();
        values[i] = saved - step;
        const double down = objective();
        values[i] = saved;
        worst = std::max(worst, rel_err(analytic[i], (up - down) / (2.0 * step)));
    }
    return worst;
}

}  // namespace testsupport
