#pragma once

// Direct double-sum form of generalised advantage estimation:
//   A_t = sum_{l >= 0} (gamma * lambda)^l * delta_{t+l}
// truncated after the first terminal index at or beyond t.

#include <cmath>
#include <span>
#include <vector>

namespace catr::oracle {

inline std::vector<double> gae_double_sum(std::span<const double> r, std::span<const double> v,
                                         const std::vector<bool>& done, double bootstrap, double gamma,
                                         double lambda) {
    const std::size_t n = r.size();
    std::vector<double> delta(n);
    for (std::size_t t = 0; t < n; ++t) {
        const double next = done[t] ? 0.0 : (t + 1 < n ? v[t + 1] : bootstrap);
        delta[t] = r[t] + gamma * next - v[t];
    }
    std::vector<double> adv(n, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        double sum = 0.0;
        for (std::size_t l = 0; t + l < n; ++l) {
            sum += std::pow(gamma * lambda, static_cast<double>(l)) * delta[t + l];
            if (done[t + l]) {
                break;
            }
        }
        adv[t] = sum;
    }
    return adv;
}

}  // namespace catr::oracle
