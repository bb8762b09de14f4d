#pragma once

// Softmax sensitivity analysis: Jacobians, Frobenius norms, the exact
// uniform-logit closed form, and empirical output-sensitivity estimation.

#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "lipreg/error.hpp"
#include "lipreg/rng.hpp"
#include "lipreg/tensor.hpp"

namespace lipreg {

// J[i][j] = (1/tau) * p_i (delta_ij - p_j). At tau = 1 this is the standard
// softmax Jacobian; the 1/tau factor is what the chain rule gives for
// temperature-scaled logits.
inline Tensor softmax_jacobian(const std::vector<double>& p, double tau = 1.0) {
    if (tau <= 0.0) throw ArgumentError("softmax_jacobian: tau must be positive");
    const std::size_t n = p.size();
    Tensor j(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
            const double delta = (i == k) ? 1.0 : 0.0;
            j(i, k) = p[i] * (delta - p[k]) / tau;
        }
    }
    return j;
}

inline double jacobian_frobenius_norm(const Tensor& j) {
    if (j.rows() != j.cols()) throw ArgumentError("jacobian_frobenius_norm: not square");
    return j.frobenius_norm();
}

struct UniformLogitNorm {
    double exact = 0.0;          // sqrt(N-1)/N at the uniform simplex point
    double approximation = 0.0;  // 1/sqrt(N), the large-N simplification
};

inline UniformLogitNorm uniform_logit_norm(std::size_t n) {
    if (n == 0) throw ArgumentError("uniform_logit_norm: N must be >= 1");
    UniformLogitNorm out;
    out.exact = std::sqrt(static_cast<double>(n - 1)) / static_cast<double>(n);
    out.approximation = 1.0 / std::sqrt(static_cast<double>(n));
    return out;
}

// A differentiable map probed for sensitivity: fills logits f and normalized
// probabilities p for a given input x.
using SensitivityForward =
    std::function<void(const std::vector<double>&, std::vector<double>&, std::vector<double>&)>;

using InputSampler = std::function<std::vector<double>(Rng&)>;

struct EmpiricalSensitivity {
    double lipschitz_logits = 0.0;  // max ||f(x)-f(y)|| / ||x-y|| over sampled pairs
    double lipschitz_probs = 0.0;   // same for p; both are sampled lower bounds
    std::size_t n_pairs = 0;
};

// Sup-ratio estimator over n_pairs (x, x + delta) pairs with small Gaussian
// delta. Sampled maxima are lower bounds on the true constants.
inline EmpiricalSensitivity empirical_output_sensitivity(const SensitivityForward& forward,
                                                         const InputSampler& sampler,
                                                         std::size_t n_pairs,
                                                         std::uint64_t seed,
                                                         double delta_std = 1e-4) {
    if (n_pairs == 0) throw ArgumentError("empirical_output_sensitivity: n_pairs must be >= 1");
    Rng rng(seed);
    EmpiricalSensitivity out;
    out.n_pairs = n_pairs;
    std::vector<double> fx, px, fy, py;
    for (std::size_t i = 0; i < n_pairs; ++i) {
        std::vector<double> x = sampler(rng);
        std::vector<double> y = x;
        double dist2 = 0.0;
        for (double& v : y) {
            const double d = rng.normal(0.0, delta_std);
            v += d;
            dist2 += d * d;
        }
        const double dist = std::sqrt(dist2);
        if (dist == 0.0) continue;
        forward(x, fx, px);
        forward(y, fy, py);
        double df2 = 0.0, dp2 = 0.0;
        for (std::size_t k = 0; k < fx.size(); ++k) {
            df2 += (fx[k] - fy[k]) * (fx[k] - fy[k]);
            dp2 += (px[k] - py[k]) * (px[k] - py[k]);
        }
        out.lipschitz_logits = std::max(out.lipschitz_logits, std::sqrt(df2) / dist);
        out.lipschitz_probs = std::max(out.lipschitz_probs, std::sqrt(dp2) / dist);
    }
    return out;
}

struct SensitivityReport {
    std::size_t bandwidth = 0;  // N
    double tau = 1.0;
    double jacobian_frobenius_at_uniform = 0.0;
    double closed_form = 0.0;   // sqrt(N-1)/N
    double approximation = 0.0; // 1/sqrt(N)
    double empirical_lp = 0.0;
    double empirical_lf = 0.0;
    double bound_rhs = 0.0;     // empirical_lf / sqrt(N)
    double slack = 0.05;
    std::size_t n_pairs = 0;
    std::uint64_t seed = 0;
    bool satisfied = false;     // empirical_lp <= bound_rhs * (1 + slack)
};

inline SensitivityReport make_sensitivity_report(std::size_t bandwidth, double tau,
                                                 const EmpiricalSensitivity& emp,
                                                 std::uint64_t seed, double slack = 0.05) {
    SensitivityReport r;
    r.bandwidth = bandwidth;
    r.tau = tau;
    const std::vector<double> uniform(bandwidth, 1.0 / static_cast<double>(bandwidth));
    r.jacobian_frobenius_at_uniform = jacobian_frobenius_norm(softmax_jacobian(uniform, tau));
    const auto norm = uniform_logit_norm(bandwidth);
    r.closed_form = norm.exact;
    r.approximation = norm.approximation;
    r.empirical_lp = emp.lipschitz_probs;
    r.empirical_lf = emp.lipschitz_logits;
    r.bound_rhs = emp.lipschitz_logits / std::sqrt(static_cast<double>(bandwidth));
    r.slack = slack;
    r.n_pairs = emp.n_pairs;
    r.seed = seed;
    r.satisfied = r.empirical_lp <= r.bound_rhs * (1.0 + slack);
    return r;
}

// One JSON-lines record; field names fixed by the report definition.
inline std::string sensitivity_report_json(const SensitivityReport& r) {
    std::ostringstream os;
    os.precision(17);
    os << "{\"N\":" << r.bandwidth << ",\"tau\":" << r.tau
       << ",\"jacobian_frobenius_at_uniform\":" << r.jacobian_frobenius_at_uniform
       << ",\"closed_form\":" << r.closed_form
       << ",\"approximation\":" << r.approximation
       << ",\"empirical_Lp\":" << r.empirical_lp
       << ",\"empirical_Lf\":" << r.empirical_lf
       << ",\"bound_rhs\":" << r.bound_rhs
       << ",\"slack\":" << r.slack
       << ",\"n_pairs\":" << r.n_pairs
       << ",\"seed\":" << r.seed
       << ",\"satisfied\":" << (r.satisfied ? "true" : "false") << "}";
    return os.str();
}

}  // namespace lipreg
