#pragma once

#include <cstdint>
#include <functional>

#include "flowsr/rng.hpp"

namespace flowsr {

// Independent zero-mean Gaussian endpoints per dimension: x0 ~ N(0, sigma0^2),
// x1 ~ N(0, sigma1^2), linearly interpolated x_t = (1-t)x0 + t*x1.
struct GaussianFlowSpec {
    double sigma0 = 1.0;
    double sigma1 = 1.0;

    void validate() const;
};

// Slope of the optimal (conditional-expectation) velocity, which is linear in
// x: v*(x,t) = a(t) * x.
double gaussian_velocity_slope(const GaussianFlowSpec& spec, double t);

// Validated access to the analytic velocity: construction cross-checks the
// closed form against the Monte-Carlo estimator on a grid and refuses to
// produce values if they disagree beyond MC error.
class GaussianFlowOracle {
public:
    static GaussianFlowOracle make(const GaussianFlowSpec& spec, std::uint64_t seed = 2024);

    double velocity(double x, double t) const;
    double slope(double t) const { return gaussian_velocity_slope(spec_, t); }
    const GaussianFlowSpec& spec() const { return spec_; }

private:
    explicit GaussianFlowOracle(GaussianFlowSpec spec) : spec_(spec) {}
    GaussianFlowSpec spec_;
};

// Cross-check helper, exposed so a deliberately wrong formula can be shown to
// fail. Throws NumericError when |analytic - mc| > 3 standard errors anywhere
// on a 21-point grid at t in {0.1, 0.5, 0.9}.
void validate_gaussian_velocity(const std::function<double(double, double)>& analytic,
                                const GaussianFlowSpec& spec, std::uint64_t seed);

// One scalar coupling draw (x0, x1).
using ScalarCouplingSampler = std::function<void(Rng&, double& x0, double& x1)>;

struct McVelocityResult {
    double value = 0.0;
    double std_error = 0.0;
    double effective_samples = 0.0;
};

// Nadaraya-Watson estimate of E[x1 - x0 | x_t = x] with a Gaussian kernel of
// width `bandwidth`. Requires n >= 1e4 draws; an effective sample size below
// 30 raises NumericError.
McVelocityResult mc_velocity(double x, double t, const ScalarCouplingSampler& sampler,
                             std::int64_t n, double bandwidth, std::uint64_t seed);

// Exact flow map of dx/dt = a(t) x: x(t) = x0 * exp(integral_0^t a). The
// integral is evaluated by adaptive Simpson quadrature to ~1e-12.
using TimeCoefficientFn = std::function<double(double)>;
double linear_ode_solution(const TimeCoefficientFn& a, double x0, double t);
double integrate_adaptive(const TimeCoefficientFn& f, double lo, double hi, double tol = 1e-13);

}  // namespace flowsr
