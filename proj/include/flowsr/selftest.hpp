#pragma once

#include <functional>
#include <string>
#include <vector>

#include "flowsr/graph.hpp"
#include "flowsr/model.hpp"

namespace flowsr {

// Records a scalar loss for the given model with trainable weights under the
// "model" prefix; one builder serves both the analytic gradient and the
// finite-difference probe.
using LossBuilder = std::function<Graph::NodeId(Graph&, const VelocityModel&)>;

double loss_value(const VelocityModel& model, const LossBuilder& builder);
GradMap loss_gradients(const VelocityModel& model, const LossBuilder& builder);
// Central differences with step h on every parameter entry.
GradMap fd_gradients(const VelocityModel& model, const LossBuilder& builder, double h);
// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
double max_rel_error(const GradMap& a, const GradMap& b, double floor = 1e-6);

// Fills every parameter (output projection included) with scaled normals so
// battery losses are generic; EMA mirrors the parameters.
void randomize_params(VelocityModel& model, std::uint64_t seed, double stddev = 0.3);

struct CheckLine {
    std::string name;
    bool pass = false;
    std::string detail;
};

// Batteries behind `check --suite ...`; each line covers one operator/case.
std::vector<CheckLine> check_grad_battery();
std::vector<CheckLine> check_adjoint_battery();
std::vector<CheckLine> check_solver_order_battery();
std::vector<CheckLine> check_oracle_battery();

bool all_pass(const std::vector<CheckLine>& lines);

// Least-squares slope of log(err) vs log(h).
double loglog_slope(const std::vector<double>& h, const std::vector<double>& err);

}  // namespace flowsr
