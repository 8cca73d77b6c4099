#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowsr/degradation.hpp"
#include "flowsr/graph.hpp"
#include "flowsr/model.hpp"
#include "flowsr/solvers.hpp"
#include "flowsr/teacher.hpp"

namespace flowsr {

// Variants of the trajectory constraint, distinguished by where the detached
// branch sits:
//   Trajectory -- velocity-space target, everything but the s-branch detached;
//   Pinn       -- scaled finite-difference residual, both student branches live,
//                 only the teacher detached;
//   Boot       -- endpoint (x-space) parameterization with the lambda weight.
enum class DistillVariant { Trajectory, Pinn, Boot };
DistillVariant distill_variant_from_string(const std::string& s);
std::string to_string(DistillVariant v);

struct DistillConfig {
    double dt = 0.05;
    double lambda_align = 0.01;
    double lambda_bc = 0.1;
    DistillVariant variant = DistillVariant::Trajectory;
    SolverKind slope_kind = SolverKind::Midpoint;
    TimeRange t_range;  // sampled as U[t_min, min(t_max, 1 - dt)]
    int batch = 8;
    int iterations = 1000;
    double lr = 1e-4;
    int warmup = 1000;
    double ema_ratio = 0.9999;
    std::uint64_t seed = 0;

    void validate() const;
    double t_upper() const;  // min(t_max, 1 - dt)
};

// One-step prediction x0 + v_phi(x0, cond, t); t is the fidelity-realism dial.
Tensor student_one_step(const VelocityModel& student, const Tensor& x0, const Tensor* cond,
                        const std::vector<double>& ts, WeightKind weights = WeightKind::Ema);
// Implied intermediate state x0 + t * v_phi(x0, cond, t).
Tensor student_intermediate(const VelocityModel& student, const Tensor& x0, const Tensor* cond,
                            const std::vector<double>& ts, WeightKind weights = WeightKind::Ema);
// The same maps from an already-computed velocity.
Tensor one_step_from_velocity(const Tensor& x0, const Tensor& v);
Tensor intermediate_from_velocity(const Tensor& x0, const Tensor& v, const std::vector<double>& ts);

// lambda(t, s) = 1 - t(1-s) / (s(1-t)) of the endpoint-parameterized variant.
double boot_lambda(double t, double s);

// Standalone loss builders. The student is recorded (gradients flow per the
// variant's detachment rule); the teacher and every stop-gradient bracket are
// evaluated outside the graph and therefore contribute no gradient. The
// `bracket` field supplies the student velocities used inside the detached
// target; the default overloads use the live student's own values there,
// which is the training semantics. Finite-difference probes pass a frozen
// snapshot instead so the detached branch stays constant under perturbation.
// All reduce with a mean over batch and elements of a squared residual.
Graph::NodeId trajectory_distill_loss(Graph& g, const RecordedField& student,
                                      const CondBatchVelocityFn& bracket,
                                      const CondBatchVelocityFn& teacher, const Tensor& x0,
                                      const Tensor* cond, const std::vector<double>& ts, double dt,
                                      SolverKind slope_kind);
Graph::NodeId trajectory_distill_loss(Graph& g, const RecordedField& student,
                                      const CondBatchVelocityFn& teacher, const Tensor& x0,
                                      const Tensor* cond, const std::vector<double>& ts, double dt,
                                      SolverKind slope_kind);
Graph::NodeId pinn_distill_loss(Graph& g, const RecordedField& student,
                                const CondBatchVelocityFn& bracket,
                                const CondBatchVelocityFn& teacher, const Tensor& x0,
                                const Tensor* cond, const std::vector<double>& ts, double dt,
                                SolverKind slope_kind);
Graph::NodeId pinn_distill_loss(Graph& g, const RecordedField& student,
                                const CondBatchVelocityFn& teacher, const Tensor& x0,
                                const Tensor* cond, const std::vector<double>& ts, double dt,
                                SolverKind slope_kind);
Graph::NodeId boot_distill_loss(Graph& g, const RecordedField& student,
                                const CondBatchVelocityFn& bracket,
                                const CondBatchVelocityFn& teacher, const Tensor& x0,
                                const Tensor* cond, const std::vector<double>& ts, double dt);
Graph::NodeId boot_distill_loss(Graph& g, const RecordedField& student,
                                const CondBatchVelocityFn& teacher, const Tensor& x0,
                                const Tensor* cond, const std::vector<double>& ts, double dt);
// ||(1-t)(v_phi(x0,t) - v_teacher(x_t,t))||^2 with x_t implied by the student;
// the teacher branch (x_t included) is detached.
Graph::NodeId align_loss(Graph& g, const RecordedField& student,
                         const CondBatchVelocityFn& bracket, const CondBatchVelocityFn& teacher,
                         const Tensor& x0, const Tensor* cond, const std::vector<double>& ts);
Graph::NodeId align_loss(Graph& g, const RecordedField& student,
                         const CondBatchVelocityFn& teacher, const Tensor& x0, const Tensor* cond,
                         const std::vector<double>& ts);
// ||v_phi(x0,0) - v_teacher(x0,0)||^2.
Graph::NodeId boundary_loss(Graph& g, const RecordedField& student,
                            const CondBatchVelocityFn& teacher, const Tensor& x0,
                            const Tensor* cond);
// distill + lambda_align * align + lambda_bc * bc.
Graph::NodeId total_loss(Graph& g, Graph::NodeId distill, Graph::NodeId align, Graph::NodeId bc,
                         double lambda_align, double lambda_bc);

// Fused training objective; records the student once per time branch and
// reuses the shared teacher evaluation between the distillation and alignment
// terms.
struct DistillObjective {
    Graph::NodeId distill = -1;
    Graph::NodeId align = -1;
    Graph::NodeId bc = -1;
    Graph::NodeId total = -1;
};
DistillObjective build_distill_objective(Graph& g, const RecordedField& student,
                                         const CondBatchVelocityFn& teacher, const Tensor& x0,
                                         const Tensor* cond, const std::vector<double>& ts,
                                         const DistillConfig& cfg);

struct DistillTraceRow {
    std::int64_t iteration = 0;
    double distill = 0.0;
    double align = 0.0;
    double bc = 0.0;
    double total = 0.0;
    double lr = 0.0;
    double wall_ms = 0.0;
};

struct DistillTrainConfig {
    DegradationSpec degradation;
    double sigma_p = 0.1;  // stage-1 perturbation used to build x0
    DistillConfig distill;
    std::string lastgood_path;
    int log_every = 0;
};

struct DistillTrainResult {
    VelocityModel student;
    std::vector<DistillTraceRow> trace;
};

// Algorithm: initialize the student from the teacher's EMA weights, then per
// iteration sample (x1, t, noises), build x0 and the LR condition, record
// student velocities at t, s=t+dt and 0, take the teacher slope along the
// student-implied intermediate state, and descend the weighted objective.
// The teacher is read-only throughout; its EMA weights provide all targets.
DistillTrainResult distill_train(const VelocityModel& teacher, const BatchSource& data,
                                 const DistillTrainConfig& cfg,
                                 const VelocityModel* initial_student = nullptr);

}  // namespace flowsr
