#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowsr/degradation.hpp"
#include "flowsr/model.hpp"
#include "flowsr/teacher.hpp"

namespace flowsr {

// Peak signal-to-noise ratio in dB between images in [-1,1]. Values are
// clipped then remapped to [0,1]; identical inputs return +infinity.
double psnr(const Tensor& x, const Tensor& y);

// Multi-scale gradient-structure distance: at three dyadic scales (block-mean
// downsampled), the mean squared difference of forward-difference gradient
// magnitude maps. Zero iff the gradient structures match at every scale.
// Requires at least 4x4 spatial extent and dims divisible by 4.
double perceptual_proxy(const Tensor& x, const Tensor& y);

struct SweepRow {
    double t = 0.0;
    double psnr_mean = 0.0;
    double psnr_std = 0.0;
    double proxy_mean = 0.0;
    double proxy_std = 0.0;
    std::size_t n = 0;
};

struct SweepResult {
    std::vector<SweepRow> rows;  // ascending t
    std::string model_id;
    std::string dataset_id;
};

enum class SweepMode { Student, Teacher };
SweepMode sweep_mode_from_string(const std::string& s);

struct SweepConfig {
    SweepMode mode = SweepMode::Student;
    std::vector<double> t_grid;
    std::uint64_t seed = 0;
    int teacher_substeps = 64;   // midpoint steps per unit time in teacher mode
    std::size_t max_samples = 0;  // 0: whole dataset
    int batch = 16;
};

// For every sample: one seeded (LR noise, perturbation) draw shared across the
// whole grid, then per grid point either the student's one-step output or the
// teacher's running-ODE estimate x_t + (1-t) v(x_t, t). Metrics are against
// the ground-truth HR sample; EMA weights throughout.
SweepResult tradeoff_sweep(const VelocityModel& model, const BatchSource& data,
                           const DegradationSpec& deg, double sigma_p, const SweepConfig& cfg);

// CSV with header t,psnr_mean,psnr_std,proxy_mean,proxy_std,n; numbers are
// written in shortest round-trip form (locale independent).
void write_sweep_csv(const SweepResult& result, const std::string& path);
SweepResult read_sweep_csv(const std::string& path);

// Grayscale strip dump (PGM, P5): LR condition, per-t estimates, ground truth.
void write_image_strip_pgm(const std::vector<Tensor>& images, const std::string& path);

}  // namespace flowsr
