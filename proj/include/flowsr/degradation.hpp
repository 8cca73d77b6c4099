#pragma once

#include <cstdint>

#include "flowsr/rng.hpp"
#include "flowsr/tensor.hpp"

namespace flowsr {

// Block-mean downsampling H, its exact transpose, and the pseudo-inverse
// lift (nearest-neighbour replication, = s^2 H^T for the block-mean kernel).
// The measurement model builds the high-resolution condition
// x_lr = lift(H(x1) + n) with n ~ N(0, sigma_n^2 I).
struct DegradationSpec {
    int scale = 4;          // s >= 1; HR side lengths divisible by s
    double sigma_n = 0.0;   // measurement noise std, finite and >= 0

    void validate() const;
};

// Images are [C,H,W] (or [H,W] treated as one channel); batched [B,C,H,W]
// variants apply per item.
Tensor downsample(const Tensor& x, const DegradationSpec& spec);
Tensor transpose_upsample(const Tensor& y, const DegradationSpec& spec);
Tensor lift(const Tensor& y, const DegradationSpec& spec);

// x_lr = lift(downsample(x1) + n); deterministic for a given rng state.
Tensor build_lr_condition(const Tensor& x1, const DegradationSpec& spec, Rng& rng);
Tensor build_lr_condition(const Tensor& x1, const DegradationSpec& spec, std::uint64_t seed);

}  // namespace flowsr
