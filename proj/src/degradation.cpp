#include "flowsr/degradation.hpp"

#include <cmath>

#include "flowsr/errors.hpp"

namespace flowsr {

namespace {

struct GridDims {
    std::size_t lead = 1;  // product of dims before the trailing two
    std::size_t h = 0;
    std::size_t w = 0;
    bool vector = false;  // rank-1 input: 1-d block mean over the only axis
};

GridDims grid_dims(const Tensor& x) {
    const Shape& s = x.shape();
    if (s.empty()) {
        throw DimensionError("degradation: scalar tensors unsupported");
    }
    GridDims d;
    if (s.size() == 1) {
        d.h = 1;
        d.w = s[0];
        d.vector = true;
        return d;
    }
    d.h = s[s.size() - 2];
    d.w = s[s.size() - 1];
    for (std::size_t i = 0; i + 2 < s.size(); ++i) {
        d.lead *= s[i];
    }
    return d;
}

Shape with_spatial(const Shape& s, std::size_t h, std::size_t w) {
    if (s.size() == 1) {
        return {w};
    }
    Shape r = s;
    r[r.size() - 2] = h;
    r[r.size() - 1] = w;
    return r;
}

}  // namespace

void DegradationSpec::validate() const {
    if (scale < 1) {
        throw ConfigError("degradation: scale must be >= 1");
    }
    if (!(sigma_n >= 0.0) || !std::isfinite(sigma_n)) {
        throw ConfigError("degradation: sigma_n must be finite and >= 0");
    }
}

Tensor downsample(const Tensor& x, const DegradationSpec& spec) {
    spec.validate();
    const GridDims d = grid_dims(x);
    const std::size_t s = static_cast<std::size_t>(spec.scale);
    const std::size_t bh = d.vector ? 1 : s;  // rank-1 inputs use 1 x s blocks
    if (d.h % bh != 0 || d.w % s != 0) {
        throw DimensionError("downsample: spatial dims " + shape_str(x.shape()) +
                             " not divisible by scale " + std::to_string(spec.scale));
    }
    const std::size_t lh = d.h / bh;
    const std::size_t lw = d.w / s;
    Tensor y = Tensor::zeros(with_spatial(x.shape(), lh, lw));
    const double inv = 1.0 / static_cast<double>(bh * s);
    for (std::size_t p = 0; p < d.lead; ++p) {
        const double* src = x.data() + p * d.h * d.w;
        double* dst = y.data() + p * lh * lw;
        for (std::size_t oy = 0; oy < lh; ++oy) {
            for (std::size_t ox = 0; ox < lw; ++ox) {
                double acc = 0.0;
                for (std::size_t dy = 0; dy < bh; ++dy) {
                    const double* row = src + (oy * bh + dy) * d.w + ox * s;
                    for (std::size_t dx = 0; dx < s; ++dx) {
                        acc += row[dx];
                    }
                }
                dst[oy * lw + ox] = acc * inv;
            }
        }
    }
    return y;
}

Tensor transpose_upsample(const Tensor& y, const DegradationSpec& spec) {
    spec.validate();
    const GridDims d = grid_dims(y);
    const std::size_t s = static_cast<std::size_t>(spec.scale);
    const std::size_t bh = d.vector ? 1 : s;
    Tensor x = Tensor::zeros(with_spatial(y.shape(), d.h * bh, d.w * s));
    const double inv = 1.0 / static_cast<double>(bh * s);
    const std::size_t hw = d.h * bh;
    const std::size_t ww = d.w * s;
    for (std::size_t p = 0; p < d.lead; ++p) {
        const double* src = y.data() + p * d.h * d.w;
        double* dst = x.data() + p * hw * ww;
        for (std::size_t oy = 0; oy < d.h; ++oy) {
            for (std::size_t ox = 0; ox < d.w; ++ox) {
                const double v = src[oy * d.w + ox] * inv;
                for (std::size_t dy = 0; dy < bh; ++dy) {
                    double* row = dst + (oy * bh + dy) * ww + ox * s;
                    for (std::size_t dx = 0; dx < s; ++dx) {
                        row[dx] = v;
                    }
                }
            }
        }
    }
    return x;
}

Tensor lift(const Tensor& y, const DegradationSpec& spec) {
    Tensor x = transpose_upsample(y, spec);
    const bool vector = y.shape().size() == 1;
    const double area = vector ? static_cast<double>(spec.scale)
                               : static_cast<double>(spec.scale) * static_cast<double>(spec.scale);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        x[i] *= area;
    }
    return x;
}

Tensor build_lr_condition(const Tensor& x1, const DegradationSpec& spec, Rng& rng) {
    Tensor y = downsample(x1, spec);
    if (spec.sigma_n > 0.0) {
        for (std::size_t i = 0; i < y.numel(); ++i) {
            y[i] += spec.sigma_n * rng.normal();
        }
    }
    return lift(y, spec);
}

Tensor build_lr_condition(const Tensor& x1, const DegradationSpec& spec, std::uint64_t seed) {
    Rng rng(seed);
    return build_lr_condition(x1, spec, rng);
}

}  // namespace flowsr
