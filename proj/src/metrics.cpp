#include "flowsr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "flowsr/errors.hpp"
#include "flowsr/kvconfig.hpp"

namespace flowsr {

double psnr(const Tensor& x, const Tensor& y) {
    if (!x.same_shape(y)) {
        throw DimensionError("psnr: shape mismatch");
    }
    if (x.numel() == 0) {
        throw UsageError("psnr: empty tensors");
    }
    double mse = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double a = (std::clamp(x[i], -1.0, 1.0) + 1.0) * 0.5;
        const double b = (std::clamp(y[i], -1.0, 1.0) + 1.0) * 0.5;
        const double d = a - b;
        mse += d * d;
    }
    mse /= static_cast<double>(x.numel());
    if (mse == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return -10.0 * std::log10(mse);
}

namespace {

struct Image {
    std::size_t channels, h, w;
    const double* data;
};

Image as_image(const Tensor& t, const char* what) {
    const Shape& s = t.shape();
    Image img{};
    if (s.size() == 2) {
        img.channels = 1;
        img.h = s[0];
        img.w = s[1];
    } else if (s.size() == 3) {
        img.channels = s[0];
        img.h = s[1];
        img.w = s[2];
    } else {
        throw DimensionError(std::string(what) + ": expects [H,W] or [C,H,W], got " +
                             shape_str(s));
    }
    img.data = t.data();
    return img;
}

// Block-mean downsample one channel by factor f.
std::vector<double> block_mean(const double* src, std::size_t h, std::size_t w, std::size_t f) {
    const std::size_t oh = h / f, ow = w / f;
    std::vector<double> out(oh * ow, 0.0);
    const double inv = 1.0 / static_cast<double>(f * f);
    for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (std::size_t dy = 0; dy < f; ++dy) {
                const double* row = src + (y * f + dy) * w + x * f;
                for (std::size_t dx = 0; dx < f; ++dx) {
                    acc += row[dx];
                }
            }
            out[y * ow + x] = acc * inv;
        }
    }
    return out;
}

// Forward-difference gradient magnitude on the (h-1)x(w-1) interior grid.
std::vector<double> grad_magnitude(const std::vector<double>& img, std::size_t h, std::size_t w) {
    std::vector<double> m((h - 1) * (w - 1));
    for (std::size_t y = 0; y + 1 < h; ++y) {
        for (std::size_t x = 0; x + 1 < w; ++x) {
            const double gx = img[y * w + x + 1] - img[y * w + x];
            const double gy = img[(y + 1) * w + x] - img[y * w + x];
            m[y * (w - 1) + x] = std::sqrt(gx * gx + gy * gy);
        }
    }
    return m;
}

}  // namespace

double perceptual_proxy(const Tensor& x, const Tensor& y) {
    if (!x.same_shape(y)) {
        throw DimensionError("perceptual_proxy: shape mismatch");
    }
    const Image ix = as_image(x, "perceptual_proxy");
    const Image iy = as_image(y, "perceptual_proxy");
    if (ix.h < 4 || ix.w < 4) {
        throw DimensionError("perceptual_proxy: image smaller than 4x4");
    }
    if (ix.h % 4 != 0 || ix.w % 4 != 0) {
        throw DimensionError("perceptual_proxy: spatial dims must be divisible by 4");
    }
    double total = 0.0;
    for (std::size_t c = 0; c < ix.channels; ++c) {
        const double* px = ix.data + c * ix.h * ix.w;
        const double* py = iy.data + c * ix.h * ix.w;
        for (std::size_t f : {std::size_t{1}, std::size_t{2}, std::size_t{4}}) {
            const std::size_t h = ix.h / f, w = ix.w / f;
            const std::vector<double> ax =
                f == 1 ? std::vector<double>(px, px + h * w) : block_mean(px, ix.h, ix.w, f);
            const std::vector<double> ay =
                f == 1 ? std::vector<double>(py, py + h * w) : block_mean(py, ix.h, ix.w, f);
            const std::vector<double> mx = grad_magnitude(ax, h, w);
            const std::vector<double> my = grad_magnitude(ay, h, w);
            double acc = 0.0;
            for (std::size_t i = 0; i < mx.size(); ++i) {
                const double d = mx[i] - my[i];
                acc += d * d;
            }
            total += acc / static_cast<double>(mx.size());
        }
    }
    return total / static_cast<double>(ix.channels);
}

SweepMode sweep_mode_from_string(const std::string& s) {
    if (s == "student") return SweepMode::Student;
    if (s == "teacher") return SweepMode::Teacher;
    throw ConfigError("unknown sweep mode '" + s + "'");
}

namespace {

struct Welford {
    std::size_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void push(double v) {
        ++n;
        const double d = v - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (v - mean);
    }
    double stddev() const {
        return n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1)) : 0.0;
    }
};

Tensor slice_batch(const Tensor& batch, std::size_t i, const Shape& sample_shape) {
    const std::size_t len = shape_numel(sample_shape);
    std::vector<double> v(batch.data() + i * len, batch.data() + (i + 1) * len);
    return Tensor::raw(sample_shape, std::move(v));
}

}  // namespace

SweepResult tradeoff_sweep(const VelocityModel& model, const BatchSource& data,
                           const DegradationSpec& deg, double sigma_p, const SweepConfig& cfg) {
    if (cfg.t_grid.empty()) {
        throw UsageError("sweep: empty t grid");
    }
    if (data.size() == 0) {
        throw UsageError("sweep: dataset with ground truth required");
    }
    std::vector<double> grid = cfg.t_grid;
    std::sort(grid.begin(), grid.end());
    for (double t : grid) {
        if (!(t >= 0.0 && t <= 1.0)) {
            throw ConfigError("sweep: grid times must lie in [0,1]");
        }
    }
    const std::size_t n_total = cfg.max_samples == 0
                                    ? data.size()
                                    : std::min<std::size_t>(cfg.max_samples, data.size());
    const std::size_t batch = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.batch));
    const bool conditional = model.arch.has_cond();
    const double keep = std::sqrt(1.0 - sigma_p * sigma_p);

    std::vector<Welford> psnr_acc(grid.size());
    std::vector<Welford> proxy_acc(grid.size());
    const bool image_like = model.arch.kind == Backbone::Conv;

    Rng rng(cfg.seed + 0x53eedULL);
    Shape sample_shape;
    for (std::size_t start = 0; start < n_total; start += batch) {
        const std::size_t b = std::min(batch, n_total - start);
        // Assemble x1 / x_lr / x0 for this block; one noise draw per sample,
        // shared across the whole t grid.
        Tensor x1_block, xlr_block, x0_block;
        std::size_t len = 0;
        for (std::size_t i = 0; i < b; ++i) {
            const Tensor x1 = data.get(start + i);
            if (i == 0) {
                sample_shape = x1.shape();
                len = x1.numel();
                Shape bs = sample_shape;
                bs.insert(bs.begin(), b);
                x1_block = Tensor::zeros(bs);
                xlr_block = Tensor::zeros(bs);
                x0_block = Tensor::zeros(bs);
            }
            const Tensor xlr = build_lr_condition(x1, deg, rng);
            std::memcpy(x1_block.data() + i * len, x1.data(), len * sizeof(double));
            double* plr = xlr_block.data() + i * len;
            double* p0 = x0_block.data() + i * len;
            for (std::size_t p = 0; p < len; ++p) {
                plr[p] = xlr[p];
                p0[p] = keep * xlr[p] + sigma_p * rng.normal();
            }
        }
        const Tensor* cond = conditional ? &xlr_block : nullptr;

        // Per grid point estimates for the whole block.
        std::vector<Tensor> estimates(grid.size());
        if (cfg.mode == SweepMode::Student) {
            for (std::size_t gi = 0; gi < grid.size(); ++gi) {
                const std::vector<double> ts(b, grid[gi]);
                const Tensor v = velocity_eval(model, WeightKind::Ema, x0_block, cond, ts);
                estimates[gi] = add(x0_block, v);
            }
        } else {
            // March the ODE with the midpoint scheme, pausing at grid times to
            // form x_t + (1-t) v(x_t, t).
            Tensor state = x0_block;
            double t_now = 0.0;
            for (std::size_t gi = 0; gi < grid.size(); ++gi) {
                const double t_target = grid[gi];
                const double seg = t_target - t_now;
                if (seg > 1e-12) {
                    const int m = std::max(1, static_cast<int>(std::lround(
                                                  seg * static_cast<double>(cfg.teacher_substeps))));
                    const double h = seg / static_cast<double>(m);
                    for (int s = 0; s < m; ++s) {
                        const double tcur = t_now + h * static_cast<double>(s);
                        const std::vector<double> ts(b, tcur);
                        const Tensor k1 = velocity_eval(model, WeightKind::Ema, state, cond, ts);
                        const Tensor xm = axpy(0.5 * h, k1, state);
                        const std::vector<double> tm(b, std::min(tcur + 0.5 * h, 1.0));
                        const Tensor k2 = velocity_eval(model, WeightKind::Ema, xm, cond, tm);
                        state = axpy(h, k2, state);
                    }
                    t_now = t_target;
                }
                const std::vector<double> ts(b, t_target);
                const Tensor v = velocity_eval(model, WeightKind::Ema, state, cond, ts);
                estimates[gi] = axpy(1.0 - t_target, v, state);
            }
        }

        for (std::size_t gi = 0; gi < grid.size(); ++gi) {
            for (std::size_t i = 0; i < b; ++i) {
                const Tensor est = slice_batch(estimates[gi], i, sample_shape);
                const Tensor gt = slice_batch(x1_block, i, sample_shape);
                psnr_acc[gi].push(psnr(est, gt));
                if (image_like) {
                    proxy_acc[gi].push(perceptual_proxy(est, gt));
                }
            }
        }
    }

    SweepResult res;
    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
        SweepRow row;
        row.t = grid[gi];
        row.psnr_mean = psnr_acc[gi].mean;
        row.psnr_std = psnr_acc[gi].stddev();
        row.proxy_mean = proxy_acc[gi].n ? proxy_acc[gi].mean : 0.0;
        row.proxy_std = proxy_acc[gi].n ? proxy_acc[gi].stddev() : 0.0;
        row.n = psnr_acc[gi].n;
        res.rows.push_back(row);
    }
    return res;
}

void write_sweep_csv(const SweepResult& result, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw FormatError("sweep: cannot open '" + path + "' for writing");
    }
    os << "t,psnr_mean,psnr_std,proxy_mean,proxy_std,n\n";
    for (const SweepRow& r : result.rows) {
        os << format_double(r.t) << ',' << format_double(r.psnr_mean) << ','
           << format_double(r.psnr_std) << ',' << format_double(r.proxy_mean) << ','
           << format_double(r.proxy_std) << ',' << r.n << "\n";
    }
    if (!os) {
        throw FormatError("sweep: write failed for '" + path + "'");
    }
}

SweepResult read_sweep_csv(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw FormatError("sweep: cannot open '" + path + "'");
    }
    std::string line;
    if (!std::getline(is, line) || line != "t,psnr_mean,psnr_std,proxy_mean,proxy_std,n") {
        throw FormatError("sweep: bad header in '" + path + "'");
    }
    SweepResult res;
    while (std::getline(is, line)) {
        if (line.empty()) {
            continue;
        }
        std::istringstream ls(line);
        std::string tok;
        std::vector<std::string> cells;
        while (std::getline(ls, tok, ',')) {
            cells.push_back(tok);
        }
        if (cells.size() != 6) {
            throw FormatError("sweep: malformed row '" + line + "'");
        }
        SweepRow r;
        r.t = std::stod(cells[0]);
        r.psnr_mean = std::stod(cells[1]);
        r.psnr_std = std::stod(cells[2]);
        r.proxy_mean = std::stod(cells[3]);
        r.proxy_std = std::stod(cells[4]);
        r.n = static_cast<std::size_t>(std::stoull(cells[5]));
        res.rows.push_back(r);
    }
    return res;
}

void write_image_strip_pgm(const std::vector<Tensor>& images, const std::string& path) {
    if (images.empty()) {
        throw UsageError("image strip: no images");
    }
    const Image first = as_image(images[0], "image strip");
    const std::size_t h = first.h, w = first.w;
    const std::size_t gap = 2;
    const std::size_t total_w = images.size() * w + (images.size() - 1) * gap;
    std::vector<unsigned char> canvas(h * total_w, 255);
    for (std::size_t k = 0; k < images.size(); ++k) {
        const Image img = as_image(images[k], "image strip");
        if (img.h != h || img.w != w) {
            throw DimensionError("image strip: inconsistent image sizes");
        }
        const std::size_t x_off = k * (w + gap);
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const double v = std::clamp(img.data[y * w + x], -1.0, 1.0);
                canvas[y * total_w + x_off + x] =
                    static_cast<unsigned char>(std::lround((v + 1.0) * 127.5));
            }
        }
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw FormatError("image strip: cannot open '" + path + "'");
    }
    os << "P5\n" << total_w << " " << h << "\n255\n";
    os.write(reinterpret_cast<const char*>(canvas.data()),
             static_cast<std::streamsize>(canvas.size()));
}

}  // namespace flowsr
