#include "flowsr/tensor.hpp"

#include <cmath>
#include <sstream>

#include "flowsr/errors.hpp"

namespace flowsr {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor Tensor::zeros(Shape shape) {
    Tensor t;
    const std::size_t n = shape_numel(shape);
    t.shape_ = std::move(shape);
    t.data_.assign(n, 0.0);
    return t;
}

Tensor Tensor::full(Shape shape, double value) {
    Tensor t;
    const std::size_t n = shape_numel(shape);
    t.shape_ = std::move(shape);
    t.data_.assign(n, value);
    return t;
}

Tensor Tensor::raw(Shape shape, std::vector<double> data) {
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("Tensor: shape " + shape_str(shape) + " does not match data size " +
                             std::to_string(data.size()));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
}

Tensor Tensor::checked(Shape shape, std::vector<double> data) {
    for (double v : data) {
        if (!std::isfinite(v)) {
            throw DimensionError("Tensor: non-finite entry rejected");
        }
    }
    return raw(std::move(shape), std::move(data));
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same(a, b, "add");
    Tensor r = a;
    for (std::size_t i = 0; i < r.numel(); ++i) {
        r[i] += b[i];
    }
    return r;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same(a, b, "sub");
    Tensor r = a;
    for (std::size_t i = 0; i < r.numel(); ++i) {
        r[i] -= b[i];
    }
    return r;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same(a, b, "mul");
    Tensor r = a;
    for (std::size_t i = 0; i < r.numel(); ++i) {
        r[i] *= b[i];
    }
    return r;
}

Tensor scale(const Tensor& a, double c) {
    Tensor r = a;
    for (std::size_t i = 0; i < r.numel(); ++i) {
        r[i] *= c;
    }
    return r;
}

Tensor axpy(double a, const Tensor& x, const Tensor& y) {
    require_same(x, y, "axpy");
    Tensor r = y;
    for (std::size_t i = 0; i < r.numel(); ++i) {
        r[i] += a * x[i];
    }
    return r;
}

void add_inplace(Tensor& dst, const Tensor& src) {
    require_same(dst, src, "add_inplace");
    for (std::size_t i = 0; i < dst.numel(); ++i) {
        dst[i] += src[i];
    }
}

double dot(const Tensor& a, const Tensor& b) {
    require_same(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

double mean_sq_diff(const Tensor& a, const Tensor& b) {
    require_same(a, b, "mean_sq_diff");
    if (a.numel() == 0) {
        return 0.0;
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s / static_cast<double>(a.numel());
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

}  // namespace flowsr
