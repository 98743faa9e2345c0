#pragma once

#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <sstream>
#include <vector>

#include "lightningnet/errors.hpp"

namespace lnet {

// Global accounting of live tensor bytes. Used by the profiler to report
// peak working-set estimates without OS-specific telemetry.
namespace membook {

inline std::atomic<std::size_t>& current() {
    static std::atomic<std::size_t> v{0};
    return v;
}
inline std::atomic<std::size_t>& peak() {
    static std::atomic<std::size_t> v{0};
    return v;
}
inline void add(std::size_t n) {
    std::size_t cur = current().fetch_add(n) + n;
    std::size_t p = peak().load();
    while (cur > p && !peak().compare_exchange_weak(p, cur)) {}
}
inline void sub(std::size_t n) { current().fetch_sub(n); }
inline void reset_peak() { peak().store(current().load()); }

template <class T>
struct counting_allocator {
    using value_type = T;
    counting_allocator() = default;
    template <class U>
    counting_allocator(const counting_allocator<U>&) {}
    T* allocate(std::size_t n) {
        add(n * sizeof(T));
        return static_cast<T*>(::operator new(n * sizeof(T)));
    }
    void deallocate(T* p, std::size_t n) {
        sub(n * sizeof(T));
        ::operator delete(p);
    }
    bool operator==(const counting_allocator&) const { return true; }
};

} // namespace membook

// Dense row-major 2-D tensor of doubles. No broadcasting; shapes are
// always explicit and mismatches throw.
class Tensor2D {
public:
    using storage = std::vector<double, membook::counting_allocator<double>>;

    Tensor2D() = default;
    Tensor2D(std::size_t r, std::size_t c, double fill = 0.0)
        : rows_(r), cols_(c), data_(r * c, fill) {}
    Tensor2D(std::size_t r, std::size_t c, std::initializer_list<double> vals)
        : rows_(r), cols_(c), data_(vals.begin(), vals.end()) {
        if (data_.size() != r * c)
            throw validation_error("Tensor2D init list size mismatch");
    }

    static Tensor2D identity(std::size_t n) {
        Tensor2D t(n, n);
        for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
        return t;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    bool same_shape(const Tensor2D& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(" << rows_ << "x" << cols_ << ")";
        return os.str();
    }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool operator==(const Tensor2D& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

private:
    std::size_t rows_ = 0, cols_ = 0;
    storage data_;
};

inline void check_same_shape(const Tensor2D& a, const Tensor2D& b, const char* op) {
    if (!a.same_shape(b))
        throw validation_error(std::string(op) + ": shape mismatch " + a.shape_str() +
                               " vs " + b.shape_str());
}

inline Tensor2D matmul(const Tensor2D& a, const Tensor2D& b) {
    if (a.cols() != b.rows())
        throw validation_error("matmul: inner dimension mismatch " + a.shape_str() +
                               " vs " + b.shape_str());
    Tensor2D out(a.rows(), b.cols());
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    // i-k-j order keeps the inner loop contiguous in both b and out.
    for (std::size_t i = 0; i < n; ++i) {
        const double* ai = a.data() + i * k;
        double* oi = out.data() + i * m;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = ai[kk];
            if (av == 0.0) continue;
            const double* bk = b.data() + kk * m;
            for (std::size_t j = 0; j < m; ++j) oi[j] += av * bk[j];
        }
    }
    return out;
}

inline Tensor2D transpose(const Tensor2D& a) {
    Tensor2D out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

inline Tensor2D add(const Tensor2D& a, const Tensor2D& b) {
    check_same_shape(a, b, "add");
    Tensor2D out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
    return out;
}

inline Tensor2D sub(const Tensor2D& a, const Tensor2D& b) {
    check_same_shape(a, b, "sub");
    Tensor2D out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
    return out;
}

inline Tensor2D hadamard(const Tensor2D& a, const Tensor2D& b) {
    check_same_shape(a, b, "hadamard");
    Tensor2D out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.data()[i];
    return out;
}

inline Tensor2D scale(const Tensor2D& a, double c) {
    Tensor2D out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= c;
    return out;
}

// y += c * x, in place
inline void axpy(Tensor2D& y, double c, const Tensor2D& x) {
    check_same_shape(y, x, "axpy");
    for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] += c * x.data()[i];
}

enum class Activation { relu, sigmoid, tanh };

inline double sigmoid_scalar(double x) {
    // split on sign to avoid overflow in exp
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

inline Tensor2D activation(const Tensor2D& x, Activation kind) {
    Tensor2D out = x;
    switch (kind) {
        case Activation::relu:
            for (std::size_t i = 0; i < out.size(); ++i)
                if (out.data()[i] < 0.0) out.data()[i] = 0.0;
            break;
        case Activation::sigmoid:
            for (std::size_t i = 0; i < out.size(); ++i)
                out.data()[i] = sigmoid_scalar(out.data()[i]);
            break;
        case Activation::tanh:
            for (std::size_t i = 0; i < out.size(); ++i)
                out.data()[i] = std::tanh(out.data()[i]);
            break;
    }
    return out;
}

// Weighted binary cross-entropy, mean over all entries. Predictions are
// clamped to [eps, 1-eps] before the log; the gradient is w.r.t. the
// clamped prediction.
struct BceResult {
    double loss;
    Tensor2D grad; // d loss / d pred
};

inline BceResult bce_loss(const Tensor2D& pred, const Tensor2D& target,
                          double pos_weight = 1.0) {
    check_same_shape(pred, target, "bce_loss");
    constexpr double eps = 1e-7;
    const double n = static_cast<double>(pred.size());
    BceResult r{0.0, Tensor2D(pred.rows(), pred.cols())};
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double p = pred.data()[i];
        if (p < eps) p = eps;
        if (p > 1.0 - eps) p = 1.0 - eps;
        const double y = target.data()[i];
        r.loss += -(pos_weight * y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
        r.grad.data()[i] = (-pos_weight * y / p + (1.0 - y) / (1.0 - p)) / n;
    }
    r.loss /= n;
    if (!std::isfinite(r.loss)) throw numeric_error("bce_loss: non-finite loss");
    return r;
}

// One trainable tensor with its gradient and Adam state.
struct Param {
    Tensor2D value;
    Tensor2D grad;
    Tensor2D adam_m;
    Tensor2D adam_v;
    std::size_t step_count = 0;

    Param() = default;
    explicit Param(Tensor2D v)
        : value(std::move(v)),
          grad(value.rows(), value.cols()),
          adam_m(value.rows(), value.cols()),
          adam_v(value.rows(), value.cols()) {}

    void zero_grad() { grad.fill(0.0); }
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

inline void adam_step(Param& p, const AdamConfig& cfg = {}) {
    if (!p.grad.all_finite()) throw numeric_error("adam_step: non-finite gradient");
    p.step_count += 1;
    const double t = static_cast<double>(p.step_count);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad.data()[i];
        double& m = p.adam_m.data()[i];
        double& v = p.adam_v.data()[i];
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        p.value.data()[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

// Central-difference check of an analytic gradient. Returns the max over
// coordinates of |analytic - numeric| / max(1, |analytic|).
inline double finite_diff_gradcheck(
    const std::function<double(const Tensor2D&)>& f, const Tensor2D& x,
    const Tensor2D& analytic_grad, double h = 1e-5) {
    check_same_shape(x, analytic_grad, "finite_diff_gradcheck");
    Tensor2D probe = x;
    double worst = 0.0;
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double orig = probe.data()[i];
        probe.data()[i] = orig + h;
        const double fp = f(probe);
        probe.data()[i] = orig - h;
        const double fm = f(probe);
        probe.data()[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw numeric_error("finite_diff_gradcheck: non-finite function value");
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic_grad.data()[i];
        const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
        if (err > worst) worst = err;
    }
    return worst;
}

} // namespace lnet
