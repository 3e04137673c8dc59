#include "carleman/spline.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_interp.h>

#include <stdexcept>

namespace carleman {

struct NaturalSpline::Impl {
    std::vector<double> x, y;
    gsl_interp* interp = nullptr;
    gsl_interp_accel* acc = nullptr;
    ~Impl() {
        if (interp) gsl_interp_free(interp);
        if (acc) gsl_interp_accel_free(acc);
    }
};

NaturalSpline::NaturalSpline(std::vector<double> x, std::vector<double> y)
    : impl_(std::make_unique<Impl>()) {
    if (x.size() != y.size()) throw std::invalid_argument("spline: size mismatch");
    if (x.size() < 4) throw std::invalid_argument("spline: at least 4 samples required");
    for (std::size_t i = 1; i < x.size(); ++i)
        if (!(x[i] > x[i - 1])) throw std::invalid_argument("spline: abscissae must increase");
    gsl_set_error_handler_off();
    impl_->x = std::move(x);
    impl_->y = std::move(y);
    impl_->interp = gsl_interp_alloc(gsl_interp_cspline, impl_->x.size());
    impl_->acc = gsl_interp_accel_alloc();
    if (gsl_interp_init(impl_->interp, impl_->x.data(), impl_->y.data(), impl_->x.size()) != 0)
        throw std::runtime_error("spline: initialisation failed");
}

NaturalSpline::~NaturalSpline() = default;
NaturalSpline::NaturalSpline(NaturalSpline&&) noexcept = default;
NaturalSpline& NaturalSpline::operator=(NaturalSpline&&) noexcept = default;

double NaturalSpline::operator()(double x) const {
    const auto& xs = impl_->x;
    const auto& ys = impl_->y;
    if (x < xs.front()) return ys.front() + derivative(xs.front()) * (x - xs.front());
    if (x > xs.back()) return ys.back() + derivative(xs.back()) * (x - xs.back());
    return gsl_interp_eval(impl_->interp, xs.data(), ys.data(), x, impl_->acc);
}

double NaturalSpline::derivative(double x) const {
    const auto& xs = impl_->x;
    const auto& ys = impl_->y;
    if (x < xs.front()) x = xs.front();
    if (x > xs.back()) x = xs.back();
    return gsl_interp_eval_deriv(impl_->interp, xs.data(), ys.data(), x, impl_->acc);
}

std::vector<double> spline_matrix(const std::vector<double>& x, const std::vector<double>& targets,
                                  bool derivative) {
    const std::size_t n = x.size(), m = targets.size();
    std::vector<double> out(m * n);
    std::vector<double> e(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        e.assign(n, 0.0);
        e[j] = 1.0;
        NaturalSpline sp(x, e);
        for (std::size_t i = 0; i < m; ++i)
            out[i * n + j] = derivative ? sp.derivative(targets[i]) : sp(targets[i]);
    }
    return out;
}

std::vector<double> spline_derivative_at_nodes(const std::vector<double>& x,
                                               const std::vector<double>& y) {
    NaturalSpline sp(x, y);
    std::vector<double> d(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) d[i] = sp.derivative(x[i]);
    return d;
}

}  // namespace carleman
