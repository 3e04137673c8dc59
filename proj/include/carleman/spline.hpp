#pragma once

#include <memory>
#include <vector>

namespace carleman {

// Natural cubic spline through (x_i, y_i). Outside [x_0, x_n] it continues
// linearly, which is the natural spline's own extension (zero curvature at the ends).
class NaturalSpline {
public:
    NaturalSpline(std::vector<double> x, std::vector<double> y);
    ~NaturalSpline();
    NaturalSpline(NaturalSpline&&) noexcept;
    NaturalSpline& operator=(NaturalSpline&&) noexcept;

    double operator()(double x) const;
    double derivative(double x) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Dense matrix (rows = targets, cols = samples) that maps sample values on
// `x` to spline values at `targets`; the spline is linear in its data.
std::vector<double> spline_matrix(const std::vector<double>& x, const std::vector<double>& targets,
                                  bool derivative = false);

// Spline derivative at the sample points themselves.
std::vector<double> spline_derivative_at_nodes(const std::vector<double>& x,
                                               const std::vector<double>& y);

}  // namespace carleman
