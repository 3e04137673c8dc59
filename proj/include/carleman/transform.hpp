#pragma once

#include "carleman/basis.hpp"
#include "carleman/container.hpp"
#include "carleman/forward.hpp"

#include <vector>

namespace carleman {

struct TransformedTraces {
    int N = 0;
    std::vector<Vec3> points, normals;
    std::vector<double> times, sources;
    // (source, node, time)
    std::vector<double> p0, p1;
    // (k, node, time)
    std::vector<double> q0, q1;
    nlohmann::json meta = nlohmann::json::object();

    std::size_t S() const { return sources.size(); }
    std::size_t B() const { return points.size(); }
    std::size_t T() const { return times.size(); }
    std::size_t qindex(std::size_t k, std::size_t b, std::size_t t) const { return (k * B() + b) * T() + t; }
};

// p0 = ln g0, p1 = g1/g0 (p1 empty when g1 is absent).
void log_traces(const CauchyTraces& tr, std::vector<double>& p0, std::vector<double>& p1);

// Natural-spline s-derivative at the sample points.
std::vector<double> spline_s_derivative(const std::vector<double>& s_grid, const std::vector<double>& values);

// Projections q_{i,k} = int p_i psi_k ds per (node, time).
void assemble_boundary_coefficients(const std::vector<double>& s_grid, const std::vector<double>& p,
                                    std::size_t nodes, std::size_t times, const BasisSet& basis,
                                    std::vector<double>& q);

TransformedTraces transform_traces(const CauchyTraces& tr, const BasisSet& basis);

// Least-squares real spherical-harmonic fit of per-node values on the sphere,
// evaluated at new directions. `values` is (field, node) with `fields` rows.
std::vector<double> resample_on_sphere(const std::vector<Vec3>& from, const std::vector<double>& values,
                                       std::size_t fields, const std::vector<Vec3>& to, int degree);
int default_sphere_degree(std::size_t nodes);

Container to_container(const TransformedTraces& t);
TransformedTraces transformed_from_container(const Container& c);

}  // namespace carleman
