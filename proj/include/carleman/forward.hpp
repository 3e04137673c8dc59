#pragma once

#include "carleman/container.hpp"
#include "carleman/geometry.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace carleman {

enum class TargetKind { none, ball, cylinder, rotated_cylinder, static_ball, custom };

TargetKind parse_target_kind(const std::string& s);
std::string to_string(TargetKind k);

struct TargetModel {
    TargetKind kind = TargetKind::ball;
    double a0 = 2.0;
    double background = 1.0;
    double radius = 0.1;
    double height = 0.2;
    Vec3 static_center{0.0, 0.0, 0.0};
    // kind == custom: value of a inside Q (clamped at zero), evaluated as given.
    std::function<double(const Vec3&, double)> custom;
};

TargetModel preset_target(const std::string& scenario);

// Center of the moving shape at time t.
Vec3 target_center(const TargetModel& m, double t);
bool inside_target(const TargetModel& m, const Vec3& x, double t);
double eval_coefficient(const TargetModel& m, const ProblemGeometry& g, const Vec3& x, double t);

// H(t - r)/(4 pi r), r = |x - x0|.
double analytic_free_space(const Vec3& x, const Vec3& x0, double t);
// Normal derivative of 1/(4 pi |x - x0|) along nu.
double analytic_free_space_normal(const Vec3& x, const Vec3& x0, const Vec3& nu);

struct SpaceTimeGrid {
    double half_width = 1.0;
    double dx = 1.0 / 40.0;
    double dt = 1.0 / 160.0;
    double t_end = 12.0;
    int sponge_cells = 12;
    double sponge_strength = 40.0;

    int nodes_per_axis() const;
    // Integer offset from the center, so mirrored nodes have exactly opposite coordinates.
    double coord(int i) const { return static_cast<double>(i - std::lround(half_width / dx)) * dx; }
};

// Box sized to hold the ball plus `padding` free cells and the sponge.
SpaceTimeGrid make_forward_grid(const ProblemGeometry& g, double dx, double dt, int padding = 8,
                                int sponge_cells = 12);
void validate_forward_grid(const SpaceTimeGrid& grid, const ProblemGeometry& g);

struct BoundaryNodes {
    std::vector<Vec3> points;
    std::vector<Vec3> normals;  // empty when only values are wanted
    std::string kind = "custom";
};

BoundaryNodes fibonacci_sphere(std::size_t n, double R);

enum class Interp { trilinear, tricubic };
Interp parse_interp(const std::string& s);
std::string to_string(Interp i);

// Scattered field on the forward box during stepping.
class FieldView {
public:
    FieldView(const SpaceTimeGrid& grid, const Vec3& x0, const std::vector<double>& usc, double t);
    int n() const { return n_; }
    double t() const { return t_; }
    double scattered(int i, int j, int k) const { return usc_[(static_cast<std::size_t>(i) * n_ + j) * n_ + k]; }
    double incident(int i, int j, int k) const;
    double total(int i, int j, int k) const { return incident(i, j, k) + scattered(i, j, k); }
    double interpolate_total(const Vec3& x, Interp order) const;
    const SpaceTimeGrid& grid() const { return grid_; }
    const Vec3& source() const { return x0_; }

private:
    const SpaceTimeGrid& grid_;
    Vec3 x0_;
    const std::vector<double>& usc_;
    double t_;
    int n_;
};

// Observer called at every time level n (t = n dt) once u^n is known.
using ForwardObserver = std::function<void(int step, const FieldView&)>;

struct ForwardStats {
    int steps = 0;
    int first_step = 0;
    double max_scattered = 0.0;
    double min_scattered = 0.0;
};

ForwardStats solve_forward(const ProblemGeometry& g, const TargetModel& model, double s,
                           const SpaceTimeGrid& grid, const ForwardObserver& observer,
                           const std::vector<int>& observe_steps = {});

// Dirichlet and Neumann data for one source, (node, time) order.
struct SourceTraces {
    std::vector<double> g0, g1;
};

SourceTraces extract_traces(const ProblemGeometry& g, const TargetModel& model, double s,
                            const SpaceTimeGrid& grid, const BoundaryNodes& nodes,
                            const std::vector<double>& times, Interp order = Interp::trilinear);

struct CauchyTraces {
    std::string stage = "raw";
    std::vector<Vec3> points, normals;
    std::vector<double> times, sources;
    // (source, node, time)
    std::vector<double> g0, g1;
    double noise_delta = 0.0;
    std::uint64_t noise_seed = 0;
    nlohmann::json meta = nlohmann::json::object();

    std::size_t S() const { return sources.size(); }
    std::size_t B() const { return points.size(); }
    std::size_t T() const { return times.size(); }
    std::size_t index(std::size_t s, std::size_t b, std::size_t t) const { return (s * B() + b) * T() + t; }
};

// Solves every source (in parallel) and assembles the dataset. Throws if g0 <= 0 anywhere.
CauchyTraces generate_traces(const ProblemGeometry& g, const TargetModel& model,
                             const SpaceTimeGrid& grid, const BoundaryNodes& nodes,
                             const std::vector<double>& times, Interp order = Interp::trilinear);

void check_positive(const CauchyTraces& tr);

CauchyTraces add_noise(const CauchyTraces& tr, double delta, std::uint64_t seed);

// Uniform [-1, 1) draws; portable across standard libraries.
std::vector<double> uniform_signs(std::size_t n, std::uint64_t seed, std::uint64_t stream);

Container to_container(const CauchyTraces& tr);
CauchyTraces traces_from_container(const Container& c);
void write_traces_csv(const std::string& path, const CauchyTraces& tr, std::size_t source);

}  // namespace carleman
