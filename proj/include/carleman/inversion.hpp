#pragma once

#include "carleman/basis.hpp"
#include "carleman/container.hpp"
#include "carleman/geometry.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace carleman {

// Finite-difference weights for the m-th derivative at 0 from the given offsets
// (in units of the step).
std::vector<double> fd_weights(int m, const std::vector<double>& offsets);

// Second-order difference operator of derivative order m on a line of n points with
// step h. Rows use centered stencils where they fit and shifted ones otherwise.
struct Stencil1D {
    int order = 0;
    int n = 0;
    std::vector<int> start;
    std::vector<std::vector<double>> coef;
    // Transposed form, per column: (row, coefficient).
    std::vector<std::vector<std::pair<int, double>>> cols;

    Stencil1D squared() const;
};

Stencil1D make_stencil(int order, int n, double h);

enum class NodeRole : std::uint8_t { ghost = 1, boundary = 2, interior = 3 };

// Cartesian nodes (i - half) hx per axis, times t0 + l ht, l = 0..L-1.
struct InversionGrid {
    double R = 0.5;
    double hx = 0.1;
    double ht = 0.2;
    double t0 = 4.0;
    int L = 0;
    int half = 0;
    int n = 0;
    int margin = 1;
    std::vector<NodeRole> role;   // per spatial node
    std::vector<int> eval_nodes;  // |x| < R
    std::vector<int> pinned;      // every non-interior spatial node
    std::vector<int> interior;

    std::size_t spatial() const { return static_cast<std::size_t>(n) * n * n; }
    std::size_t nodes() const { return spatial() * L; }
    Vec3 coord(int s) const;
    double time(int l) const { return t0 + l * ht; }
    int index(int i, int j, int k) const { return (i * n + j) * n + k; }
    double cell_volume() const { return hx * hx * hx * ht; }
};

InversionGrid make_inversion_grid(double R, double T_minus, double T, double hx, double ht, int penalty_order = 2);

// V on every node: values[(l * spatial + s) * N + c].
struct CoefficientVectorField {
    int N = 0;
    std::vector<double> values;

    double& at(const InversionGrid& g, int l, int s, int c) { return values[(static_cast<std::size_t>(l) * g.spatial() + s) * N + c]; }
    double at(const InversionGrid& g, int l, int s, int c) const { return values[(static_cast<std::size_t>(l) * g.spatial() + s) * N + c]; }
};

CoefficientVectorField zero_field(const InversionGrid& g, int N);

// Applies a 1D stencil (or its transpose) along axis 0 = t, 1..3 = x, y, z.
void apply_stencil(const InversionGrid& g, int N, int axis, const Stencil1D& st, const std::vector<double>& in,
                   std::vector<double>& out, bool transpose, bool accumulate);

// First and second derivatives of every component on every node.
struct FieldDerivatives {
    std::vector<double> t, tt, x, xx, y, yy, z, zz;
};
FieldDerivatives field_derivatives(const InversionGrid& g, const CoefficientVectorField& V);

enum class Metric { euclidean, jacobi };
Metric parse_metric(const std::string& s);
std::string to_string(Metric m);

// scaled: V_tt - Delta V + M^{-1} F.  unscaled: M (V_tt - Delta V) + F.
enum class ResidualForm { scaled, unscaled };
ResidualForm parse_residual_form(const std::string& s);
std::string to_string(ResidualForm f);

struct InversionConfig {
    double lambda = 3.0;
    double alpha = 0.01;
    double K = 0.0;        // 0: ten times the norm of the initial field
    double gamma = 0.0;    // 0: 0.5 / Lipschitz estimate
    int max_iters = 2000;
    double grad_tol = 1e-2;
    ChiMode chi = ChiMode::identity;
    int penalty_order = 2;
    Metric metric = Metric::euclidean;
    int metric_refresh = 0;  // jacobi: rebuild the diagonal every this many iterations, 0 never
    ResidualForm residual_form = ResidualForm::scaled;
    int checkpoint_every = 0;
    std::string checkpoint_prefix;
    int power_iters = 30;
    double weight_scale = 1.0;  // multiplies phi^2
    int abort_after_increases = 5;
};

// Advisory check alpha >= 2 exp(-lambda h).
bool alpha_advisory_ok(const InversionConfig& cfg, const CarlemanParams& c);

// F1 = M^{-1} F with F_m = 2 sum b_mnk (vt_n vt_k - grad v_n . grad v_k).
void evaluate_F1(const CouplingTensors& t, const double* vt, const double* vx, const double* vy,
                 const double* vz, double* out);

class Functional {
public:
    Functional(const InversionGrid& grid, const ProblemGeometry& geom, const CarlemanParams& carl,
               const CouplingTensors& tensors, const InversionConfig& cfg);

    const InversionGrid& grid() const { return grid_; }
    const InversionConfig& config() const { return cfg_; }
    int N() const { return N_; }

    // Residual subtracted at every evaluation node, layout as residual().
    void set_target_residual(std::vector<double> r) { target_ = std::move(r); }

    // chi (V_tt - Delta V + F1(V)) in the configured form, layout (l, eval node, c).
    std::vector<double> residual(const CoefficientVectorField& V, bool subtract_target = true) const;

    double value(const CoefficientVectorField& V) const;
    // Full gradient on every node; pinned entries zeroed when mask_pinned.
    double value_and_gradient(const CoefficientVectorField& V, std::vector<double>& grad,
                              bool mask_pinned = true) const;
    // Per evaluation node contributions whose sum is J, layout (l, eval node);
    // penalty contributions follow the data block when alpha > 0.
    std::vector<double> node_terms(const CoefficientVectorField& V) const;

    // Discrete Sobolev norm squared of the penalty order, over evaluation nodes.
    double penalty_norm2(const CoefficientVectorField& V) const;
    double penalty_norm2(const std::vector<double>& v) const;
    // Discrete H1 norm squared over evaluation nodes.
    double h1_norm2(const std::vector<double>& v) const;

    // Diagonal of the Gauss-Newton Hessian at V (used as a fixed metric).
    std::vector<double> jacobi_diagonal(const CoefficientVectorField& V) const;

    // J(V1) - J(V2) - <grad J(V2), V1 - V2> - alpha/2 ||V1 - V2||^2, evaluated
    // node by node from exact algebra to avoid cancellation.
    double convexity_probe(const CoefficientVectorField& V1, const CoefficientVectorField& V2) const;

    double weight(int l, int e) const { return weight_[static_cast<std::size_t>(l) * grid_.eval_nodes.size() + e]; }

private:
    struct Derivs {
        std::vector<double> t, tt, x, xx, y, yy, z, zz;
    };
    void derivatives(const std::vector<double>& v, Derivs& d) const;
    void apply(int axis, const Stencil1D& st, const std::vector<double>& in, std::vector<double>& out,
               bool transpose, bool accumulate) const;
    double penalty(const std::vector<double>& v, const Derivs& d, std::vector<double>* grad,
                   std::vector<double>* per_node) const;
    void node_residual(const Derivs& d, std::size_t flat, const double* target, double* r, double* Q) const;

    InversionGrid grid_;
    ProblemGeometry geom_;
    CarlemanParams carl_;
    CouplingTensors T_;
    InversionConfig cfg_;
    int N_;
    std::vector<double> weight_, chi_;
    std::vector<double> Bsym_;  // b_jpk + b_jkp
    std::vector<double> Lop_, LopT_, Fop_, FopT_;
    std::vector<char> eval_mask_;
    std::vector<Stencil1D> ops_t_, ops_s_;  // index = derivative order
    std::vector<double> target_;
};

struct IterationRecord {
    int iter = 0;
    double J = 0.0;
    double grad_norm = 0.0;
    double V_norm = 0.0;
    double wall_ms = 0.0;
};

struct MinimizeResult {
    CoefficientVectorField field;
    std::vector<IterationRecord> log;
    bool converged = false;
    std::string stop_reason;
    double gamma = 0.0;
    double lipschitz = 0.0;
    double K = 0.0;
    int projections = 0;
    double max_pinned_change = 0.0;
};

// Largest eigenvalue of P^{-1/2} H P^{-1/2} at V (H by gradient differences).
double estimate_lipschitz(const Functional& f, const CoefficientVectorField& V, const std::vector<double>& metric,
                          int iters, std::uint64_t seed = 7);

using IterationCallback = std::function<void(const IterationRecord&, const CoefficientVectorField&)>;

MinimizeResult minimize(const Functional& f, const CoefficientVectorField& initial,
                        const IterationCallback& callback = {});

void write_iteration_log(const std::string& path, const std::vector<IterationRecord>& log);

Container field_to_container(const InversionGrid& g, const CoefficientVectorField& V);
CoefficientVectorField field_from_container(const Container& c, const InversionGrid& g);

}  // namespace carleman
