#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace carleman {

struct Quadrature {
    std::vector<double> nodes;
    std::vector<double> weights;
};

Quadrature gauss_legendre(int n, double a, double b);

// psi_n(s) = P_n(s) e^s on (-R, R), orthonormal in L2.
struct BasisSet {
    int N = 0;
    double R = 0.5;
    // Row n holds the coefficients of P_n in powers of u = s/R (length n+1).
    std::vector<std::vector<double>> poly_coeffs;
    Quadrature quadrature;

    double value(int n, double s) const;
    double derivative(int n, double s) const;
    // Values and derivatives of all N functions at s.
    void evaluate(double s, double* psi, double* dpsi) const;
};

BasisSet build_basis(int N, double R, int quadrature_nodes = 0);

struct CouplingTensors {
    int N = 0;
    Eigen::MatrixXd M;      // a_mk = int psi'_k psi_m
    Eigen::MatrixXd M_inv;
    std::vector<double> B;  // b_mnk = int psi'_k psi_n psi_m, index (m*N + n)*N + k
    Eigen::VectorXd C1;     // (1/2R) int psi_n
    Eigen::MatrixXd C2;     // (1/2R) int psi_n psi_k

    double b(int m, int n, int k) const { return B[(static_cast<std::size_t>(m) * N + n) * N + k]; }
};

CouplingTensors coupling_tensors(const BasisSet& basis);
CouplingTensors coupling_tensors(const BasisSet& basis, const Quadrature& q);

// Linear map from samples on a uniform s-grid to the projections int f psi_k ds,
// with f the natural spline through the samples.
class Projector {
public:
    Projector(const std::vector<double>& s_grid, const BasisSet& basis);
    int N() const { return N_; }
    std::size_t samples() const { return S_; }
    // out[k] = sum_j P[k][j] f[j]; f strided by `stride`.
    void apply(const double* f, std::size_t stride, double* out) const;
    Eigen::VectorXd apply(const std::vector<double>& f) const;
    const Eigen::MatrixXd& matrix() const { return P_; }

private:
    int N_;
    std::size_t S_;
    Eigen::MatrixXd P_;
};

Eigen::VectorXd project_onto_basis(const std::vector<double>& s_grid,
                                   const std::vector<double>& samples, const BasisSet& basis);

void write_tensors_csv(const std::string& path, const CouplingTensors& t);

}  // namespace carleman
