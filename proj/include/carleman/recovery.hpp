#pragma once

#include "carleman/basis.hpp"
#include "carleman/forward.hpp"
#include "carleman/inversion.hpp"

#include <optional>
#include <string>
#include <vector>

namespace carleman {

// a_comp on the inversion grid, (l, spatial node); zero outside |x| < R.
struct ReconstructedCoefficient {
    InversionGrid grid;
    std::vector<double> values;
    std::string config_hash;
    int iterations = 0;

    double at(int l, int s) const { return values[static_cast<std::size_t>(l) * grid.spatial() + s]; }
};

ReconstructedCoefficient recover_coefficient(const InversionGrid& g, const CoefficientVectorField& V,
                                             const CouplingTensors& tensors);
// Same quantity by synthesizing v(x, s, t) at quadrature nodes and integrating in s.
ReconstructedCoefficient recover_coefficient_quadrature(const InversionGrid& g, const CoefficientVectorField& V,
                                                        const BasisSet& basis);

// Nodes of the true target support, (l, spatial node); time faces excluded.
std::vector<char> target_mask(const InversionGrid& g, const TargetModel& m, const ProblemGeometry& geom);
// Exact coefficient sampled on the grid (faces use the adjacent open-interval value).
ReconstructedCoefficient sample_model(const InversionGrid& g, const TargetModel& m, const ProblemGeometry& geom);

double compute_contrast(const ReconstructedCoefficient& rec, const std::vector<char>& mask, double background = 1.0);

// Centroid of the excess over the background above `threshold` of the peak excess at level l.
std::optional<Vec3> extract_center(const ReconstructedCoefficient& rec, int l, double threshold = 0.5,
                                   double background = 1.0);

struct CenterSample {
    double t = 0.0;
    bool found = false;
    Vec3 exact{}, computed{};
    double distance = 0.0;
};

struct FieldMetrics {
    double relative_l2 = 0.0;
    double mask_max_error = 0.0;
    double contrast = 0.0;
    std::vector<CenterSample> centers;
};

FieldMetrics field_error(const ReconstructedCoefficient& rec, const TargetModel& m, const ProblemGeometry& geom,
                         double threshold = 0.5);

// Mean center distance over the listed times (nearest grid levels); missing centers count as `miss`.
double mean_center_error(const FieldMetrics& fm, const std::vector<double>& times, double miss);

void write_coefficient_csv(const std::string& path, const ReconstructedCoefficient& rec);
// One legacy structured-points file per time level: prefix_XXXX.vtk.
std::vector<std::string> write_coefficient_vtk(const std::string& prefix, const ReconstructedCoefficient& rec);
void write_centers_csv(const std::string& path, const FieldMetrics& fm);

}  // namespace carleman
