#pragma once

#include "carleman/basis.hpp"
#include "carleman/forward.hpp"
#include "carleman/inversion.hpp"
#include "carleman/transform.hpp"

#include <vector>

namespace carleman {

// Radial projections onto |x| = R of every pinned node, one per distinct direction.
BoundaryNodes boundary_directions(const InversionGrid& g);

// Projected ln u of the forward solution sampled at every inversion node.
CoefficientVectorField sample_log_field(const ProblemGeometry& geom, const TargetModel& model,
                                        const SpaceTimeGrid& fgrid, const InversionGrid& g, const BasisSet& basis,
                                        Interp order = Interp::tricubic);

// Pinned values: V_bg + dq0 + (|x| - R) dq1 with dq = q - q_bg at the node's direction.
// Data on other node sets is resampled on the sphere first.
void apply_boundary_data(const InversionGrid& g, CoefficientVectorField& V, const TransformedTraces& data,
                         const TransformedTraces& background, int sphere_degree = 0);

// Times of the inversion grid, for trace generation.
std::vector<double> grid_times(const InversionGrid& g);

}  // namespace carleman
