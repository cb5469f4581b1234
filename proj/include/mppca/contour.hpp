#pragma once

#include "mppca/types.hpp"

#include <functional>

namespace mppca::contour {

struct ContourOptions {
  double level = 0.5;
  Index rays = 180;          // over [0, 2 pi)
  double max_radius = 10.0;
  Index scan_steps = 400;    // coarse steps before bisection
  Index bisection_steps = 60;
};

// Level set of a 2-D function around an anchor, traced along rays. Along each
// ray the radius is the first crossing below `level`, or max_radius when none
// is found (bounded is then false).
struct Contour {
  std::vector<double> angles;  // radians
  std::vector<double> radii;
  bool bounded = true;

  // Angle in degrees, in [0, 180), of the ray with the largest radius.
  double major_axis_deg() const;
  // Principal axis, in degrees in [0, 180), of the second-moment matrix of the
  // contour points relative to the anchor.
  double moment_axis_deg() const;
  // max radius / min radius.
  double anisotropy() const;
  // Radius along the major axis over radius across it (both averaged over
  // the two opposite rays).
  double axis_ratio() const;
};

Contour trace_contour(const std::function<double(const Vector&)>& f, const Vector& anchor,
                      const ContourOptions& options = {});

// Smallest angular distance, in degrees, from an axis angle to the x or y axis.
double deviation_from_coordinate_axes(double axis_deg);

}  // namespace mppca::contour
