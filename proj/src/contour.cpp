#include "mppca/contour.hpp"

#include <algorithm>
#include <cmath>

namespace mppca::contour {

namespace {

double wrap_deg(double deg) {
  double a = std::fmod(deg, 180.0);
  if (a < 0) a += 180.0;
  return a;
}

// Radius at the ray closest to `angle`.
double radius_at(const Contour& c, double angle) {
  const double two_pi = 2.0 * M_PI;
  double best = 0.0, best_gap = 1e300;
  for (std::size_t i = 0; i < c.angles.size(); ++i) {
    double gap = std::fmod(std::abs(c.angles[i] - angle), two_pi);
    gap = std::min(gap, two_pi - gap);
    if (gap < best_gap) {
      best_gap = gap;
      best = c.radii[i];
    }
  }
  return best;
}

}  // namespace

double Contour::major_axis_deg() const {
  require(!radii.empty(), "contour is empty");
  const auto it = std::max_element(radii.begin(), radii.end());
  return wrap_deg(angles[static_cast<std::size_t>(it - radii.begin())] * 180.0 / M_PI);
}

double Contour::moment_axis_deg() const {
  require(!radii.empty(), "contour is empty");
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < radii.size(); ++i) {
    const double x = radii[i] * std::cos(angles[i]);
    const double y = radii[i] * std::sin(angles[i]);
    sxx += x * x;
    syy += y * y;
    sxy += x * y;
  }
  return wrap_deg(0.5 * std::atan2(2.0 * sxy, sxx - syy) * 180.0 / M_PI);
}

double Contour::anisotropy() const {
  require(!radii.empty(), "contour is empty");
  const auto [lo, hi] = std::minmax_element(radii.begin(), radii.end());
  return *hi / *lo;
}

double Contour::axis_ratio() const {
  const double major = major_axis_deg() * M_PI / 180.0;
  const double along = 0.5 * (radius_at(*this, major) + radius_at(*this, major + M_PI));
  const double across = 0.5 * (radius_at(*this, major + 0.5 * M_PI) + radius_at(*this, major + 1.5 * M_PI));
  return along / across;
}

Contour trace_contour(const std::function<double(const Vector&)>& f, const Vector& anchor,
                      const ContourOptions& options) {
  require_dim(anchor.size(), 2, "contour anchor");
  require(options.rays >= 4, "contour needs at least four rays");
  require(options.max_radius > 0 && options.scan_steps >= 1, "invalid contour search settings");
  require(f(anchor) >= options.level, "function at the anchor lies below the contour level");

  Contour c;
  const double step = options.max_radius / static_cast<double>(options.scan_steps);
  for (Index k = 0; k < options.rays; ++k) {
    const double theta = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(options.rays);
    Vector dir(2);
    dir << std::cos(theta), std::sin(theta);
    auto at = [&](double r) { return f(anchor + r * dir); };

    double lo = 0.0, hi = -1.0;
    for (Index s = 1; s <= options.scan_steps; ++s) {
      const double r = step * static_cast<double>(s);
      if (at(r) < options.level) {
        hi = r;
        break;
      }
      lo = r;
    }
    double radius = options.max_radius;
    if (hi < 0) {
      c.bounded = false;
    } else {
      for (Index it = 0; it < options.bisection_steps; ++it) {
        const double mid = 0.5 * (lo + hi);
        (at(mid) >= options.level ? lo : hi) = mid;
      }
      radius = 0.5 * (lo + hi);
    }
    c.angles.push_back(theta);
    c.radii.push_back(radius);
  }
  return c;
}

double deviation_from_coordinate_axes(double axis_deg) {
  const double a = wrap_deg(axis_deg);
  return std::min({a, std::abs(a - 90.0), 180.0 - a});
}

}  // namespace mppca::contour
