#pragma once

#include "ilt/domain.hpp"

#include <vector>

namespace ilt {

enum class ShapeKind { indicator, tabulated };

// A test function φ defined at arbitrary points: scale·1_{open box} or a
// tabulated grid field evaluated by multilinear interpolation.
class Shape {
public:
  static Shape indicator(const Vec& lower, const Vec& upper, double scale = 1.0);
  // scale·1_B, through the bounding box of the domain.
  static Shape constant(const Domain& domain, double scale);
  static Shape tabulated(GridPtr grid, const Vec& values);

  ShapeKind kind() const { return kind_; }
  int dim() const { return static_cast<int>(lower_.size()); }
  double scale() const { return scale_; }
  const Vec& lower() const { return lower_; }
  const Vec& upper() const { return upper_; }
  const GridPtr& grid() const { return grid_; }
  const Vec& table() const { return table_; }

  double operator()(const Point& x) const;
  double sup() const;
  // Pointwise multiple; keeps the kind.
  Shape scaled(double factor) const;

  // Node values on a grid; nodes on the mask get 0, indicator nodes count only
  // when strictly inside the open box.
  Vec discretize(const Grid& grid) const;

  // Coordinates along an axis where the function may jump or kink.
  std::vector<double> breakpoints(int axis) const;

  // ∫_B φ^q dx. Exact for indicators inside intervals and boxes, grid
  // quadrature otherwise.
  double integral_pow(const Domain& domain, double q) const;

private:
  ShapeKind kind_ = ShapeKind::indicator;
  double scale_ = 1.0;
  Vec lower_, upper_;  // support box
  GridPtr grid_;
  Vec table_;
};

using ShapeFamily = std::vector<Shape>;
// Grid fields φ_1..φ_n.
using TestFamily = std::vector<Vec>;

TestFamily discretize(const ShapeFamily& family, const Grid& grid);

}  // namespace ilt
