#include "ilt/shapes.hpp"

#include <algorithm>
#include <cmath>

namespace ilt {

Shape Shape::indicator(const Vec& lower, const Vec& upper, double scale) {
  if (lower.size() == 0 || lower.size() != upper.size())
    throw ConfigError("indicator bounds must be nonempty and of equal dimension");
  if (!((lower.array() < upper.array()).all())) throw ConfigError("indicator requires lower < upper");
  if (!(scale >= 0) || !std::isfinite(scale)) throw ConfigError("test functions must be nonnegative and bounded");
  Shape s;
  s.kind_ = ShapeKind::indicator;
  s.scale_ = scale;
  s.lower_ = lower;
  s.upper_ = upper;
  return s;
}

Shape Shape::constant(const Domain& domain, double scale) {
  return indicator(domain.bbox_lower(), domain.bbox_upper(), scale);
}

Shape Shape::tabulated(GridPtr grid, const Vec& values) {
  if (!grid || values.size() != grid->num_nodes()) throw ConfigError("tabulated values do not match grid");
  if (!values.allFinite() || (values.array() < 0).any())
    throw ConfigError("test functions must be nonnegative and bounded");
  Shape s;
  s.kind_ = ShapeKind::tabulated;
  s.grid_ = std::move(grid);
  s.table_ = values;
  s.lower_ = s.grid_->domain().bbox_lower();
  s.upper_ = s.grid_->domain().bbox_upper();
  return s;
}

double Shape::operator()(const Point& x) const {
  if (kind_ == ShapeKind::indicator) {
    const bool inside = ((x.array() > lower_.array()) && (x.array() < upper_.array())).all();
    return inside ? scale_ : 0.0;
  }
  return scale_ * grid_->interpolate(table_, x);
}

double Shape::sup() const {
  if (kind_ == ShapeKind::indicator) return scale_;
  return scale_ * table_.maxCoeff();
}

Shape Shape::scaled(double factor) const {
  if (!(factor >= 0)) throw ConfigError("scale factor must be nonnegative");
  Shape s = *this;
  s.scale_ *= factor;
  return s;
}

Vec Shape::discretize(const Grid& grid) const {
  Vec out = Vec::Zero(grid.num_nodes());
  for (Index node : grid.interior_nodes()) out[node] = (*this)(grid.coordinate(node));
  return out;
}

std::vector<double> Shape::breakpoints(int axis) const {
  if (kind_ == ShapeKind::indicator) return {lower_[axis], upper_[axis]};
  std::vector<double> pts;
  for (int k = 0; k <= grid_->cells()[axis]; ++k)
    pts.push_back(grid_->origin()[axis] + k * grid_->spacing()[axis]);
  return pts;
}

double Shape::integral_pow(const Domain& domain, double q) const {
  if (kind_ == ShapeKind::indicator &&
      (domain.kind() == DomainKind::interval || domain.kind() == DomainKind::box)) {
    double vol = 1.0;
    for (Index a = 0; a < lower_.size(); ++a) {
      const double lo = std::max(lower_[a], domain.lower()[a]);
      const double hi = std::min(upper_[a], domain.upper()[a]);
      vol *= std::max(hi - lo, 0.0);
    }
    return std::pow(scale_, q) * vol;
  }
  const int cells = domain.dim() == 1 ? 4096 : (domain.dim() == 2 ? 512 : 96);
  const Grid grid(domain, cells);
  const Vec v = discretize(grid);
  return (grid.weights().array() * v.array().pow(q)).sum();
}

TestFamily discretize(const ShapeFamily& family, const Grid& grid) {
  TestFamily out;
  out.reserve(family.size());
  for (const auto& s : family) out.push_back(s.discretize(grid));
  return out;
}

}  // namespace ilt
