#include "ilt/domain.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace ilt {

std::string to_string(DomainKind kind) {
  switch (kind) {
    case DomainKind::interval: return "interval";
    case DomainKind::box: return "box";
    case DomainKind::ball: return "ball";
    case DomainKind::free_space: return "free_space";
  }
  return "unknown";
}

Domain Domain::interval(double a, double b) {
  if (!(a < b) || !std::isfinite(a) || !std::isfinite(b))
    throw ConfigError("interval requires finite a < b");
  Domain d;
  d.kind_ = DomainKind::interval;
  d.dim_ = 1;
  d.lower_ = Vec::Constant(1, a);
  d.upper_ = Vec::Constant(1, b);
  d.center_ = Vec::Constant(1, 0.5 * (a + b));
  d.radius_ = 0.5 * (b - a);
  return d;
}

Domain Domain::box(const Vec& lower, const Vec& upper) {
  if (lower.size() == 0 || lower.size() != upper.size())
    throw ConfigError("box bounds must be nonempty and of equal dimension");
  for (Index i = 0; i < lower.size(); ++i)
    if (!(lower[i] < upper[i]) || !std::isfinite(lower[i]) || !std::isfinite(upper[i]))
      throw ConfigError("box requires finite lower < upper on every axis");
  if (lower.size() == 1) return interval(lower[0], upper[0]);
  Domain d;
  d.kind_ = DomainKind::box;
  d.dim_ = static_cast<int>(lower.size());
  d.lower_ = lower;
  d.upper_ = upper;
  d.center_ = 0.5 * (lower + upper);
  return d;
}

Domain Domain::ball(const Point& center, double radius) {
  if (center.size() == 0 || !(radius > 0) || !std::isfinite(radius))
    throw ConfigError("ball requires a centre and a positive radius");
  if (center.size() == 1) return interval(center[0] - radius, center[0] + radius);
  Domain d;
  d.kind_ = DomainKind::ball;
  d.dim_ = static_cast<int>(center.size());
  d.center_ = center;
  d.radius_ = radius;
  d.lower_ = center.array() - radius;
  d.upper_ = center.array() + radius;
  return d;
}

Domain Domain::free_space(int dim) {
  if (dim <= 2)
    throw ConfigError("free space is only allowed for d >= 3 (the domain must be bounded when d <= 2)");
  Domain d;
  d.kind_ = DomainKind::free_space;
  d.dim_ = dim;
  d.center_ = Vec::Zero(dim);
  return d;
}

Vec Domain::bbox_lower() const {
  if (!bounded()) throw UnsupportedError("free space has no bounding box");
  return lower_;
}

Vec Domain::bbox_upper() const {
  if (!bounded()) throw UnsupportedError("free space has no bounding box");
  return upper_;
}

bool Domain::contains(const Point& x) const {
  if (x.size() != dim_) return false;
  switch (kind_) {
    case DomainKind::interval:
    case DomainKind::box:
      return ((x.array() > lower_.array()) && (x.array() < upper_.array())).all();
    case DomainKind::ball:
      return (x - center_).norm() < radius_;
    case DomainKind::free_space:
      return x.allFinite();
  }
  return false;
}

bool Domain::in_closure(const Point& x) const {
  constexpr double slack = 1e-12;
  if (x.size() != dim_) return false;
  switch (kind_) {
    case DomainKind::interval:
    case DomainKind::box:
      return ((x.array() >= lower_.array() - slack) && (x.array() <= upper_.array() + slack)).all();
    case DomainKind::ball:
      return (x - center_).norm() <= radius_ + slack;
    case DomainKind::free_space:
      return x.allFinite();
  }
  return false;
}

double Domain::volume() const {
  switch (kind_) {
    case DomainKind::interval:
    case DomainKind::box:
      return (upper_ - lower_).prod();
    case DomainKind::ball: {
      const double d = dim_;
      return std::pow(std::numbers::pi, d / 2) / std::tgamma(d / 2 + 1) * std::pow(radius_, d);
    }
    case DomainKind::free_space:
      return kInf;
  }
  return kInf;
}

std::string Domain::describe() const {
  std::ostringstream os;
  os << to_string(kind_) << "(d=" << dim_;
  if (kind_ == DomainKind::interval || kind_ == DomainKind::box) {
    os << ", lower=[";
    for (Index i = 0; i < lower_.size(); ++i) os << (i ? "," : "") << lower_[i];
    os << "], upper=[";
    for (Index i = 0; i < upper_.size(); ++i) os << (i ? "," : "") << upper_[i];
    os << "]";
  } else if (kind_ == DomainKind::ball) {
    os << ", radius=" << radius_;
  }
  os << ")";
  return os.str();
}

bool admissible(int p, int dim) { return p >= 1 && dim >= 1 && p * (dim - 2) < dim; }

void check_admissible(int p, int dim) {
  if (!admissible(p, dim)) {
    std::ostringstream os;
    os << "inadmissible configuration p=" << p << ", d=" << dim
       << ": intersection local time requires p(d-2) < d";
    throw ConfigError(os.str());
  }
}

Grid::Grid(Domain domain, int cells_per_axis)
    : Grid(domain, std::vector<int>(domain.dim(), cells_per_axis)) {}

Grid::Grid(Domain domain, const std::vector<int>& cells_per_axis) : domain_(std::move(domain)) {
  if (!domain_.bounded()) throw UnsupportedError("grids require a bounded domain");
  cells_ = cells_per_axis;
  build();
}

void Grid::build() {
  const int d = domain_.dim();
  if (static_cast<int>(cells_.size()) != d)
    throw ConfigError("grid resolution must be given for every axis");
  for (int c : cells_)
    if (c < 2) throw ConfigError("grid needs at least 2 cells per axis");

  origin_ = domain_.bbox_lower();
  spacing_.resize(d);
  for (int a = 0; a < d; ++a)
    spacing_[a] = (domain_.bbox_upper()[a] - origin_[a]) / cells_[a];
  cell_volume_ = spacing_.prod();

  strides_.assign(d, 1);
  for (int a = d - 2; a >= 0; --a) strides_[a] = strides_[a + 1] * (cells_[a + 1] + 1);
  num_nodes_ = strides_[0] * (cells_[0] + 1);

  interior_index_.assign(num_nodes_, -1);
  interior_nodes_.clear();
  weights_ = Vec::Zero(num_nodes_);
  for (Index n = 0; n < num_nodes_; ++n) {
    const auto m = multi_index(n);
    bool on_lattice_edge = false;
    for (int a = 0; a < d; ++a)
      if (m[a] == 0 || m[a] == cells_[a]) on_lattice_edge = true;
    if (on_lattice_edge) continue;
    if (domain_.kind() == DomainKind::ball) {
      // Nodes within a relative 1e-9 of the sphere count as boundary.
      const double r = (coordinate(n) - domain_.center()).norm();
      if (r >= domain_.radius() * (1 - 1e-9)) continue;
    }
    interior_index_[n] = static_cast<Index>(interior_nodes_.size());
    interior_nodes_.push_back(n);
    weights_[n] = cell_volume_;
  }
  if (interior_nodes_.empty()) throw ConfigError("grid has no interior nodes");
}

std::vector<int> Grid::multi_index(Index node) const {
  std::vector<int> m(cells_.size());
  for (std::size_t a = 0; a < cells_.size(); ++a) {
    m[a] = static_cast<int>(node / strides_[a]);
    node %= strides_[a];
  }
  return m;
}

Index Grid::node_index(const std::vector<int>& multi) const {
  Index n = 0;
  for (std::size_t a = 0; a < cells_.size(); ++a) n += multi[a] * strides_[a];
  return n;
}

Point Grid::coordinate(Index node) const {
  const auto m = multi_index(node);
  Point x(dim());
  for (int a = 0; a < dim(); ++a) x[a] = origin_[a] + m[a] * spacing_[a];
  return x;
}

Index Grid::nearest_node(const Point& x) const {
  std::vector<int> m(cells_.size());
  for (int a = 0; a < dim(); ++a) {
    const long k = std::lround((x[a] - origin_[a]) / spacing_[a]);
    m[a] = static_cast<int>(std::clamp<long>(k, 0, cells_[a]));
  }
  return node_index(m);
}

Vec Grid::restrict_to_interior(const Vec& full) const {
  if (full.size() != num_nodes_) throw InputError("field size does not match grid");
  Vec out(num_interior());
  for (Index k = 0; k < num_interior(); ++k) out[k] = full[interior_nodes_[k]];
  return out;
}

Vec Grid::extend_from_interior(const Vec& interior) const {
  if (interior.size() != num_interior()) throw InputError("interior vector size does not match grid");
  Vec out = Vec::Zero(num_nodes_);
  for (Index k = 0; k < num_interior(); ++k) out[interior_nodes_[k]] = interior[k];
  return out;
}

double Grid::interpolate(const Vec& full, const Point& x) const {
  if (full.size() != num_nodes_) throw InputError("field size does not match grid");
  const int d = dim();
  std::vector<int> base(d);
  std::vector<double> frac(d);
  for (int a = 0; a < d; ++a) {
    const double t = (x[a] - origin_[a]) / spacing_[a];
    if (t < 0 || t > cells_[a]) return 0.0;
    int k = static_cast<int>(std::floor(t));
    k = std::clamp(k, 0, cells_[a] - 1);
    base[a] = k;
    frac[a] = t - k;
  }
  double acc = 0.0;
  std::vector<int> m(d);
  for (int corner = 0; corner < (1 << d); ++corner) {
    double wgt = 1.0;
    for (int a = 0; a < d; ++a) {
      const int bit = (corner >> a) & 1;
      m[a] = base[a] + bit;
      wgt *= bit ? frac[a] : 1.0 - frac[a];
    }
    if (wgt != 0.0) acc += wgt * full[node_index(m)];
  }
  return acc;
}

GridPtr make_grid(Domain domain, int cells_per_axis) {
  const int d = domain.dim();
  return std::make_shared<const Grid>(std::move(domain), std::vector<int>(d, cells_per_axis));
}

}  // namespace ilt
