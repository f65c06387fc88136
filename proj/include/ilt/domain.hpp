#pragma once

#include "ilt/types.hpp"

#include <memory>
#include <string>
#include <vector>

namespace ilt {

enum class DomainKind { interval, box, ball, free_space };

std::string to_string(DomainKind kind);

// Open set B in R^d on which the motions run until their first exit.
class Domain {
public:
  static Domain interval(double a, double b);
  static Domain box(const Vec& lower, const Vec& upper);
  static Domain ball(const Point& center, double radius);
  static Domain free_space(int dim);

  DomainKind kind() const { return kind_; }
  int dim() const { return dim_; }
  bool bounded() const { return kind_ != DomainKind::free_space; }

  const Vec& lower() const { return lower_; }
  const Vec& upper() const { return upper_; }
  const Point& center() const { return center_; }
  double radius() const { return radius_; }

  // Axis-aligned bounding box; throws for free space.
  Vec bbox_lower() const;
  Vec bbox_upper() const;

  bool contains(const Point& x) const;    // open set
  bool in_closure(const Point& x) const;  // closure, with 1e-12 slack
  double volume() const;                  // Lebesgue measure, +inf for free space

  std::string describe() const;

private:
  Domain() = default;
  DomainKind kind_ = DomainKind::interval;
  int dim_ = 1;
  Vec lower_, upper_;
  Point center_;
  double radius_ = 0.0;
};

// Intersection local time of p motions exists in R^d iff p(d-2) < d.
bool admissible(int p, int dim);
void check_admissible(int p, int dim);

// Uniform tensor lattice over the bounding box of a bounded domain. Nodes on
// or outside the boundary are masked; they carry zero quadrature weight and
// pinned zero values (discrete zero-boundary Sobolev space).
class Grid {
public:
  Grid(Domain domain, int cells_per_axis);
  Grid(Domain domain, const std::vector<int>& cells_per_axis);

  const Domain& domain() const { return domain_; }
  int dim() const { return domain_.dim(); }
  Index num_nodes() const { return num_nodes_; }
  Index num_interior() const { return static_cast<Index>(interior_nodes_.size()); }

  const std::vector<int>& cells() const { return cells_; }
  const Vec& spacing() const { return spacing_; }
  double cell_volume() const { return cell_volume_; }
  const Vec& origin() const { return origin_; }

  // Nodes per axis = cells + 1; node index is row-major with the last axis fastest.
  int nodes_along(int axis) const { return cells_[axis] + 1; }
  std::vector<int> multi_index(Index node) const;
  Index node_index(const std::vector<int>& multi) const;
  Point coordinate(Index node) const;

  bool is_boundary(Index node) const { return interior_index_[node] < 0; }
  const std::vector<Index>& interior_nodes() const { return interior_nodes_; }
  // -1 for masked nodes.
  Index interior_index(Index node) const { return interior_index_[node]; }

  // Trapezoid weights over all nodes (zero on the mask).
  const Vec& weights() const { return weights_; }

  Index nearest_node(const Point& x) const;

  // Interior restriction / zero extension between full-node and interior vectors.
  Vec restrict_to_interior(const Vec& full) const;
  Vec extend_from_interior(const Vec& interior) const;

  // Multilinear interpolation of a full-node field at an arbitrary point.
  double interpolate(const Vec& full, const Point& x) const;

private:
  void build();

  Domain domain_;
  std::vector<int> cells_;
  Vec spacing_;
  Vec origin_;
  double cell_volume_ = 0.0;
  Index num_nodes_ = 0;
  std::vector<Index> strides_;
  std::vector<Index> interior_index_;
  std::vector<Index> interior_nodes_;
  Vec weights_;
};

using GridPtr = std::shared_ptr<const Grid>;

GridPtr make_grid(Domain domain, int cells_per_axis);

}  // namespace ilt
