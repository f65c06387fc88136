#pragma once

#include "ilt/domain.hpp"

#include <Eigen/SparseCholesky>

#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

namespace ilt {

// Kernel of the free-space Green function for generator ½Δ. d = 2 uses the
// logarithmic potential -(1/π) log r (only meaningful as part of a difference).
double free_space_potential(int dim, double r);

// Closed forms for interval, ball and free space; boxes go through a grid solve.
double green_eval(const Domain& domain, const Point& x, const Point& y);

// E_x[T] for the killed motion.
double mean_exit_time(const Domain& domain, const Point& x);

using KernelFn = std::function<double(const Point&, const Point&)>;

enum class GreenMode { sparse_solve, dense_kernel };

// The operator 𝔄 on a grid, 𝔄f = (-½Δ_h)^{-1} f with zero boundary values.
// Immutable after construction.
class GreenOperator {
public:
  explicit GreenOperator(GridPtr grid, GreenMode mode = GreenMode::sparse_solve);

  const Grid& grid() const { return *grid_; }
  const GridPtr& grid_ptr() const { return grid_; }
  GreenMode mode() const { return mode_; }

  // -½Δ_h restricted to interior nodes, indexed by Grid::interior_index.
  const SpMat& laplacian() const { return laplacian_; }

  // Full-node density -> full-node potential.
  Vec apply(const Vec& f) const;
  Vec apply_interior(const Vec& f) const;
  // -½Δ_h applied to a full-node field; result is zero on the mask.
  Vec apply_laplacian(const Vec& u) const;

  bool has_kernel() const { return kernel_.size() > 0; }
  // Dense kernel G(x_i, x_j) over interior nodes, equal to A^{-1}/cell_volume.
  const Mat& kernel() const;

  // Potential of a unit point mass: full-node field G(., y) from a multilinear delta.
  Vec point_potential(const Point& y) const;

private:
  GridPtr grid_;
  GreenMode mode_;
  SpMat laplacian_;
  Eigen::SimplicialLDLT<SpMat> solver_;
  Mat kernel_;
};

// Dense table of closed-form values over interior nodes. For d >= 2 the
// diagonal is the free-space singularity averaged over a ball of one cell's
// volume plus the smooth part evaluated at the node.
Mat closed_form_table(const Grid& grid);

// Cells of interior node indices (Grid::interior_index numbering).
struct Partition {
  std::vector<std::vector<Index>> cells;
  Index size() const { return static_cast<Index>(cells.size()); }
};

struct CellBounds {
  Mat upper;  // sup of min(G, M) over node pairs
  Mat lower;  // inf of G over node pairs
};

CellBounds green_cell_bounds(const GreenOperator& op, const Partition& partition, double cutoff);

// Pointwise cutoff min(K, M).
Mat cutoff_table(const Mat& kernel, double cutoff);

// Kernel G(x, y) usable at arbitrary points: closed forms where available,
// otherwise interpolation of the discrete potential (boxes).
KernelFn make_kernel(const Domain& domain, int box_cells = 32);

// CSV with header "i,j,G" over interior node indices.
void write_kernel_csv(std::ostream& os, const Mat& table);

}  // namespace ilt
