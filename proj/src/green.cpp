#include "ilt/green.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numbers>
#include <ostream>

namespace ilt {

namespace {

double unit_ball_volume(int d) {
  return std::pow(std::numbers::pi, 0.5 * d) / std::tgamma(0.5 * d + 1);
}

void require_closure(const Domain& domain, const Point& x) {
  if (x.size() != domain.dim()) throw InputError("point dimension does not match domain");
  if (!domain.in_closure(x)) throw InputError("point lies outside the closure of the domain");
}

double ball_green(const Domain& domain, const Point& x, const Point& y) {
  const int d = domain.dim();
  const double R = domain.radius();
  const Point xr = x - domain.center();
  const Point yr = y - domain.center();
  const double r = (xr - yr).norm();
  const double image2 = xr.squaredNorm() * yr.squaredNorm() / (R * R) - 2 * xr.dot(yr) + R * R;
  const double image = std::sqrt(std::max(image2, 0.0));
  return std::max(free_space_potential(d, r) - free_space_potential(d, image), 0.0);
}

}  // namespace

double free_space_potential(int dim, double r) {
  if (dim == 1) return -r;
  if (dim == 2) return -std::log(r) / std::numbers::pi;
  const double c = std::tgamma(0.5 * dim - 1) / (2 * std::pow(std::numbers::pi, 0.5 * dim));
  return c * std::pow(r, 2.0 - dim);
}

double green_eval(const Domain& domain, const Point& x, const Point& y) {
  if (domain.kind() == DomainKind::free_space && domain.dim() <= 2)
    throw ConfigError("free space requires d >= 3");
  require_closure(domain, x);
  require_closure(domain, y);
  const int d = domain.dim();
  if (d >= 2 && (x - y).norm() == 0.0)
    throw SingularDiagonalError("Green function is infinite on the diagonal for d >= 2");
  if (domain.bounded() && (!domain.contains(x) || !domain.contains(y))) return 0.0;

  switch (domain.kind()) {
    case DomainKind::interval: {
      const double a = domain.lower()[0], b = domain.upper()[0];
      const double lo = std::min(x[0], y[0]), hi = std::max(x[0], y[0]);
      return 2 * (lo - a) * (b - hi) / (b - a);
    }
    case DomainKind::ball:
      return ball_green(domain, x, y);
    case DomainKind::free_space:
      return free_space_potential(d, (x - y).norm());
    case DomainKind::box: {
      const GreenOperator op(make_grid(domain, d == 2 ? 64 : 32));
      return std::max(op.grid().interpolate(op.point_potential(y), x), 0.0);
    }
  }
  return 0.0;
}

double mean_exit_time(const Domain& domain, const Point& x) {
  if (!domain.bounded()) throw UnsupportedError("mean exit time is infinite in free space");
  require_closure(domain, x);
  if (!domain.contains(x)) return 0.0;
  switch (domain.kind()) {
    case DomainKind::interval:
      return (x[0] - domain.lower()[0]) * (domain.upper()[0] - x[0]);
    case DomainKind::ball: {
      const double R = domain.radius();
      return (R * R - (x - domain.center()).squaredNorm()) / domain.dim();
    }
    case DomainKind::box: {
      const GreenOperator op(make_grid(domain, domain.dim() == 2 ? 64 : 32));
      Vec one = op.grid().weights();
      for (Index i = 0; i < one.size(); ++i) one[i] = one[i] > 0 ? 1.0 : 0.0;
      return op.grid().interpolate(op.apply(one), x);
    }
    case DomainKind::free_space:
      break;
  }
  throw UnsupportedError("mean exit time is infinite in free space");
}

GreenOperator::GreenOperator(GridPtr grid, GreenMode mode) : grid_(std::move(grid)), mode_(mode) {
  const Grid& g = *grid_;
  const int d = g.dim();
  const Index n = g.num_interior();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(n) * (2 * d + 1));
  for (Index k = 0; k < n; ++k) {
    const Index node = g.interior_nodes()[k];
    auto m = g.multi_index(node);
    double diag = 0.0;
    for (int a = 0; a < d; ++a) {
      const double c = 0.5 / (g.spacing()[a] * g.spacing()[a]);
      diag += 2 * c;
      for (int s : {-1, 1}) {
        m[a] += s;
        if (m[a] >= 0 && m[a] <= g.cells()[a]) {
          const Index j = g.interior_index(g.node_index(m));
          if (j >= 0) trip.emplace_back(k, j, -c);
        }
        m[a] -= s;
      }
    }
    trip.emplace_back(k, k, diag);
  }
  laplacian_.resize(n, n);
  laplacian_.setFromTriplets(trip.begin(), trip.end());
  laplacian_.makeCompressed();
  solver_.compute(laplacian_);
  if (solver_.info() != Eigen::Success) throw Error("factorization of the discrete Laplacian failed");

  if (mode_ == GreenMode::dense_kernel) {
    kernel_ = solver_.solve(Mat::Identity(n, n));
    kernel_ = 0.5 * (kernel_ + kernel_.transpose()).eval();
    kernel_ /= g.cell_volume();
  }
}

Vec GreenOperator::apply_interior(const Vec& f) const {
  if (f.size() != grid_->num_interior()) throw InputError("interior vector size does not match grid");
  if (!f.allFinite()) throw InputError("non-finite entries in source field");
  if (mode_ == GreenMode::dense_kernel) return kernel_ * f * grid_->cell_volume();
  return solver_.solve(f);
}

Vec GreenOperator::apply(const Vec& f) const {
  if (f.size() != grid_->num_nodes()) throw InputError("field size does not match grid");
  if (!f.allFinite()) throw InputError("non-finite entries in source field");
  return grid_->extend_from_interior(apply_interior(grid_->restrict_to_interior(f)));
}

Vec GreenOperator::apply_laplacian(const Vec& u) const {
  return grid_->extend_from_interior(laplacian_ * grid_->restrict_to_interior(u));
}

const Mat& GreenOperator::kernel() const {
  if (!has_kernel()) throw UnsupportedError("dense kernel not available in sparse_solve mode");
  return kernel_;
}

Vec GreenOperator::point_potential(const Point& y) const {
  const Grid& g = *grid_;
  const int d = g.dim();
  std::vector<int> base(d);
  std::vector<double> frac(d);
  for (int a = 0; a < d; ++a) {
    const double t = (y[a] - g.origin()[a]) / g.spacing()[a];
    int k = std::clamp(static_cast<int>(std::floor(t)), 0, g.cells()[a] - 1);
    base[a] = k;
    frac[a] = std::clamp(t - k, 0.0, 1.0);
  }
  Vec f = Vec::Zero(g.num_interior());
  std::vector<int> m(d);
  for (int corner = 0; corner < (1 << d); ++corner) {
    double wgt = 1.0;
    for (int a = 0; a < d; ++a) {
      const int bit = (corner >> a) & 1;
      m[a] = base[a] + bit;
      wgt *= bit ? frac[a] : 1.0 - frac[a];
    }
    const Index j = g.interior_index(g.node_index(m));
    if (j >= 0) f[j] += wgt / g.cell_volume();
  }
  return g.extend_from_interior(solver_.solve(f));
}

Mat closed_form_table(const Grid& grid) {
  const Domain& dom = grid.domain();
  if (dom.kind() == DomainKind::box)
    throw UnsupportedError("boxes have no closed-form Green function; use the dense operator kernel");
  const Index n = grid.num_interior();
  const int d = grid.dim();
  std::vector<Point> pts(n);
  for (Index k = 0; k < n; ++k) pts[k] = grid.coordinate(grid.interior_nodes()[k]);

  double diag_singular = 0.0;
  if (d >= 2) {
    const double r0 = std::pow(grid.cell_volume() / unit_ball_volume(d), 1.0 / d);
    if (d == 2) {
      diag_singular = -(std::log(r0) - 0.5) / std::numbers::pi;
    } else {
      const double c = std::tgamma(0.5 * d - 1) / (2 * std::pow(std::numbers::pi, 0.5 * d));
      diag_singular = c * 0.5 * d * std::pow(r0, 2.0 - d);
    }
  }

  Mat table(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i; j < n; ++j) {
      double v;
      if (i == j && d >= 2) {
        const double R = dom.radius();
        const double rr = (pts[i] - dom.center()).squaredNorm();
        v = diag_singular - free_space_potential(d, (R * R - rr) / R);
      } else {
        v = green_eval(dom, pts[i], pts[j]);
      }
      table(i, j) = v;
      table(j, i) = v;
    }
  }
  return table;
}

Mat cutoff_table(const Mat& kernel, double cutoff) {
  if (!(cutoff > 0)) throw InputError("cutoff level must be positive");
  return kernel.array().min(cutoff).matrix();
}

CellBounds green_cell_bounds(const GreenOperator& op, const Partition& partition, double cutoff) {
  if (!(cutoff > 0)) throw InputError("cutoff level must be positive");
  const Mat& K = op.kernel();
  const Index L = partition.size();
  if (L == 0) throw PartitionError("empty partition");
  for (const auto& cell : partition.cells) {
    if (cell.empty()) throw PartitionError("partition contains an empty cell");
    for (Index v : cell)
      if (v < 0 || v >= K.rows()) throw PartitionError("partition references a non-interior node");
  }
  CellBounds out{Mat(L, L), Mat(L, L)};
  for (Index l = 0; l < L; ++l) {
    for (Index m = 0; m < L; ++m) {
      double hi = -kInf, lo = kInf;
      for (Index a : partition.cells[l]) {
        for (Index b : partition.cells[m]) {
          const double v = K(a, b);
          hi = std::max(hi, std::min(v, cutoff));
          lo = std::min(lo, v);
        }
      }
      out.upper(l, m) = hi;
      out.lower(l, m) = lo;
    }
  }
  return out;
}

KernelFn make_kernel(const Domain& domain, int box_cells) {
  if (domain.kind() != DomainKind::box)
    return [domain](const Point& x, const Point& y) { return green_eval(domain, x, y); };
  auto op = std::make_shared<const GreenOperator>(make_grid(domain, box_cells));
  return [domain, op](const Point& x, const Point& y) {
    if ((x - y).norm() == 0.0)
      throw SingularDiagonalError("Green function is infinite on the diagonal for d >= 2");
    if (!domain.contains(x) || !domain.contains(y)) return 0.0;
    return std::max(op->grid().interpolate(op->point_potential(y), x), 0.0);
  };
}

void write_kernel_csv(std::ostream& os, const Mat& table) {
  os << "i,j,G\n";
  char buf[64];
  for (Index i = 0; i < table.rows(); ++i) {
    for (Index j = 0; j < table.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", table(i, j));
      os << i << ',' << j << ',' << buf << '\n';
    }
  }
}

}  // namespace ilt
