#include "ilt/functional.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ilt {

double lp_pow(const Grid& grid, const Vec& f, double q) {
  if (f.size() != grid.num_nodes()) throw InputError("field size does not match grid");
  return (grid.weights().array() * f.array().abs().pow(q)).sum();
}

double lp_norm(const Grid& grid, const Vec& f, double q) { return std::pow(lp_pow(grid, f, q), 1.0 / q); }

double dirichlet_energy(const Grid& grid, const Vec& psi, int p) {
  if (psi.size() != grid.num_nodes()) throw InputError("field size does not match grid");
  if (!psi.allFinite()) throw InputError("non-finite field");
  for (Index n = 0; n < grid.num_nodes(); ++n)
    if (grid.is_boundary(n) && psi[n] != 0.0) throw InputError("field does not vanish on the boundary mask");
  const int d = grid.dim();
  double acc = 0.0;
  for (Index n = 0; n < grid.num_nodes(); ++n) {
    auto m = grid.multi_index(n);
    for (int a = 0; a < d; ++a) {
      if (m[a] == grid.cells()[a]) continue;
      ++m[a];
      const double diff = (psi[grid.node_index(m)] - psi[n]) / grid.spacing()[a];
      --m[a];
      acc += diff * diff;
    }
  }
  return 0.5 * p * acc * grid.cell_volume();
}

double constraint_norm(const Grid& grid, const Vec& psi, const TestFamily& phi, int p) {
  double acc = 0.0;
  for (const auto& f : phi) acc += std::pow(lp_pow(grid, f.cwiseProduct(psi), 2.0 * p), 1.0 / p);
  return acc;
}

Vec normalize_probability(const Vec& masses) {
  if (masses.size() == 0) throw InputError("empty measure");
  if (!masses.allFinite() || (masses.array() < 0).any())
    throw InputError("measure masses must be finite and nonnegative");
  const double total = masses.sum();
  if (!(total > 0)) throw InputError("measure has zero total mass");
  if (std::abs(total - 1.0) > 1e-12) {
    std::ostringstream os;
    os << "probability masses sum to " << total << "; renormalizing";
    log_warning(os.str());
  }
  return masses / total;
}

double relative_entropy(const Vec& mu, const Vec& ref) {
  if (mu.size() != ref.size()) throw InputError("measure sizes differ");
  double acc = 0.0;
  for (Index i = 0; i < mu.size(); ++i) {
    if (mu[i] <= 0) continue;
    if (ref[i] <= 0) return kInf;
    acc += mu[i] * std::log(mu[i] / ref[i]);
  }
  return acc;
}

double pair_entropy(const Mat& nu, const Vec& mu, double tol) {
  if (nu.rows() != nu.cols() || nu.rows() != mu.size()) throw InputError("pair measure shape mismatch");
  const Vec left = nu.rowwise().sum();
  const Vec right = nu.colwise().sum().transpose();
  if ((left - right).cwiseAbs().maxCoeff() > tol) return kInf;
  double acc = 0.0;
  for (Index l = 0; l < nu.rows(); ++l) {
    for (Index m = 0; m < nu.cols(); ++m) {
      const double v = nu(l, m);
      if (v <= 0) continue;
      const double r = left[l] * mu[m];
      if (r <= 0) return kInf;
      acc += v * std::log(v / r);
    }
  }
  return acc;
}

double measure_energy(const GreenOperator& op, const Vec& masses) {
  const Grid& g = op.grid();
  if (masses.size() != g.num_nodes()) throw InputError("measure size does not match grid");
  if (!masses.allFinite()) throw InputError("non-finite masses");
  const Vec density = masses.cwiseQuotient(g.weights().cwiseMax(1e-300)).cwiseProduct(
      (g.weights().array() > 0).cast<double>().matrix());
  return masses.dot(op.apply(density));
}

double measure_energy_atomic(const Domain& domain, const std::vector<Point>& atoms, const Vec& masses) {
  if (static_cast<Index>(atoms.size()) != masses.size()) throw InputError("atoms and masses differ in length");
  double acc = 0.0;
  for (std::size_t i = 0; i < atoms.size(); ++i)
    for (std::size_t j = 0; j < atoms.size(); ++j)
      acc += masses[i] * masses[j] * green_eval(domain, atoms[i], atoms[j]);
  return acc;
}

Vec project_measure(const Grid& grid, const Vec& masses, const Partition& partition) {
  if (masses.size() != grid.num_nodes()) throw InputError("measure size does not match grid");
  std::vector<char> covered(grid.num_nodes(), 0);
  Vec out = Vec::Zero(partition.size());
  for (Index l = 0; l < partition.size(); ++l) {
    if (partition.cells[l].empty()) throw PartitionError("partition contains an empty cell");
    for (Index k : partition.cells[l]) {
      if (k < 0 || k >= grid.num_interior()) throw PartitionError("partition references a non-interior node");
      const Index node = grid.interior_nodes()[k];
      if (covered[node]) throw PartitionError("partition cells overlap");
      covered[node] = 1;
      out[l] += masses[node];
    }
  }
  for (Index n = 0; n < grid.num_nodes(); ++n)
    if (masses[n] != 0.0 && !covered[n]) throw PartitionError("partition does not cover the support of the measure");
  return out;
}

Vec cell_integrals(const Grid& grid, const Vec& density, const Partition& partition) {
  return project_measure(grid, grid.weights().cwiseProduct(density), partition);
}

Vec empirical_measure(const Grid& grid, const std::vector<Point>& points) {
  if (points.empty()) throw InputError("empirical measure of an empty list");
  Vec out = Vec::Zero(grid.num_nodes());
  const double w = 1.0 / static_cast<double>(points.size());
  for (const auto& x : points) out[grid.nearest_node(x)] += w;
  return out;
}

double bounded_lipschitz_1d(const Vec& centers, const Vec& mu, const Vec& nu) {
  const Index n = centers.size();
  if (mu.size() != n || nu.size() != n) throw InputError("bounded-Lipschitz inputs differ in length");
  if (n == 0) return 0.0;
  const Vec m = mu - nu;
  if (n == 1) return std::abs(m[0]);
  const double step = centers[1] - centers[0];
  for (Index b = 1; b < n; ++b)
    if (std::abs(centers[b] - centers[b - 1] - step) > 1e-9 * std::max(1.0, std::abs(step)))
      throw InputError("bounded-Lipschitz distance needs equally spaced points");

  // An optimal f sits on the lattice anchored at ±1 with spacing step, so a
  // max-plus recursion over those values is exact.
  std::vector<double> levels;
  const long count = static_cast<long>(std::floor(2.0 / step + 1e-12));
  for (long j = 0; j <= count; ++j) {
    levels.push_back(-1.0 + j * step);
    levels.push_back(1.0 - j * step);
  }
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end(),
                           [](double a, double b) { return std::abs(a - b) < 1e-12; }),
               levels.end());
  const std::size_t S = levels.size();
  const double reach = step * (1 + 1e-12) + 1e-15;

  std::vector<double> best(S), next(S);
  for (std::size_t s = 0; s < S; ++s) best[s] = m[0] * levels[s];
  for (Index b = 1; b < n; ++b) {
    std::size_t lo = 0;
    for (std::size_t s = 0; s < S; ++s) {
      while (levels[lo] < levels[s] - reach) ++lo;
      double top = -kInf;
      for (std::size_t t = lo; t < S && levels[t] <= levels[s] + reach; ++t) top = std::max(top, best[t]);
      next[s] = top + m[b] * levels[s];
    }
    best.swap(next);
  }
  return *std::max_element(best.begin(), best.end());
}

}  // namespace ilt
