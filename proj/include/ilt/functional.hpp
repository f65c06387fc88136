#pragma once

#include "ilt/green.hpp"
#include "ilt/shapes.hpp"

#include <vector>

namespace ilt {

// Σ_nodes w |f|^q with trapezoid weights.
double lp_pow(const Grid& grid, const Vec& f, double q);
double lp_norm(const Grid& grid, const Vec& f, double q);

// (p/2)·Σ_links (forward difference / h)²·cell volume.
double dirichlet_energy(const Grid& grid, const Vec& psi, int p);

// Σ_i ‖φ_i ψ‖_{2p}^2.
double constraint_norm(const Grid& grid, const Vec& psi, const TestFamily& phi, int p);

// Renormalize to unit mass. Deviations beyond 1e-12 are logged and corrected;
// negative or non-finite masses are rejected.
Vec normalize_probability(const Vec& masses);

// H(μ | ref) = Σ μ log(μ/ref); +inf when μ charges a zero of ref.
double relative_entropy(const Vec& mu, const Vec& ref);

// H(ν | ν₁⊗μ) for equal marginals (within tol), +inf otherwise.
double pair_entropy(const Mat& nu, const Vec& mu, double tol = 1e-10);

// ⟨μ, 𝔄μ⟩ for node masses μ (a density f has masses w·f).
double measure_energy(const GreenOperator& op, const Vec& masses);

// Same for atoms at arbitrary points via closed forms; coinciding atoms in
// d >= 2 raise SingularDiagonalError.
double measure_energy_atomic(const Domain& domain, const std::vector<Point>& atoms, const Vec& masses);

// Pushforward of node masses to partition cells. Mass on an uncovered node
// raises PartitionError.
Vec project_measure(const Grid& grid, const Vec& masses, const Partition& partition);

// Cellwise Σ w·f for a full-node density f.
Vec cell_integrals(const Grid& grid, const Vec& density, const Partition& partition);

// Atoms of mass multiplicity/k at the nearest grid nodes.
Vec empirical_measure(const Grid& grid, const std::vector<Point>& points);

// Bounded-Lipschitz distance between two measures on sorted, equally spaced
// 1-d points: sup{∫f d(μ-ν) : |f| <= 1, Lip(f) <= 1}.
double bounded_lipschitz_1d(const Vec& centers, const Vec& mu, const Vec& nu);

}  // namespace ilt
