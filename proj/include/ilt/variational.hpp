#pragma once

#include "ilt/functional.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ilt {

struct SolverOptions {
  int max_iter = 20000;
  double tol_value = 1e-10;     // relative change of the objective
  double tol_residual = 1e-6;   // Euler-Lagrange residual
  double damping = 0.5;         // fixed-point relaxation
  int starts = 8;               // multi-start replicas
  std::uint64_t seed = 1;
  bool fallback = true;         // projected gradient when the fixed point stalls
  int stall_window = 400;       // iterations without residual progress before falling back
};

struct ThetaSolution {
  double theta = kInf;
  Vec psi;
  int iterations = 0;
  double residual = kInf;
  std::string method;
  double spread = 0.0;              // max - min over converged starts
  std::vector<double> start_values; // +inf for starts that failed
  std::vector<double> residual_trace;
};

// Rayleigh form E(ψ)/C(ψ); scale invariant, equal to Θ at the minimizer.
double theta_rayleigh(const GreenOperator& op, const Vec& psi, const TestFamily& phi, int p);
// L2 gradient (per unit node weight) of theta_rayleigh.
Vec theta_gradient(const GreenOperator& op, const Vec& psi, const TestFamily& phi, int p);

// Σ_i ‖φ_iψ‖_{2p}^{2-2p} φ_i^{2p}.
Vec theta_weight(const Grid& grid, const Vec& psi, const TestFamily& phi, int p);

double theta_residual(const GreenOperator& op, const Vec& psi, double theta, const TestFamily& phi, int p);

// Single start; throws ConvergenceError when both schemes fail.
ThetaSolution solve_theta_from(const GreenOperator& op, const TestFamily& phi, int p, const Vec& start,
                               const SolverOptions& opts);
ThetaSolution solve_theta(const GreenOperator& op, const TestFamily& phi, int p, const SolverOptions& opts = {});

struct RhoSolution {
  double rho = 0.0;
  Vec lambda;
  std::vector<Vec> g;
  double residual = kInf;
  int iterations = 0;
  std::vector<int> collapsed;  // members with λ_i < 1e-8
};

// h_λ = Σ √λ_i g_i^{2p-1} φ_i.
Vec rho_mixture(const Vec& lambda, const std::vector<Vec>& g, const TestFamily& phi, int p);
double rho_value(const GreenOperator& op, const Vec& lambda, const std::vector<Vec>& g, const TestFamily& phi,
                 int p);
double rho_residual(const GreenOperator& op, const RhoSolution& sol, const TestFamily& phi, int p);
RhoSolution solve_rho(const GreenOperator& op, const TestFamily& phi, int p, const SolverOptions& opts = {});

struct Transport {
  Vec lambda;
  std::vector<Vec> g;
  std::vector<Vec> mu;  // densities
};

Transport minimizer_transport(const Grid& grid, const Vec& psi, const TestFamily& phi, int p);
// (λ, g) of a transport packaged as a ρ candidate, with its value and residual.
RhoSolution rho_from_transport(const GreenOperator& op, const Transport& t, const TestFamily& phi, int p);

struct GcalOptions {
  int max_iter = 200000;
  double tol = 1e-12;  // L1 marginal residual
};

struct GcalSolution {
  double value = kInf;
  Mat nu;
  Vec scaling;  // a, with ν = diag(a) K diag(a), K_lm = G_lm μ_l μ_m
  double marginal_residual = kInf;
  int iterations = 0;
};

// 𝔊(μ) on a finite alphabet by symmetric iterative scaling. A zero of the
// kernel on supp(μ⊗μ) yields +inf.
GcalSolution gcal(const Vec& mu, const Mat& kernel, const GcalOptions& opts = {}, const Vec* warm = nullptr);

struct GcalBounds {
  double upper_kernel_value;  // with the cut-off upper table
  double lower_kernel_value;  // with the lower table
};

GcalBounds gcal_bounds(const Vec& u, const CellBounds& tables, const GcalOptions& opts = {});

// Finite alphabet for the entropic problems: cells of consecutive interior
// nodes over the union of supports, cell-averaged kernel and reference masses
// Φ_il = Σ_{cell l} w φ_i^{2p}.
struct Alphabet {
  Partition partition;
  Mat kernel;
  std::vector<Vec> reference;
  Vec cell_weight;
};

Alphabet build_alphabet(const GreenOperator& op, const TestFamily& phi, int p, int max_cells);

struct HfrakOptions {
  int max_iter = 5000;
  double tol = 1e-12;  // relative change of the objective
  GcalOptions gcal;
};

struct HfrakResult {
  double value = -kInf;  // 𝔥(φ, λ)
  std::vector<Vec> mu;
  Vec scaling;
  int iterations = 0;
};

// Objective Σλ_i H(μ_i|Φ_i) + p𝔊(Σλ_jμ_j).
double hfrak_objective(const Alphabet& alph, const Vec& lambda, const std::vector<Vec>& mu, int p,
                       const GcalOptions& opts = {});
HfrakResult hfrak(const Alphabet& alph, const Vec& lambda, int p, const HfrakOptions& opts = {},
                  const std::vector<Vec>* seed = nullptr);

struct BigWOptions {
  int max_iter = 200;
  double tol = 1e-9;
  double fd_step = 1e-4;
  HfrakOptions inner;
};

struct BigWResult {
  double value = -kInf;
  Vec lambda;
  int iterations = 0;
  HfrakResult inner;
};

BigWResult bigW(const Alphabet& alph, int p, const BigWOptions& opts = {});

// Alphabet measures from a Θ-minimizer: μ_i = cell masses of ψ^{2p}φ_i^{2p}/λ_i^p.
std::vector<Vec> transport_to_alphabet(const Grid& grid, const Alphabet& alph, const Transport& t);

struct PinskyResult {
  double value = -kInf;
  Vec psi;
  int iterations = 0;
  bool finite_moments = false;  // value < 0
};

PinskyResult pinsky_l(const GreenOperator& op, const TestFamily& phi, int p, const SolverOptions& opts = {});

}  // namespace ilt
