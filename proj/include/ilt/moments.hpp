#pragma once

#include "ilt/green.hpp"
#include "ilt/shapes.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ilt {

enum class PhiMethod { dp, brute };

inline constexpr int kPhiDpCap = 20;
inline constexpr int kPhiBruteCap = 9;

// Φ_k from a (k+1)x(k+1) kernel table whose row/column 0 is the start point:
// (1/k!) Σ_σ Π_i G(y_σ(i-1), y_σ(i)).
double phi_k_table(const Mat& table, PhiMethod method = PhiMethod::dp);

// Φ_k at arbitrary points. Coincident points give +inf in d >= 2; an optional
// cutoff replaces G by min(G, M).
double phi_k(const std::vector<Point>& points, const Point& start, const Domain& domain, const KernelFn& kernel,
             PhiMethod method = PhiMethod::dp, std::optional<double> cutoff = std::nullopt);

enum class Quadrature { automatic, tensor, transfer, monte_carlo };

std::string to_string(Quadrature q);

struct MomentOptions {
  Quadrature quad = Quadrature::automatic;
  int gl_nodes = 32;                     // Gauss-Legendre nodes per axis, split over panels
  double tensor_budget = 1e10;           // Φ_k evaluations times 2^k k^2
  long long mc_samples = 200000;
  int mc_batches = 16;
  std::uint64_t seed = 1;
  int transfer_cells = 2048;             // per axis, d = 1; coarser in higher d
  std::optional<double> cutoff;
};

struct MomentValue {
  double value = 0.0;
  double stderr = 0.0;
  std::string method;
  bool partial = false;  // tensor budget exceeded, Monte Carlo used instead
};

// Motions start at starts[0] (common start) or at starts[i], one per motion.
struct MomentProblem {
  Domain domain;
  ShapeFamily phi;
  int p = 1;
  std::vector<Point> starts;
};

// E[Π_i ⟨φ_i^{2p}, ℓ⟩^{c_i}] / k!^p with c_i = kλ_i, Σc_i = k.
MomentValue moment_mixed(const MomentProblem& problem, const std::vector<int>& counts,
                         const MomentOptions& opts = {});
// Same with λ on the simplex; kλ_i must be integral.
MomentValue moment_mixed(const MomentProblem& problem, int k, const Vec& lambda, const MomentOptions& opts = {});

// E[(1/k!^p)(Σ_i ⟨φ_i^{2p}, ℓ⟩^{1/p})^{kp}] by exact multinomial assembly.
MomentValue moment_sum(const MomentProblem& problem, int k, const MomentOptions& opts = {});

struct MomentEntry {
  int k = 0;
  Vec lambda;
  double value = 0.0;
  double stderr = 0.0;
  std::string method;
};

struct MomentSequence {
  int p = 1;
  // true: values are already divided by k!^p; false: raw moments.
  bool normalized = true;
  std::vector<MomentEntry> entries;
};

enum class Verdict { finite, infinite, inconclusive };
std::string to_string(Verdict v);

struct TauberResult {
  double theta = 0.0;
  double stderr = kInf;
  Verdict verdict = Verdict::inconclusive;
  double intercept = 0.0;  // A in (1/k) log m̃_k ≈ A + B/k
  double slope = 0.0;      // B
  double ratio_estimate = 0.0;  // (m̃_K / m̃_{K-1})^{1/p} ≈ p/Θ from the last consecutive pair
  std::string note;
};

TauberResult tauber_theta(const MomentSequence& seq);

}  // namespace ilt
