#include "ilt/variational.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>

namespace ilt {

namespace {

void check_family(const Grid& grid, const TestFamily& phi) {
  if (phi.empty()) throw InputError("empty test family");
  bool nontrivial = false;
  for (const auto& f : phi) {
    if (f.size() != grid.num_nodes()) throw InputError("test function size does not match grid");
    if (!f.allFinite() || (f.array() < 0).any()) throw InputError("test functions must be finite and nonnegative");
    if ((f.cwiseProduct(grid.weights()).array() > 0).any()) nontrivial = true;
  }
  if (!nontrivial) throw InputError("test family vanishes on the grid interior");
}

Vec member_masses(const Grid& grid, const Vec& psi, const TestFamily& phi, int p) {
  Vec N(phi.size());
  for (std::size_t i = 0; i < phi.size(); ++i) N[i] = lp_pow(grid, phi[i].cwiseProduct(psi), 2.0 * p);
  return N;
}


// p·cellvol·ψᵀAψ, equal to the link-sum Dirichlet energy.
double fast_energy(const GreenOperator& op, const Vec& psi, int p) {
  const Vec x = op.grid().restrict_to_interior(psi);
  return p * op.grid().cell_volume() * x.dot(op.laplacian() * x);
}

Vec pow_odd(const Vec& psi, int p) { return psi.array().pow(2 * p - 1).matrix(); }

Vec clamp_mask(const Grid& grid, const Vec& v) {
  Vec out = v.cwiseMax(0.0);
  for (Index n = 0; n < out.size(); ++n)
    if (grid.is_boundary(n)) out[n] = 0.0;
  return out;
}

bool normalize_constraint(const Grid& grid, Vec& psi, const TestFamily& phi, int p) {
  const double c = constraint_norm(grid, psi, phi, p);
  if (!(c > 0) || !std::isfinite(c)) return false;
  psi /= std::sqrt(c);
  return true;
}

double weighted_dot(const Grid& grid, const Vec& a, const Vec& b) {
  return (grid.weights().array() * a.array() * b.array()).sum();
}

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

// Euclidean projection onto the probability simplex.
Vec project_simplex(const Vec& v) {
  std::vector<double> u(v.data(), v.data() + v.size());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0, tau = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    cum += u[k];
    const double t = (cum - 1.0) / static_cast<double>(k + 1);
    if (u[k] - t > 0) tau = t;
  }
  return (v.array() - tau).max(0.0).matrix();
}

}  // namespace

Vec theta_weight(const Grid& grid, const Vec& psi, const TestFamily& phi, int p) {
  const Vec N = member_masses(grid, psi, phi, p);
  Vec h = Vec::Zero(grid.num_nodes());
  for (std::size_t i = 0; i < phi.size(); ++i) {
    if (N[i] <= 0) continue;
    h += std::pow(N[i], (1.0 - p) / p) * phi[i].array().pow(2 * p).matrix();
  }
  return h;
}

double theta_rayleigh(const GreenOperator& op, const Vec& psi, const TestFamily& phi, int p) {
  const double c = constraint_norm(op.grid(), psi, phi, p);
  if (!(c > 0)) return kInf;
  return fast_energy(op, psi, p) / c;
}

Vec theta_gradient(const GreenOperator& op, const Vec& psi, const TestFamily& phi, int p) {
  const Grid& grid = op.grid();
  const double c = constraint_norm(grid, psi, phi, p);
  const double r = fast_energy(op, psi, p) / c;
  const Vec h = theta_weight(grid, psi, phi, p);
  const Vec odd = psi.array().sign() * psi.array().abs().pow(2 * p - 1);
  Vec grad = 2.0 * p * op.apply_laplacian(psi) - 2.0 * r * h.cwiseProduct(odd);
  grad /= c;
  for (Index n = 0; n < grad.size(); ++n)
    if (grid.is_boundary(n)) grad[n] = 0.0;
  return grad;
}

double theta_residual(const GreenOperator& op, const Vec& psi, double theta, const TestFamily& phi, int p) {
  const Grid& grid = op.grid();
  const Vec h = theta_weight(grid, psi, phi, p);
  const Vec odd = psi.array().sign() * psi.array().abs().pow(2 * p - 1);
  const Vec source = grid.restrict_to_interior(theta * h.cwiseProduct(odd));
  const Vec lap = p * (op.laplacian() * grid.restrict_to_interior(psi));
  const double denom = source.norm();
  if (!(denom > 0)) return kInf;
  return (source - lap).norm() / denom;
}

ThetaSolution solve_theta_from(const GreenOperator& op, const TestFamily& phi, int p, const Vec& start,
                               const SolverOptions& opts) {
  const Grid& grid = op.grid();
  check_admissible(p, grid.dim());
  check_family(grid, phi);
  Vec psi = clamp_mask(grid, start);
  if (!normalize_constraint(grid, psi, phi, p)) throw InputError("start field misses the support of the test family");

  ThetaSolution sol;
  double theta = fast_energy(op, psi, p);
  double res = theta_residual(op, psi, theta, phi, p);
  sol.residual_trace.push_back(res);
  Vec best_psi = psi;
  double best_res = res, best_theta = theta;
  int last_progress = 0;
  int it = 0;

  auto finish = [&](const std::string& method) {
    sol.theta = theta;
    sol.psi = psi;
    sol.iterations = it;
    sol.residual = res;
    sol.method = method;
    return sol;
  };

  const double beta = opts.damping;
  for (it = 1; it <= opts.max_iter; ++it) {
    const Vec h = theta_weight(grid, psi, phi, p);
    Vec target = op.apply(h.cwiseProduct(pow_odd(psi, p)));
    target = clamp_mask(grid, target);
    if (!normalize_constraint(grid, target, phi, p)) break;
    psi = (1 - beta) * psi + beta * target;
    normalize_constraint(grid, psi, phi, p);
    const double theta_new = fast_energy(op, psi, p);
    res = theta_residual(op, psi, theta_new, phi, p);
    const double change = std::abs(theta_new - theta) / std::max(theta_new, 1e-300);
    theta = theta_new;
    sol.residual_trace.push_back(res);
    if (res < best_res * (1 - 1e-3)) {
      last_progress = it;
    }
    if (res < best_res) {
      best_res = res;
      best_psi = psi;
      best_theta = theta;
    }
    if (change < opts.tol_value && res < opts.tol_residual) return finish("fixed_point");
    if (it - last_progress > opts.stall_window) break;
  }

  if (!opts.fallback)
    throw ConvergenceError("Theta fixed point did not converge", best_theta, it, best_psi);

  // Sobolev-preconditioned projected gradient on the Rayleigh form; a unit step
  // is the undamped fixed point, so backtracking only ever shortens it.
  psi = best_psi;
  theta = fast_energy(op, psi, p);
  res = theta_residual(op, psi, theta, phi, p);
  double step = 1.0;
  const int budget = it + opts.max_iter;
  for (; it <= budget; ++it) {
    const Vec h = theta_weight(grid, psi, phi, p);
    const Vec q = op.apply(h.cwiseProduct(pow_odd(psi, p)));
    const Vec dir = -(psi - (theta / p) * q);
    const Vec grad = theta_gradient(op, psi, phi, p);
    const double slope = weighted_dot(grid, grad, dir);
    if (!(slope < 0)) break;
    bool accepted = false;
    Vec cand;
    double cand_theta = theta;
    for (int bt = 0; bt < 60; ++bt) {
      cand = clamp_mask(grid, psi + step * dir);
      if (normalize_constraint(grid, cand, phi, p)) {
        cand_theta = fast_energy(op, cand, p);
        if (cand_theta <= theta + 1e-4 * step * slope) {
          accepted = true;
          break;
        }
      }
      step *= 0.5;
    }
    if (!accepted) break;
    const double change = std::abs(cand_theta - theta) / cand_theta;
    psi = cand;
    theta = cand_theta;
    res = theta_residual(op, psi, theta, phi, p);
    sol.residual_trace.push_back(res);
    step = std::min(1.0, 2 * step);
    if (res < best_res) {
      best_res = res;
      best_psi = psi;
      best_theta = theta;
    }
    if (change < opts.tol_value && res < opts.tol_residual) return finish("projected_gradient");
  }
  std::ostringstream os;
  os << "Theta solver did not converge (best residual " << best_res << ")";
  throw ConvergenceError(os.str(), best_theta, it, best_psi);
}

ThetaSolution solve_theta(const GreenOperator& op, const TestFamily& phi, int p, const SolverOptions& opts) {
  const Grid& grid = op.grid();
  check_admissible(p, grid.dim());
  check_family(grid, phi);
  Vec base = Vec::Zero(grid.num_nodes());
  for (const auto& f : phi) base += f.array().pow(2 * p).matrix();
  const int starts = std::max(1, opts.starts);

  ThetaSolution best;
  std::vector<double> values(starts, kInf);
  double lo = kInf, hi = -kInf;
  ConvergenceError* failure = nullptr;
  std::unique_ptr<ConvergenceError> last_failure;
  for (int s = 0; s < starts; ++s) {
    Vec start;
    if (s == 0) {
      start = op.apply(base);
    } else {
      auto rng = make_rng(opts.seed, static_cast<std::uint64_t>(s));
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      Vec r(grid.num_nodes());
      for (Index n = 0; n < r.size(); ++n) r[n] = grid.is_boundary(n) ? 0.0 : unif(rng);
      start = op.apply(r);
    }
    try {
      ThetaSolution sol = solve_theta_from(op, phi, p, start, opts);
      values[s] = sol.theta;
      lo = std::min(lo, sol.theta);
      hi = std::max(hi, sol.theta);
      if (sol.theta < best.theta) best = std::move(sol);
    } catch (const ConvergenceError& e) {
      last_failure = std::make_unique<ConvergenceError>(e);
      failure = last_failure.get();
    }
  }
  if (!std::isfinite(best.theta)) {
    if (failure) throw *failure;
    throw ConvergenceError("Theta solver failed on every start", kInf, 0);
  }
  if (failure) log_warning("some Theta starts did not converge; reporting the best converged start");
  best.start_values = values;
  best.spread = hi - lo;
  return best;
}

Vec rho_mixture(const Vec& lambda, const std::vector<Vec>& g, const TestFamily& phi, int p) {
  Vec h = Vec::Zero(phi.front().size());
  for (std::size_t i = 0; i < phi.size(); ++i)
    h += std::sqrt(std::max(lambda[i], 0.0)) * g[i].array().pow(2 * p - 1).matrix().cwiseProduct(phi[i]);
  return h;
}

double rho_value(const GreenOperator& op, const Vec& lambda, const std::vector<Vec>& g, const TestFamily& phi,
                 int p) {
  const Vec h = rho_mixture(lambda, g, phi, p);
  return weighted_dot(op.grid(), h, op.apply(h));
}

double rho_residual(const GreenOperator& op, const RhoSolution& sol, const TestFamily& phi, int p) {
  const Grid& grid = op.grid();
  const Vec u = op.apply(rho_mixture(sol.lambda, sol.g, phi, p));
  const double rho = weighted_dot(grid, rho_mixture(sol.lambda, sol.g, phi, p), u);
  double worst = 0.0;
  for (std::size_t i = 0; i < phi.size(); ++i) {
    const Vec target = phi[i].cwiseProduct(u);
    const double denom = std::sqrt(weighted_dot(grid, target, target));
    if (!(denom > 0)) return kInf;
    const Vec diff = std::sqrt(sol.lambda[i]) * rho * sol.g[i] - target;
    worst = std::max(worst, std::sqrt(weighted_dot(grid, diff, diff)) / denom);
  }
  return worst;
}

RhoSolution solve_rho(const GreenOperator& op, const TestFamily& phi, int p, const SolverOptions& opts) {
  const Grid& grid = op.grid();
  check_admissible(p, grid.dim());
  check_family(grid, phi);
  const std::size_t n = phi.size();
  RhoSolution sol;
  sol.lambda = Vec::Constant(n, 1.0 / n);
  sol.g.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double norm = lp_norm(grid, phi[i], 2.0 * p);
    if (!(norm > 0)) throw InputError("test family member vanishes on the grid interior");
    sol.g[i] = phi[i] / norm;
  }
  double rho = rho_value(op, sol.lambda, sol.g, phi, p);
  for (int it = 1; it <= opts.max_iter; ++it) {
    const Vec u = op.apply(rho_mixture(sol.lambda, sol.g, phi, p));
    Vec weights(n);
    for (std::size_t i = 0; i < n; ++i) {
      const Vec target = phi[i].cwiseProduct(u);
      const double norm = lp_norm(grid, target, 2.0 * p);
      sol.g[i] = target / norm;
      weights[i] = std::pow(weighted_dot(grid, sol.g[i].array().pow(2 * p - 1).matrix().cwiseProduct(phi[i]), u), 2);
    }
    sol.lambda = (weights / weights.sum()).cwiseMax(1e-12);
    sol.lambda /= sol.lambda.sum();
    const double rho_new = rho_value(op, sol.lambda, sol.g, phi, p);
    const double change = std::abs(rho_new - rho) / rho_new;
    rho = rho_new;
    sol.iterations = it;
    if (change < opts.tol_value) {
      sol.residual = rho_residual(op, sol, phi, p);
      if (sol.residual < opts.tol_residual) break;
    }
  }
  sol.rho = rho;
  sol.residual = rho_residual(op, sol, phi, p);
  for (std::size_t i = 0; i < n; ++i)
    if (sol.lambda[i] < 1e-8) sol.collapsed.push_back(static_cast<int>(i));
  if (!(sol.residual < opts.tol_residual)) {
    std::ostringstream os;
    os << "rho solver did not converge (residual " << sol.residual << ")";
    throw ConvergenceError(os.str(), rho, sol.iterations, sol.lambda);
  }
  return sol;
}

Transport minimizer_transport(const Grid& grid, const Vec& psi, const TestFamily& phi, int p) {
  Transport t;
  const std::size_t n = phi.size();
  t.lambda.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec prod = psi.cwiseProduct(phi[i]);
    const double norm = lp_norm(grid, prod, 2.0 * p);
    if (!(norm > 0)) throw InputError("degenerate member: psi*phi_i vanishes");
    t.lambda[i] = norm * norm;
    t.g.push_back(prod / norm);
    t.mu.push_back(prod.array().pow(2 * p).matrix() / std::pow(t.lambda[i], p));
  }
  return t;
}

RhoSolution rho_from_transport(const GreenOperator& op, const Transport& t, const TestFamily& phi, int p) {
  RhoSolution sol;
  sol.lambda = t.lambda;
  sol.g = t.g;
  sol.rho = rho_value(op, sol.lambda, sol.g, phi, p);
  sol.residual = rho_residual(op, sol, phi, p);
  return sol;
}

GcalSolution gcal(const Vec& mu_in, const Mat& kernel, const GcalOptions& opts, const Vec* warm) {
  const Index L = mu_in.size();
  if (kernel.rows() != L || kernel.cols() != L) throw InputError("kernel and measure sizes differ");
  const Vec mu = normalize_probability(mu_in);
  std::vector<Index> supp;
  for (Index l = 0; l < L; ++l)
    if (mu[l] > 0) supp.push_back(l);
  const Index S = static_cast<Index>(supp.size());

  GcalSolution sol;
  sol.nu = Mat::Zero(L, L);
  sol.scaling = Vec::Zero(L);
  Mat K(S, S);
  Vec m(S);
  for (Index a = 0; a < S; ++a) {
    m[a] = mu[supp[a]];
    for (Index b = 0; b < S; ++b) {
      const double g = kernel(supp[a], supp[b]);
      if (!(g > 0) || !std::isfinite(g)) {
        sol.value = kInf;
        return sol;
      }
      K(a, b) = g * mu[supp[a]] * mu[supp[b]];
    }
  }
  K = 0.5 * (K + K.transpose()).eval();

  Vec a(S);
  if (warm && warm->size() == L) {
    for (Index k = 0; k < S; ++k) a[k] = (*warm)[supp[k]];
  }
  if (!(warm && warm->size() == L) || !(a.array() > 0).all() || !a.allFinite()) {
    a = (m.array() / (K.rowwise().sum()).array()).sqrt();
  }
  double resid = kInf;
  int it = 0;
  for (; it < opts.max_iter; ++it) {
    const Vec Ka = K * a;
    resid = (a.cwiseProduct(Ka) - m).lpNorm<1>();
    if (resid <= opts.tol) break;
    a = (a.array() * m.array() / Ka.array()).sqrt();
  }
  sol.iterations = it;
  sol.marginal_residual = resid;
  if (!(resid <= std::max(opts.tol, 1e-8))) {
    std::ostringstream os;
    os << "scaling iteration did not converge (marginal residual " << resid << ")";
    throw ConvergenceError(os.str(), 2 * m.dot(a.array().log().matrix()), it);
  }
  double value = 0.0;
  for (Index k = 0; k < S; ++k) {
    sol.scaling[supp[k]] = a[k];
    value += 2 * m[k] * std::log(a[k]);
    for (Index j = 0; j < S; ++j) sol.nu(supp[k], supp[j]) = a[k] * K(k, j) * a[j];
  }
  sol.value = value;
  return sol;
}

GcalBounds gcal_bounds(const Vec& u, const CellBounds& tables, const GcalOptions& opts) {
  return {gcal(u, tables.upper, opts).value, gcal(u, tables.lower, opts).value};
}

Alphabet build_alphabet(const GreenOperator& op, const TestFamily& phi, int p, int max_cells) {
  const Grid& grid = op.grid();
  check_family(grid, phi);
  if (max_cells < 1) throw ConfigError("alphabet needs at least one cell");
  std::vector<Index> support;
  for (Index k = 0; k < grid.num_interior(); ++k) {
    const Index node = grid.interior_nodes()[k];
    for (const auto& f : phi)
      if (f[node] > 0) {
        support.push_back(k);
        break;
      }
  }
  const Index count = static_cast<Index>(support.size());
  const Index L = std::min<Index>(max_cells, count);
  Alphabet alph;
  alph.partition.cells.resize(L);
  for (Index l = 0; l < L; ++l) {
    const Index lo = l * count / L, hi = (l + 1) * count / L;
    alph.partition.cells[l].assign(support.begin() + lo, support.begin() + hi);
  }

  alph.cell_weight = Vec::Zero(L);
  Mat potentials(grid.num_interior(), L);
  for (Index l = 0; l < L; ++l) {
    Vec ind = Vec::Zero(grid.num_interior());
    for (Index k : alph.partition.cells[l]) {
      ind[k] = 1.0;
      alph.cell_weight[l] += grid.weights()[grid.interior_nodes()[k]];
    }
    potentials.col(l) = op.apply_interior(ind);
  }
  alph.kernel = Mat::Zero(L, L);
  for (Index l = 0; l < L; ++l) {
    for (Index m = 0; m < L; ++m) {
      double acc = 0.0;
      for (Index k : alph.partition.cells[l]) acc += grid.weights()[grid.interior_nodes()[k]] * potentials(k, m);
      alph.kernel(l, m) = acc / (alph.cell_weight[l] * alph.cell_weight[m]);
    }
  }
  alph.kernel = 0.5 * (alph.kernel + alph.kernel.transpose()).eval();

  for (const auto& f : phi) alph.reference.push_back(cell_integrals(grid, f.array().pow(2 * p).matrix(), alph.partition));
  return alph;
}

double hfrak_objective(const Alphabet& alph, const Vec& lambda, const std::vector<Vec>& mu, int p,
                       const GcalOptions& opts) {
  double acc = 0.0;
  Vec mix = Vec::Zero(alph.kernel.rows());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (lambda[i] <= 0) continue;
    acc += lambda[i] * relative_entropy(mu[i], alph.reference[i]);
    mix += lambda[i] * mu[i];
  }
  return acc + p * gcal(mix, alph.kernel, opts).value;
}

HfrakResult hfrak(const Alphabet& alph, const Vec& lambda_in, int p, const HfrakOptions& opts,
                  const std::vector<Vec>* seed) {
  const std::size_t n = alph.reference.size();
  if (static_cast<std::size_t>(lambda_in.size()) != n) throw InputError("lambda size does not match the family");
  const Vec lambda = normalize_probability(lambda_in);
  const Index L = alph.kernel.rows();

  HfrakResult out;
  out.mu.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec& ref = alph.reference[i];
    if (seed && (*seed)[i].size() == L && ((*seed)[i].array() > 0).count() == (ref.array() > 0).count()) {
      out.mu[i] = (*seed)[i].cwiseProduct((ref.array() > 0).cast<double>().matrix());
    } else {
      out.mu[i] = ref;
    }
    if (!(out.mu[i].sum() > 0)) throw InputError("test family member has no mass on the alphabet");
    out.mu[i] /= out.mu[i].sum();
  }

  auto mixture = [&](const std::vector<Vec>& mu) {
    Vec mix = Vec::Zero(L);
    for (std::size_t i = 0; i < n; ++i) mix += lambda[i] * mu[i];
    return mix;
  };
  auto evaluate = [&](const std::vector<Vec>& mu, const Vec* warm, GcalSolution& g) {
    g = gcal(mixture(mu), alph.kernel, opts.gcal, warm);
    double acc = p * g.value;
    for (std::size_t i = 0; i < n; ++i)
      if (lambda[i] > 0) acc += lambda[i] * relative_entropy(mu[i], alph.reference[i]);
    return acc;
  };

  GcalSolution g;
  double F = evaluate(out.mu, nullptr, g);
  double eta = 1.0;
  int it = 0;
  for (; it < opts.max_iter; ++it) {
    std::vector<Vec> cand(n);
    const Vec loga = g.scaling.array().max(1e-300).log().matrix();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec& ref = alph.reference[i];
      Vec logw = Vec::Constant(L, -kInf);
      double top = -kInf;
      for (Index l = 0; l < L; ++l) {
        if (ref[l] <= 0) continue;
        logw[l] = (1 - eta) * std::log(out.mu[i][l]) + eta * (std::log(ref[l]) - 2.0 * p * loga[l]);
        top = std::max(top, logw[l]);
      }
      Vec w = Vec::Zero(L);
      for (Index l = 0; l < L; ++l)
        if (ref[l] > 0) w[l] = std::exp(logw[l] - top);
      cand[i] = w / w.sum();
    }
    GcalSolution gc;
    const double Fc = evaluate(cand, &g.scaling, gc);
    if (Fc <= F + 1e-15 * std::max(1.0, std::abs(F))) {
      const double change = std::abs(F - Fc) / std::max(1.0, std::abs(F));
      out.mu = std::move(cand);
      F = Fc;
      g = std::move(gc);
      eta = std::min(1.0, 2 * eta);
      if (change < opts.tol) break;
    } else {
      eta *= 0.5;
      if (eta < 1e-10) break;
    }
  }
  out.value = -F;
  out.scaling = g.scaling;
  out.iterations = it;
  if (it >= opts.max_iter) throw ConvergenceError("hfrak iteration did not converge", out.value, it);
  return out;
}

std::vector<Vec> transport_to_alphabet(const Grid& grid, const Alphabet& alph, const Transport& t) {
  std::vector<Vec> mu;
  for (const auto& density : t.mu) {
    Vec m = cell_integrals(grid, density, alph.partition);
    mu.push_back(m / m.sum());
  }
  return mu;
}

BigWResult bigW(const Alphabet& alph, int p, const BigWOptions& opts) {
  const std::size_t n = alph.reference.size();
  BigWResult out;
  if (n == 1) {
    out.lambda = Vec::Ones(1);
    out.inner = hfrak(alph, out.lambda, p, opts.inner);
    out.value = out.inner.value;
    return out;
  }

  std::vector<Vec> warm;
  auto J = [&](const Vec& lambda, HfrakResult* keep) {
    HfrakResult r = hfrak(alph, lambda, p, opts.inner, warm.empty() ? nullptr : &warm);
    double ent = 0.0;
    for (Index i = 0; i < lambda.size(); ++i)
      if (lambda[i] > 0) ent += lambda[i] * std::log(lambda[i]);
    const double v = p * ent - r.value;
    if (keep) *keep = std::move(r);
    return v;
  };

  Vec lambda = Vec::Constant(n, 1.0 / n);
  HfrakResult inner;
  double value = J(lambda, &inner);
  warm = inner.mu;
  double step = 0.25;
  int it = 0;
  for (; it < opts.max_iter; ++it) {
    const double delta = std::min(opts.fd_step, 0.5 * lambda.minCoeff());
    Vec grad(n);
    for (std::size_t i = 0; i < n; ++i) {
      Vec e = -Vec::Constant(n, 1.0 / n);
      e[i] += 1.0;
      grad[i] = (J(lambda + delta * e, nullptr) - J(lambda - delta * e, nullptr)) / (2 * delta);
    }
    const Vec dir = -(grad.array() - grad.mean()).matrix();
    if (dir.norm() < 1e-10) break;
    bool accepted = false;
    bool converged = false;
    for (int bt = 0; bt < 50; ++bt) {
      Vec cand = project_simplex(lambda + step * dir).cwiseMax(1e-12);
      cand /= cand.sum();
      HfrakResult r;
      const double v = J(cand, &r);
      if (v < value) {
        const double move = (cand - lambda).lpNorm<Eigen::Infinity>();
        const double gain = value - v;
        lambda = cand;
        value = v;
        inner = std::move(r);
        warm = inner.mu;
        accepted = true;
        step = std::min(1.0, step * 2);
        converged = move < 1e-9 || gain < opts.tol * std::max(1.0, std::abs(value));
        break;
      }
      step *= 0.5;
    }
    if (!accepted || converged) break;
  }
  out.lambda = lambda;
  out.value = -value;
  out.inner = std::move(inner);
  out.iterations = it;
  return out;
}

PinskyResult pinsky_l(const GreenOperator& op, const TestFamily& phi, int p, const SolverOptions& opts) {
  const Grid& grid = op.grid();
  check_admissible(p, grid.dim());
  if (phi.empty()) throw InputError("empty test family");
  for (const auto& f : phi)
    if (f.size() != grid.num_nodes() || (f.array() < 0).any()) throw InputError("invalid test function");

  auto objective = [&](const Vec& psi) {
    double acc = -fast_energy(op, psi, p);
    for (const auto& f : phi) acc += std::pow(lp_pow(grid, f.cwiseProduct(psi), 2.0 * p), 1.0 / p);
    return acc;
  };
  auto normalize = [&](Vec& psi) {
    const double s = lp_pow(grid, psi, 2.0 * p);
    if (!(s > 0)) return false;
    psi /= std::pow(s, 1.0 / (2.0 * p));
    return true;
  };

  Vec psi = op.apply(grid.weights().unaryExpr([](double w) { return w > 0 ? 1.0 : 0.0; }));
  normalize(psi);
  double F = objective(psi);
  double step = 1.0 / (2.0 * p);
  PinskyResult out;
  int it = 0;
  int quiet = 0;
  for (; it < opts.max_iter; ++it) {
    Vec h = Vec::Zero(grid.num_nodes());
    for (const auto& f : phi) {
      const double N = lp_pow(grid, f.cwiseProduct(psi), 2.0 * p);
      if (N > 0) h += std::pow(N, (1.0 - p) / p) * f.array().pow(2 * p).matrix();
    }
    const Vec odd = pow_odd(psi, p);
    const Vec gradF = 2.0 * h.cwiseProduct(odd) - 2.0 * p * op.apply_laplacian(psi);
    const Vec gradS = 2.0 * p * odd;
    const Vec pf = op.apply(gradF);
    const Vec ps = op.apply(gradS);
    const double kappa = weighted_dot(grid, gradS, pf) / weighted_dot(grid, gradS, ps);
    const Vec dir = pf - kappa * ps;
    const double slope = weighted_dot(grid, gradF - kappa * gradS, dir);
    if (!(slope > 1e-300)) break;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      Vec cand = clamp_mask(grid, psi + step * dir);
      if (normalize(cand)) {
        const double Fc = objective(cand);
        if (Fc >= F + 1e-4 * step * slope) {
          const double gain = Fc - F;
          psi = cand;
          F = Fc;
          accepted = true;
          step = std::min(4.0 / p, 2 * step);
          quiet = gain < opts.tol_value * std::max(1.0, std::abs(F)) ? quiet + 1 : 0;
          break;
        }
      }
      step *= 0.5;
    }
    if (!accepted || quiet >= 3) break;
  }
  out.value = F;
  out.psi = psi;
  out.iterations = it;
  out.finite_moments = F < 0;
  if (it >= opts.max_iter) throw ConvergenceError("Pinsky ascent did not converge", F, it, psi);
  return out;
}

}  // namespace ilt
