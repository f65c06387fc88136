#include "doctest.h"
#include "generators.hpp"

#include "ilt/variational.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>

using namespace ilt;

namespace {

constexpr double kPi = std::numbers::pi;

Point pt(std::initializer_list<double> xs) {
  Point p(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) p[i++] = x;
  return p;
}

Vec v1(double x) { return Vec::Constant(1, x); }

// -½ second difference on the m = n-1 interior nodes of (0,1), built by hand.
Mat laplacian_1d(int n) {
  const double h = 1.0 / n;
  const int m = n - 1;
  Mat t = Mat::Zero(m, m);
  for (int i = 0; i < m; ++i) {
    t(i, i) = 1.0 / (h * h);
    if (i > 0) t(i, i - 1) = -0.5 / (h * h);
    if (i + 1 < m) t(i, i + 1) = -0.5 / (h * h);
  }
  return t;
}

// p = 1 oracle: Θ = min ψᵀAψ / ψᵀDψ with D = diag(φ²), through the largest
// eigenvalue of D^{1/2}A^{-1}D^{1/2} so a singular D is fine.
double theta_eigen_oracle(const Mat& a, const Vec& phi_interior) {
  const Mat ainv = a.inverse();
  const Vec s = phi_interior.cwiseAbs();
  const Mat m = s.asDiagonal() * ainv * s.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()));
  return 1.0 / es.eigenvalues().maxCoeff();
}

struct Fixture {
  GridPtr grid;
  std::unique_ptr<GreenOperator> op;
  TestFamily phi;
  int p;
  Fixture(Domain d, int cells, const ShapeFamily& fam, int p_)
      : grid(make_grid(std::move(d), cells)), op(std::make_unique<GreenOperator>(grid)),
        phi(discretize(fam, *grid)), p(p_) {}
};

Fixture unit_interval(const ShapeFamily& fam, int p, int cells = 512) {
  return Fixture(Domain::interval(0, 1), cells, fam, p);
}

ShapeFamily constant_one() { return {Shape::constant(Domain::interval(0, 1), 1.0)}; }
ShapeFamily middle_half() { return {Shape::indicator(v1(0.25), v1(0.75))}; }
ShapeFamily two_members() {
  return {Shape::indicator(v1(0.1), v1(0.5)), Shape::indicator(v1(0.4), v1(0.9), 1.5)};
}

// Preconditioned steepest descent on the Rayleigh form with Armijo
// backtracking; deliberately shares nothing with the fixed point beyond the
// objective and its gradient.
double descend(const GreenOperator& op, const TestFamily& phi, int p, Vec psi, int iters = 4000) {
  const Grid& g = op.grid();
  double f = theta_rayleigh(op, psi, phi, p);
  double step = 1.0;
  for (int it = 0; it < iters; ++it) {
    const Vec grad = theta_gradient(op, psi, phi, p);
    Vec dir = -op.apply(grad);
    for (Index n = 0; n < g.num_nodes(); ++n)
      if (g.is_boundary(n)) dir[n] = 0;
    const double slope = (g.weights().array() * grad.array() * dir.array()).sum();
    if (!(slope < 0)) break;
    const double scale = std::sqrt((g.weights().array() * psi.array().square()).sum());
    bool ok = false;
    for (int bt = 0; bt < 60; ++bt) {
      const Vec cand = psi + step * scale * dir;
      const double fc = theta_rayleigh(op, cand, phi, p);
      if (fc <= f + 1e-4 * step * scale * slope) {
        psi = cand / std::sqrt((g.weights().array() * cand.array().square()).sum());
        const double gain = f - fc;
        f = fc;
        ok = true;
        step = std::min(1.0, 2 * step);
        if (gain < 1e-14 * f) return f;
        break;
      }
      step *= 0.5;
    }
    if (!ok) break;
  }
  return f;
}

Vec random_field(gen::Gen& rng, const Grid& g) {
  Vec r = Vec::Zero(g.num_nodes());
  for (Index n = 0; n < g.num_nodes(); ++n)
    if (!g.is_boundary(n)) r[n] = rng.uniform();
  return r;
}

// Minimizer of f on [a, b] by golden-section search.
template <class F>
double golden_min(F&& f, double a, double b) {
  const double r = (std::sqrt(5.0) - 1) / 2;
  double c = b - r * (b - a), d = a + r * (b - a);
  for (int i = 0; i < 200; ++i) {
    if (f(c) < f(d)) b = d;
    else a = c;
    c = b - r * (b - a);
    d = a + r * (b - a);
  }
  return f(0.5 * (a + b));
}

}  // namespace

TEST_CASE("Theta matches the discrete eigenvalue oracle for p = 1") {
  const int n = 512;
  const Mat a = laplacian_1d(n);
  {
    auto fx = unit_interval(constant_one(), 1, n);
    const ThetaSolution s = solve_theta(*fx.op, fx.phi, 1);
    const double oracle = theta_eigen_oracle(a, fx.grid->restrict_to_interior(fx.phi[0]));
    CHECK(s.theta == doctest::Approx(oracle).epsilon(1e-8));
    CHECK(s.theta == doctest::Approx(kPi * kPi / 2).epsilon(1e-5));
    // Minimizer is ±√2 sin(πx).
    double err = 0;
    for (Index k = 0; k < fx.grid->num_nodes(); ++k)
      err = std::max(err, std::abs(std::abs(s.psi[k]) - std::sqrt(2.0) * std::sin(kPi * fx.grid->coordinate(k)[0])));
    CHECK(err < 1e-3);
  }
  {
    auto fx = unit_interval(middle_half(), 1, n);
    const double oracle = theta_eigen_oracle(a, fx.grid->restrict_to_interior(fx.phi[0]));
    CHECK(solve_theta(*fx.op, fx.phi, 1).theta == doctest::Approx(oracle).epsilon(1e-7));
  }
}

TEST_CASE("Theta on the unit square matches the Kronecker eigen oracle") {
  const int n = 32;
  const Mat t = laplacian_1d(n);
  const Mat id = Mat::Identity(n - 1, n - 1);
  Mat a((n - 1) * (n - 1), (n - 1) * (n - 1));
  for (int i = 0; i < n - 1; ++i)
    for (int j = 0; j < n - 1; ++j)
      a.block(i * (n - 1), j * (n - 1), n - 1, n - 1) = t(i, j) * id + (i == j ? t : Mat::Zero(n - 1, n - 1));
  Eigen::SelfAdjointEigenSolver<Mat> es(a);
  const Domain sq = Domain::box(Vec::Zero(2), Vec::Ones(2));
  Fixture fx(sq, n, {Shape::constant(sq, 1.0)}, 1);
  CHECK(solve_theta(*fx.op, fx.phi, 1).theta == doctest::Approx(es.eigenvalues().minCoeff()).epsilon(1e-7));
}

TEST_CASE("Theta scales as 1/c^2 under phi -> c phi") {
  for (int p : {1, 2, 3}) {
    auto fx = unit_interval(two_members(), p, 256);
    TestFamily doubled;
    for (const Vec& f : fx.phi) doubled.push_back(2 * f);
    const double t1 = solve_theta(*fx.op, fx.phi, p).theta;
    const double t2 = solve_theta(*fx.op, doubled, p).theta;
    CHECK(t2 == doctest::Approx(t1 / 4).epsilon(1e-7));
  }
}

TEST_CASE("fixed point and an independent descent agree for p = 2") {
  auto fx = unit_interval(middle_half(), 2, 256);
  SolverOptions o;
  o.fallback = false;
  gen::for_all(10, 101, [&](gen::Gen& rng, int) {
    const Vec start = fx.op->apply(random_field(rng, *fx.grid));
    const ThetaSolution fp = solve_theta_from(*fx.op, fx.phi, 2, start, o);
    CHECK(fp.method == "fixed_point");
    const double pg = descend(*fx.op, fx.phi, 2, start);
    CHECK(pg == doctest::Approx(fp.theta).epsilon(1e-4));
  });
}

TEST_CASE("Rayleigh form equals the energy at a normalized field") {
  auto fx = unit_interval(two_members(), 2, 128);
  gen::for_all(20, 102, [&](gen::Gen& rng, int) {
    Vec psi = fx.op->apply(random_field(rng, *fx.grid));
    psi /= std::sqrt(constraint_norm(*fx.grid, psi, fx.phi, 2));
    CHECK(theta_rayleigh(*fx.op, psi, fx.phi, 2) == doctest::Approx(dirichlet_energy(*fx.grid, psi, 2)).epsilon(1e-10));
    CHECK(theta_rayleigh(*fx.op, 3 * psi, fx.phi, 2) ==
          doctest::Approx(theta_rayleigh(*fx.op, psi, fx.phi, 2)).epsilon(1e-12));
  });
}

TEST_CASE("Rayleigh gradient matches central differences") {
  auto fx = unit_interval(two_members(), 2, 48);
  const Grid& g = *fx.grid;
  gen::for_all(5, 103, [&](gen::Gen& rng, int) {
    const Vec psi = fx.op->apply(random_field(rng, g));
    const Vec grad = theta_gradient(*fx.op, psi, fx.phi, 2);
    for (int probe = 0; probe < 6; ++probe) {
      const Index k = g.interior_nodes()[rng.integer(0, static_cast<int>(g.num_interior()) - 1)];
      const double eps = 1e-6 * psi.cwiseAbs().maxCoeff();
      Vec up = psi, dn = psi;
      up[k] += eps;
      dn[k] -= eps;
      const double fd = (theta_rayleigh(*fx.op, up, fx.phi, 2) - theta_rayleigh(*fx.op, dn, fx.phi, 2)) / (2 * eps);
      CHECK(fd == doctest::Approx(g.weights()[k] * grad[k]).epsilon(1e-5).scale(1e-8));
    }
  });
}

TEST_CASE("Theta residual separates eigenpairs from generic fields") {
  const int n = 512;
  auto fx = unit_interval(constant_one(), 1, n);
  Vec psi = Vec::Zero(fx.grid->num_nodes());
  for (Index k = 0; k < psi.size(); ++k)
    if (!fx.grid->is_boundary(k)) psi[k] = std::sqrt(2.0) * std::sin(kPi * fx.grid->coordinate(k)[0]);
  const double h = 1.0 / n;
  CHECK(theta_residual(*fx.op, psi, kPi * kPi / 2, fx.phi, 1) < h * h);

  gen::for_all(20, 104, [&](gen::Gen& rng, int) {
    const Vec r = random_field(rng, *fx.grid);
    CHECK(theta_residual(*fx.op, r, theta_rayleigh(*fx.op, r, fx.phi, 1), fx.phi, 1) > 0.1);
  });
}

TEST_CASE("Theta solver residual decreases along the iterates") {
  for (int p : {1, 2, 3}) {
    auto fx = unit_interval(two_members(), p, 256);
    const ThetaSolution s = solve_theta(*fx.op, fx.phi, p);
    REQUIRE(!s.residual_trace.empty());
    CHECK(s.residual <= 1e-6);
    CHECK(s.residual_trace.back() == s.residual);
    CHECK(s.residual_trace.front() > s.residual);
    for (std::size_t i = 1; i < s.residual_trace.size(); ++i) CHECK(s.residual_trace[i] <= s.residual_trace[i - 1]);
    CHECK(s.spread < 1e-8);
    CHECK(theta_residual(*fx.op, s.psi, s.theta, fx.phi, p) == doctest::Approx(s.residual));
  }
}

TEST_CASE("Theta is antitone in phi") {
  gen::for_all(8, 105, [](gen::Gen& rng, int) {
    auto g = make_grid(Domain::interval(0, 1), 128);
    GreenOperator op(g);
    const Vec base = rng.bump_density(*g, 0.05, 0.95, 2);
    const Vec bigger = base + rng.bump_density(*g, 0.05, 0.95, 1);
    const int p = rng.integer(1, 2);
    CHECK(solve_theta(op, {bigger}, p).theta <= solve_theta(op, {base}, p).theta * (1 + 1e-9));
  });
}

TEST_CASE("Theta solver is deterministic and reports failures with the best iterate") {
  auto fx = unit_interval(two_members(), 2, 128);
  const ThetaSolution a = solve_theta(*fx.op, fx.phi, 2), b = solve_theta(*fx.op, fx.phi, 2);
  CHECK(a.theta == b.theta);
  CHECK(a.psi == b.psi);

  SolverOptions o;
  o.max_iter = 2;
  o.fallback = false;
  try {
    solve_theta_from(*fx.op, fx.phi, 2, fx.op->apply(Vec::Ones(fx.grid->num_nodes())), o);
    FAIL("expected a convergence error");
  } catch (const ConvergenceError& e) {
    CHECK(std::isfinite(e.best_value()));
    CHECK(e.best_iterate().size() == fx.grid->num_nodes());
  }
}

TEST_CASE("inadmissible exponents are rejected") {
  const Domain cube = Domain::box(Vec::Zero(3), Vec::Ones(3));
  Fixture fx(cube, 6, {Shape::constant(cube, 1.0)}, 3);
  CHECK_THROWS_AS(solve_theta(*fx.op, fx.phi, 3), ConfigError);
  CHECK_THROWS_AS(solve_rho(*fx.op, fx.phi, 3), ConfigError);
}

TEST_CASE("rho equals 2/pi^2 on the interval") {
  const int n = 512;
  auto fx = unit_interval(constant_one(), 1, n);
  const RhoSolution r = solve_rho(*fx.op, fx.phi, 1);
  const double oracle = theta_eigen_oracle(laplacian_1d(n), fx.grid->restrict_to_interior(fx.phi[0]));
  CHECK(r.rho == doctest::Approx(1.0 / oracle).epsilon(1e-8));
  CHECK(r.rho == doctest::Approx(2 / (kPi * kPi)).epsilon(1e-5));
  CHECK(r.residual <= 1e-6);
}

TEST_CASE("duality rho * Theta = p on five fixtures") {
  struct Case {
    ShapeFamily fam;
    int p;
  };
  const std::vector<Case> cases = {{constant_one(), 1}, {middle_half(), 2}, {two_members(), 3}, {two_members(), 1}};
  for (const Case& c : cases) {
    auto fx = unit_interval(c.fam, c.p);
    const double th = solve_theta(*fx.op, fx.phi, c.p).theta;
    const RhoSolution r = solve_rho(*fx.op, fx.phi, c.p);
    CHECK(r.rho * th / c.p == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(r.residual <= 1e-6);
  }
  const Domain disk = Domain::ball(pt({0, 0}), 1.0);
  Fixture fx(disk, 32, {Shape::indicator(pt({-0.5, -0.5}), pt({0.5, 0.5}))}, 2);
  const double th = solve_theta(*fx.op, fx.phi, 2).theta;
  CHECK(solve_rho(*fx.op, fx.phi, 2).rho * th / 2 == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("identical members double rho") {
  auto one = unit_interval(middle_half(), 2, 256);
  const double single = solve_rho(*one.op, one.phi, 2).rho;
  const TestFamily twice{one.phi[0], one.phi[0]};
  const RhoSolution r = solve_rho(*one.op, twice, 2);
  CHECK(r.rho == doctest::Approx(2 * single).epsilon(1e-8));
  CHECK(solve_theta(*one.op, twice, 2).theta * r.rho == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("transport from a Theta minimizer solves the rho equations") {
  for (int p : {1, 2, 3}) {
    auto fx = unit_interval(two_members(), p, 256);
    const ThetaSolution th = solve_theta(*fx.op, fx.phi, p);
    const Transport t = minimizer_transport(*fx.grid, th.psi, fx.phi, p);
    CHECK(t.lambda.sum() == doctest::Approx(1.0).epsilon(1e-10));
    for (std::size_t i = 0; i < fx.phi.size(); ++i) {
      CHECK(lp_norm(*fx.grid, t.g[i], 2.0 * p) == doctest::Approx(1.0).epsilon(1e-10));
      CHECK((fx.grid->weights().cwiseProduct(t.mu[i])).sum() == doctest::Approx(1.0).epsilon(1e-8));
    }
    const RhoSolution r = rho_from_transport(*fx.op, t, fx.phi, p);
    CHECK(r.residual <= 1e-5);
    CHECK(r.rho == doctest::Approx(p / th.theta).epsilon(1e-6));
  }
}

TEST_CASE("random rho candidates are far from stationary") {
  auto fx = unit_interval(two_members(), 2, 128);
  gen::for_all(20, 106, [&](gen::Gen& rng, int) {
    RhoSolution cand;
    cand.lambda = rng.simplex(2);
    for (int i = 0; i < 2; ++i) {
      Vec g = random_field(rng, *fx.grid);
      cand.g.push_back(g / lp_norm(*fx.grid, fx.phi[i].cwiseProduct(g), 4.0));
    }
    CHECK(rho_residual(*fx.op, cand, fx.phi, 2) > 0.1);
  });
}

TEST_CASE("gcal closed forms") {
  SUBCASE("constant kernel") {
    gen::for_all(10, 107, [](gen::Gen& rng, int) {
      const int n = rng.integer(1, 12);
      const double c = rng.uniform(0.1, 10);
      const Vec mu = rng.simplex(n);
      const GcalSolution s = gcal(mu, Mat::Constant(n, n, c));
      CHECK(s.value == doctest::Approx(-std::log(c)).epsilon(1e-8));
      CHECK((s.nu - mu * mu.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    });
  }
  SUBCASE("two-letter alphabet against a one-parameter search") {
    Mat k(2, 2);
    k << 1, 3, 3, 1;
    const Vec mu = Vec::Constant(2, 0.5);
    // ν = [[t, ½-t], [½-t, t]].
    auto objective = [](double t) {
      const double o = 0.5 - t;
      return 2 * t * std::log(t / 0.25) + 2 * o * std::log(o / 0.25) - 2 * o * std::log(3.0);
    };
    const double oracle = golden_min(objective, 1e-12, 0.5 - 1e-12);
    const GcalSolution s = gcal(mu, k);
    CHECK(s.value == doctest::Approx(oracle).epsilon(1e-8));
    CHECK(s.value == doctest::Approx(-std::log(2.0)).epsilon(1e-8));
  }
  SUBCASE("a zero of the kernel on the support is +inf") {
    Mat k(2, 2);
    k << 1, 0, 0, 1;
    CHECK(gcal(Vec::Constant(2, 0.5), k).value == kInf);
    Vec mu(2);
    mu << 1.0, 0.0;
    CHECK(gcal(mu, k).value == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("gcal on random sixteen-letter instances") {
  gen::for_all(20, 108, [](gen::Gen& rng, int) {
    const int n = 16;
    Mat k = Mat::NullaryExpr(n, n, [&] { return rng.uniform(0.1, 5.0); });
    k = 0.5 * (k + k.transpose()).eval();
    const Vec mu = rng.simplex(n);
    const GcalSolution s = gcal(mu, k);
    CHECK(s.marginal_residual <= 1e-8);
    CHECK((s.nu.rowwise().sum() - mu).lpNorm<1>() <= 1e-8);
    CHECK((s.nu.colwise().sum().transpose() - mu).lpNorm<1>() <= 1e-8);
    // log ν_lm - log(G_lm μ_l μ_m) = α_l + α_m with α read off the diagonal.
    Vec alpha(n);
    for (int l = 0; l < n; ++l) alpha[l] = 0.5 * std::log(s.nu(l, l) / (k(l, l) * mu[l] * mu[l]));
    double worst = 0;
    for (int l = 0; l < n; ++l)
      for (int m = 0; m < n; ++m)
        worst = std::max(worst, std::abs(std::log(s.nu(l, m) / (k(l, m) * mu[l] * mu[m])) - alpha[l] - alpha[m]));
    CHECK(worst <= 1e-6);
    // The value is the objective at ν and beats a perturbation keeping the marginals.
    const double at_nu = pair_entropy(s.nu, mu) - (s.nu.array() * k.array().log()).sum();
    CHECK(s.value == doctest::Approx(at_nu).epsilon(1e-8));
    Mat bump = Mat::Zero(n, n);
    bump(0, 1) = bump(1, 0) = bump(2, 3) = bump(3, 2) = 1;
    bump(0, 3) = bump(3, 0) = bump(1, 2) = bump(2, 1) = -1;
    const Mat other = s.nu + 1e-3 * s.nu.minCoeff() * bump;
    CHECK(pair_entropy(other, mu, 1e-9) - (other.array() * k.array().log()).sum() >= s.value - 1e-12);
  });
}

TEST_CASE("gcal bounds") {
  auto g = make_grid(Domain::interval(0, 1), 128);
  GreenOperator op(g, GreenMode::dense_kernel);
  const Index m = g->num_interior();
  SUBCASE("single cell") {
    Partition one;
    one.cells.emplace_back();
    for (Index k = 0; k < m; ++k) one.cells[0].push_back(k);
    const CellBounds t = green_cell_bounds(op, one, 10.0);
    const GcalBounds b = gcal_bounds(Vec::Ones(1), t);
    CHECK(b.upper_kernel_value == doctest::Approx(-std::log(t.upper(0, 0))));
    CHECK(b.lower_kernel_value == -std::log(t.lower(0, 0)));
  }
  SUBCASE("ordering and refinement") {
    double prev_gap = kInf;
    for (int cells : {4, 8, 16, 32}) {
      Partition part;
      for (int c = 0; c < cells; ++c) {
        part.cells.emplace_back();
        for (Index k = c * m / cells; k < (c + 1) * m / cells; ++k) part.cells.back().push_back(k);
      }
      const CellBounds t = green_cell_bounds(op, part, 10.0);
      const Vec u = cell_integrals(*g, Vec::Ones(g->num_nodes()), part);
      const GcalBounds b = gcal_bounds(u / u.sum(), t);
      CHECK(b.upper_kernel_value <= b.lower_kernel_value);
      // The lower table vanishes next to the boundary, so that side is +inf until
      // no cell touches it; compare the finite gaps only.
      if (std::isfinite(b.lower_kernel_value)) {
        const double gap = b.lower_kernel_value - b.upper_kernel_value;
        CHECK(gap < prev_gap);
        prev_gap = gap;
      }
    }
  }
}

TEST_CASE("hfrak with one member is the entropic optimum") {
  auto fx = unit_interval(constant_one(), 1, 256);
  const Alphabet alph = build_alphabet(*fx.op, fx.phi, 1, 16);
  const Vec one = Vec::Ones(1);
  const HfrakResult h = hfrak(alph, one, 1);
  REQUIRE(h.mu.size() == 1);
  CHECK(hfrak_objective(alph, one, h.mu, 1) == doctest::Approx(-h.value).epsilon(1e-8));
  gen::for_all(50, 109, [&](gen::Gen& rng, int) {
    const Vec mu = rng.simplex(static_cast<int>(alph.kernel.rows()));
    CHECK(-hfrak_objective(alph, one, {mu}, 1) <= h.value + 1e-9);
  });
}

TEST_CASE("hfrak decreases when a member decreases") {
  auto g = make_grid(Domain::interval(0, 1), 256);
  GreenOperator op(g);
  const TestFamily base = discretize(two_members(), *g);
  TestFamily smaller = base;
  for (Index k = 0; k < g->num_nodes(); ++k)
    if (g->coordinate(k)[0] > 0.6) smaller[1][k] *= 0.7;
  const Vec lam = Vec::Constant(2, 0.5);
  for (int p : {1, 2}) {
    const double hb = hfrak(build_alphabet(op, base, p, 32), lam, p).value;
    const double hs = hfrak(build_alphabet(op, smaller, p, 32), lam, p).value;
    CHECK(hs < hb);
  }
}

TEST_CASE("W identity and its minimizer") {
  struct Case {
    ShapeFamily fam;
    int p;
  };
  for (const Case& c : std::vector<Case>{{middle_half(), 1}, {two_members(), 1}, {two_members(), 2}}) {
    auto fx = unit_interval(c.fam, c.p);
    const ThetaSolution th = solve_theta(*fx.op, fx.phi, c.p);
    const BigWResult w = bigW(build_alphabet(*fx.op, fx.phi, c.p, 64), c.p);
    CHECK(std::abs(w.value + c.p * std::log(th.theta / c.p)) <= 5e-2);
    const Transport t = minimizer_transport(*fx.grid, th.psi, fx.phi, c.p);
    CHECK((w.lambda - t.lambda).cwiseAbs().maxCoeff() <= 1e-2);
    if (fx.phi.size() == 1) CHECK(w.lambda[0] == 1.0);
  }
}

TEST_CASE("pinsky functional for constant potentials") {
  auto g = make_grid(Domain::interval(0, 1), 256);
  GreenOperator op(g);
  const double theta_h = solve_theta(op, {Vec::Ones(g->num_nodes())}, 1).theta;
  for (double c : {0.0, 1.0, 4.0, 4.8, 5.1, 6.0}) {
    const PinskyResult r = pinsky_l(op, {Vec::Constant(g->num_nodes(), std::sqrt(c))}, 1);
    CHECK(r.value == doctest::Approx(c - theta_h).epsilon(1e-6));
    CHECK(r.finite_moments == (c < kPi * kPi / 2));
  }
  const PinskyResult one = pinsky_l(op, {Vec::Ones(g->num_nodes())}, 1);
  CHECK(one.value == doctest::Approx(1 - kPi * kPi / 2).epsilon(1e-4));
  const PinskyResult zero = pinsky_l(op, {Vec::Zero(g->num_nodes())}, 1);
  CHECK(zero.value == doctest::Approx(-kPi * kPi / 2).epsilon(1e-4));
}
