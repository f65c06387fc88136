#include "doctest.h"
#include "generators.hpp"

#include "ilt/green.hpp"

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

// Dirichlet heat kernel of ½Δ on (0,1): images for short times, the sine
// series for long ones.
double heat_interval(double s, double x, double y) {
  if (s > 0.05) {
    double sum = 0;
    for (int n = 1; n <= 60; ++n) sum += 2 * std::sin(n * kPi * x) * std::sin(n * kPi * y) * std::exp(-n * n * kPi * kPi * s / 2);
    return sum;
  }
  const double c = 1.0 / std::sqrt(2 * kPi * s);
  double sum = 0;
  for (int k = -3; k <= 3; ++k) {
    const double a = x - y + 2 * k, b = x + y + 2 * k;
    sum += c * (std::exp(-a * a / (2 * s)) - std::exp(-b * b / (2 * s)));
  }
  return sum;
}

// ∫₀^∞ f(s) ds with s = e^u and the trapezoid rule in u.
template <class F>
double time_integral(F&& f, double umin = -40, double umax = 6, double du = 2e-3) {
  double acc = 0;
  for (double u = umin; u <= umax; u += du) {
    const double s = std::exp(u);
    acc += f(s) * s;
  }
  return acc * du;
}

// Thomas algorithm for -½u'' = δ at node j on n cells of (0,1).
std::vector<double> tridiagonal_delta(int n, int j) {
  const double h = 1.0 / n;
  const int m = n - 1;
  std::vector<double> a(m, -0.5 / (h * h)), b(m, 1.0 / (h * h)), c(m, -0.5 / (h * h)), r(m, 0.0);
  r[j - 1] = 1.0 / h;
  for (int i = 1; i < m; ++i) {
    const double w = a[i] / b[i - 1];
    b[i] -= w * c[i - 1];
    r[i] -= w * r[i - 1];
  }
  std::vector<double> u(m);
  u[m - 1] = r[m - 1] / b[m - 1];
  for (int i = m - 2; i >= 0; --i) u[i] = (r[i] - c[i] * u[i + 1]) / b[i];
  return u;
}

// Eigen-series Green function of ½Δ on the unit square.
double square_series(const Point& x, const Point& y, int terms = 300) {
  double acc = 0;
  for (int m = 1; m <= terms; ++m)
    for (int n = 1; n <= terms; ++n)
      acc += 4 * std::sin(m * kPi * x[0]) * std::sin(m * kPi * y[0]) * std::sin(n * kPi * x[1]) *
             std::sin(n * kPi * y[1]) * 2 / (kPi * kPi * (m * m + n * n));
  return acc;
}

}  // namespace

TEST_CASE("admissibility p(d-2) < d") {
  CHECK(admissible(1, 1));
  CHECK(admissible(7, 1));
  CHECK(admissible(9, 2));
  CHECK(admissible(2, 3));
  CHECK_FALSE(admissible(3, 3));
  CHECK(admissible(1, 4));
  CHECK_FALSE(admissible(2, 4));
  CHECK_THROWS_AS(check_admissible(3, 3), ConfigError);
  CHECK_THROWS_AS(Domain::free_space(2), ConfigError);
}

TEST_CASE("domains are open sets") {
  const Domain I = Domain::interval(0, 1);
  CHECK(I.contains(pt({0.5})));
  CHECK_FALSE(I.contains(pt({0.0})));
  CHECK(I.in_closure(pt({1.0})));
  CHECK_FALSE(I.in_closure(pt({1.1})));
  const Domain B = Domain::ball(pt({0, 0, 0}), 2.0);
  CHECK(B.volume() == doctest::Approx(4.0 / 3 * kPi * 8));
  CHECK_FALSE(B.contains(pt({2, 0, 0})));
  CHECK(Domain::box(pt({0}), pt({2})).kind() == DomainKind::interval);
  CHECK_THROWS_AS(Domain::interval(1, 1), ConfigError);
}

TEST_CASE("grid layout round-trips and interpolates linear fields exactly") {
  gen::for_all(20, 11, [](gen::Gen& g, int) {
    const int d = g.integer(1, 3);
    Vec lo(d), hi(d);
    for (int a = 0; a < d; ++a) {
      lo[a] = g.uniform(-1, 0);
      hi[a] = lo[a] + g.uniform(0.5, 2);
    }
    const Grid grid(Domain::box(lo, hi), g.integer(3, 9));
    const Index node = g.integer(0, static_cast<int>(grid.num_nodes()) - 1);
    CHECK(grid.node_index(grid.multi_index(node)) == node);
    const Vec coef = g.vec(d, -1, 1);
    Vec f(grid.num_nodes());
    for (Index i = 0; i < grid.num_nodes(); ++i) f[i] = 0.3 + coef.dot(grid.coordinate(i));
    Point x(d);
    for (int a = 0; a < d; ++a) x[a] = g.uniform(lo[a], hi[a]);
    CHECK(grid.interpolate(f, x) == doctest::Approx(0.3 + coef.dot(x)).epsilon(1e-12));
  });
}

TEST_CASE("interior weights integrate zero-boundary polynomials") {
  const Grid grid(Domain::interval(0, 1), 256);
  Vec f(grid.num_nodes());
  for (Index i = 0; i < f.size(); ++i) {
    const double x = grid.coordinate(i)[0];
    f[i] = x * (1 - x);
  }
  CHECK(grid.weights().dot(f) == doctest::Approx(1.0 / 6).epsilon(1e-5));
  CHECK(grid.weights()[0] == 0.0);
}

TEST_CASE("interval Green function against heat-kernel quadrature") {
  const Domain I = Domain::interval(0, 1);
  const double q = time_integral([](double s) { return heat_interval(s, 0.5, 0.5); });
  CHECK(q == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(green_eval(I, pt({0.5}), pt({0.5})) == doctest::Approx(q).epsilon(1e-6));
  gen::for_all(10, 3, [&](gen::Gen& g, int) {
    const double x = g.uniform(0.01, 0.99), y = g.uniform(0.01, 0.99);
    const double oracle = time_integral([&](double s) { return heat_interval(s, x, y); });
    CHECK(green_eval(I, pt({x}), pt({y})) == doctest::Approx(oracle).epsilon(1e-6));
  });
  CHECK(green_eval(I, pt({0.0}), pt({0.3})) == 0.0);
  CHECK(green_eval(Domain::interval(1, 3), pt({2}), pt({2})) == doctest::Approx(1.0));
}

TEST_CASE("tridiagonal delta solve matches the closed form at nodes") {
  const int n = 64, j = 32;
  const auto u = tridiagonal_delta(n, j);
  for (int i = 1; i < n; ++i)
    CHECK(u[i - 1] == doctest::Approx(green_eval(Domain::interval(0, 1), pt({i / 64.0}), pt({0.5}))).epsilon(1e-10));
  const GreenOperator op(make_grid(Domain::interval(0, 1), n));
  const Vec pot = op.point_potential(pt({0.5}));
  CHECK(pot[j] == doctest::Approx(0.5).epsilon(1e-10));
}

TEST_CASE("free-space Green function against heat-kernel quadrature") {
  const double q =
      time_integral([](double s) { return std::pow(2 * kPi * s, -1.5) * std::exp(-1 / (2 * s)); }, -40, 60);
  CHECK(q == doctest::Approx(1 / (2 * kPi)).epsilon(1e-6));
  const Domain R3 = Domain::free_space(3);
  CHECK(green_eval(R3, pt({0, 0, 0}), pt({0, 1, 0})) == doctest::Approx(q).epsilon(1e-6));
  CHECK(green_eval(R3, pt({1, 1, 1}), pt({1, 1, 3})) == doctest::Approx(q / 2).epsilon(1e-6));
  CHECK_THROWS_AS(green_eval(R3, pt({0, 0, 0}), pt({0, 0, 0})), SingularDiagonalError);
}

TEST_CASE("ball Green function") {
  const Domain B = Domain::ball(pt({0, 0, 0}), 1.0);
  // Radial solution from the centre.
  CHECK(green_eval(B, pt({0, 0, 0}), pt({0.5, 0, 0})) == doctest::Approx((1 / 0.5 - 1) / (2 * kPi)).epsilon(1e-12));
  CHECK(green_eval(B, pt({0, 0, 0}), pt({1, 0, 0})) == 0.0);
  gen::for_all(30, 5, [&](gen::Gen& g, int) {
    Point x(3), y(3);
    do x = g.vec(3, -1, 1); while (x.norm() >= 0.95);
    do y = g.vec(3, -1, 1); while (y.norm() >= 0.95 || (y - x).norm() < 0.1);
    const double gxy = green_eval(B, x, y);
    CHECK(gxy > 0);
    CHECK(gxy == doctest::Approx(green_eval(B, y, x)).epsilon(1e-12));
    // Harmonic in x away from y.
    const double h = 1e-3;
    double lap = -6 * gxy;
    for (int a = 0; a < 3; ++a) {
      Point e = Point::Zero(3);
      e[a] = h;
      lap += green_eval(B, x + e, y) + green_eval(B, x - e, y);
    }
    CHECK(std::abs(lap / (h * h)) < 1e-3 * std::max(1.0, gxy));
  });
  const Domain D2 = Domain::ball(pt({0, 0}), 1.0);
  CHECK(green_eval(D2, pt({0, 0}), pt({0.5, 0})) == doctest::Approx(std::log(2.0) / kPi).epsilon(1e-12));
}

TEST_CASE("box Green function against the eigen series") {
  const Domain sq = Domain::box(pt({0, 0}), pt({1, 1}));
  for (auto [x, y] : {std::pair{pt({0.3, 0.4}), pt({0.6, 0.7})}, std::pair{pt({0.2, 0.5}), pt({0.8, 0.5})}}) {
    const double series = square_series(x, y);
    CHECK(green_eval(sq, x, y) == doctest::Approx(series).epsilon(2e-2));
  }
}

TEST_CASE("mean exit times") {
  CHECK(mean_exit_time(Domain::interval(0, 1), pt({0.5})) == 0.25);
  CHECK(mean_exit_time(Domain::interval(0, 1), pt({0.0})) == 0.0);
  const double r = 0.7;
  CHECK(mean_exit_time(Domain::ball(pt({0, 0, 0}), r), pt({0, 0, 0})) == doctest::Approx(r * r / 3));
  // Unit square centre: series oracle Σ 16/(π^4 mn) · 2/(m²+n²) sin sin.
  double series = 0;
  for (int m = 1; m < 400; m += 2)
    for (int n = 1; n < 400; n += 2)
      series += 16.0 / (kPi * kPi * m * n) * std::sin(m * kPi / 2) * std::sin(n * kPi / 2) * 2 /
                (kPi * kPi * (m * m + n * n));
  CHECK(mean_exit_time(Domain::box(pt({0, 0}), pt({1, 1})), pt({0.5, 0.5})) == doctest::Approx(series).epsilon(1e-3));
  CHECK_THROWS_AS(mean_exit_time(Domain::free_space(3), pt({0, 0, 0})), UnsupportedError);
}

TEST_CASE("green_apply on the interval") {
  const auto grid = make_grid(Domain::interval(0, 1), 128);
  const GreenOperator op(grid);
  Vec one = Vec::Ones(grid->num_nodes());
  const Vec u = op.apply(one);
  for (Index i = 0; i < grid->num_nodes(); ++i) {
    const double x = grid->coordinate(i)[0];
    CHECK(u[i] == doctest::Approx(x * (1 - x)).epsilon(1e-10).scale(1));
  }
  CHECK(op.apply(Vec::Zero(grid->num_nodes())).norm() == 0.0);
  Vec bad = one;
  bad[3] = std::nan("");
  CHECK_THROWS_AS(op.apply(bad), InputError);
}

TEST_CASE("sparse and dense modes agree") {
  gen::Gen g(7);
  const auto grid = make_grid(Domain::interval(0, 1), 63);
  const GreenOperator sparse(grid), dense(grid, GreenMode::dense_kernel);
  const Vec f = g.bump_density(*grid, 0.1, 0.9);
  const Vec a = sparse.apply(f), b = dense.apply(f);
  CHECK((a - b).norm() <= 1e-8 * a.norm());
  const Mat& K = dense.kernel();
  CHECK((K - K.transpose()).norm() == 0.0);
  CHECK_THROWS(sparse.kernel());
}

TEST_CASE("property: the discrete Laplacian inverts green_apply") {
  gen::for_all(10, 17, [](gen::Gen& g, int) {
    const int d = g.integer(1, 3);
    const auto grid = make_grid(Domain::box(Vec::Zero(d), Vec::Ones(d)), d == 1 ? 200 : d == 2 ? 40 : 12);
    const GreenOperator op(grid);
    const Vec f = g.bump_density(*grid, 0.0, 1.0);
    const Vec back = op.apply_laplacian(op.apply(f));
    CHECK((back - f).norm() <= 1e-8 * f.norm());
  });
}

TEST_CASE("dense kernel on the interval equals the closed form at nodes") {
  const auto grid = make_grid(Domain::interval(0, 1), 40);
  const GreenOperator op(grid, GreenMode::dense_kernel);
  const Mat table = closed_form_table(*grid);
  CHECK((op.kernel() - table).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("closed-form tables in d >= 2 are symmetric with a finite diagonal") {
  const auto grid = make_grid(Domain::ball(pt({0, 0}), 1.0), 16);
  const Mat t = closed_form_table(*grid);
  CHECK((t - t.transpose()).norm() == 0.0);
  CHECK(t.allFinite());
  // Nodes within two cells of the boundary see the image term dominate.
  for (Index i = 0; i < t.rows(); ++i) {
    if (1.0 - grid->coordinate(grid->interior_nodes()[i]).norm() < 2 * grid->spacing()[0]) continue;
    Mat row = t.row(i);
    row(0, i) = -kInf;
    CHECK(t(i, i) > row.maxCoeff());
  }
  CHECK_THROWS_AS(closed_form_table(Grid(Domain::box(pt({0, 0}), pt({1, 1})), 4)), UnsupportedError);
}

TEST_CASE("cell bounds") {
  const auto grid = make_grid(Domain::interval(0, 1), 32);
  const GreenOperator op(grid, GreenMode::dense_kernel);
  const Mat& K = op.kernel();
  Partition whole;
  whole.cells.emplace_back();
  for (Index i = 0; i < grid->num_interior(); ++i) whole.cells[0].push_back(i);
  const CellBounds one = green_cell_bounds(op, whole, 0.3);
  CHECK(one.upper(0, 0) == doctest::Approx(std::min(K.maxCoeff(), 0.3)));
  CHECK(one.lower(0, 0) == doctest::Approx(K.minCoeff()));

  Partition four;
  for (int c = 0; c < 4; ++c) {
    four.cells.emplace_back();
    for (Index i = c * grid->num_interior() / 4; i < (c + 1) * grid->num_interior() / 4; ++i) four.cells[c].push_back(i);
  }
  const CellBounds lo = green_cell_bounds(op, four, 0.2), hi = green_cell_bounds(op, four, 0.4);
  CHECK((lo.upper.array() <= hi.upper.array()).all());
  const CellBounds big = green_cell_bounds(op, four, 10.0);
  for (int l = 0; l < 4; ++l)
    for (int m = 0; m < 4; ++m) {
      const Index a = four.cells[l][four.cells[l].size() / 2], b = four.cells[m][four.cells[m].size() / 2];
      CHECK(big.lower(l, m) <= K(a, b));
      CHECK(K(a, b) <= big.upper(l, m));
    }
  Partition bad = four;
  bad.cells[1].clear();
  CHECK_THROWS_AS(green_cell_bounds(op, bad, 1.0), PartitionError);
}

TEST_CASE("cutoff is a pointwise minimum") {
  const auto grid = make_grid(Domain::interval(0, 1), 24);
  const GreenOperator op(grid, GreenMode::dense_kernel);
  const Mat c = cutoff_table(op.kernel(), 0.25);
  for (Index i = 0; i < c.rows(); ++i)
    for (Index j = 0; j < c.cols(); ++j) {
      CHECK(c(i, j) <= op.kernel()(i, j));
      if (op.kernel()(i, j) <= 0.25) CHECK(c(i, j) == op.kernel()(i, j));
    }
}
