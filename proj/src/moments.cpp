#include "ilt/moments.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>

namespace ilt {

namespace {

double factorial(int k) { return std::tgamma(k + 1.0); }

// Neumaier-compensated running sum; deterministic for a fixed order.
struct CompensatedSum {
  double sum = 0.0, comp = 0.0;
  void add(double x) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x))
      comp += (sum - t) + x;
    else
      comp += (x - t) + sum;
    sum = t;
  }
  double value() const { return sum + comp; }
};

double pairwise_sum(const std::vector<double>& v, std::size_t lo, std::size_t hi) {
  if (hi - lo <= 8) {
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += v[i];
    return s;
  }
  const std::size_t mid = lo + (hi - lo) / 2;
  return pairwise_sum(v, lo, mid) + pairwise_sum(v, mid, hi);
}

double pairwise_sum(const std::vector<double>& v) { return v.empty() ? 0.0 : pairwise_sum(v, 0, v.size()); }

struct AxisRule {
  std::vector<double> x, w;
};

// Golub-Welsch nodes and weights on [-1, 1].
void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  Mat J = Mat::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    const double b = i / std::sqrt(4.0 * i * i - 1.0);
    J(i, i - 1) = b;
    J(i - 1, i) = b;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(J);
  x.resize(n);
  w.resize(n);
  for (int i = 0; i < n; ++i) {
    x[i] = es.eigenvalues()[i];
    w[i] = 2.0 * es.eigenvectors()(0, i) * es.eigenvectors()(0, i);
  }
}

AxisRule composite_rule(double a, double b, std::vector<double> cuts, int total) {
  cuts.push_back(a);
  cuts.push_back(b);
  std::sort(cuts.begin(), cuts.end());
  std::vector<double> edges;
  for (double c : cuts) {
    if (c < a || c > b) continue;
    if (edges.empty() || c - edges.back() > 1e-12 * (b - a)) edges.push_back(c);
  }
  AxisRule rule;
  for (std::size_t e = 0; e + 1 < edges.size(); ++e) {
    const double lo = edges[e], hi = edges[e + 1];
    const int n = std::max(2, static_cast<int>(std::ceil(total * (hi - lo) / (b - a))));
    std::vector<double> gx, gw;
    gauss_legendre(n, gx, gw);
    for (int i = 0; i < n; ++i) {
      rule.x.push_back(0.5 * (lo + hi) + 0.5 * (hi - lo) * gx[i]);
      rule.w.push_back(0.5 * (hi - lo) * gw[i]);
    }
  }
  return rule;
}

std::mt19937_64 batch_rng(std::uint64_t seed, std::uint64_t batch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(batch), static_cast<std::uint32_t>(batch >> 32)};
  return std::mt19937_64(seq);
}

void validate_problem(const MomentProblem& pr, const std::vector<int>& counts) {
  check_admissible(pr.p, pr.domain.dim());
  if (!pr.domain.bounded() && pr.domain.kind() != DomainKind::free_space)
    throw ConfigError("unsupported domain");
  if (pr.phi.empty()) throw InputError("empty test family");
  if (counts.size() != pr.phi.size()) throw InputError("one count per family member is required");
  for (int c : counts)
    if (c < 0) throw InputError("counts must be nonnegative");
  if (pr.starts.size() != 1 && static_cast<int>(pr.starts.size()) != pr.p)
    throw InputError("give one common start or one start per motion");
  for (const auto& s : pr.starts)
    if (!pr.domain.in_closure(s)) throw InputError("start point outside the domain");
}

// Π over motions of Φ_k; table rows/cols: 0..S-1 starts, S.. points.
double product_over_motions(const Mat& full, int S, int p, const std::vector<int>& idx, Mat& scratch) {
  const int k = static_cast<int>(idx.size());
  double prod = 1.0;
  for (int m = 0; m < S; ++m) {
    scratch(0, 0) = 0.0;
    for (int a = 0; a < k; ++a) {
      scratch(0, a + 1) = full(m, idx[a]);
      scratch(a + 1, 0) = full(idx[a], m);
      for (int b = 0; b < k; ++b) scratch(a + 1, b + 1) = full(idx[a], idx[b]);
    }
    const double v = phi_k_table(scratch, PhiMethod::dp);
    prod *= (S == 1) ? std::pow(v, p) : v;
  }
  return prod;
}

MomentValue tensor_quadrature(const MomentProblem& pr, const std::vector<int>& counts, const MomentOptions& opts,
                              bool& over_budget) {
  over_budget = false;
  const Domain& dom = pr.domain;
  const int k = std::accumulate(counts.begin(), counts.end(), 0);
  const double a = dom.lower()[0], b = dom.upper()[0];
  std::vector<double> cuts;
  for (const auto& s : pr.starts) cuts.push_back(s[0]);
  for (const auto& f : pr.phi)
    for (double c : f.breakpoints(0)) cuts.push_back(c);
  const AxisRule rule = composite_rule(a, b, cuts, opts.gl_nodes);
  const int Q = static_cast<int>(rule.x.size());
  const int S = static_cast<int>(pr.starts.size());

  // Kernel among starts and nodes.
  std::vector<Point> pts;
  for (const auto& s : pr.starts) pts.push_back(s);
  for (double x : rule.x) pts.push_back(Vec::Constant(1, x));
  const int P = static_cast<int>(pts.size());
  Mat full(P, P);
  for (int i = 0; i < P; ++i)
    for (int j = 0; j < P; ++j) {
      double g = green_eval(dom, pts[i], pts[j]);
      if (opts.cutoff) g = std::min(g, *opts.cutoff);
      full(i, j) = g;
    }

  // Per group: nodes with positive weight.
  struct Group {
    std::vector<int> nodes;
    std::vector<double> weight;
    int count;
  };
  std::vector<Group> groups;
  double combos = 1.0;
  for (std::size_t i = 0; i < pr.phi.size(); ++i) {
    Group g;
    g.count = counts[i];
    for (int q = 0; q < Q; ++q) {
      const double f = pr.phi[i](pts[S + q]);
      if (f > 0) {
        g.nodes.push_back(S + q);
        g.weight.push_back(rule.w[q] * std::pow(f, 2.0 * pr.p));
      }
    }
    if (g.count > 0 && g.nodes.empty()) return {0.0, 0.0, "tensor", false};
    // multisets of size c from |nodes| elements
    double c = 1.0;
    for (int t = 1; t <= g.count; ++t) c = c * (static_cast<double>(g.nodes.size()) + t - 1) / t;
    combos *= c;
    groups.push_back(std::move(g));
  }
  const double cost = combos * std::pow(2.0, k) * std::max(1, k * k) * S;
  if (cost > opts.tensor_budget) {
    over_budget = true;
    return {};
  }

  CompensatedSum acc;
  Mat scratch(k + 1, k + 1);
  std::vector<int> idx(k);
  std::vector<int> choice(k);  // position within group node list
  // Enumerate non-decreasing index tuples within each group.
  std::vector<int> offset(groups.size() + 1, 0);
  for (std::size_t g = 0; g < groups.size(); ++g) offset[g + 1] = offset[g] + groups[g].count;

  std::function<void(std::size_t, int, int, double)> rec = [&](std::size_t g, int slot, int minpos, double wgt) {
    if (g == groups.size()) {
      // multiplicity: Π_g c_g! / Π mult!
      double mult = 1.0;
      for (std::size_t h = 0; h < groups.size(); ++h) {
        if (groups[h].count == 0) continue;
        mult *= factorial(groups[h].count);
        int run = 1;
        for (int s = offset[h] + 1; s < offset[h + 1]; ++s) {
          if (choice[s] == choice[s - 1]) {
            ++run;
          } else {
            mult /= factorial(run);
            run = 1;
          }
        }
        mult /= factorial(run);
      }
      acc.add(mult * wgt * product_over_motions(full, S, pr.p, idx, scratch));
      return;
    }
    if (slot == offset[g + 1]) {
      rec(g + 1, slot, 0, wgt);
      return;
    }
    const auto& grp = groups[g];
    for (int pos = minpos; pos < static_cast<int>(grp.nodes.size()); ++pos) {
      idx[slot] = grp.nodes[pos];
      choice[slot] = pos;
      rec(g, slot + 1, pos, wgt * grp.weight[pos]);
    }
  };
  rec(0, 0, 0, 1.0);
  return {acc.value(), 0.0, "tensor", false};
}

MomentValue transfer_quadrature(const MomentProblem& pr, const std::vector<int>& counts,
                                const MomentOptions& opts) {
  if (pr.p != 1) throw UnsupportedError("transfer quadrature requires p = 1");
  if (!pr.domain.bounded()) throw UnsupportedError("transfer quadrature requires a bounded domain");
  const int d = pr.domain.dim();
  const int cells = d == 1 ? opts.transfer_cells : (d == 2 ? std::min(opts.transfer_cells, 256) : 48);
  const GreenOperator op(make_grid(pr.domain, cells));
  const Grid& grid = op.grid();
  const std::size_t n = counts.size();
  std::vector<Vec> f;
  for (const auto& s : pr.phi) f.push_back(s.discretize(grid).array().square().matrix());

  std::vector<int> radix(n);
  int total = 1;
  for (std::size_t i = 0; i < n; ++i) {
    radix[i] = counts[i] + 1;
    total *= radix[i];
  }
  // Mixed-radix order visits c - e_i before c.
  std::vector<Vec> F(total);
  Vec one = Vec::Zero(grid.num_nodes());
  for (Index node : grid.interior_nodes()) one[node] = 1.0;
  std::vector<int> c(n, 0);
  for (int code = 0; code < total; ++code) {
    int rem = code;
    for (std::size_t i = 0; i < n; ++i) {
      c[i] = rem % radix[i];
      rem /= radix[i];
    }
    if (code == 0) {
      F[0] = one;
      continue;
    }
    Vec src = Vec::Zero(grid.num_nodes());
    int stride = 1;
    for (std::size_t i = 0; i < n; ++i) {
      if (c[i] > 0) src += f[i].cwiseProduct(F[code - stride]);
      stride *= radix[i];
    }
    F[code] = op.apply(src);
  }
  const int k = std::accumulate(counts.begin(), counts.end(), 0);
  double coef = 1.0 / factorial(k);
  for (int ci : counts) coef *= factorial(ci);
  const double value = coef * grid.interpolate(F[total - 1], pr.starts.front());
  return {value, 0.0, "transfer", false};
}

// Sampler for density ∝ φ^q on the domain.
struct ShapeSampler {
  const Shape* shape;
  const Domain* domain;
  double q;
  double mass;
  Vec lo, hi;
  double bound;

  ShapeSampler(const Shape& s, const Domain& d, double power) : shape(&s), domain(&d), q(power) {
    mass = s.integral_pow(d, power);
    const Vec dl = d.bbox_lower(), du = d.bbox_upper();
    lo = s.lower().cwiseMax(dl);
    hi = s.upper().cwiseMin(du);
    bound = std::pow(s.sup(), power);
  }

  Point draw(std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Point x(lo.size());
    for (int tries = 0; tries < 1000000; ++tries) {
      for (Index a = 0; a < x.size(); ++a) x[a] = lo[a] + (hi[a] - lo[a]) * u(rng);
      if (!domain->contains(x)) continue;
      const double f = std::pow((*shape)(x), q);
      if (f <= 0) continue;
      if (shape->kind() == ShapeKind::indicator || u(rng) * bound <= f) return x;
    }
    throw ConvergenceError("rejection sampler failed to accept a point", 0.0, 1000000);
  }
};

MomentValue monte_carlo(const MomentProblem& pr, const std::vector<int>& counts, const MomentOptions& opts) {
  if (!pr.domain.bounded()) throw UnsupportedError("Monte Carlo quadrature requires a bounded domain");
  const int k = std::accumulate(counts.begin(), counts.end(), 0);
  const KernelFn kernel = make_kernel(pr.domain);
  std::vector<ShapeSampler> samplers;
  double scale = 1.0;
  for (std::size_t i = 0; i < pr.phi.size(); ++i) {
    samplers.emplace_back(pr.phi[i], pr.domain, 2.0 * pr.p);
    if (counts[i] > 0) {
      if (!(samplers.back().mass > 0)) return {0.0, 0.0, "monte_carlo", false};
      scale *= std::pow(samplers.back().mass, counts[i]);
    }
  }
  const int batches = std::max(1, opts.mc_batches);
  const long long per_batch = (opts.mc_samples + batches - 1) / batches;
  std::vector<double> sums(batches), sqs(batches);
  std::vector<Point> pts(k);
  for (int bidx = 0; bidx < batches; ++bidx) {
    auto rng = batch_rng(opts.seed, static_cast<std::uint64_t>(bidx));
    CompensatedSum s, s2;
    for (long long t = 0; t < per_batch; ++t) {
      int slot = 0;
      for (std::size_t i = 0; i < pr.phi.size(); ++i)
        for (int c = 0; c < counts[i]; ++c) pts[slot++] = samplers[i].draw(rng);
      double v = 1.0;
      for (const auto& st : pr.starts) {
        const double phi = phi_k(pts, st, pr.domain, kernel, PhiMethod::dp, opts.cutoff);
        v *= pr.starts.size() == 1 ? std::pow(phi, pr.p) : phi;
      }
      v *= scale;
      s.add(v);
      s2.add(v * v);
    }
    sums[bidx] = s.value();
    sqs[bidx] = s2.value();
  }
  const double N = static_cast<double>(per_batch) * batches;
  const double mean = pairwise_sum(sums) / N;
  const double var = std::max(pairwise_sum(sqs) / N - mean * mean, 0.0) * N / std::max(N - 1, 1.0);
  return {mean, std::sqrt(var / N), "monte_carlo", false};
}

}  // namespace

double phi_k_table(const Mat& T, PhiMethod method) {
  if (T.rows() != T.cols() || T.rows() < 1) throw InputError("kernel table must be square and nonempty");
  const int k = static_cast<int>(T.rows()) - 1;
  if (k == 0) return 1.0;
  if (method == PhiMethod::brute) {
    if (k > kPhiBruteCap) throw SizeError("brute-force Phi_k is capped at k = 9");
    std::vector<int> perm(k);
    std::iota(perm.begin(), perm.end(), 1);
    CompensatedSum acc;
    do {
      double prod = T(0, perm[0]);
      for (int i = 1; i < k && prod != 0.0; ++i) prod *= T(perm[i - 1], perm[i]);
      acc.add(prod);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return acc.value() / factorial(k);
  }
  if (k > kPhiDpCap) throw SizeError("dynamic-programming Phi_k is capped at k = 20");
  const std::size_t full = (std::size_t{1} << k) - 1;
  std::vector<double> f((full + 1) * k, 0.0);
  for (int j = 0; j < k; ++j) f[(std::size_t{1} << j) * k + j] = T(0, j + 1);
  for (std::size_t mask = 1; mask <= full; ++mask) {
    for (int j = 0; j < k; ++j) {
      if (!(mask >> j & 1)) continue;
      const double v = f[mask * k + j];
      if (v == 0.0) continue;
      for (int l = 0; l < k; ++l) {
        if (mask >> l & 1) continue;
        f[(mask | (std::size_t{1} << l)) * k + l] += v * T(j + 1, l + 1);
      }
    }
  }
  double acc = 0.0;
  for (int j = 0; j < k; ++j) acc += f[full * k + j];
  return acc / factorial(k);
}

double phi_k(const std::vector<Point>& points, const Point& start, const Domain& domain, const KernelFn& kernel,
             PhiMethod method, std::optional<double> cutoff) {
  const int k = static_cast<int>(points.size());
  if (method == PhiMethod::dp && k > kPhiDpCap) throw SizeError("dynamic-programming Phi_k is capped at k = 20");
  if (method == PhiMethod::brute && k > kPhiBruteCap) throw SizeError("brute-force Phi_k is capped at k = 9");
  // Canonical order makes the floating-point result independent of how the
  // caller lists the points.
  std::vector<const Point*> sorted;
  for (const auto& x : points) sorted.push_back(&x);
  std::sort(sorted.begin(), sorted.end(), [](const Point* a, const Point* b) {
    return std::lexicographical_compare(a->begin(), a->end(), b->begin(), b->end());
  });
  std::vector<const Point*> all{&start};
  all.insert(all.end(), sorted.begin(), sorted.end());
  if (domain.dim() >= 2) {
    for (std::size_t i = 0; i < all.size(); ++i)
      for (std::size_t j = i + 1; j < all.size(); ++j)
        if ((*all[i] - *all[j]).norm() == 0.0) return kInf;
  }
  Mat T(k + 1, k + 1);
  for (int i = 0; i <= k; ++i) {
    T(i, i) = 0.0;
    for (int j = 0; j <= k; ++j) {
      if (i == j && domain.dim() >= 2) continue;
      if (j == 0) {
        T(i, j) = 0.0;  // never used: the start is not revisited
        continue;
      }
      double g = kernel(*all[i], *all[j]);
      if (cutoff) g = std::min(g, *cutoff);
      T(i, j) = g;
    }
  }
  return phi_k_table(T, method);
}

std::string to_string(Quadrature q) {
  switch (q) {
    case Quadrature::automatic: return "automatic";
    case Quadrature::tensor: return "tensor";
    case Quadrature::transfer: return "transfer";
    case Quadrature::monte_carlo: return "monte_carlo";
  }
  return "unknown";
}

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::finite: return "finite";
    case Verdict::infinite: return "infinite";
    case Verdict::inconclusive: return "inconclusive";
  }
  return "unknown";
}

MomentValue moment_mixed(const MomentProblem& pr, const std::vector<int>& counts, const MomentOptions& opts) {
  validate_problem(pr, counts);
  const int k = std::accumulate(counts.begin(), counts.end(), 0);
  if (k == 0) return {1.0, 0.0, "exact", false};

  Quadrature q = opts.quad;
  if (q == Quadrature::automatic) {
    if (pr.p == 1 && !opts.cutoff && pr.domain.bounded())
      q = Quadrature::transfer;
    else if (pr.domain.dim() == 1 && k <= 6)
      q = Quadrature::tensor;
    else
      q = Quadrature::monte_carlo;
  }
  switch (q) {
    case Quadrature::transfer:
      if (opts.cutoff) throw UnsupportedError("transfer quadrature does not support a kernel cutoff");
      return transfer_quadrature(pr, counts, opts);
    case Quadrature::tensor: {
      if (pr.domain.dim() != 1 || k > 6) throw UnsupportedError("tensor quadrature is limited to d = 1 and k <= 6");
      bool over = false;
      MomentValue v = tensor_quadrature(pr, counts, opts, over);
      if (!over) return v;
      log_warning("tensor quadrature budget exceeded; falling back to Monte Carlo");
      v = monte_carlo(pr, counts, opts);
      v.partial = true;
      return v;
    }
    case Quadrature::monte_carlo:
      return monte_carlo(pr, counts, opts);
    case Quadrature::automatic:
      break;
  }
  throw UnsupportedError("unknown quadrature");
}

MomentValue moment_mixed(const MomentProblem& pr, int k, const Vec& lambda, const MomentOptions& opts) {
  if (static_cast<std::size_t>(lambda.size()) != pr.phi.size()) throw InputError("lambda size does not match family");
  if (std::abs(lambda.sum() - 1.0) > 1e-12 || (lambda.array() < 0).any())
    throw InputError("lambda must lie on the simplex");
  std::vector<int> counts(lambda.size());
  for (Index i = 0; i < lambda.size(); ++i) {
    const double c = k * lambda[i];
    const double r = std::round(c);
    if (std::abs(c - r) > 1e-9) throw InputError("k*lambda_i must be integral; round the weights before calling");
    counts[i] = static_cast<int>(r);
  }
  return moment_mixed(pr, counts, opts);
}

MomentValue moment_sum(const MomentProblem& pr, int k, const MomentOptions& opts) {
  const std::size_t n = pr.phi.size();
  if (k < 0) throw InputError("k must be nonnegative");
  if (n == 1) return moment_mixed(pr, std::vector<int>{k}, opts);
  if (pr.p != 1)
    throw UnsupportedError("moment_sum with several members needs integral mixed powers, available only for p = 1");

  // All compositions of k into n parts, with multinomial weights.
  std::vector<int> c(n, 0);
  CompensatedSum acc;
  double var = 0.0;
  std::string method;
  bool partial = false;
  std::function<void(std::size_t, int)> rec = [&](std::size_t i, int left) {
    if (i + 1 == n) {
      c[i] = left;
      double coef = factorial(k);
      for (int ci : c) coef /= factorial(ci);
      const MomentValue v = moment_mixed(pr, c, opts);
      acc.add(coef * v.value);
      var += coef * coef * v.stderr * v.stderr;
      method = v.method;
      partial = partial || v.partial;
      return;
    }
    for (int t = 0; t <= left; ++t) {
      c[i] = t;
      rec(i + 1, left - t);
    }
  };
  rec(0, k);
  return {acc.value(), std::sqrt(var), method, partial};
}

TauberResult tauber_theta(const MomentSequence& seq) {
  TauberResult out;
  const int p = seq.p;
  if (p < 1) {
    out.note = "invalid p";
    return out;
  }
  std::vector<double> ks, ys;
  for (const auto& e : seq.entries) {
    if (e.k < 1 || !std::isfinite(e.value) || !(e.value > 0)) {
      out.note = "non-positive or non-finite entries";
      return out;
    }
    double logm = std::log(e.value);
    if (!seq.normalized) logm -= p * std::lgamma(e.k + 1.0);
    ks.push_back(e.k);
    ys.push_back(logm / e.k);
  }
  for (std::size_t i = 1; i < ks.size(); ++i)
    if (!(ks[i] > ks[i - 1])) {
      out.note = "k must be strictly increasing";
      return out;
    }
  if (ks.size() < 3) {
    out.note = "at least three entries are required";
    return out;
  }

  // Weighted least squares for y = A + B/k with weights k^2 (constant relative noise).
  const std::size_t m = ks.size();
  Mat X(m, 2);
  Vec y(m), w(m);
  for (std::size_t i = 0; i < m; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = 1.0 / ks[i];
    y[i] = ys[i];
    w[i] = ks[i] * ks[i];
  }
  const Mat XtW = X.transpose() * w.asDiagonal();
  const Mat N = XtW * X;
  const Eigen::FullPivLU<Mat> lu(N);
  if (!lu.isInvertible()) {
    out.note = "degenerate fit";
    return out;
  }
  const Vec beta = lu.solve(XtW * y);
  const Vec r = y - X * beta;
  const double sigma2 = (w.array() * r.array().square()).sum() / static_cast<double>(m - 2);
  const Mat cov = sigma2 * lu.inverse();
  out.intercept = beta[0];
  out.slope = beta[1];
  out.theta = p * std::exp(-beta[0] / p);
  out.stderr = out.theta / p * std::sqrt(std::max(cov(0, 0), 0.0));
  if (!std::isfinite(out.theta) || !std::isfinite(out.stderr)) {
    out.note = "fit produced non-finite values";
    out.verdict = Verdict::inconclusive;
    return out;
  }
  const auto& last = seq.entries.back();
  const auto& prev = seq.entries[seq.entries.size() - 2];
  if (last.k == prev.k + 1) {
    double ratio = last.value / prev.value;
    if (!seq.normalized) ratio /= std::pow(static_cast<double>(last.k), p);
    out.ratio_estimate = std::pow(ratio, 1.0 / p);
  }
  if (out.theta - 2 * out.stderr > 1.0)
    out.verdict = Verdict::finite;
  else if (out.theta + 2 * out.stderr < 1.0)
    out.verdict = Verdict::infinite;
  else
    out.verdict = Verdict::inconclusive;
  return out;
}

}  // namespace ilt
