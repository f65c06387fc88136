#include "ilt/simulate.hpp"

#include "ilt/functional.hpp"
#include "ilt/variational.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <limits>
#include <atomic>
#include <numbers>
#include <thread>

namespace ilt {

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

double signed_distance(const Domain& domain, const SimPoint& x) {
  switch (domain.kind()) {
    case DomainKind::interval:
    case DomainKind::box: {
      double s = kInf;
      for (int a = 0; a < domain.dim(); ++a)
        s = std::min({s, x[a] - domain.lower()[a], domain.upper()[a] - x[a]});
      return s;
    }
    case DomainKind::ball:
      return domain.radius() - (x - domain.center()).norm();
    case DomainKind::free_space:
      return kInf;
  }
  return kInf;
}

namespace {

// Crossing probability of a level at distances u, v > 0 on either side.
double half_line(double u, double v, double dt) {
  if (u <= 0 || v <= 0) return 1.0;
  return std::exp(-2.0 * u * v / dt);
}

}  // namespace

double bridge_exit_probability(const Domain& domain, const SimPoint& x, const SimPoint& y, double dt) {
  switch (domain.kind()) {
    case DomainKind::interval:
    case DomainKind::box: {
      double stay = 1.0;
      for (int a = 0; a < domain.dim(); ++a) {
        const double lo = domain.lower()[a], hi = domain.upper()[a];
        stay *= 1.0 - half_line(x[a] - lo, y[a] - lo, dt);
        stay *= 1.0 - half_line(hi - x[a], hi - y[a], dt);
      }
      return 1.0 - stay;
    }
    case DomainKind::ball: {
      const double r = domain.radius();
      return half_line(r - (x - domain.center()).norm(), r - (y - domain.center()).norm(), dt);
    }
    case DomainKind::free_space:
      return 0.0;
  }
  return 0.0;
}

PathSample sample_path(const Domain& domain, const Point& x0, double dt, std::mt19937_64& rng,
                       const PathOptions& base) {
  if (!(dt > 0)) throw InputError("dt must be positive");
  if (x0.size() != domain.dim()) throw InputError("start point has the wrong dimension");
  if (domain.dim() > kMaxSimDim) throw ConfigError("simulation supports d <= 3");
  PathSample out;
  out.dt = dt;
  if (domain.bounded() && !domain.contains(x0)) {
    if (!domain.in_closure(x0)) throw InputError("start point outside the domain");
    out.skeleton.push_back(x0);
    out.exited = true;
    return out;
  }
  PathOptions opts = base;
  opts.dt = dt;
  RngSource src(rng);
  SimPoint start = x0;
  out.skeleton.push_back(start);
  double last = 0.0;
  const PathOutcome r = run_path(domain, start, opts, src, [&](const SimPoint&, const SimPoint& b, double tau) {
    out.skeleton.push_back(b);
    last = tau;
  });
  rng = src.rng;
  out.exit_time = r.exit_time;
  out.exited = r.exited;
  out.truncated = r.truncated;
  out.last_step = last;
  return out;
}

PathSample coarsen(const PathSample& path, int stride) {
  if (stride < 1) throw InputError("stride must be positive");
  PathSample out = path;
  if (stride == 1 || path.skeleton.size() < 2) return out;
  out.skeleton.clear();
  out.dt = path.dt * stride;
  const std::size_t last = path.skeleton.size() - 1;
  for (std::size_t i = 0; i < last; i += stride) out.skeleton.push_back(path.skeleton[i]);
  out.skeleton.push_back(path.skeleton[last]);
  out.last_step = path.exit_time - (out.skeleton.size() - 2) * out.dt;
  return out;
}

int Bins::index(double x) const {
  const int b = static_cast<int>(std::floor((x - lower) / width));
  return std::clamp(b, 0, count - 1);
}

void OccupationBinner::add(double x, double y, double tau) {
  if (x > y) std::swap(x, y);
  const double ux = (x - bins.lower) / bins.width, uy = (y - bins.lower) / bins.width;
  const int bx = bins.index(x), by = bins.index(y);
  if (bx == by) {
    // A point on a bin edge is shared by both neighbours.
    if (x == y && ux == std::floor(ux) && bx > 0 && ux < bins.count) {
      occupation[bx - 1] += 0.5 * tau;
      occupation[bx] += 0.5 * tau;
    } else {
      occupation[bx] += tau;
    }
    return;
  }
  const double rate = tau / (uy - ux);
  occupation[bx] += rate * (bx + 1 - ux);
  for (int b = bx + 1; b < by; ++b) occupation[b] += rate;
  occupation[by] += rate * (uy - by);
}

Bins default_bins(const Domain& domain, double dt) {
  if (domain.dim() != 1) throw ConfigError("local-time bins need d = 1");
  const double len = domain.upper()[0] - domain.lower()[0];
  const int n = std::max(1, static_cast<int>(std::lround(len / std::sqrt(dt))));
  return {domain.lower()[0], len / n, n};
}

LocalTimeField local_time_field(const PathSample& path, const Bins& bins) {
  if (!path.skeleton.empty() && path.skeleton.front().size() != 1) throw ConfigError("local time needs d = 1");
  OccupationBinner binner(bins);
  const std::size_t segs = path.skeleton.size() > 0 ? path.skeleton.size() - 1 : 0;
  for (std::size_t s = 0; s < segs; ++s)
    binner(path.skeleton[s], path.skeleton[s + 1], s + 1 == segs ? path.last_step : path.dt);
  return binner.field();
}

double sausage_normalizer(int dim, int p, double eps) {
  if (!(eps > 0 && eps < 1)) throw InputError("sausage radius must lie in (0, 1)");
  check_admissible(p, dim);
  if (dim == 2) return std::pow(std::log(1.0 / eps) / std::numbers::pi, p);
  if (dim == 3 && p == 2) return 1.0 / std::pow(2.0 * std::numbers::pi * eps, 2);
  if (dim >= 3 && p == 1) {
    const double omega = std::pow(std::numbers::pi, dim / 2.0) / std::tgamma(dim / 2.0 + 1.0);
    return 2.0 / (omega * (dim - 2)) * std::pow(eps, 2.0 - dim);
  }
  throw ConfigError("no sausage normalizer for d = " + std::to_string(dim) + ", p = " + std::to_string(p));
}

long long SausageField::voxel_count(const std::vector<std::uint64_t>& bits) const {
  long long n = 0;
  for (std::uint64_t w : bits) n += std::popcount(w);
  return n;
}

Point SausageField::voxel_center(long long index) const {
  const int d = static_cast<int>(dims.size());
  Point x(d);
  for (int a = d - 1; a >= 0; --a) {
    x[a] = origin[a] + (index % dims[a] + 0.5) * voxel;
    index /= dims[a];
  }
  return x;
}

bool mask_subset(const std::vector<std::uint64_t>& inner, const std::vector<std::uint64_t>& outer) {
  if (inner.size() != outer.size()) throw InputError("masks live on different lattices");
  for (std::size_t i = 0; i < inner.size(); ++i)
    if (inner[i] & ~outer[i]) return false;
  return true;
}

SausageField build_sausage(const Domain& domain, const std::vector<PathSample>& paths, double eps, double voxel,
                           const Vec& region_lower, const Vec& region_upper) {
  if (!domain.bounded()) throw ConfigError("sausages need a bounded domain");
  if (!(eps > 0 && voxel > 0)) throw InputError("sausage radius and voxel must be positive");
  if (paths.empty()) throw InputError("no paths");
  const int d = domain.dim();
  const Vec lo = region_lower.size() ? region_lower : domain.bbox_lower();
  const Vec hi = region_upper.size() ? region_upper : domain.bbox_upper();
  SausageField f;
  f.epsilon = eps;
  f.voxel = voxel;
  f.origin = lo;
  f.dims.resize(d);
  long long total = 1;
  for (int a = 0; a < d; ++a) {
    f.dims[a] = std::max(1, static_cast<int>(std::ceil((hi[a] - lo[a]) / voxel - 1e-9)));
    total *= f.dims[a];
  }
  if (total > (1LL << 34)) throw SizeError("sausage lattice too large");
  const std::size_t words = static_cast<std::size_t>((total + 63) / 64);
  std::vector<long long> stride(d, 1);
  for (int a = d - 2; a >= 0; --a) stride[a] = stride[a + 1] * f.dims[a + 1];
  const int reach = static_cast<int>(std::ceil(eps / voxel)) + 1;
  const double eps2 = eps * eps;

  for (const PathSample& path : paths) {
    std::vector<std::uint64_t> bits(words, 0);
    for (const SimPoint& x : path.skeleton) {
      std::array<int, kMaxSimDim> c{}, lo_i{}, hi_i{};
      bool empty = false;
      for (int a = 0; a < d; ++a) {
        c[a] = static_cast<int>(std::floor((x[a] - f.origin[a]) / voxel));
        lo_i[a] = std::max(0, c[a] - reach);
        hi_i[a] = std::min(f.dims[a] - 1, c[a] + reach);
        empty = empty || lo_i[a] > hi_i[a];
      }
      if (empty) continue;
      std::array<int, kMaxSimDim> m = lo_i;
      while (true) {
        double r2 = 0;
        long long idx = 0;
        for (int a = 0; a < d; ++a) {
          const double dx = f.origin[a] + (m[a] + 0.5) * voxel - x[a];
          r2 += dx * dx;
          idx += m[a] * stride[a];
        }
        if (r2 <= eps2) bits[idx >> 6] |= std::uint64_t{1} << (idx & 63);
        int a = d - 1;
        while (a >= 0 && ++m[a] > hi_i[a]) {
          m[a] = lo_i[a];
          --a;
        }
        if (a < 0) break;
      }
    }
    f.masks.push_back(std::move(bits));
  }
  f.intersection = f.masks.front();
  for (std::size_t i = 1; i < f.masks.size(); ++i)
    for (std::size_t w = 0; w < words; ++w) f.intersection[w] &= f.masks[i][w];
  return f;
}

namespace {

double overlap(double a0, double a1, double b0, double b1) { return std::max(0.0, std::min(a1, b1) - std::max(a0, b0)); }

}  // namespace

ILTEstimate ilt_mass(const Domain& domain, const std::vector<PathSample>& paths, const Vec& a_lower,
                     const Vec& a_upper, IltMethod method, double eps, double bin_width) {
  const int d = domain.dim();
  const int p = static_cast<int>(paths.size());
  if (p < 1) throw InputError("no paths");
  check_admissible(p, d);
  if (a_lower.size() != d || a_upper.size() != d) throw InputError("region has the wrong dimension");
  ILTEstimate est;
  est.method = method;
  double leb = 1.0;
  for (int a = 0; a < d; ++a) leb *= std::max(0.0, a_upper[a] - a_lower[a]);
  if (method == IltMethod::local_time_product) {
    if (d != 1) throw ConfigError("local-time product needs d = 1");
    if (leb == 0) return est;
    Bins bins;
    if (bin_width > 0) {
      const double len = domain.upper()[0] - domain.lower()[0];
      const int n = std::max(1, static_cast<int>(std::lround(len / bin_width)));
      bins = {domain.lower()[0], len / n, n};
    } else {
      bins = default_bins(domain, paths.front().dt);
    }
    Vec prod = Vec::Ones(bins.count);
    for (const PathSample& path : paths) prod = prod.cwiseProduct(local_time_field(path, bins).values);
    double v = 0;
    for (int b = 0; b < bins.count; ++b)
      v += prod[b] * overlap(bins.lower + b * bins.width, bins.lower + (b + 1) * bins.width, a_lower[0], a_upper[0]);
    est.value = v;
    return est;
  }
  if (d < 2) throw ConfigError("sausage estimates need d >= 2");
  const double s = sausage_normalizer(d, p, eps);
  est.epsilon = eps;
  if (leb == 0) return est;
  const SausageField f = build_sausage(domain, paths, eps, eps / 4.0, a_lower, a_upper);
  long long n = 0;
  for (std::size_t w = 0; w < f.intersection.size(); ++w) {
    std::uint64_t bits = f.intersection[w];
    while (bits) {
      const long long idx = static_cast<long long>(w) * 64 + std::countr_zero(bits);
      bits &= bits - 1;
      const Point c = f.voxel_center(idx);
      bool inside = domain.contains(c);
      for (int a = 0; a < d && inside; ++a) inside = c[a] > a_lower[a] && c[a] < a_upper[a];
      n += inside;
    }
  }
  est.value = s * n * std::pow(f.voxel, d);
  return est;
}

namespace {

// φ^q averaged over each bin (d = 1).
Vec bin_average_pow(const Shape& phi, const Bins& bins, double q) {
  constexpr int kSub = 16;
  Vec out(bins.count);
  Point x(1);
  for (int b = 0; b < bins.count; ++b) {
    double s = 0;
    for (int j = 0; j < kSub; ++j) {
      x[0] = bins.lower + (b + (j + 0.5) / kSub) * bins.width;
      s += std::pow(std::abs(phi(x)), q);
    }
    out[b] = s / kSub;
  }
  return out;
}

// Fraction of the segment a -> c inside the open box (slab clipping); a
// degenerate segment counts by its point.
double box_fraction(const SimPoint& a, const SimPoint& c, const Vec& lower, const Vec& upper) {
  double t0 = 0.0, t1 = 1.0;
  for (int k = 0; k < a.size(); ++k) {
    const double dk = c[k] - a[k];
    if (dk == 0.0) {
      if (!(a[k] > lower[k] && a[k] < upper[k])) return 0.0;
      continue;
    }
    double lo = (lower[k] - a[k]) / dk, hi = (upper[k] - a[k]) / dk;
    if (lo > hi) std::swap(lo, hi);
    t0 = std::max(t0, lo);
    t1 = std::min(t1, hi);
    if (t1 <= t0) return 0.0;
  }
  return t1 - t0;
}

struct FastShape {
  const Shape* shape;
  bool box;
  explicit FastShape(const Shape& s) : shape(&s), box(s.kind() == ShapeKind::indicator) {}
  double operator()(const SimPoint& x) const {
    if (box) {
      for (int a = 0; a < x.size(); ++a)
        if (!(x[a] > shape->lower()[a] && x[a] < shape->upper()[a])) return 0.0;
      return shape->scale();
    }
    return (*shape)(Point(x));
  }
  // Mean of |φ|^q along the linear segment: exact for boxes, trapezoid otherwise.
  double segment_mean_pow(const SimPoint& a, const SimPoint& c, double q) const {
    if (box) return std::pow(std::abs(shape->scale()), q) * box_fraction(a, c, shape->lower(), shape->upper());
    return 0.5 * (std::pow(std::abs((*this)(a)), q) + std::pow(std::abs((*this)(c)), q));
  }
};

void check_mc(const MonteCarloConfig& cfg) {
  if (cfg.p < 1) throw ConfigError("p must be positive");
  check_admissible(cfg.p, cfg.domain.dim());
  if (!cfg.domain.bounded()) throw ConfigError("Monte Carlo functionals need a bounded domain");
  if (cfg.domain.dim() > kMaxSimDim) throw ConfigError("simulation supports d <= 3");
  if (cfg.starts.size() != 1 && static_cast<int>(cfg.starts.size()) != cfg.p)
    throw ConfigError("give one common start or one start per motion");
  for (const Point& x : cfg.starts)
    if (x.size() != cfg.domain.dim()) throw ConfigError("start point has the wrong dimension");
  if (cfg.samples < 1 || cfg.batches < 1) throw ConfigError("samples and batches must be positive");
  if (!(cfg.dt > 0)) throw ConfigError("dt must be positive");
}

const Point& start_of(const MonteCarloConfig& cfg, int i) { return cfg.starts.size() == 1 ? cfg.starts[0] : cfg.starts[i]; }

Bins mc_bins(const MonteCarloConfig& cfg) {
  if (cfg.bin_width > 0) {
    const double len = cfg.domain.upper()[0] - cfg.domain.lower()[0];
    const int n = std::max(1, static_cast<int>(std::lround(len / cfg.bin_width)));
    return {cfg.domain.lower()[0], len / n, n};
  }
  return default_bins(cfg.domain, cfg.dt);
}

// Runs job(batch, first, count) for every batch over `threads` workers.
template <class Job>
void for_batches(const MonteCarloConfig& cfg, Job&& job) {
  const int nb = static_cast<int>(std::min<long long>(cfg.batches, cfg.samples));
  auto range = [&](int b) {
    const long long first = cfg.samples * b / nb, last = cfg.samples * (b + 1) / nb;
    job(b, first, last - first);
  };
  const int nt = std::clamp(cfg.threads, 1, nb);
  if (nt == 1) {
    for (int b = 0; b < nb; ++b) range(b);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (int t = 0; t < nt; ++t)
    pool.emplace_back([&] {
      for (int b = next++; b < nb; b = next++) range(b);
    });
  for (auto& th : pool) th.join();
}

// Product of the p binned local times of one sample of motions.
Vec sample_local_time_product(const MonteCarloConfig& cfg, const Bins& bins, RngSource& src,
                              const PathOptions& opts) {
  Vec prod = Vec::Ones(bins.count);
  for (int i = 0; i < cfg.p; ++i) {
    OccupationBinner binner(bins);
    run_path(cfg.domain, SimPoint(start_of(cfg, i)), opts, src, binner);
    prod = prod.cwiseProduct(binner.occupation / bins.width);
  }
  return prod;
}

}  // namespace

std::vector<double> sample_functional(const MonteCarloConfig& cfg, const ShapeFamily& phi) {
  check_mc(cfg);
  if (phi.empty()) throw ConfigError("empty test family");
  if (cfg.p >= 2 && cfg.domain.dim() != 1)
    throw UnsupportedError("p >= 2 functionals are simulated in d = 1 only; use sausage estimates in d >= 2");
  std::vector<double> out(static_cast<std::size_t>(cfg.samples));
  PathOptions opts;
  opts.dt = cfg.dt;

  if (cfg.p == 1) {
    std::vector<FastShape> fs;
    for (const Shape& s : phi) fs.emplace_back(s);
    for_batches(cfg, [&](int b, long long first, long long count) {
      RngSource src(stream_rng(cfg.seed, static_cast<std::uint64_t>(b)));
      for (long long k = 0; k < count; ++k) {
        double acc = 0;
        auto visit = [&](const SimPoint& a, const SimPoint& c, double tau) {
          for (const FastShape& f : fs) acc += tau * f.segment_mean_pow(a, c, 2.0);
        };
        run_path(cfg.domain, SimPoint(cfg.starts[0]), opts, src, visit);
        out[static_cast<std::size_t>(first + k)] = acc;
      }
    });
    return out;
  }

  const Bins bins = mc_bins(cfg);
  std::vector<Vec> weights;
  for (const Shape& s : phi) weights.push_back(bins.width * bin_average_pow(s, bins, 2.0 * cfg.p));
  for_batches(cfg, [&](int b, long long first, long long count) {
    RngSource src(stream_rng(cfg.seed, static_cast<std::uint64_t>(b)));
    for (long long k = 0; k < count; ++k) {
      const Vec prod = sample_local_time_product(cfg, bins, src, opts);
      double x = 0;
      for (const Vec& w : weights) x += std::pow(w.dot(prod), 1.0 / cfg.p);
      out[static_cast<std::size_t>(first + k)] = x;
    }
  });
  return out;
}

SampleTable sample_table(const MonteCarloConfig& cfg, const Vec& u_lower, const Vec& u_upper) {
  check_mc(cfg);
  const int d = cfg.domain.dim();
  if (u_lower.size() != d || u_upper.size() != d) throw ConfigError("region has the wrong dimension");
  if (cfg.p >= 2 && d != 1)
    throw UnsupportedError("p >= 2 functionals are simulated in d = 1 only; use sausage estimates in d >= 2");
  const std::size_t n = static_cast<std::size_t>(cfg.samples);
  SampleTable out;
  out.stream.resize(n);
  out.exit_time.resize(n);
  out.ell.resize(n);
  PathOptions opts;
  opts.dt = cfg.dt;
  const Shape u_ind = Shape::indicator(u_lower, u_upper);
  const FastShape u_shape(u_ind);
  Bins bins;
  Vec frac;
  if (cfg.p >= 2) {
    bins = mc_bins(cfg);
    frac.resize(bins.count);
    for (int b = 0; b < bins.count; ++b)
      frac[b] = overlap(bins.lower + b * bins.width, bins.lower + (b + 1) * bins.width, u_lower[0], u_upper[0]);
  }
  for_batches(cfg, [&](int b, long long first, long long count) {
    RngSource src(stream_rng(cfg.seed, static_cast<std::uint64_t>(b)));
    for (long long k = 0; k < count; ++k) {
      const std::size_t i = static_cast<std::size_t>(first + k);
      out.stream[i] = static_cast<std::uint64_t>(b);
      if (cfg.p == 1) {
        double acc = 0;
        const PathOutcome r = run_path(cfg.domain, SimPoint(cfg.starts[0]), opts, src,
                                       [&](const SimPoint& a, const SimPoint& c, double tau) {
                                         acc += tau * u_shape.segment_mean_pow(a, c, 1.0);
                                       });
        out.exit_time[i] = r.exit_time;
        out.ell[i] = acc;
        continue;
      }
      Vec prod = Vec::Ones(bins.count);
      for (int j = 0; j < cfg.p; ++j) {
        OccupationBinner binner(bins);
        const PathOutcome r = run_path(cfg.domain, SimPoint(start_of(cfg, j)), opts, src, binner);
        if (j == 0) out.exit_time[i] = r.exit_time;
        prod = prod.cwiseProduct(binner.occupation / bins.width);
      }
      out.ell[i] = prod.dot(frac);
    }
  });
  return out;
}

namespace {

struct Fit {
  double slope = std::numeric_limits<double>::quiet_NaN();
  bool ok = false;
};

Fit tail_fit(const std::vector<double>& values, std::size_t begin, std::size_t end,
             const std::vector<double>& thresholds) {
  const double n = static_cast<double>(end - begin);
  std::vector<double> xs, ys, ws;
  for (double a : thresholds) {
    long long c = 0;
    for (std::size_t i = begin; i < end; ++i) c += values[i] > a;
    if (c == 0 || c == static_cast<long long>(n)) continue;
    const double pr = c / n;
    xs.push_back(a);
    ys.push_back(std::log(pr));
    ws.push_back(c / (1.0 - pr));
  }
  Fit f;
  if (xs.size() < 2) return f;
  double sw = 0, sx = 0, sy = 0;
  for (std::size_t j = 0; j < xs.size(); ++j) {
    sw += ws[j];
    sx += ws[j] * xs[j];
    sy += ws[j] * ys[j];
  }
  const double mx = sx / sw, my = sy / sw;
  double sxx = 0, sxy = 0;
  for (std::size_t j = 0; j < xs.size(); ++j) {
    sxx += ws[j] * (xs[j] - mx) * (xs[j] - mx);
    sxy += ws[j] * (xs[j] - mx) * (ys[j] - my);
  }
  if (sxx <= 0) return f;
  f.slope = sxy / sxx;
  f.ok = true;
  return f;
}

}  // namespace

TailResult tail_from_samples(const std::vector<double>& values, const std::vector<double>& thresholds,
                             int min_count, int groups) {
  if (thresholds.size() < 2) throw ConfigError("need at least two thresholds");
  if (!std::is_sorted(thresholds.begin(), thresholds.end())) throw ConfigError("thresholds must increase");
  TailResult r;
  r.thresholds = thresholds;
  r.samples = static_cast<long long>(values.size());
  for (double a : thresholds) r.counts.push_back(std::count_if(values.begin(), values.end(), [a](double v) { return v > a; }));
  r.undersampled = r.counts.back() < min_count;

  const Fit full = tail_fit(values, 0, values.size(), thresholds);
  if (!full.ok) {
    r.slope = std::numeric_limits<double>::quiet_NaN();
    r.undersampled = true;
    log_warning("tail fit needs two thresholds with 0 < P < 1");
    return r;
  }
  r.slope = full.slope;

  // Delete-one-group jackknife.
  const int g = std::max(2, std::min<int>(groups, static_cast<int>(values.size())));
  std::vector<double> reduced;
  std::vector<double> loo;
  for (int j = 0; j < g; ++j) {
    const std::size_t b0 = values.size() * j / g, b1 = values.size() * (j + 1) / g;
    reduced.clear();
    reduced.insert(reduced.end(), values.begin(), values.begin() + b0);
    reduced.insert(reduced.end(), values.begin() + b1, values.end());
    const Fit f = tail_fit(reduced, 0, reduced.size(), thresholds);
    if (f.ok) loo.push_back(f.slope);
  }
  if (loo.size() >= 2) {
    double mean = 0;
    for (double s : loo) mean += s;
    mean /= loo.size();
    double ss = 0;
    for (double s : loo) ss += (s - mean) * (s - mean);
    r.stderr = std::sqrt((loo.size() - 1.0) / loo.size() * ss);
  }
  double half = 1.96 * r.stderr;
  if (r.undersampled) {
    half *= 2;
    log_warning("top tail threshold has " + std::to_string(r.counts.back()) + " exceedances; CI widened");
  }
  r.ci_lower = r.slope - half;
  r.ci_upper = r.slope + half;
  return r;
}

TailResult tail_estimate(const TailConfig& cfg) {
  std::vector<double> values = sample_functional(cfg.mc, cfg.phi);
  TailResult r = tail_from_samples(values, cfg.thresholds, cfg.min_count);
  r.values = std::move(values);
  return r;
}

LlmResult llm_experiment(const LlmConfig& cfg) {
  const MonteCarloConfig& mc = cfg.mc;
  check_mc(mc);
  if (mc.domain.dim() != 1) throw UnsupportedError("the large-mass experiment runs in d = 1");
  if (cfg.u_lower.size() != 1 || cfg.u_upper.size() != 1) throw ConfigError("U must be an interval");
  const double u0 = cfg.u_lower[0], u1 = cfg.u_upper[0];
  if (!(u0 < u1 && u0 > mc.domain.lower()[0] && u1 < mc.domain.upper()[0]))
    throw ConfigError("U must lie strictly inside the domain");
  if (!std::is_sorted(cfg.thresholds.begin(), cfg.thresholds.end()) || cfg.thresholds.empty())
    throw ConfigError("thresholds must be non-empty and increasing");

  const Bins bins = mc_bins(mc);
  std::vector<int> ubins;
  std::vector<double> frac;
  for (int b = 0; b < bins.count; ++b) {
    const double o = overlap(bins.lower + b * bins.width, bins.lower + (b + 1) * bins.width, u0, u1);
    if (o > 1e-12 * bins.width) {
      ubins.push_back(b);
      frac.push_back(o);
    }
  }
  const int nu = static_cast<int>(ubins.size());
  if (nu < 2) throw ConfigError("U spans fewer than two local-time bins");

  LlmResult res;
  res.bin_centers.resize(nu);
  for (int j = 0; j < nu; ++j) {
    const int b = ubins[j];
    const double lo = std::max(u0, bins.lower + b * bins.width), hi = std::min(u1, bins.lower + (b + 1) * bins.width);
    res.bin_centers[j] = 0.5 * (lo + hi);
  }
  // Equal spacing for the distance; edge bins cut by U keep their lattice centers.
  Vec lattice(nu);
  for (int j = 0; j < nu; ++j) lattice[j] = bins.center(ubins[j]);

  // Target ψ^{2p} on U from the Θ minimizer of 1_U.
  {
    const auto grid = make_grid(mc.domain, cfg.grid_cells);
    GreenOperator op(grid, GreenMode::sparse_solve);
    const ShapeFamily fam{Shape::indicator(cfg.u_lower, cfg.u_upper)};
    const ThetaSolution sol = solve_theta(op, discretize(fam, *grid), mc.p);
    res.theta = sol.theta;
    const Vec dens = sol.psi.array().abs().pow(2.0 * mc.p).matrix();
    res.target.resize(nu);
    constexpr int kSub = 64;
    Point x(1);
    for (int j = 0; j < nu; ++j) {
      const int b = ubins[j];
      const double lo = std::max(u0, bins.lower + b * bins.width), hi = std::min(u1, bins.lower + (b + 1) * bins.width);
      double s = 0;
      for (int q = 0; q < kSub; ++q) {
        x[0] = lo + (q + 0.5) / kSub * (hi - lo);
        s += grid->interpolate(dens, x);
      }
      res.target[j] = s / kSub * (hi - lo);
    }
    res.target /= res.target.sum();
  }

  const std::size_t n = static_cast<std::size_t>(mc.samples);
  res.ell.assign(n, 0.0);
  res.distance.assign(n, std::numeric_limits<double>::quiet_NaN());
  const int nb = static_cast<int>(std::min<long long>(mc.batches, mc.samples));
  const std::size_t nt = cfg.thresholds.size();
  // Per batch and threshold: Σq and Σq² of the normalized profile.
  std::vector<std::vector<Vec>> psum(nb, std::vector<Vec>(nt, Vec::Zero(nu))), psq = psum;

  PathOptions opts;
  opts.dt = mc.dt;
  for_batches(mc, [&](int b, long long first, long long count) {
    RngSource src(stream_rng(mc.seed, static_cast<std::uint64_t>(b)));
    Vec q(nu);
    for (long long k = 0; k < count; ++k) {
      const Vec prod = sample_local_time_product(mc, bins, src, opts);
      double ell = 0;
      for (int j = 0; j < nu; ++j) {
        q[j] = prod[ubins[j]] * frac[j];
        ell += q[j];
      }
      const std::size_t i = static_cast<std::size_t>(first + k);
      res.ell[i] = ell;
      if (ell <= 0) continue;
      q /= ell;
      res.distance[i] = bounded_lipschitz_1d(lattice, q, res.target);
      for (std::size_t t = 0; t < nt; ++t) {
        if (!(ell > cfg.thresholds[t])) break;
        psum[b][t] += q;
        psq[b][t] += q.cwiseProduct(q);
      }
    }
  });

  for (std::size_t t = 0; t < nt; ++t) {
    const double a = cfg.thresholds[t];
    LlmRow row;
    row.threshold = a;
    double s = 0, s2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!(res.ell[i] > a) || std::isnan(res.distance[i])) continue;
      ++row.accepted;
      s += res.distance[i];
      s2 += res.distance[i] * res.distance[i];
    }
    if (row.accepted == 0) {
      res.omitted.push_back(a);
      log_warning("no samples with mass above " + std::to_string(a) + "; row omitted");
      continue;
    }
    const double m = static_cast<double>(row.accepted);
    row.mean_distance = s / m;
    row.stderr = m > 1 ? std::sqrt(std::max(0.0, (s2 / m - row.mean_distance * row.mean_distance) / (m - 1))) : kInf;
    Vec ps = Vec::Zero(nu), pq = Vec::Zero(nu);
    for (int b = 0; b < nb; ++b) {
      ps += psum[b][t];
      pq += psq[b][t];
    }
    row.mean_profile = ps / m;
    if (m > 1)
      row.profile_stderr = ((pq / m - row.mean_profile.cwiseProduct(row.mean_profile)).cwiseMax(0.0) / (m - 1)).cwiseSqrt();
    else
      row.profile_stderr = Vec::Constant(nu, kInf);
    res.rows.push_back(std::move(row));
  }
  return res;
}

}  // namespace ilt
