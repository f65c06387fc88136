#pragma once

#include "ilt/domain.hpp"
#include "ilt/shapes.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace ilt {

// Points for simulation live on the stack (d <= 3).
using SimPoint = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 3, 1>;

inline constexpr int kMaxSimDim = 3;

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream);

// Standard normal and uniform draws; the path kernel is templated on the source
// so tests can replay prescribed increments.
struct RngSource {
  std::mt19937_64 rng;
  std::normal_distribution<double> normal_dist{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_dist{0.0, 1.0};
  explicit RngSource(std::mt19937_64 r) : rng(std::move(r)) {}
  double normal() { return normal_dist(rng); }
  double uniform() { return uniform_dist(rng); }
};

// Signed distance to the boundary, positive inside.
double signed_distance(const Domain& domain, const SimPoint& x);

// Probability that a Brownian bridge of duration dt between two interior
// points leaves the domain: exact per face for intervals, per-face product
// for boxes, per-sphere for balls.
double bridge_exit_probability(const Domain& domain, const SimPoint& x, const SimPoint& y, double dt);

struct PathOptions {
  double dt = 1e-3;
  bool bridge = true;
  long long max_steps = 100000000;
};

struct PathOutcome {
  double exit_time = 0.0;
  bool exited = false;
  bool truncated = false;
  long long steps = 0;
};

// Euler-Gaussian walk until exit. visit(a, b, tau) is called for every
// segment with its duration; the final segment ends at the exit point, and a
// bridge-detected exit contributes (x, x, dt/2).
template <class Source, class Visitor>
PathOutcome run_path(const Domain& domain, const SimPoint& x0, const PathOptions& opts, Source& src,
                     Visitor&& visit) {
  PathOutcome out;
  if (domain.bounded() && !domain.contains(x0)) {
    out.exited = true;
    return out;
  }
  const int d = domain.dim();
  const double sdt = std::sqrt(opts.dt);
  SimPoint x = x0, y(d);
  double t = 0.0;
  for (long long step = 0; step < opts.max_steps; ++step) {
    for (int a = 0; a < d; ++a) y[a] = x[a] + sdt * src.normal();
    ++out.steps;
    if (domain.bounded()) {
      const double sy = signed_distance(domain, y);
      if (sy <= 0) {
        const double sx = signed_distance(domain, x);
        const double frac = sx / (sx - sy);
        const SimPoint e = x + frac * (y - x);
        visit(x, e, frac * opts.dt);
        out.exit_time = t + frac * opts.dt;
        out.exited = true;
        return out;
      }
      if (opts.bridge) {
        const double pexit = bridge_exit_probability(domain, x, y, opts.dt);
        if (pexit > 0 && src.uniform() < pexit) {
          visit(x, x, 0.5 * opts.dt);
          out.exit_time = t + 0.5 * opts.dt;
          out.exited = true;
          return out;
        }
      }
    }
    visit(x, y, opts.dt);
    t += opts.dt;
    x = y;
  }
  out.exit_time = t;
  out.truncated = true;
  return out;
}

struct PathSample {
  std::vector<SimPoint> skeleton;  // positions at multiples of dt, then the exit point
  double dt = 0.0;
  double last_step = 0.0;          // duration of the final segment
  double exit_time = 0.0;
  bool exited = false;
  bool truncated = false;
  std::uint64_t seed = 0;
};

PathSample sample_path(const Domain& domain, const Point& x0, double dt, std::mt19937_64& rng,
                       const PathOptions& base = {});

// Every stride-th skeleton point (the exit point is kept): the same path seen
// at time step stride·dt.
PathSample coarsen(const PathSample& path, int stride);

// Equal-width bins over an interval domain.
struct Bins {
  double lower = 0.0;
  double width = 1.0;
  int count = 1;
  double center(int b) const { return lower + (b + 0.5) * width; }
  int index(double x) const;
};

// Width close to √dt, snapped so the bins tile the interval exactly.
Bins default_bins(const Domain& domain, double dt);

struct LocalTimeField {
  Bins bins;
  Vec values;  // occupation time per bin / width
  double total() const { return values.sum() * bins.width; }
};

// Occupation binning shared by the path visitors: a segment's duration is
// spread over the bins it crosses in proportion to the length inside each,
// which keeps the estimate reflection symmetric.
struct OccupationBinner {
  Bins bins;
  Vec occupation;
  explicit OccupationBinner(const Bins& b) : bins(b), occupation(Vec::Zero(b.count)) {}
  void operator()(const SimPoint& a, const SimPoint& b, double tau) { add(a[0], b[0], tau); }
  void add(double x, double y, double tau);
  LocalTimeField field() const { return {bins, occupation / bins.width}; }
};

LocalTimeField local_time_field(const PathSample& path, const Bins& bins);

enum class IltMethod { local_time_product, sausage };

struct ILTEstimate {
  double value = 0.0;
  IltMethod method = IltMethod::local_time_product;
  double stderr = 0.0;
  double epsilon = 0.0;
};

// s_d(ε) normalizing the sausage intersection volume.
double sausage_normalizer(int dim, int p, double eps);

struct SausageField {
  double epsilon = 0.0;
  double voxel = 0.0;
  SimPoint origin;
  std::vector<int> dims;
  std::vector<std::vector<std::uint64_t>> masks;  // one per motion
  std::vector<std::uint64_t> intersection;

  long long voxel_count(const std::vector<std::uint64_t>& bits) const;
  Point voxel_center(long long index) const;
};

// Voxelized ε-sausages of the skeletons on a lattice of spacing `voxel`
// covering the domain's bounding box.
// An empty region means the bounding box.
SausageField build_sausage(const Domain& domain, const std::vector<PathSample>& paths, double eps, double voxel,
                           const Vec& region_lower = Vec(), const Vec& region_upper = Vec());

// True when every bit of `inner` is set in `outer`.
bool mask_subset(const std::vector<std::uint64_t>& inner, const std::vector<std::uint64_t>& outer);

// ℓ(A) for a box A from p paths: d = 1 local-time product or sausage volume.
ILTEstimate ilt_mass(const Domain& domain, const std::vector<PathSample>& paths, const Vec& a_lower,
                     const Vec& a_upper, IltMethod method, double eps = 0.0, double bin_width = 0.0);

struct MonteCarloConfig {
  int p = 1;
  Domain domain = Domain::interval(0, 1);
  std::vector<Point> starts;  // one common start or one per motion
  long long samples = 100000;
  double dt = 1e-3;
  std::uint64_t seed = 1;
  int batches = 64;
  int threads = 1;
  double bin_width = 0.0;  // 0: √dt
};

// Per-sample exit time of the first motion and ℓ(U) for a box U
// (p = 1 in any bounded d, p >= 2 in d = 1).
struct SampleTable {
  std::vector<std::uint64_t> stream;  // RNG stream (batch) of each sample
  std::vector<double> exit_time;
  std::vector<double> ell;
};

SampleTable sample_table(const MonteCarloConfig& cfg, const Vec& u_lower, const Vec& u_upper);

struct TailConfig {
  MonteCarloConfig mc;
  ShapeFamily phi;
  std::vector<double> thresholds;
  int min_count = 50;
};

struct TailResult {
  double slope = 0.0;
  double stderr = kInf;
  double ci_lower = -kInf, ci_upper = kInf;
  std::vector<double> thresholds;
  std::vector<long long> counts;
  long long samples = 0;
  bool undersampled = false;
  std::vector<double> values;  // per-sample Σ⟨φ_i^{2p}, ℓ⟩^{1/p}
};

// Samples of X = Σ_i ⟨φ_i^{2p}, ℓ⟩^{1/p}. p = 1 in any bounded d; p >= 2 needs d = 1.
std::vector<double> sample_functional(const MonteCarloConfig& cfg, const ShapeFamily& phi);

// Weighted regression of log P{X > a} on a.
// The standard error is a delete-one-group jackknife over `groups`
// contiguous blocks of samples.
TailResult tail_from_samples(const std::vector<double>& values, const std::vector<double>& thresholds,
                             int min_count = 50, int groups = 16);
TailResult tail_estimate(const TailConfig& cfg);

struct LlmConfig {
  MonteCarloConfig mc;
  Vec u_lower, u_upper;  // U, an interval inside the domain
  std::vector<double> thresholds;
  int grid_cells = 512;  // for the Θ minimizer
};

struct LlmRow {
  double threshold = 0.0;
  long long accepted = 0;
  double mean_distance = 0.0;
  double stderr = 0.0;
  Vec mean_profile;    // binned conditional mean of ℓ|_U / ℓ(U)
  Vec profile_stderr;
};

struct LlmResult {
  std::vector<LlmRow> rows;
  std::vector<double> omitted;  // thresholds without accepted samples
  Vec bin_centers;
  Vec target;                   // ψ^{2p} bin masses
  double theta = 0.0;
  std::vector<double> ell;      // per-sample ℓ(U)
  std::vector<double> distance; // per-sample bounded-Lipschitz distance
};

LlmResult llm_experiment(const LlmConfig& cfg);

}  // namespace ilt
