#include "ilt/runner.hpp"

#include "ilt/functional.hpp"
#include "ilt/green.hpp"
#include "ilt/moments.hpp"
#include "ilt/simulate.hpp"
#include "ilt/variational.hpp"

#include <Eigen/Core>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <boost/version.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

namespace ilt::cli {

namespace {

constexpr const char* kVersion = "0.1.0";

enum class Type { integer, real, boolean, text, list, points };

struct KeySpec {
  const char* key;
  Type type;
  const char* fallback;  // textual default; "" means "derived" for lists and points
};

// Known sections and keys. [phi.N] sections use kPhiKeys.
const std::map<std::string, std::vector<KeySpec>>& schema() {
  static const std::map<std::string, std::vector<KeySpec>> s = {
      {"run", {{"seed", Type::integer, "1"}}},
      {"domain",
       {{"kind", Type::text, "interval"},
        {"lower", Type::list, "0"},
        {"upper", Type::list, "1"},
        {"center", Type::list, "0"},
        {"radius", Type::real, "1"},
        {"dim", Type::integer, "3"}}},
      {"problem", {{"p", Type::integer, "1"}, {"starts", Type::points, ""}}},
      {"grid", {{"cells", Type::integer, "512"}, {"mode", Type::text, "sparse"}}},
      {"solver",
       {{"max_iter", Type::integer, "20000"},
        {"tol_value", Type::real, "1e-10"},
        {"tol_residual", Type::real, "1e-6"},
        {"damping", Type::real, "0.5"},
        {"starts", Type::integer, "8"},
        {"fallback", Type::boolean, "true"},
        {"stall_window", Type::integer, "400"}}},
      {"moments",
       {{"kmax", Type::integer, "6"},
        {"k", Type::list, ""},
        {"counts", Type::list, ""},
        {"quad", Type::text, "automatic"},
        {"gl_nodes", Type::integer, "32"},
        {"tensor_budget", Type::real, "1e10"},
        {"mc_samples", Type::integer, "200000"},
        {"mc_batches", Type::integer, "16"},
        {"transfer_cells", Type::integer, "2048"},
        {"cutoff", Type::real, "0"}}},
      {"tauber", {{"kmax", Type::integer, "10"}, {"scales", Type::list, "1"}}},
      {"gcal",
       {{"kernel", Type::text, ""},
        {"mu", Type::list, ""},
        {"max_iter", Type::integer, "200000"},
        {"tol", Type::real, "1e-12"},
        {"max_cells", Type::integer, "64"}}},
      {"hfrak",
       {{"lambda", Type::list, ""},
        {"max_cells", Type::integer, "64"},
        {"max_iter", Type::integer, "5000"},
        {"tol", Type::real, "1e-12"}}},
      {"bigw", {{"max_iter", Type::integer, "200"}, {"tol", Type::real, "1e-9"}, {"fd_step", Type::real, "1e-4"}}},
      {"mc",
       {{"samples", Type::integer, "100000"},
        {"dt", Type::real, "1e-3"},
        {"batches", Type::integer, "64"},
        {"threads", Type::integer, "1"},
        {"bin_width", Type::real, "0"}}},
      {"simulate",
       {{"method", Type::text, "functional"},
        {"u_lower", Type::list, ""},
        {"u_upper", Type::list, ""},
        {"threshold", Type::real, "0"},
        {"eps", Type::list, "0.04 0.02 0.01"},
        {"pairs", Type::integer, "10"}}},
      {"tail", {{"thresholds", Type::list, "0.3 0.45 0.6 0.75 0.9"}, {"min_count", Type::integer, "50"}}},
      {"llm",
       {{"u_lower", Type::list, ""},
        {"u_upper", Type::list, ""},
        {"thresholds", Type::list, "0 0.16 0.36"},
        {"grid_cells", Type::integer, "512"}}},
      {"output", {{"dir", Type::text, ""}, {"format", Type::text, "json"}, {"raw", Type::boolean, "false"}}},
  };
  return s;
}

const std::vector<KeySpec> kPhiKeys = {{"kind", Type::text, "constant"},
                                       {"lower", Type::list, ""},
                                       {"upper", Type::list, ""},
                                       {"scale", Type::real, "1"},
                                       {"values", Type::list, ""}};

bool is_phi_section(const std::string& name, int* index = nullptr) {
  if (name.rfind("phi.", 0) != 0 || name.size() == 4) return false;
  const std::string tail = name.substr(4);
  if (!std::all_of(tail.begin(), tail.end(), [](unsigned char c) { return std::isdigit(c); })) return false;
  if (index) *index = std::stoi(tail);
  return true;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

Json typed(const std::string& section, const KeySpec& spec, const std::string& raw) {
  const std::string v = trim(raw);
  const std::string where = "[" + section + "] " + spec.key;
  try {
    switch (spec.type) {
      case Type::integer: {
        std::size_t pos = 0;
        const long long x = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
      }
      case Type::real: {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
      }
      case Type::boolean:
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw std::invalid_argument(v);
      case Type::text:
        return v;
      case Type::list:
        return parse_list(v);
      case Type::points: {
        Json arr = Json::array();
        for (const Point& x : parse_points(v)) arr.push_back(std::vector<double>(x.data(), x.data() + x.size()));
        return arr;
      }
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError("bad value '" + v + "' for " + where);
  }
  return nullptr;
}

Vec to_vec(const std::vector<double>& v) { return Eigen::Map<const Vec>(v.data(), static_cast<Index>(v.size())); }

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<double> parse_list(const std::string& text) {
  std::string s = text;
  std::replace(s.begin(), s.end(), ',', ' ');
  std::istringstream is(s);
  std::vector<double> out;
  std::string tok;
  while (is >> tok) {
    std::size_t pos = 0;
    double x;
    try {
      x = std::stod(tok, &pos);
    } catch (const std::exception&) {
      throw ConfigError("not a number: '" + tok + "'");
    }
    if (pos != tok.size()) throw ConfigError("not a number: '" + tok + "'");
    out.push_back(x);
  }
  return out;
}

std::vector<Point> parse_points(const std::string& text) {
  std::vector<Point> out;
  std::istringstream is(text);
  std::string part;
  while (std::getline(is, part, ';')) {
    if (trim(part).empty()) continue;
    out.push_back(to_vec(parse_list(part)));
  }
  return out;
}

RunConfig RunConfig::defaults() { return from_string(""); }

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str());
}

RunConfig RunConfig::from_string(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream is(text);
    pt::ini_parser::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  RunConfig cfg;
  cfg.resolved_ = Json::object();
  for (const auto& [name, specs] : schema()) {
    Json sec = Json::object();
    for (const KeySpec& k : specs) sec[k.key] = typed(name, k, k.fallback);
    cfg.resolved_[name] = sec;
  }
  bool any_phi = false;
  for (const auto& [name, sec] : tree) {
    if (!sec.data().empty() && sec.empty()) throw ConfigError("unknown key '" + name + "' outside a section");
    const std::vector<KeySpec>* specs = nullptr;
    if (is_phi_section(name)) {
      specs = &kPhiKeys;
      any_phi = true;
      Json& dst = cfg.resolved_[name];
      for (const KeySpec& k : kPhiKeys) dst[k.key] = typed(name, k, k.fallback);
    } else {
      auto it = schema().find(name);
      if (it == schema().end()) throw ConfigError("unknown section [" + name + "]");
      specs = &it->second;
    }
    for (const auto& [key, val] : sec) {
      auto k = std::find_if(specs->begin(), specs->end(), [&](const KeySpec& s) { return key == s.key; });
      if (k == specs->end()) throw ConfigError("unknown key '" + key + "' in section [" + name + "]");
      cfg.resolved_[name][key] = typed(name, *k, val.data());
    }
  }
  if (!any_phi) {
    Json& dst = cfg.resolved_["phi.1"];
    for (const KeySpec& k : kPhiKeys) dst[k.key] = typed("phi.1", k, k.fallback);
  }

  // Derived defaults are written back so the record shows every value used.
  const Domain d = cfg.domain();
  Vec lo, hi;
  if (d.bounded()) {
    lo = d.bbox_lower();
    hi = d.bbox_upper();
  } else {
    lo = hi = Vec::Zero(d.dim());
  }
  if (cfg.resolved_["problem"]["starts"].empty()) {
    const Vec c = 0.5 * (lo + hi);
    cfg.resolved_["problem"]["starts"] = Json::array({std::vector<double>(c.data(), c.data() + c.size())});
  }
  auto fill = [&](const char* sec, const char* key, const Vec& v) {
    if (cfg.resolved_[sec][key].empty()) cfg.resolved_[sec][key] = std::vector<double>(v.data(), v.data() + v.size());
  };
  fill("simulate", "u_lower", lo);
  fill("simulate", "u_upper", hi);
  fill("llm", "u_lower", lo + 0.25 * (hi - lo));
  fill("llm", "u_upper", lo + 0.75 * (hi - lo));
  return cfg;
}

void RunConfig::set(const std::string& section, const std::string& key, const Json& value) {
  if (!resolved_.contains(section) || !resolved_[section].contains(key))
    throw ConfigError("unknown key '" + key + "' in section [" + section + "]");
  resolved_[section][key] = value;
}

namespace {

const Json& lookup(const Json& j, const std::string& section, const std::string& key) {
  if (!j.contains(section) || !j.at(section).contains(key))
    throw ConfigError("unknown key '" + key + "' in section [" + section + "]");
  return j.at(section).at(key);
}

}  // namespace

int RunConfig::get_int(const std::string& s, const std::string& k) const {
  return lookup(resolved_, s, k).get<int>();
}
double RunConfig::get_double(const std::string& s, const std::string& k) const {
  return lookup(resolved_, s, k).get<double>();
}
bool RunConfig::get_bool(const std::string& s, const std::string& k) const {
  return lookup(resolved_, s, k).get<bool>();
}
std::string RunConfig::get_string(const std::string& s, const std::string& k) const {
  return lookup(resolved_, s, k).get<std::string>();
}
std::vector<double> RunConfig::get_list(const std::string& s, const std::string& k) const {
  return lookup(resolved_, s, k).get<std::vector<double>>();
}

std::string RunConfig::hash() const {
  Json j = resolved_;
  j.erase("output");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

Domain RunConfig::domain() const {
  const std::string kind = get_string("domain", "kind");
  const Vec lo = to_vec(get_list("domain", "lower")), hi = to_vec(get_list("domain", "upper"));
  if (kind == "interval") {
    if (lo.size() != 1 || hi.size() != 1) throw ConfigError("[domain] interval needs scalar lower and upper");
    return Domain::interval(lo[0], hi[0]);
  }
  if (kind == "box") return Domain::box(lo, hi);
  if (kind == "ball") return Domain::ball(to_vec(get_list("domain", "center")), get_double("domain", "radius"));
  if (kind == "free_space") return Domain::free_space(get_int("domain", "dim"));
  throw ConfigError("unknown [domain] kind '" + kind + "'");
}

std::vector<Point> RunConfig::starts() const {
  std::vector<Point> out;
  for (const auto& x : lookup(resolved_, "problem", "starts")) out.push_back(to_vec(x.get<std::vector<double>>()));
  return out;
}

ShapeFamily RunConfig::family(const GridPtr& grid) const {
  std::vector<std::pair<int, std::string>> names;
  for (const auto& [name, _] : resolved_.items()) {
    int idx = 0;
    if (is_phi_section(name, &idx)) names.emplace_back(idx, name);
  }
  std::sort(names.begin(), names.end());
  const Domain dom = domain();
  ShapeFamily fam;
  for (const auto& [_, name] : names) {
    const std::string kind = get_string(name, "kind");
    const double scale = get_double(name, "scale");
    if (kind == "constant") {
      if (!dom.bounded()) throw ConfigError("[" + name + "] constant members need a bounded domain");
      fam.push_back(Shape::constant(dom, scale));
    } else if (kind == "indicator") {
      const Vec lo = to_vec(get_list(name, "lower")), hi = to_vec(get_list(name, "upper"));
      if (lo.size() != dom.dim() || hi.size() != dom.dim())
        throw ConfigError("[" + name + "] lower/upper need " + std::to_string(dom.dim()) + " coordinates");
      fam.push_back(Shape::indicator(lo, hi, scale));
    } else if (kind == "tabulated") {
      if (!grid) throw ConfigError("[" + name + "] tabulated members need a grid");
      fam.push_back(Shape::tabulated(grid, scale * to_vec(get_list(name, "values"))));
    } else {
      throw ConfigError("[" + name + "] unknown kind '" + kind + "'");
    }
  }
  return fam;
}

void RunConfig::validate() const {
  const Domain dom = domain();
  const int p = this->p();
  if (p < 1) throw ConfigError("[problem] p must be at least 1");
  check_admissible(p, dom.dim());
  const auto st = starts();
  if (st.size() != 1 && static_cast<int>(st.size()) != p)
    throw ConfigError("[problem] starts: give one common start or one per motion");
  for (const Point& x : st) {
    if (x.size() != dom.dim()) throw ConfigError("[problem] starts: wrong dimension");
    if (dom.bounded() && !dom.in_closure(x)) throw ConfigError("[problem] starts: point outside the domain");
  }
  if (get_int("grid", "cells") < 2) throw ConfigError("[grid] cells must be at least 2");
  const std::string mode = get_string("grid", "mode");
  if (mode != "sparse" && mode != "dense") throw ConfigError("[grid] mode must be sparse or dense");
  const std::string fmt_ = get_string("output", "format");
  if (fmt_ != "json" && fmt_ != "csv") throw ConfigError("[output] format must be json or csv");
  if (!(get_double("mc", "dt") > 0)) throw ConfigError("[mc] dt must be positive");
  if (get_int("mc", "samples") < 1) throw ConfigError("[mc] samples must be positive");
}

std::string resolve_out_dir(const RunOptions& opts, const RunConfig& cfg) {
  if (opts.out_dir) return *opts.out_dir;
  const std::string d = cfg.get_string("output", "dir");
  if (!d.empty()) return d;
  if (const char* env = std::getenv("ILT_OUT_DIR"); env && *env) return env;
  return "ilt_out";
}

namespace {

struct Context {
  RunConfig cfg;
  std::string out_dir;
  std::string sub;
  Json values = Json::object();
  Json artifacts = Json::array();
  std::vector<std::string> diagnostics;
  std::uint64_t seed = 1;

  std::string csv_path(const std::string& name) const { return (std::filesystem::path(out_dir) / name).string(); }

  void write_csv(const std::string& name, const std::string& header, const std::vector<std::vector<std::string>>& rows) {
    const std::string path = csv_path(name);
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot write " + path);
    os << header << '\n';
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
      os << '\n';
    }
    artifacts.push_back(path);
  }
};

Json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

GridPtr grid_of(const Context& c) {
  const Domain dom = c.cfg.domain();
  if (!dom.bounded()) throw ConfigError("grid solvers need a bounded domain");
  return make_grid(dom, c.cfg.get_int("grid", "cells"));
}

GreenMode mode_of(const Context& c) {
  return c.cfg.get_string("grid", "mode") == "dense" ? GreenMode::dense_kernel : GreenMode::sparse_solve;
}

SolverOptions solver_opts(const Context& c) {
  SolverOptions o;
  o.max_iter = c.cfg.get_int("solver", "max_iter");
  o.tol_value = c.cfg.get_double("solver", "tol_value");
  o.tol_residual = c.cfg.get_double("solver", "tol_residual");
  o.damping = c.cfg.get_double("solver", "damping");
  o.starts = c.cfg.get_int("solver", "starts");
  o.fallback = c.cfg.get_bool("solver", "fallback");
  o.stall_window = c.cfg.get_int("solver", "stall_window");
  o.seed = c.seed;
  return o;
}

MomentOptions moment_opts(const Context& c) {
  MomentOptions o;
  const std::string q = c.cfg.get_string("moments", "quad");
  if (q == "automatic") o.quad = Quadrature::automatic;
  else if (q == "tensor") o.quad = Quadrature::tensor;
  else if (q == "transfer") o.quad = Quadrature::transfer;
  else if (q == "monte_carlo") o.quad = Quadrature::monte_carlo;
  else throw ConfigError("unknown [moments] quad '" + q + "'");
  o.gl_nodes = c.cfg.get_int("moments", "gl_nodes");
  o.tensor_budget = c.cfg.get_double("moments", "tensor_budget");
  o.mc_samples = c.cfg.get_int("moments", "mc_samples");
  o.mc_batches = c.cfg.get_int("moments", "mc_batches");
  o.transfer_cells = c.cfg.get_int("moments", "transfer_cells");
  const double cut = c.cfg.get_double("moments", "cutoff");
  if (cut > 0) o.cutoff = cut;
  o.seed = c.seed;
  return o;
}

MonteCarloConfig mc_config(const Context& c) {
  MonteCarloConfig m;
  m.p = c.cfg.p();
  m.domain = c.cfg.domain();
  m.starts = c.cfg.starts();
  m.samples = c.cfg.get_int("mc", "samples");
  m.dt = c.cfg.get_double("mc", "dt");
  m.seed = c.seed;
  m.batches = c.cfg.get_int("mc", "batches");
  m.threads = c.cfg.get_int("mc", "threads");
  m.bin_width = c.cfg.get_double("mc", "bin_width");
  return m;
}

struct GridSetup {
  GridPtr grid;
  GreenOperator op;
  TestFamily phi;
  int p;
  GridSetup(const Context& c, GreenMode mode)
      : grid(grid_of(c)), op(grid, mode), phi(discretize(c.cfg.family(grid), *grid)), p(c.cfg.p()) {}
};

void sub_theta(Context& c) {
  const GridSetup s(c, mode_of(c));
  const ThetaSolution sol = solve_theta(s.op, s.phi, s.p, solver_opts(c));
  c.values["theta"] = sol.theta;
  c.values["residual"] = sol.residual;
  c.values["iterations"] = sol.iterations;
  c.values["method"] = sol.method;
  c.values["spread"] = sol.spread;
  std::string header;
  for (int a = 0; a < s.grid->dim(); ++a) header += "x" + std::to_string(a + 1) + ",";
  std::vector<std::vector<std::string>> rows;
  for (Index i = 0; i < s.grid->num_nodes(); ++i) {
    std::vector<std::string> r;
    const Point x = s.grid->coordinate(i);
    for (int a = 0; a < x.size(); ++a) r.push_back(fmt(x[a]));
    r.push_back(fmt(sol.psi[i]));
    rows.push_back(std::move(r));
  }
  c.write_csv("theta_psi.csv", header + "psi", rows);
}

void sub_rho(Context& c) {
  const GridSetup s(c, mode_of(c));
  const RhoSolution r = solve_rho(s.op, s.phi, s.p, solver_opts(c));
  c.values["rho"] = r.rho;
  c.values["lambda"] = vec_json(r.lambda);
  c.values["residual"] = r.residual;
  c.values["iterations"] = r.iterations;
  c.values["collapsed"] = r.collapsed;
  std::vector<std::vector<std::string>> rows;
  for (Index i = 0; i < r.lambda.size(); ++i) rows.push_back({std::to_string(i + 1), fmt(r.lambda[i])});
  c.write_csv("rho_lambda.csv", "i,lambda", rows);
}

void sub_duality(Context& c) {
  const GridSetup s(c, mode_of(c));
  const ThetaSolution th = solve_theta(s.op, s.phi, s.p, solver_opts(c));
  const RhoSolution r = solve_rho(s.op, s.phi, s.p, solver_opts(c));
  const double rel = std::abs(r.rho * th.theta - s.p) / s.p;
  c.values["theta"] = th.theta;
  c.values["rho"] = r.rho;
  c.values["p"] = s.p;
  c.values["relative_error"] = rel;
  c.write_csv("duality.csv", "theta,rho,p,relative_error",
              {{fmt(th.theta), fmt(r.rho), std::to_string(s.p), fmt(rel)}});
}

Alphabet alphabet_of(const Context& c, int max_cells) {
  const GridSetup s(c, GreenMode::sparse_solve);
  return build_alphabet(s.op, s.phi, s.p, max_cells);
}

void sub_gcal(Context& c) {
  GcalOptions o;
  o.max_iter = c.cfg.get_int("gcal", "max_iter");
  o.tol = c.cfg.get_double("gcal", "tol");
  Mat K;
  Vec mu;
  const std::string ktext = c.cfg.get_string("gcal", "kernel");
  if (!ktext.empty()) {
    const auto rows = parse_points(ktext);
    K.resize(static_cast<Index>(rows.size()), static_cast<Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != K.cols()) throw ConfigError("[gcal] kernel must be square");
      K.row(static_cast<Index>(i)) = rows[i].transpose();
    }
    mu = to_vec(c.cfg.get_list("gcal", "mu"));
    if (mu.size() == 0) mu = Vec::Constant(K.rows(), 1.0 / K.rows());
    if (mu.size() != K.rows()) throw ConfigError("[gcal] mu must match the kernel size");
  } else {
    const Alphabet a = alphabet_of(c, c.cfg.get_int("gcal", "max_cells"));
    K = a.kernel;
    mu = a.reference.front() / a.reference.front().sum();
  }
  mu = normalize_probability(mu);
  const GcalSolution g = gcal(mu, K, o);
  c.values["value"] = g.value;
  c.values["marginal_residual"] = g.marginal_residual;
  c.values["iterations"] = g.iterations;
  std::vector<std::vector<std::string>> rows;
  for (Index l = 0; l < g.nu.rows(); ++l)
    for (Index m = 0; m < g.nu.cols(); ++m) rows.push_back({std::to_string(l), std::to_string(m), fmt(g.nu(l, m))});
  c.write_csv("gcal_nu.csv", "l,m,nu", rows);
}

Vec lambda_of(const Context& c, Index n) {
  Vec lam = to_vec(c.cfg.get_list("hfrak", "lambda"));
  if (lam.size() == 0) lam = Vec::Constant(n, 1.0 / n);
  if (lam.size() != n) throw ConfigError("[hfrak] lambda needs one weight per test function");
  if ((lam.array() < 0).any() || std::abs(lam.sum() - 1) > 1e-9) throw ConfigError("[hfrak] lambda must lie on the simplex");
  return lam;
}

HfrakOptions hfrak_opts(const Context& c) {
  HfrakOptions o;
  o.max_iter = c.cfg.get_int("hfrak", "max_iter");
  o.tol = c.cfg.get_double("hfrak", "tol");
  o.gcal.max_iter = c.cfg.get_int("gcal", "max_iter");
  o.gcal.tol = c.cfg.get_double("gcal", "tol");
  return o;
}

void sub_hfrak(Context& c) {
  const Alphabet a = alphabet_of(c, c.cfg.get_int("hfrak", "max_cells"));
  const Vec lam = lambda_of(c, static_cast<Index>(a.reference.size()));
  const HfrakResult h = hfrak(a, lam, c.cfg.p(), hfrak_opts(c));
  c.values["value"] = h.value;
  c.values["iterations"] = h.iterations;
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < h.mu.size(); ++i)
    for (Index l = 0; l < h.mu[i].size(); ++l) rows.push_back({std::to_string(i + 1), std::to_string(l), fmt(h.mu[i][l])});
  c.write_csv("hfrak_mu.csv", "i,l,mu", rows);
}

void sub_bigw(Context& c) {
  const GridSetup s(c, GreenMode::sparse_solve);
  const Alphabet a = build_alphabet(s.op, s.phi, s.p, c.cfg.get_int("hfrak", "max_cells"));
  BigWOptions o;
  o.max_iter = c.cfg.get_int("bigw", "max_iter");
  o.tol = c.cfg.get_double("bigw", "tol");
  o.fd_step = c.cfg.get_double("bigw", "fd_step");
  o.inner = hfrak_opts(c);
  const BigWResult w = bigW(a, s.p, o);
  const ThetaSolution th = solve_theta(s.op, s.phi, s.p, solver_opts(c));
  const Transport t = minimizer_transport(*s.grid, th.psi, s.phi, s.p);
  c.values["W"] = w.value;
  c.values["lambda_star"] = vec_json(w.lambda);
  c.values["theta"] = th.theta;
  c.values["identity_deviation"] = std::abs(w.value + s.p * std::log(th.theta / s.p));
  c.values["lambda_minimizer"] = vec_json(t.lambda);
  std::vector<std::vector<std::string>> rows;
  for (Index i = 0; i < w.lambda.size(); ++i) rows.push_back({std::to_string(i + 1), fmt(w.lambda[i]), fmt(t.lambda[i])});
  c.write_csv("bigw_lambda.csv", "i,lambda_star,lambda_minimizer", rows);
}

void sub_pinsky(Context& c) {
  const GridSetup s(c, GreenMode::sparse_solve);
  const PinskyResult r = pinsky_l(s.op, s.phi, s.p, solver_opts(c));
  c.values["value"] = r.value;
  c.values["finite_moments"] = r.finite_moments;
  c.values["iterations"] = r.iterations;
}

MomentProblem moment_problem(const Context& c, double scale = 1.0) {
  MomentProblem mp{c.cfg.domain(), {}, c.cfg.p(), c.cfg.starts()};
  GridPtr g;
  if (mp.domain.bounded()) g = make_grid(mp.domain, c.cfg.get_int("grid", "cells"));
  for (const Shape& s : c.cfg.family(g)) mp.phi.push_back(s.scaled(scale));
  return mp;
}

void sub_moments(Context& c) {
  const MomentProblem mp = moment_problem(c);
  const MomentOptions o = moment_opts(c);
  std::vector<std::vector<std::string>> rows;
  Json table = Json::array();
  auto emit = [&](int k, const MomentValue& v) {
    rows.push_back({std::to_string(k), fmt(v.value), fmt(v.stderr), v.method});
    table.push_back({{"k", k}, {"value", v.value}, {"stderr", v.stderr}, {"method", v.method}, {"partial", v.partial}});
  };
  const auto counts = c.cfg.get_list("moments", "counts");
  if (!counts.empty()) {
    std::vector<int> ci;
    for (double x : counts) {
      if (x < 0 || x != std::floor(x)) throw ConfigError("[moments] counts must be nonnegative integers");
      ci.push_back(static_cast<int>(x));
    }
    emit(std::accumulate(ci.begin(), ci.end(), 0), moment_mixed(mp, ci, o));
  } else {
    std::vector<int> ks;
    for (double x : c.cfg.get_list("moments", "k")) ks.push_back(static_cast<int>(x));
    if (ks.empty())
      for (int k = 1; k <= c.cfg.get_int("moments", "kmax"); ++k) ks.push_back(k);
    for (int k : ks) emit(k, moment_sum(mp, k, o));
  }
  c.values["moments"] = table;
  c.write_csv("moments.csv", "k,value,stderr,method", rows);
}

void sub_tauber(Context& c) {
  const MomentOptions o = moment_opts(c);
  const int kmax = c.cfg.get_int("tauber", "kmax");
  std::vector<std::vector<std::string>> rows;
  Json table = Json::array();
  for (double scale : c.cfg.get_list("tauber", "scales")) {
    const MomentProblem mp = moment_problem(c, scale);
    MomentSequence seq;
    seq.p = mp.p;
    for (int k = 1; k <= kmax; ++k) {
      const MomentValue v = moment_sum(mp, k, o);
      seq.entries.push_back({k, Vec::Ones(static_cast<Index>(mp.phi.size())), v.value, v.stderr, v.method});
    }
    const TauberResult t = tauber_theta(seq);
    rows.push_back({fmt(scale), fmt(t.theta), fmt(t.stderr), to_string(t.verdict), fmt(t.ratio_estimate)});
    table.push_back({{"scale", scale},
                     {"theta", t.theta},
                     {"stderr", t.stderr},
                     {"verdict", to_string(t.verdict)},
                     {"ratio_estimate", t.ratio_estimate},
                     {"note", t.note}});
  }
  c.values["tauber"] = table;
  c.write_csv("tauber.csv", "scale,theta,stderr,verdict,ratio_estimate", rows);
}

std::pair<double, double> mean_se(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double m = 0;
  for (double x : v) m += x;
  m /= n;
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, n > 1 ? std::sqrt(ss / (n - 1) / n) : kInf};
}

void sub_simulate(Context& c) {
  const MonteCarloConfig mc = mc_config(c);
  const Vec ulo = to_vec(c.cfg.get_list("simulate", "u_lower")), uhi = to_vec(c.cfg.get_list("simulate", "u_upper"));
  const std::string method = c.cfg.get_string("simulate", "method");
  if (method == "functional") {
    const SampleTable t = sample_table(mc, ulo, uhi);
    const auto [mt, st] = mean_se(t.exit_time);
    const auto [ml, sl] = mean_se(t.ell);
    std::vector<double> t2(t.exit_time.size());
    for (std::size_t i = 0; i < t2.size(); ++i) t2[i] = t.exit_time[i] * t.exit_time[i];
    const auto [m2, s2] = mean_se(t2);
    c.values["exit_time_mean"] = {{"value", mt}, {"stderr", st}};
    c.values["exit_time_second_moment"] = {{"value", m2}, {"stderr", s2}};
    c.values["ell_U_mean"] = {{"value", ml}, {"stderr", sl}};
    if (c.cfg.get_bool("output", "raw")) {
      const double a = c.cfg.get_double("simulate", "threshold");
      std::vector<std::vector<std::string>> rows;
      for (std::size_t i = 0; i < t.ell.size(); ++i)
        rows.push_back({std::to_string(t.stream[i]), fmt(t.exit_time[i]), fmt(t.ell[i]), t.ell[i] > a ? "1" : "0"});
      c.write_csv("simulate_raw.csv", "seed,T,ell_U,accepted", rows);
    }
    return;
  }
  if (method != "sausage") throw ConfigError("[simulate] method must be functional or sausage");
  auto eps = c.cfg.get_list("simulate", "eps");
  if (eps.empty()) throw ConfigError("[simulate] eps must list at least one radius");
  std::sort(eps.begin(), eps.end(), std::greater<>());
  const int d = mc.domain.dim();
  const double fine = eps.back();
  const double dt = (fine / 4) * (fine / 4) / d;
  const int pairs = c.cfg.get_int("simulate", "pairs");
  std::vector<std::vector<double>> est(eps.size());
  std::vector<std::vector<std::string>> rows;
  for (int k = 0; k < pairs; ++k) {
    auto rng = stream_rng(mc.seed, static_cast<std::uint64_t>(k));
    std::vector<PathSample> paths;
    for (int i = 0; i < mc.p; ++i)
      paths.push_back(sample_path(mc.domain, mc.starts.size() == 1 ? mc.starts[0] : mc.starts[i], dt, rng));
    for (std::size_t e = 0; e < eps.size(); ++e) {
      const double want = (eps[e] / 4) * (eps[e] / 4) / d;
      const int stride = std::max(1, static_cast<int>(std::floor(want / dt + 1e-9)));
      std::vector<PathSample> coarse;
      for (const auto& pth : paths) coarse.push_back(coarsen(pth, stride));
      const double v = ilt_mass(mc.domain, coarse, ulo, uhi, IltMethod::sausage, eps[e]).value;
      est[e].push_back(v);
      rows.push_back({std::to_string(k), fmt(eps[e]), fmt(v)});
    }
  }
  Json table = Json::array();
  for (std::size_t e = 0; e < eps.size(); ++e) {
    const auto [m, s] = mean_se(est[e]);
    table.push_back({{"eps", eps[e]}, {"value", m}, {"stderr", s}});
  }
  c.values["sausage"] = table;
  c.write_csv("sausage.csv", "pair,eps,value", rows);
}

void sub_tail(Context& c) {
  TailConfig t;
  t.mc = mc_config(c);
  GridPtr g;
  if (t.mc.domain.bounded()) g = grid_of(c);
  t.phi = c.cfg.family(g);
  t.thresholds = c.cfg.get_list("tail", "thresholds");
  t.min_count = c.cfg.get_int("tail", "min_count");
  const TailResult r = tail_estimate(t);
  c.values["slope"] = r.slope;
  c.values["stderr"] = r.stderr;
  c.values["ci"] = {r.ci_lower, r.ci_upper};
  c.values["undersampled"] = r.undersampled;
  c.values["samples"] = r.samples;
  if (g) {
    GreenOperator op(g);
    const ThetaSolution th = solve_theta(op, discretize(t.phi, *g), t.mc.p, solver_opts(c));
    c.values["theta_reference"] = th.theta;
    c.values["relative_deviation"] = std::abs(-r.slope - th.theta) / th.theta;
  }
  std::vector<std::vector<std::string>> rows;
  for (std::size_t j = 0; j < r.thresholds.size(); ++j)
    rows.push_back({fmt(r.thresholds[j]), std::to_string(r.counts[j]),
                    fmt(static_cast<double>(r.counts[j]) / static_cast<double>(r.samples))});
  c.write_csv("tail.csv", "threshold,count,probability", rows);
}

void sub_llm(Context& c) {
  LlmConfig l;
  l.mc = mc_config(c);
  l.u_lower = to_vec(c.cfg.get_list("llm", "u_lower"));
  l.u_upper = to_vec(c.cfg.get_list("llm", "u_upper"));
  l.thresholds = c.cfg.get_list("llm", "thresholds");
  l.grid_cells = c.cfg.get_int("llm", "grid_cells");
  const LlmResult r = llm_experiment(l);
  c.values["theta"] = r.theta;
  c.values["omitted_thresholds"] = r.omitted;
  Json table = Json::array();
  std::vector<std::vector<std::string>> rows, prof;
  for (const LlmRow& row : r.rows) {
    table.push_back({{"threshold", row.threshold},
                     {"accepted", row.accepted},
                     {"mean_distance", row.mean_distance},
                     {"stderr", row.stderr}});
    rows.push_back({fmt(row.threshold), std::to_string(row.accepted), fmt(row.mean_distance), fmt(row.stderr)});
    for (Index j = 0; j < r.bin_centers.size(); ++j)
      prof.push_back({fmt(row.threshold), fmt(r.bin_centers[j]), fmt(row.mean_profile[j]), fmt(row.profile_stderr[j]),
                      fmt(r.target[j])});
  }
  c.values["rows"] = table;
  c.write_csv("llm.csv", "threshold,accepted,mean_distance,stderr", rows);
  c.write_csv("llm_profile.csv", "threshold,bin_center,mean,stderr,target", prof);
}

// Bundled closed-form and structural checks.
void sub_selftest(Context& c, std::ostream& out) {
  struct Check {
    const char* name;
    std::function<bool()> run;
  };
  const std::vector<Check> checks = {
      {"admissibility rejects p=3, d=3", [] { return !admissible(3, 3) && admissible(2, 3) && admissible(5, 1); }},
      {"start on the boundary exits at T=0",
       [] {
         auto rng = stream_rng(1, 0);
         const PathSample s = sample_path(Domain::interval(0, 1), Point::Constant(1, 0.0), 1e-3, rng);
         return s.exit_time == 0.0 && s.exited;
       }},
      {"local time integrates to the exit time",
       [] {
         auto rng = stream_rng(2, 0);
         const Domain d = Domain::interval(0, 1);
         const PathSample s = sample_path(d, Point::Constant(1, 0.5), 1e-3, rng);
         return std::abs(local_time_field(s, default_bins(d, 1e-3)).total() - s.exit_time) < 1e-12;
       }},
      {"interval Green function is (x-a)(b-y)/(b-a) times 2",
       [] {
         const Domain d = Domain::interval(0, 1);
         return std::abs(green_eval(d, Point::Constant(1, 0.25), Point::Constant(1, 0.5)) - 2 * 0.25 * 0.5) < 1e-14;
       }},
      {"Phi_k dynamic programme matches brute force",
       [] {
         Mat t(5, 5);
         for (int i = 0; i < 5; ++i)
           for (int j = 0; j < 5; ++j) t(i, j) = 1.0 / (1 + i + j) + (i == j);
         t = 0.5 * (t + t.transpose()).eval();
         const double a = phi_k_table(t, PhiMethod::dp), b = phi_k_table(t, PhiMethod::brute);
         return std::abs(a - b) <= 1e-12 * std::abs(b);
       }},
      {"constant kernel gives -log c",
       [] {
         const Mat k = Mat::Constant(3, 3, 2.5);
         return std::abs(gcal(Vec::Constant(3, 1.0 / 3), k).value + std::log(2.5)) < 1e-8;
       }},
      {"zero-measure region carries no intersection local time",
       [] {
         auto rng = stream_rng(3, 0);
         const Domain d = Domain::interval(0, 1);
         std::vector<PathSample> ps{sample_path(d, Point::Constant(1, 0.5), 1e-3, rng),
                                    sample_path(d, Point::Constant(1, 0.5), 1e-3, rng)};
         return ilt_mass(d, ps, Vec::Constant(1, 0.5), Vec::Constant(1, 0.5), IltMethod::local_time_product).value == 0;
       }},
  };
  Json table = Json::array();
  int failed = 0;
  for (const Check& ch : checks) {
    bool ok = false;
    try {
      ok = ch.run();
    } catch (const std::exception& e) {
      c.diagnostics.push_back(std::string(ch.name) + ": " + e.what());
    }
    failed += !ok;
    out << (ok ? "PASS " : "FAIL ") << ch.name << '\n';
    table.push_back({{"check", ch.name}, {"pass", ok}});
  }
  c.values["checks"] = table;
  c.values["failed"] = failed;
  if (failed) throw ConvergenceError(std::to_string(failed) + " self-test check(s) failed", failed, 0);
}

Json versions() {
  return {{"ilt", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"boost", BOOST_LIB_VERSION},
          {"json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) +
                       "." + std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"compiler", __VERSION__}};
}

void flatten(const std::string& prefix, const Json& v, std::ostream& out) {
  if (v.is_object()) {
    for (const auto& [k, x] : v.items()) flatten(prefix.empty() ? k : prefix + "." + k, x, out);
  } else if (v.is_array()) {
    for (std::size_t i = 0; i < v.size(); ++i) flatten(prefix + "." + std::to_string(i), v[i], out);
  } else if (v.is_number_float()) {
    out << prefix << ',' << fmt(v.get<double>()) << '\n';
  } else {
    out << prefix << ',' << v.dump() << '\n';
  }
}

void print_summary(const Json& rec, const std::string& format, std::ostream& out) {
  if (format == "json") {
    out << rec.dump(2) << '\n';
    return;
  }
  out << "name,value\n";
  flatten("", rec["values"], out);
}

}  // namespace

int run(const RunOptions& opts, std::ostream& out, std::ostream& err) {
  const auto t0 = std::chrono::steady_clock::now();
  if (std::find(kSubcommands.begin(), kSubcommands.end(), opts.subcommand) == kSubcommands.end()) {
    err << "error: unknown subcommand '" << opts.subcommand << "'\n";
    return kConfigFailure;
  }
  if (opts.format && *opts.format != "json" && *opts.format != "csv") {
    err << "error: --format must be json or csv\n";
    return kConfigFailure;
  }
  Context c;
  c.sub = opts.subcommand;
  try {
    if (opts.config_path) c.cfg = RunConfig::from_file(*opts.config_path);
    else if (opts.subcommand == "selftest") c.cfg = RunConfig::defaults();
    else throw ConfigError("--config is required for " + opts.subcommand);
    if (opts.seed) c.cfg.set("run", "seed", static_cast<long long>(*opts.seed));
    if (opts.out_dir) c.cfg.set("output", "dir", *opts.out_dir);
    if (opts.format) c.cfg.set("output", "format", *opts.format);
    c.cfg.validate();
    c.seed = static_cast<std::uint64_t>(c.cfg.get_int("run", "seed"));
    c.out_dir = resolve_out_dir(opts, c.cfg);
    std::error_code ec;
    std::filesystem::create_directories(c.out_dir, ec);
    if (ec || !std::filesystem::is_directory(c.out_dir)) throw ConfigError("cannot create output directory " + c.out_dir);
    {
      const std::string probe = c.csv_path(".write_probe");
      std::ofstream os(probe);
      if (!os) throw ConfigError("output directory " + c.out_dir + " is not writable");
      os.close();
      std::filesystem::remove(probe, ec);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kConfigFailure;
  }

  int code = kOk;
  std::string status = "ok";
  try {
    const std::string& s = c.sub;
    if (s == "theta") sub_theta(c);
    else if (s == "rho") sub_rho(c);
    else if (s == "duality") sub_duality(c);
    else if (s == "gcal") sub_gcal(c);
    else if (s == "hfrak") sub_hfrak(c);
    else if (s == "bigw") sub_bigw(c);
    else if (s == "pinsky") sub_pinsky(c);
    else if (s == "moments") sub_moments(c);
    else if (s == "tauber") sub_tauber(c);
    else if (s == "simulate") sub_simulate(c);
    else if (s == "tail") sub_tail(c);
    else if (s == "llm") sub_llm(c);
    else sub_selftest(c, err);
  } catch (const ConvergenceError& e) {
    code = kNumericFailure;
    status = "numeric_failure";
    c.values["best_value"] = e.best_value();
    c.values["best_iterations"] = e.iterations();
    c.diagnostics.push_back(e.what());
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigFailure;
  } catch (const UnsupportedError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigFailure;
  } catch (const std::exception& e) {
    code = kNumericFailure;
    status = "numeric_failure";
    c.diagnostics.push_back(e.what());
  }

  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  Json rec = {{"subcommand", c.sub},     {"status", status},          {"config_hash", c.cfg.hash()},
              {"config", c.cfg.resolved()}, {"values", c.values},     {"artifacts", c.artifacts},
              {"diagnostics", c.diagnostics}, {"wall_time", wall},    {"versions", versions()}};
  const std::string path = c.csv_path(c.sub + ".json");
  {
    std::ofstream os(path);
    if (!os) {
      err << "error: cannot write " << path << '\n';
      return kNumericFailure;
    }
    os << rec.dump(2) << '\n';
  }
  for (const std::string& d : c.diagnostics) err << "diagnostic: " << d << '\n';
  print_summary(rec, c.cfg.get_string("output", "format"), out);
  return code;
}

}  // namespace ilt::cli
