#pragma once

#include "ilt/domain.hpp"
#include "ilt/shapes.hpp"

#include "json.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ilt::cli {

using Json = nlohmann::json;

enum ExitCode { kOk = 0, kNumericFailure = 1, kConfigFailure = 2 };

inline const std::vector<std::string> kSubcommands = {"theta", "rho",     "duality", "gcal",   "hfrak",
                                                      "bigw",  "pinsky",  "moments", "tauber", "simulate",
                                                      "tail",  "llm",     "selftest"};

// Typed view of an INI file. Every known key is resolved, defaults included;
// unknown sections or keys raise ConfigError naming the key.
class RunConfig {
public:
  static RunConfig from_file(const std::string& path);
  static RunConfig from_string(const std::string& text);
  static RunConfig defaults();

  // Values after defaults, as typed JSON: {section: {key: value}}.
  const Json& resolved() const { return resolved_; }
  void set(const std::string& section, const std::string& key, const Json& value);

  int get_int(const std::string& section, const std::string& key) const;
  double get_double(const std::string& section, const std::string& key) const;
  bool get_bool(const std::string& section, const std::string& key) const;
  std::string get_string(const std::string& section, const std::string& key) const;
  std::vector<double> get_list(const std::string& section, const std::string& key) const;

  // 64-bit FNV-1a of the canonical resolved config, as 16 hex digits.
  std::string hash() const;

  // Built objects; validated (including p(d-2) < d) by validate().
  Domain domain() const;
  std::vector<Point> starts() const;
  // Members [phi.1], [phi.2], ... in numeric order; tabulated members use `grid`.
  ShapeFamily family(const GridPtr& grid) const;
  int p() const { return get_int("problem", "p"); }
  void validate() const;

private:
  Json resolved_;
};

std::uint64_t fnv1a64(const std::string& bytes);

// "0.25 0.75" or "0.25, 0.75".
std::vector<double> parse_list(const std::string& text);
// Points separated by ';', coordinates as in parse_list.
std::vector<Point> parse_points(const std::string& text);

struct RunOptions {
  std::string subcommand;
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> format;  // json or csv; [output] format otherwise
};

// Output directory: --out, then [output] dir, then $ILT_OUT_DIR, then ./ilt_out.
std::string resolve_out_dir(const RunOptions& opts, const RunConfig& cfg);

// Runs one subcommand, writes <out>/<subcommand>.json plus CSVs, prints a
// summary to `out` and diagnostics to `err`.
int run(const RunOptions& opts, std::ostream& out, std::ostream& err);

}  // namespace ilt::cli
