#include "ilt/runner.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <map>

namespace {

const std::map<std::string, std::string> kHelp = {
    {"theta", "variational constant Theta and its maximiser"},
    {"rho", "dual constant rho and its minimising weights"},
    {"duality", "checks rho * Theta = p"},
    {"gcal", "entropic pair problem for a kernel and a measure"},
    {"hfrak", "entropic problem at fixed weights lambda"},
    {"bigw", "alphabet problem W and its optimal weights"},
    {"pinsky", "compares c against Theta_h"},
    {"moments", "moments of the intersection local time"},
    {"tauber", "Theta estimated from a moment sequence"},
    {"simulate", "Monte Carlo functionals or sausage volumes"},
    {"tail", "tail slope of the intersection local time"},
    {"llm", "conditioned occupation profiles versus threshold"},
    {"selftest", "bundled closed-form checks"},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Intersection local time experiments"};
  app.require_subcommand(1, 1);
  ilt::cli::RunOptions opts;
  for (const std::string& name : ilt::cli::kSubcommands) {
    CLI::App* sub = app.add_subcommand(name, kHelp.at(name));
    sub->add_option("--config", opts.config_path, "INI configuration file");
    sub->add_option("--seed", opts.seed, "overrides [run] seed");
    sub->add_option("--out", opts.out_dir, "output directory");
    sub->add_option("--format", opts.format, "summary format on stdout")->check(CLI::IsMember({"json", "csv"}));
    sub->callback([&opts, name] { opts.subcommand = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : ilt::cli::kConfigFailure;
  }
  return ilt::cli::run(opts, std::cout, std::cerr);
}
