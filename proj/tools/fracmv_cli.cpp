#include "fracmv/runner.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitIo = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

int fail(int code, const std::string& msg) {
  std::cerr << "fracmv: " << msg << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distribution-dependent SDEs driven by fractional Brownian motion: samplers, solvers, rate functions "
               "and Monte Carlo scaling checks."};
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<unsigned> workers;

  app.add_option("command", command, "sample-fbm | solve | skeleton | rate | clt | ldp | mdp")
      ->required()
      ->check(CLI::IsMember(fracmv::commands()));
  app.add_option("--config", config_path, "JSON run configuration")->required();
  app.add_option("--seed", seed, "override the configured seed");
  app.add_option("--out", out_dir, "override the output directory");
  app.add_option("--workers", workers, "worker threads (results do not depend on it)")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  fracmv::RunConfig cfg;
  try {
    fracmv::Json raw;
    try {
      raw = fracmv::Json::parse(fracmv::io::read_file(config_path));
    } catch (const fracmv::Json::parse_error& e) {
      return fail(kExitUsage, "config: " + std::string(e.what()));
    }
    cfg = fracmv::parse_config(raw);
    if (seed) cfg.seed = *seed;
    if (out_dir) cfg.output_dir = *out_dir;
    if (workers) cfg.workers = *workers;
    fracmv::validate(cfg);
  } catch (const fracmv::usage_error& e) {
    return fail(kExitUsage, e.what());
  } catch (const std::exception& e) {
    return fail(kExitIo, e.what());
  }

  try {
    const fracmv::RunOutcome res = fracmv::run(command, cfg);
    fracmv::Json listing = {{"command", command}, {"summary", res.summary}, {"artifacts", fracmv::Json::array()}};
    for (const auto& p : res.artifacts) listing["artifacts"].push_back(p.string());
    std::cout << listing.dump(2) << "\n";
    return kExitOk;
  } catch (const fracmv::divergence_error& e) {
    return fail(kExitNumerical, std::string("divergence: ") + e.what());
  } catch (const fracmv::numerical_error& e) {
    return fail(kExitNumerical, std::string("numerical failure: ") + e.what());
  } catch (const std::logic_error& e) {
    // usage_error, unsupported_error and invalid_argument/domain_error from the library
    return fail(kExitUsage, e.what());
  } catch (const std::exception& e) {
    return fail(kExitIo, e.what());
  }
}
