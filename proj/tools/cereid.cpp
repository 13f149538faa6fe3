// Command-line front end: gen | train | gradcheck | simulate | eval-central.
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cereid/commands.hpp"
#include "cereid/config.hpp"
#include "cereid/error.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t threads = 1;
  bool dry_run = false;
};

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config_path, "run configuration (JSON)")->required();
  sub->add_option("--seed", f.seed, "override the config seed");
  sub->add_option("--out", f.out, "output directory (default: config output.dir)");
  sub->add_option("--threads", f.threads, "worker threads for query tasks")->check(CLI::PositiveNumber);
  sub->add_flag("--dry-run", f.dry_run, "validate the config and print the resolved plan");
}

}  // namespace

int main(int argc, char** argv) {
  using namespace cereid;
  CLI::App app{"Cloud-edge collaborative re-identification simulator"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  CommonFlags flags;
  bool inject_fault = false;
  auto* gen = app.add_subcommand("gen", "generate a synthetic scene");
  auto* train = app.add_subcommand("train", "train the correlation model");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
  auto* simulate = app.add_subcommand("simulate", "run the upload benchmark");
  auto* central = app.add_subcommand("eval-central", "centralized CMC/mAP with joint re-ranking");
  for (auto* sub : {gen, train, gradcheck, simulate, central}) add_common(sub, flags);
  gradcheck->add_flag("--inject-fault", inject_fault, "corrupt one analytic gradient (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    RunConfig config = load_config(flags.config_path);
    if (flags.seed) config.seed = *flags.seed;
    CommandOptions opts;
    opts.out_dir = flags.out;
    opts.threads = flags.threads;
    opts.dry_run = flags.dry_run;
    opts.inject_fault = inject_fault;
    if (gen->parsed()) return cmd_gen(config, opts, std::cout);
    if (train->parsed()) return cmd_train(config, opts, std::cout);
    if (gradcheck->parsed()) return cmd_gradcheck(config, opts, std::cout);
    if (simulate->parsed()) return cmd_simulate(config, opts, std::cout);
    return cmd_eval_central(config, opts, std::cout);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const DatasetError& e) {
    std::cerr << "dataset error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
