#include <cstdlib>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "commands.hpp"
#include "eqpose/runtime.hpp"

namespace {

using namespace eqpose;

// A flag that overrides one config key. String keys are stored verbatim;
// the others are parsed as JSON values.
struct OverrideFlag {
  const char* flag;
  const char* key;
  bool is_string;
  const char* help;
};

const std::vector<OverrideFlag> kValueFlags = {
    {"--seed", "seed", false, "Master seed (falls back to EQPOSE_SEED, then 0)"},
    {"--category", "category", true, "plane, chair, bottle or box"},
    {"--data-dir", "data_dir", true, "Dataset directory"},
    {"--run-dir", "run_dir", true, "Run directory (log, checkpoints, lock)"},
    {"--checkpoint", "checkpoint", true, "Checkpoint to resume from or evaluate"},
    {"--template", "template", true, "Instance mode: fixed template PLY"},
    {"--out-dir", "out_dir", true, "Output directory for eval, icp and export"},
    {"--precision", "precision", true, "fp32 or fp64"},
    {"--points", "data.points", false, "Points per cloud"},
    {"--policy", "data.policy", true, "full-sphere or upper-hemisphere"},
    {"--steps", "train.steps", false, "Total training steps"},
    {"--batch", "train.batch", false, "Batch size"},
    {"--lr", "train.lr", false, "Initial learning rate"},
    {"--lambda", "train.lambda", false, "Residual norm penalty weight"},
    {"--mode", "train.mode", true, "auto, complete or partial distance"},
    {"--calibration", "eval.calibration", true, "Calibration split: train or test"},
};

const std::vector<OverrideFlag> kBoolFlags = {
    {"--partial", "data.partial", false, "Generate hidden-point-removal partial views"},
    {"--weights-only", "train.weights_only", false, "Resume weights with a fresh optimizer"},
};

struct Invocation {
  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> values;
  std::map<std::string, bool> bools;
  std::vector<std::pair<std::string, CLI::Option*>> value_opts, bool_opts;
};

void add_config_flags(CLI::App* sub, Invocation& inv) {
  sub->add_option("-c,--config", inv.config_file, "TOML or JSON run configuration");
  sub->add_option("--set", inv.sets, "Override any key: --set train.lr=1e-3")
      ->allow_extra_args(false);
  for (const auto& f : kValueFlags)
    inv.value_opts.emplace_back(f.key, sub->add_option(f.flag, inv.values[f.key], f.help));
  for (const auto& f : kBoolFlags)
    inv.bool_opts.emplace_back(f.key, sub->add_flag(f.flag, inv.bools[f.key], f.help));
}

RunConfig resolve(const Invocation& inv, const CLI::App* sub, PathRequirements need) {
  nlohmann::json j = inv.config_file.empty() ? nlohmann::json::object()
                                             : load_config_file(inv.config_file);
  for (const auto& s : inv.sets) apply_override(j, s);
  for (const auto& [key, opt] : inv.value_opts) {
    if (!opt->count()) continue;
    bool is_string = false;
    for (const auto& f : kValueFlags)
      if (key == f.key) is_string = f.is_string;
    const std::string& v = inv.values.at(key);
    if (is_string)
      detail::set_dotted(j, key, v);
    else
      apply_override(j, key + "=" + v);
  }
  for (const auto& [key, opt] : inv.bool_opts)
    if (opt->count()) detail::set_dotted(j, key, true);
  (void)sub;
  return parse_run_config(j, std::getenv("EQPOSE_SEED"), need);
}

}  // namespace

int main(int argc, char** argv) {
  configure_allocator();
  CLI::App app{"eqpose: self-supervised category-level 6D pose on the icosahedral group"};
  app.require_subcommand(1);

  Invocation gen_inv, train_inv, eval_inv, icp_inv, check_inv, export_inv;
  auto* gen = app.add_subcommand("gen", "Generate a procedural dataset");
  auto* train = app.add_subcommand("train", "Train with the min-of-N reconstruction loss");
  auto* eval = app.add_subcommand("eval", "Calibrate and evaluate a checkpoint");
  auto* icp = app.add_subcommand("icp", "Run the ICP-60 baseline");
  auto* check = app.add_subcommand("check-equiv", "Run the equivariance property battery");
  auto* exp = app.add_subcommand("export", "Write reconstructions and overlays as PLY");
  add_config_flags(gen, gen_inv);
  add_config_flags(train, train_inv);
  add_config_flags(eval, eval_inv);
  add_config_flags(icp, icp_inv);
  add_config_flags(check, check_inv);
  add_config_flags(exp, export_inv);
  std::size_t clouds = 2;
  check->add_option("--clouds", clouds, "Random clouds per precision")->capture_default_str();
  std::size_t limit = 0;
  exp->add_option("--limit", limit, "Export at most this many test samples (0: all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kExitConfig;
  }

  try {
    if (*gen) return cli::cmd_gen(resolve(gen_inv, gen, {}), std::cout);
    if (*train)
      return cli::cmd_train(resolve(train_inv, train, {true, false}), std::cout);
    if (*eval) return cli::cmd_eval(resolve(eval_inv, eval, {true, true}), std::cout);
    if (*icp) return cli::cmd_icp(resolve(icp_inv, icp, {true, false}), std::cout);
    if (*check) return cli::cmd_check_equiv(resolve(check_inv, check, {}), clouds, std::cout);
    if (*exp)
      return cli::cmd_export(resolve(export_inv, exp, {true, true}), limit, std::cout);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return cli::kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return cli::kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kExitError;
  }
  return cli::kExitError;
}
