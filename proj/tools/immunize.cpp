// immunize: condition-number immunization of linear feature extractors.
//
//   immunize immunize --config C --out DIR [--seed N] [--method M]
//   immunize probe    --config C (--theta FILE | --identity) [--iters N] --out DIR
//   immunize verify   [--level fast|full] [--seed N]
//   immunize pairs    --config C [--pairs all|p-h,...] --out DIR [--jobs N] [--seed N] [--method M]
//
// Relative data paths in configs resolve against $IMMUNIZE_DATA_DIR when set.

#include <iostream>

#include "CLI11.hpp"
#include "immunize/cli.hpp"

int main(int argc, char** argv) {
  namespace cli = immunize::cli;
  CLI::App app{"Condition-number immunization of linear feature extractors"};
  app.set_version_flag("--version", cli::version);
  app.require_subcommand(1);

  cli::ImmunizeArgs im;
  std::uint64_t im_seed = 0;
  std::string im_method;
  auto* c_im = app.add_subcommand("immunize", "Train immunized extractors and write theta, telemetry and summaries");
  c_im->add_option("--config", im.config, "Experiment config (JSON)")->required();
  c_im->add_option("--out", im.out_dir, "Output directory")->required();
  auto* im_seed_opt = c_im->add_option("--seed", im_seed, "Run a single seed instead of the configured list");
  auto* im_method_opt = c_im->add_option("--method", im_method, "Ours, RillOnly, OptKappa or Imma");

  cli::ProbeArgs pr;
  std::string pr_theta;
  auto* c_pr = app.add_subcommand("probe", "Exact line-search probing on both tasks; writes norm-ratio curves");
  c_pr->add_option("--config", pr.config, "Experiment config naming the data")->required();
  auto* pr_theta_opt = c_pr->add_option("--theta", pr_theta, "Extractor file written by `immunize`");
  c_pr->add_flag("--identity", pr.identity, "Probe the identity extractor");
  c_pr->add_option("--iters", pr.iters, "Line-search steps")->capture_default_str();
  c_pr->add_option("--out", pr.out_dir, "Output directory")->required();

  std::string level = "fast";
  std::uint64_t vf_seed = 0;
  auto* c_vf = app.add_subcommand("verify", "Run the regularizer property suite");
  c_vf->add_option("--level", level, "fast (100 trials) or full (1000 trials)")->capture_default_str();
  c_vf->add_option("--seed", vf_seed, "Suite seed")->capture_default_str();

  cli::PairsArgs pa;
  std::uint64_t pa_seed = 0;
  std::string pa_method;
  auto* c_pa = app.add_subcommand("pairs", "Immunize over ordered digit-task pairs; writes a log-RIR grid");
  c_pa->add_option("--config", pa.config, "IDX experiment config")->required();
  c_pa->add_option("--pairs", pa.pairs, "all, or p-h task indices separated by commas")->capture_default_str();
  c_pa->add_option("--out", pa.out_dir, "Output directory")->required();
  c_pa->add_option("--jobs", pa.jobs, "Worker threads (0: all cores)")->capture_default_str();
  auto* pa_seed_opt = c_pa->add_option("--seed", pa_seed, "Run a single seed instead of the configured list");
  auto* pa_method_opt = c_pa->add_option("--method", pa_method, "Ours, RillOnly, OptKappa or Imma");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : cli::exit_config;
  }

  if (c_im->parsed()) {
    if (*im_seed_opt) im.seed = im_seed;
    if (*im_method_opt) im.method = im_method;
    return cli::cmd_immunize(im, std::cout, std::cerr);
  }
  if (c_pr->parsed()) {
    if (*pr_theta_opt) pr.theta = pr_theta;
    return cli::cmd_probe(pr, std::cout, std::cerr);
  }
  if (c_vf->parsed()) return cli::cmd_verify(level, vf_seed, std::cout, std::cerr);
  if (*pa_seed_opt) pa.seed = pa_seed;
  if (*pa_method_opt) pa.method = pa_method;
  return cli::cmd_pairs(pa, std::cout, std::cerr);
}
