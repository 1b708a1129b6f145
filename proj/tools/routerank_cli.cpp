// routerank: command-line front end for the route-ranking pipeline.
#include <CLI11.hpp>

#include <iostream>

#include "routerank/pipeline.hpp"

namespace rr = routerank;

namespace {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const rr::InvalidArgument*>(&e)) return 2;
  if (dynamic_cast<const rr::MissingInput*>(&e)) return 3;
  if (dynamic_cast<const rr::SchemaError*>(&e)) return 4;
  if (dynamic_cast<const rr::NumericError*>(&e)) return 5;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Personalized route ranking pipeline"};
  app.set_version_flag("--version", std::string(rr::kToolVersion));
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "run";
  std::optional<std::uint64_t> seed;
  bool quiet = false;
  app.add_option("--config", config_path, "Pipeline config JSON (defaults when omitted)");
  app.add_option("--seed", seed, "Overrides every seed in the config");
  app.add_option("--out", out_dir, "Run directory holding all artifacts")->capture_default_str();
  app.add_flag("--quiet", quiet, "Suppress progress logging");
  // Accept the shared options after the subcommand as well.
  app.fallthrough();

  using Stage = rr::RunManifest (*)(const rr::PipelineConfig&, const rr::StageContext&);
  const std::vector<std::pair<std::string, Stage>> stages{
      {"gen", rr::cmd_gen},     {"extract", rr::cmd_extract}, {"cluster", rr::cmd_cluster},
      {"train", rr::cmd_train}, {"eval", rr::cmd_eval},       {"plot", rr::cmd_plot}};
  app.add_subcommand("gen", "Generate the synthetic world, requests and trajectories");
  app.add_subcommand("extract", "Map-match trajectories and build candidate features");
  app.add_subcommand("cluster", "Build user profiles, cluster and project them");
  app.add_subcommand("train", "Train the ranking model and the no-sequence ablation");
  app.add_subcommand("eval", "Evaluate Min-ETA, no-sequence and the full model on the test split");
  app.add_subcommand("plot", "Render SVG figures");
  app.add_subcommand("run", "Run every stage in order");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    rr::PipelineConfig cfg = rr::load_pipeline_config(config_path);
    if (seed) cfg.apply_seed(*seed);
    cfg.validate();
    const rr::StageContext ctx{out_dir, quiet};
    for (const auto& [name, fn] : stages) {
      if (app.got_subcommand(name) || app.got_subcommand("run")) {
        const rr::RunManifest m = fn(cfg, ctx);
        ctx.log(name + ": wrote " + rr::manifest_path(out_dir, name).string());
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 0;
}
