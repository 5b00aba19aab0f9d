#include <CLI11.hpp>

#include <csignal>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "streetlatent/pipeline.hpp"

namespace sl = streetlatent;

namespace {

struct Globals {
  std::string config;
  std::vector<std::string> sets;
  std::vector<std::string> seed_overrides;
  std::string out;
};

sl::PipelineConfig resolve(const Globals& g, std::vector<std::string> extra_sets = {}) {
  auto sets = g.sets;
  if (!g.out.empty()) sets.push_back("output_dir=\"" + g.out + "\"");
  sets.insert(sets.end(), extra_sets.begin(), extra_sets.end());
  std::optional<std::filesystem::path> path;
  if (!g.config.empty()) path = g.config;
  return sl::load_config(path, sets, g.seed_overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic street-view latent pipeline: world model, dataset, inversion, semantic boundaries, edits."};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("-c,--config", g.config, "JSON config file (defaults are built in; see configs/default.json)");
  app.add_option("--set", g.sets, "Override a config key, e.g. --set n=500 --set inversion.optimize.steps=200")
      ->take_all();
  app.add_option("--seed-override", g.seed_overrides, "Override a named seed, e.g. --seed-override split=9")
      ->take_all();
  app.add_option("-o,--out", g.out, "Output directory (overrides output_dir)");

  std::string action;
  std::vector<std::pair<std::string, CLI::App*>> stage_cmds;
  const std::vector<std::pair<std::string, std::string>> descriptions{
      {"gen-world", "Sample the planted ground-truth model and write generator constants"},
      {"gen-dataset", "Generate images, hidden latents and deprivation ranks"},
      {"curate", "Fit the curation filter and write the curated manifest"},
      {"invert", "Invert every curated image with each configured method"},
      {"fit", "Fit one SVM boundary per dimension on the configured latent source"},
      {"orthogonalize", "Condition the boundaries on each other (sequential Gram-Schmidt)"},
      {"evaluate", "Precision/recall/F1 of the fitted boundaries on the balanced validation split"},
      {"compare-inversions", "Reconstruction statistics and per-method boundary metrics"},
      {"grid", "Render the single-image and multi-image edit grids"},
      {"walk", "Render one latent walk along one dimension"},
      {"report", "Write the metrics CSV and a markdown summary"}};
  for (const auto& [name, desc] : descriptions) stage_cmds.emplace_back(name, app.add_subcommand(name, desc));

  CLI::App* walk = nullptr;
  for (auto& [name, cmd] : stage_cmds)
    if (name == "walk") walk = cmd;
  std::optional<std::uint64_t> walk_seed;
  std::string walk_dim;
  std::optional<int> walk_steps;
  std::optional<double> walk_alpha;
  walk->add_option("--seed", walk_seed, "Base latent seed");
  walk->add_option("--dimension", walk_dim, "income, education or health");
  walk->add_option("--steps", walk_steps, "Odd number of alpha steps");
  walk->add_option("--alpha-max", walk_alpha, "Largest |alpha|");

  auto* all = app.add_subcommand("all", "Run every stage from gen-world to report");
  auto* serve = app.add_subcommand("serve", "Serve /api/synthesize, /api/boundaries, /api/describe, /api/health");
  std::string artifacts, bind = "127.0.0.1:8080";
  serve->add_option("--artifacts", artifacts, "Pipeline output directory (defaults to output_dir)");
  serve->add_option("--bind", bind, "host:port")->capture_default_str();

  auto* generate = app.add_subcommand("generate", "Render the base image for a seed");
  std::uint64_t gen_seed = 0;
  double gen_psi = sl::kDefaultPsi;
  std::string gen_out;
  generate->add_option("--seed", gen_seed, "Latent seed")->required();
  generate->add_option("--psi", gen_psi, "Truncation in [0, 1]")->capture_default_str();
  generate->add_option("--image", gen_out, "Output PNG path")->required();

  auto* print = app.add_subcommand("print-config", "Print the effective configuration as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (print->parsed()) {
      std::cout << sl::to_json(resolve(g)).dump(2) << "\n";
      return 0;
    }
    if (generate->parsed()) {
      const auto cfg = resolve(g);
      if (!(gen_psi >= 0.0 && gen_psi <= 1.0)) throw sl::ConfigError("--psi must lie in [0, 1]");
      sl::png::write(gen_out, sl::generate(sl::base_latent(gen_seed, gen_psi, cfg.dim)));
      return 0;
    }
    if (serve->parsed()) {
      const auto cfg = resolve(g);
      const auto dir = artifacts.empty() ? cfg.output_dir : std::filesystem::path(artifacts);
      try {
        sl::parse_bind(bind);
      } catch (const sl::InvalidArgument& e) {
        throw sl::ConfigError(e.what());
      }
      const auto state = sl::load_service_state(dir);
      std::cerr << "serving " << dir << " (version " << state.version << ") on " << bind << "\n";
      sl::serve(state, bind);
      return 0;
    }
    if (all->parsed()) {
      sl::run_all(resolve(g));
      return 0;
    }
    for (const auto& [name, cmd] : stage_cmds) {
      if (!cmd->parsed()) continue;
      std::vector<std::string> extra;
      if (cmd == walk) {
        if (walk_seed) extra.push_back("walk.seed=" + std::to_string(*walk_seed));
        if (!walk_dim.empty()) extra.push_back("walk.dimension=\"" + walk_dim + "\"");
        if (walk_steps) extra.push_back("grid.steps=" + std::to_string(*walk_steps));
        if (walk_alpha) extra.push_back("grid.alpha_max=" + sl::io::format_real(*walk_alpha));
      }
      sl::run_stage(name, resolve(g, extra));
      return 0;
    }
  } catch (const sl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
