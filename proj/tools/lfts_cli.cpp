#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "lfts/pipeline.hpp"

namespace pl = lfts::pipeline;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string profile;
  std::string out;
  bool resume = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Config file (JSON, comments allowed)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Override the run seed");
  cmd->add_option("--profile", c.profile, "Base profile when no config is given")->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--out", c.out, "Output directory");
  cmd->add_flag("--resume", c.resume, "Reuse completed stages whose inputs are unchanged");
  cmd->add_flag("-q,--quiet", c.quiet, "No progress output");
}

pl::PipelineConfig resolve(const Common& c) {
  pl::PipelineConfig cfg = !c.config.empty() ? pl::load_config(c.config)
                                             : pl::profile_config(c.profile.empty() ? "desk" : c.profile);
  if (!c.config.empty() && !c.profile.empty() && c.profile != cfg.profile)
    throw pl::ConfigError("--profile " + c.profile + " conflicts with the config's profile " + cfg.profile);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out = c.out;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stock forecasting pipeline: VMD features, stacked-encoder Informer, GC-Adam"};
  app.require_subcommand(1);

  Common common;
  const std::map<std::string, pl::Stage> stage_verbs{{"ingest", pl::Stage::Ingest},
                                                     {"decompose", pl::Stage::Decompose},
                                                     {"features", pl::Stage::Features},
                                                     {"train", pl::Stage::Train},
                                                     {"evaluate", pl::Stage::Evaluate}};
  std::map<std::string, CLI::App*> cmds;
  for (const auto& [verb, stage] : stage_verbs) {
    cmds[verb] = app.add_subcommand(verb, std::string("Run up to the ") + verb + " stage, reusing cached upstream stages");
    add_common(cmds[verb], common);
  }
  cmds["pipeline"] = app.add_subcommand("pipeline", "Run every stage");
  add_common(cmds["pipeline"], common);
  cmds["ablate"] = app.add_subcommand("ablate", "Train each ablation variant on shared features");
  add_common(cmds["ablate"], common);

  std::string fixture_out = "fixture.csv";
  std::string fixture_config;
  auto* fixture = app.add_subcommand("fixture", "Write the synthetic bar fixture as CSV");
  fixture->add_option("-o,--output", fixture_out, "CSV path");
  fixture->add_option("--config", fixture_config, "Take the fixture recipe from this config")->check(CLI::ExistingFile);

  auto* dump = app.add_subcommand("config", "Print the resolved configuration");
  add_common(dump, common);

  CLI11_PARSE(app, argc, argv);

  try {
    if (fixture->parsed()) {
      const pl::FixtureSpec spec = fixture_config.empty() ? pl::FixtureSpec{} : pl::load_config(fixture_config).fixture;
      std::ofstream out(fixture_out);
      lfts::ingest::write_csv(out, pl::synthetic_bars(spec));
      if (!out) throw std::runtime_error("cannot write " + fixture_out);
      return 0;
    }
    const pl::PipelineConfig cfg = resolve(common);
    if (dump->parsed()) {
      std::cout << pl::to_json(cfg).dump(2) << '\n';
      return 0;
    }
    pl::RunOptions opt;
    opt.resume = common.resume;
    opt.quiet = common.quiet;
    if (cmds["ablate"]->parsed()) {
      const auto rows = pl::run_ablation(cfg, opt);
      bool any_ok = false;
      for (const auto& r : rows) any_ok |= r.ok;
      if (!common.quiet)
        for (const auto& r : rows)
          std::cout << r.variant.name << ": "
                    << (r.ok ? "mse " + std::to_string(r.test.mse) + " best_val " + std::to_string(r.best_val_loss)
                             : "FAILED " + r.error)
                    << '\n';
      return any_ok ? 0 : 1;
    }
    for (const auto& [verb, stage] : stage_verbs)
      if (cmds[verb]->parsed()) {
        opt.until = stage;
        opt.reuse_upstream = true;
      }
    pl::run_pipeline(cfg, opt);
    return 0;
  } catch (const pl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
