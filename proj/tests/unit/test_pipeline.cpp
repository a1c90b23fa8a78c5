#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "lfts/pipeline.hpp"

namespace pl = lfts::pipeline;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lfts_unit_" + name);
  fs::remove_all(p);
  return p;
}

pl::PipelineConfig tiny_config(const fs::path& out) {
  pl::PipelineConfig c = pl::profile_config("desk");
  c.fixture.bars = 900;
  c.k_map = {{"open", 3}, {"high", 3}, {"close", 3}, {"low", 2}};
  c.vmd.max_iter = 150;
  c.fe_max_points = 300;
  c.model.input_len = 16;
  c.model.pred_len = 4;
  c.model.d_model = 8;
  c.model.d_ff = 16;
  c.model.decoder_layers = 1;
  c.model.branch_blocks = {1, 1, 1};
  c.train.epochs = 2;
  c.train.samples_per_epoch = 32;
  c.train.batch_size = 8;
  c.out = out;
  return c;
}

pl::RunOptions quiet() {
  pl::RunOptions o;
  o.quiet = true;
  return o;
}

}  // namespace

TEST_CASE("FNV-1a reference values") {
  CHECK(pl::fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(pl::fnv1a("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("stage names round trip") {
  for (auto s : {pl::Stage::Ingest, pl::Stage::Decompose, pl::Stage::Features, pl::Stage::Train, pl::Stage::Evaluate})
    CHECK(pl::parse_stage(pl::stage_name(s)) == s);
  CHECK_FALSE(pl::parse_stage("fit").has_value());
}

TEST_CASE("config validation rejects bad values before any compute") {
  const fs::path out = scratch("badcfg");
  auto c = tiny_config(out);
  c.split_ratio = 1.5;
  CHECK_THROWS_AS(c.validate(), pl::ConfigError);
  CHECK_THROWS_AS(pl::run_pipeline(c, quiet()), pl::ConfigError);
  CHECK_FALSE(fs::exists(out));

  c = tiny_config(out);
  c.k_map.erase("low");
  CHECK_THROWS_AS(c.validate(), pl::ConfigError);
  c = tiny_config(out);
  c.model.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), pl::ConfigError);
  c = tiny_config(out);
  c.version = 99;
  CHECK_THROWS_AS(c.validate(), pl::ConfigError);
  CHECK_THROWS_AS(pl::profile_config("laptop"), pl::ConfigError);
}

TEST_CASE("config survives a JSON round trip") {
  for (const char* profile : {"desk", "paper"}) {
    const auto c = pl::profile_config(profile);
    const auto j = pl::to_json(c);
    CHECK(pl::to_json(pl::config_from_json(j)) == j);
  }
  nlohmann::json partial{{"profile", "desk"}, {"seed", 99}, {"model", {{"d_model", 16}}}};
  const auto c = pl::config_from_json(partial);
  CHECK(c.seed == 99);
  CHECK(c.model.d_model == 16);
  CHECK(c.model.input_len == pl::profile_config("desk").model.input_len);
}

TEST_CASE("fixture is deterministic and seed dependent") {
  pl::FixtureSpec s;
  s.bars = 300;
  const auto a = pl::synthetic_bars(s), b = pl::synthetic_bars(s);
  REQUIRE(a.size() == 300);
  std::ostringstream ca, cb;
  lfts::ingest::write_csv(ca, a);
  lfts::ingest::write_csv(cb, b);
  CHECK(ca.str() == cb.str());
  for (const auto& bar : a) {
    CHECK(bar.high >= std::max(bar.open, bar.close));
    CHECK(bar.low <= std::min(bar.open, bar.close));
  }
  s.seed += 1;
  std::ostringstream cc;
  lfts::ingest::write_csv(cc, pl::synthetic_bars(s));
  CHECK(cc.str() != ca.str());
}

TEST_CASE("svg output is well formed") {
  const std::string h = pl::svg::heatmap("a<b", {"r1", "r&2"}, {"c"}, {{0.1}, {0.9}}, 0.0, 1.0);
  CHECK(h.find("<svg") != std::string::npos);
  CHECK(h.find("</svg>") != std::string::npos);
  CHECK(h.find("a&lt;b") != std::string::npos);
  CHECK(h.find("r&amp;2") != std::string::npos);
  const std::string l = pl::svg::line_chart("loss", "epoch", "value", {{"train", {1, 2, 3}, {3, 2, 1}, "#333"}});
  CHECK(l.find("<polyline") != std::string::npos);
  const auto t = pl::svg::time_axis(11);
  CHECK(t.front() == 0.0);
  CHECK(t.back() == 5000.0);
}

TEST_CASE("tiny pipeline writes artifacts and reruns reproducibly") {
  const fs::path out = scratch("pipeline");
  const auto cfg = tiny_config(out);
  const auto r1 = pl::run_pipeline(cfg, quiet());
  for (const char* f : {"config.lock.json", "features.csv", "imfs.csv", "fe_values.csv", "heatmap.csv", "heatmap.svg",
                        "checkpoint.bin", "checkpoint.json", "loss_curve.csv", "loss_curve.svg", "predictions.csv", "metrics.json",
                        "forecast.svg", "report.json"})
    CHECK_MESSAGE(fs::exists(out / f), std::string(f));
  for (const char* s : {"ingest", "decompose", "features", "train", "evaluate"})
    CHECK(nlohmann::json::parse(slurp(out / "stages" / (std::string(s) + ".json")))["status"] == "done");
  CHECK(r1.cached_stages.empty());
  CHECK(r1.features.model_columns.front() == "target");

  const std::string metrics = slurp(out / "metrics.json");
  const std::string preds = slurp(out / "predictions.csv");
  const auto m = nlohmann::json::parse(metrics);
  CHECK(m.contains("test"));
  CHECK(m.contains("persistence"));

  SUBCASE("resume loads every stage and reproduces the outputs") {
    pl::RunOptions o = quiet();
    o.resume = true;
    const auto r2 = pl::run_pipeline(cfg, o);
    CHECK(r2.cached_stages.size() == 4);
    CHECK(slurp(out / "metrics.json") == metrics);
    CHECK(slurp(out / "predictions.csv") == preds);
  }
  SUBCASE("deleting downstream caches recomputes identical artifacts") {
    fs::remove(out / "stages" / "features.json");
    fs::remove(out / "stages" / "train.json");
    fs::remove(out / "metrics.json");
    pl::RunOptions o = quiet();
    o.resume = true;
    const auto r2 = pl::run_pipeline(cfg, o);
    CHECK(r2.cached_stages == std::vector<std::string>{"ingest", "decompose"});
    CHECK(slurp(out / "metrics.json") == metrics);
    CHECK(slurp(out / "predictions.csv") == preds);
  }
  SUBCASE("a fresh run from scratch matches byte for byte") {
    const fs::path other = scratch("pipeline_b");
    auto c2 = cfg;
    c2.out = other;
    pl::run_pipeline(c2, quiet());
    CHECK(slurp(other / "metrics.json") == metrics);
    CHECK(slurp(other / "predictions.csv") == preds);
    fs::remove_all(other);
  }
  SUBCASE("a changed seed invalidates the train stage only") {
    auto c2 = cfg;
    c2.seed += 1;
    pl::RunOptions o = quiet();
    o.resume = true;
    const auto r2 = pl::run_pipeline(c2, o);
    CHECK(r2.cached_stages == std::vector<std::string>{"ingest", "decompose", "features"});
  }
}

TEST_CASE("stage verbs stop early and reuse upstream work") {
  const fs::path out = scratch("verbs");
  const auto cfg = tiny_config(out);
  pl::RunOptions o = quiet();
  o.until = pl::Stage::Decompose;
  o.reuse_upstream = true;
  const auto r = pl::run_pipeline(cfg, o);
  CHECK(fs::exists(out / "stages" / "decompose.json"));
  CHECK_FALSE(fs::exists(out / "stages" / "features.json"));
  CHECK(r.decompose.imfs.size() == 11);

  o.until = pl::Stage::Features;
  const auto r2 = pl::run_pipeline(cfg, o);
  CHECK(r2.cached_stages == std::vector<std::string>{"ingest", "decompose"});
  CHECK_FALSE(r2.features.grouping.groups.empty());
  fs::remove_all(out);
}

TEST_CASE("ablation with identical variants gives identical rows") {
  const fs::path out = scratch("ablation");
  auto cfg = tiny_config(out);
  cfg.train.epochs = 1;
  cfg.ablation = {{"a", true, lfts::train::LossKind::Adaptive, true},
                  {"b", true, lfts::train::LossKind::Adaptive, true},
                  {"c", false, lfts::train::LossKind::Mse, false}};
  const auto rows = pl::run_ablation(cfg, quiet());
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) CHECK(r.ok);
  CHECK(rows[0].test.mse == rows[1].test.mse);
  CHECK(rows[0].best_val_loss == rows[1].best_val_loss);
  CHECK(fs::exists(out / "ablation.json"));
  CHECK(fs::exists(out / "ablation.csv"));
  CHECK(fs::exists(out / "ablation.svg"));
  CHECK(fs::exists(out / "ablation" / "c" / "loss_curve.csv"));
  fs::remove_all(out);
}
