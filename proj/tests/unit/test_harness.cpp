#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "support/fixtures.hpp"
#include "support/test_util.hpp"
#include "wmvac/experiments.hpp"

using namespace wmvac;

namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "wmvac_harness_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.seed = 12345;
  cfg.n_hosts = 2;
  cfg.threads = 2;
  cfg.iterations = 3;
  return cfg;
}

int run_cli(const std::string& args) {
  const char* cli = std::getenv("WMVAC_CLI");
  REQUIRE(cli != nullptr);
  const std::string cmd = std::string(cli) + " " + args;
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  return WEXITSTATUS(rc);
}

}  // namespace

TEST_CASE("experiment config roundtrips through json") {
  ExperimentConfig cfg;
  cfg.seed = 99;
  cfg.n_hosts = 7;
  cfg.arms = {Arm::Clean, Arm::Dwv};
  cfg.size_grid = {10, 20};
  const nlohmann::json j = config_to_json(cfg);
  const ExperimentConfig back = config_from_json(j);
  REQUIRE(config_to_json(back).dump() == j.dump());
  REQUIRE(config_hash(back) == config_hash(cfg));

  nlohmann::json bad = j;
  bad["not_a_real_key"] = 1;
  REQUIRE_THROWS_WITH(config_from_json(bad), Catch::Matchers::ContainsSubstring("unknown key"));

  nlohmann::json empty_arms = j;
  empty_arms["arms"] = nlohmann::json::array();
  REQUIRE_THROWS_AS(config_from_json(empty_arms), std::invalid_argument);
}

TEST_CASE("config hash is stable and sensitive") {
  ExperimentConfig a, b;
  REQUIRE(config_hash(a) == config_hash(b));
  b.seed = 2;
  REQUIRE(config_hash(a) != config_hash(b));
}

TEST_CASE("running statistics match a two-pass reference") {
  const std::vector<double> sample = {3.25, -1.5, 0.0, 7.125, 2.75, 2.75, -0.5};
  Stat st;
  for (double v : sample) st.add(v);

  double mean = 0.0;
  for (double v : sample) mean += v;
  mean /= static_cast<double>(sample.size());
  double var = 0.0;
  for (double v : sample) var += (v - mean) * (v - mean);
  var /= static_cast<double>(sample.size() - 1);

  REQUIRE_THAT(st.mean(), Catch::Matchers::WithinAbs(mean, 1e-12));
  REQUIRE_THAT(st.stddev(), Catch::Matchers::WithinAbs(std::sqrt(var), 1e-12));
  Stat single;
  single.add(4.0);
  REQUIRE(single.stddev() == 0.0);
}

TEST_CASE("float formatting is locale-independent and exact") {
  REQUIRE(fmt_double(0.5) == "0.5");
  REQUIRE(fmt_double(-3.25) == "-3.25");
  REQUIRE(fmt_double(std::numeric_limits<double>::infinity()) == "inf");
  const double v = 0.1 + 0.2;
  REQUIRE(std::stod(fmt_double(v)) == v);
}

TEST_CASE("single-arm single-host effectiveness yields one row group") {
  std::vector<RemovalModel> models;
  models.push_back(wmvac::test::lightly_trained_a());
  ExperimentConfig cfg = tiny_config();
  cfg.n_hosts = 1;
  cfg.arms = {Arm::Clean};
  const EffectivenessResult res = run_effectiveness(models, cfg);
  REQUIRE(res.report.tables.size() == 1);
  REQUIRE(res.report.tables[0].rows.size() == 8);  // eight metrics, one arm
  for (const auto& row : res.report.tables[0].rows) REQUIRE(row[0] == "clean");
  REQUIRE(res.per_model[0].at("clean").at("psnr_h").n == 1);
}

TEST_CASE("effectiveness reports are byte-identical across runs") {
  std::vector<RemovalModel> models;
  models.push_back(wmvac::test::lightly_trained_a());
  const ExperimentConfig cfg = tiny_config();

  const fs::path d1 = temp_dir("det1");
  const fs::path d2 = temp_dir("det2");
  run_effectiveness(models, cfg).report.write_to(d1);
  run_effectiveness(models, cfg).report.write_to(d2);

  for (const auto& entry : fs::directory_iterator(d1)) {
    const fs::path other = d2 / entry.path().filename();
    REQUIRE(fs::exists(other));
    REQUIRE(slurp(entry.path()) == slurp(other));
  }
  // provenance embeds the config hash
  const auto j = nlohmann::json::parse(slurp(d1 / "effectiveness.json"));
  REQUIRE(j.at("config_hash").get<std::string>() == config_hash(cfg));
}

TEST_CASE("worker count does not change results") {
  std::vector<RemovalModel> models;
  models.push_back(wmvac::test::lightly_trained_a());
  ExperimentConfig cfg = tiny_config();
  cfg.n_hosts = 3;
  const EffectivenessResult a = run_effectiveness(models, cfg);
  ExperimentConfig serial = cfg;
  serial.threads = 1;
  const EffectivenessResult b = run_effectiveness(models, serial);
  for (const auto& [arm, metrics] : a.per_model[0])
    for (const auto& [metric, stat] : metrics) {
      REQUIRE(stat.sum == b.per_model[0].at(arm).at(metric).sum);
      REQUIRE(stat.n == b.per_model[0].at(arm).at(metric).n);
    }
}

TEST_CASE("a single universality cell reduces to a direct evaluation") {
  std::vector<RemovalModel> models;
  models.push_back(wmvac::test::lightly_trained_a());
  ExperimentConfig cfg = tiny_config();
  cfg.n_hosts = 1;
  cfg.arms = {Arm::Clean, Arm::Dwv};
  cfg.patterns_per_host = 0;
  cfg.locations_per_host = 0;
  cfg.size_grid = {cfg.fixed_size};
  cfg.alpha_grid = {};

  const UniversalityResult res = run_universality(models, cfg);
  const SweepResult* size_sweep = nullptr;
  for (const auto& s : res.sweeps)
    if (s.sweep == "size") size_sweep = &s;
  REQUIRE(size_sweep != nullptr);
  REQUIRE(size_sweep->cells.size() == 1);

  // independent recomputation of the same cell
  using namespace wmvac::exp_detail;
  const CaseSample cs = sample_case(cfg, 0);
  const Placement p = center_placement(cfg, cfg.fixed_size, cfg.fixed_alpha);
  const EvalOutcome clean = evaluate_arm(models[0], cs.host, cs.host, cs.wm, p);
  const Tensor dwv_host = arm_host(cfg, cs, 0, Arm::Dwv, {&models[0]});
  const EvalOutcome dwv = evaluate_arm(models[0], cs.host, dwv_host, cs.wm, p);

  const auto& cell = size_sweep->cell_stats[0];
  REQUIRE(cell.at("clean").at("psnr_h").mean() == clean.vs_host.psnr);
  REQUIRE(cell.at("clean").at("rmse_w").mean() == clean.vs_input.rmse);
  REQUIRE(cell.at("dwv").at("psnr_h").mean() == dwv.vs_host.psnr);
  REQUIRE(cell.at("dwv").at("rmsew_w").mean() == *dwv.vs_input.rmse_w);
}

TEST_CASE("robustness endpoints equal the untransformed evaluation") {
  std::vector<RemovalModel> models;
  models.push_back(wmvac::test::lightly_trained_a());
  ExperimentConfig cfg = tiny_config();
  cfg.jpeg_quality_grid = {100, 50};
  cfg.blur_radius_grid = {0.0, 0.5};

  const RobustnessResult rob = run_robustness(models, cfg);
  const EffectivenessResult eff = run_effectiveness(models, cfg);

  for (const auto& [arm, metrics] : eff.per_model[0])
    for (const auto& [metric, stat] : metrics) {
      REQUIRE_THAT(rob.jpeg.cell_stats[0].at(arm).at(metric).mean(),
                   Catch::Matchers::WithinAbs(stat.mean(), 1e-6));
      REQUIRE_THAT(rob.blur.cell_stats[0].at(arm).at(metric).mean(),
                   Catch::Matchers::WithinAbs(stat.mean(), 1e-6));
    }

  // transformed cells genuinely differ
  REQUIRE(rob.jpeg.cell_stats[1].at("clean").at("psnr_w").mean() !=
          rob.jpeg.cell_stats[0].at("clean").at("psnr_w").mean());
}

TEST_CASE("transferability with one model is rejected, two models work") {
  std::vector<RemovalModel> models;
  models.push_back(wmvac::test::lightly_trained_a());
  ExperimentConfig cfg = tiny_config();
  cfg.n_hosts = 1;
  cfg.budgets_255 = {8.0f};
  REQUIRE_THROWS_AS(run_transferability(models, cfg), std::invalid_argument);

  models.push_back(build_variant(NetVariant::C, 5));
  const TransferResult res = run_transferability(models, cfg);
  // sources: clean, rn, a, c, stacked; headline metric present for each target
  REQUIRE(res.stats.at("dwv").count("stacked") == 1);
  REQUIRE(res.stats.at("dwv").at("a").at(8.0f).at("a").at("rmse_h").n == 1);
  REQUIRE(res.stats.at("iwv").at("clean").at(0.0f).at("c").at("rmsew_w").n == 1);
}

TEST_CASE("cli pipeline smoke") {
  const fs::path dir = temp_dir("cli");
  const std::string d = dir.string();

  REQUIRE(run_cli("definitely-not-a-subcommand >/dev/null 2>&1") == 2);
  REQUIRE(run_cli("train --no-such-flag >/dev/null 2>&1") == 2);
  REQUIRE(run_cli("remove --model missing.ckpt --in missing.png >/dev/null 2>&1") == 1);

  REQUIRE(run_cli("gen-data --out " + d + "/data --n-hosts 2 --n-watermarks 1 --seed 3 >/dev/null") == 0);
  REQUIRE(fs::exists(dir / "data/host_0000.png"));
  REQUIRE(fs::exists(dir / "data/watermark_0000.png"));

  REQUIRE(run_cli("train --variant a --seed 5 --steps 50 --batch 4 --val-size 8 --val-interval 25"
                  " --out " + d + "/a.ckpt --log " + d + "/train.json >/dev/null") == 0);
  REQUIRE(fs::exists(dir / "a.ckpt"));
  REQUIRE(fs::exists(dir / "train.json"));

  REQUIRE(run_cli("vaccinate --kind dwv --model " + d + "/a.ckpt --in " + d + "/data/host_0000.png"
                  " --out " + d + "/vac.png --iters 4 >/dev/null") == 0);
  REQUIRE(fs::exists(dir / "vac.png"));
  REQUIRE(fs::exists(dir / "vac.png.delta.raw"));
  REQUIRE(fs::exists(dir / "vac.png.trace.json"));
  // the sidecar holds one float per channel value
  REQUIRE(fs::file_size(dir / "vac.png.delta.raw") == 3 * 64 * 64 * 4);

  REQUIRE(run_cli("watermark --in " + d + "/vac.png --watermark " + d + "/data/watermark_0000.png"
                  " --out " + d + "/marked.png --mask " + d + "/gt_mask.png --size 20 --opacity 0.55"
                  " >/dev/null") == 0);
  REQUIRE(fs::exists(dir / "marked.png"));

  REQUIRE(run_cli("remove --model " + d + "/a.ckpt --in " + d + "/marked.png --out " + d +
                  "/restored.png --mask " + d + "/pred_mask.png >/dev/null") == 0);
  REQUIRE(fs::exists(dir / "restored.png"));
  REQUIRE(fs::exists(dir / "pred_mask.png"));

  {
    std::ofstream cfg(dir / "eval_cfg.json");
    cfg << R"({"iterations": 3, "n_hosts": 2, "seed": 9})";
  }
  REQUIRE(run_cli("eval-effectiveness --model " + d + "/a.ckpt --out " + d + "/eval --config " + d +
                  "/eval_cfg.json >/dev/null") == 0);
  REQUIRE(fs::exists(dir / "eval/effectiveness.json"));
  REQUIRE(fs::exists(dir / "eval/effectiveness_a.csv"));

  const std::string csv = slurp(dir / "eval/effectiveness_a.csv");
  REQUIRE(csv.rfind("arm,metric,mean,std,n", 0) == 0);
}
