// wmvac: train small watermark-removal networks, generate watermark vaccines,
// and run the evaluation drivers. All commands are deterministic for fixed
// seeds; reports embed their config hash.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "wmvac/wmvac.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<wmvac::RemovalModel> load_models(const std::vector<std::string>& paths) {
  if (paths.empty()) throw std::runtime_error("no model checkpoints given (use --model)");
  std::vector<wmvac::RemovalModel> models;
  for (const auto& p : paths) models.push_back(wmvac::load_checkpoint(p));
  return models;
}

wmvac::ExperimentConfig load_config(const std::string& config_path) {
  if (config_path.empty()) return wmvac::ExperimentConfig{};
  std::ifstream is(config_path);
  if (!is) throw std::runtime_error("cannot open config " + config_path);
  json j = json::parse(is);
  return wmvac::config_from_json(j);
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << "\n";
}

struct EvalFlags {
  std::vector<std::string> model_paths;
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::optional<int> n_hosts;
  std::optional<int> threads;
  bool quantize = false;
};

void add_eval_flags(CLI::App* cmd, EvalFlags& f) {
  cmd->add_option("--model", f.model_paths, "removal-net checkpoint(s)")->required();
  cmd->add_option("--config", f.config_path, "experiment config JSON");
  cmd->add_option("--out", f.out_dir, "output directory");
  cmd->add_option("--seed", f.seed, "override config seed");
  cmd->add_option("--n", f.n_hosts, "override number of host images");
  cmd->add_option("--threads", f.threads, "override worker count");
  cmd->add_flag("--quantize", f.quantize, "snap perturbed hosts to the 8-bit grid");
}

wmvac::ExperimentConfig resolve_config(const EvalFlags& f) {
  wmvac::ExperimentConfig cfg = load_config(f.config_path);
  if (f.seed) cfg.seed = *f.seed;
  if (f.n_hosts) cfg.n_hosts = *f.n_hosts;
  if (f.threads) cfg.threads = *f.threads;
  if (f.quantize) cfg.quantize = true;
  return cfg;
}

void print_report_summary(const wmvac::Report& report, const fs::path& dir) {
  std::printf("wrote %s\n", (dir / (report.name + ".json")).string().c_str());
  for (const auto& t : report.tables)
    std::printf("wrote %s (%zu rows)\n", (dir / (t.name + ".csv")).string().c_str(), t.rows.size());
}

int run(int argc, char** argv) {
  CLI::App app{"watermark vaccine toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(wmvac::kToolVersion));

  // train ------------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "train a removal-network variant");
  std::string train_variant = "a";
  std::uint64_t train_seed = 1, train_data_seed = 0;
  bool data_seed_set = false;
  wmvac::TrainOptions topt;
  std::string train_out = "model.ckpt", train_log;
  train_cmd->add_option("--variant", train_variant, "a|b|c")->check(CLI::IsMember({"a", "b", "c"}));
  train_cmd->add_option("--seed", train_seed, "weight init seed");
  train_cmd->add_option("--data-seed", train_data_seed, "training data seed (defaults to seed)")
      ->each([&](const std::string&) { data_seed_set = true; });
  train_cmd->add_option("--steps", topt.steps, "optimizer steps");
  train_cmd->add_option("--batch", topt.batch, "batch size");
  train_cmd->add_option("--lr", topt.lr, "learning rate");
  train_cmd->add_option("--val-size", topt.val_size, "held-out validation triples");
  train_cmd->add_option("--val-interval", topt.val_interval, "steps between validations");
  train_cmd->add_option("--out", train_out, "checkpoint path");
  train_cmd->add_option("--log", train_log, "write training log JSON here");

  // vaccinate ----------------------------------------------------------------
  auto* vac_cmd = app.add_subcommand("vaccinate", "generate a watermark vaccine for a host image");
  std::string vac_kind = "dwv", vac_in, vac_out = "vaccinated.png";
  std::vector<std::string> vac_models;
  float vac_eps = 8.0f, vac_step = 2.0f, vac_beta = 2.0f;
  int vac_iters = 50;
  bool vac_quantize = false;
  vac_cmd->add_option("--kind", vac_kind, "dwv|iwv")->check(CLI::IsMember({"dwv", "iwv"}));
  vac_cmd->add_option("--model", vac_models, "target checkpoint(s); several mean a stacked vaccine")
      ->required();
  vac_cmd->add_option("--in", vac_in, "host PNG")->required();
  vac_cmd->add_option("--out", vac_out, "vaccinated PNG (delta sidecar and trace written next to it)");
  vac_cmd->add_option("--epsilon-255", vac_eps, "L-inf budget in 1/255 units");
  vac_cmd->add_option("--step-255", vac_step, "step size in 1/255 units");
  vac_cmd->add_option("--iters", vac_iters, "iterations");
  vac_cmd->add_option("--beta", vac_beta, "iwv balance");
  vac_cmd->add_flag("--quantize", vac_quantize, "also report the 8-bit-grid delta in the trace");

  // watermark ----------------------------------------------------------------
  auto* wm_cmd = app.add_subcommand("watermark", "composite a watermark onto an image");
  std::string wm_in, wm_out = "watermarked.png", wm_png, wm_mask_out;
  std::uint64_t wm_seed = 1;
  int wm_left = -1, wm_top = -1, wm_size = 20;
  float wm_opacity = 0.55f;
  bool wm_random = false;
  wm_cmd->add_option("--in", wm_in, "host PNG")->required();
  wm_cmd->add_option("--out", wm_out, "output PNG");
  wm_cmd->add_option("--watermark", wm_png, "RGBA watermark PNG (default: procedural)");
  wm_cmd->add_option("--seed", wm_seed, "seed for procedural watermark / random placement");
  wm_cmd->add_option("--left", wm_left, "placement left (default: centered)");
  wm_cmd->add_option("--top", wm_top, "placement top (default: centered)");
  wm_cmd->add_option("--size", wm_size, "rendered size in pixels");
  wm_cmd->add_option("--opacity", wm_opacity, "blend opacity");
  wm_cmd->add_flag("--random", wm_random, "draw placement at random");
  wm_cmd->add_option("--mask", wm_mask_out, "also write the ground-truth mask PNG");

  // remove -------------------------------------------------------------------
  auto* rm_cmd = app.add_subcommand("remove", "run a removal network on an image");
  std::string rm_model, rm_in, rm_out = "restored.png", rm_mask_out;
  rm_cmd->add_option("--model", rm_model, "checkpoint")->required();
  rm_cmd->add_option("--in", rm_in, "input PNG")->required();
  rm_cmd->add_option("--out", rm_out, "restored PNG");
  rm_cmd->add_option("--mask", rm_mask_out, "write predicted mask PNG");

  // gen-data -----------------------------------------------------------------
  auto* gen_cmd = app.add_subcommand("gen-data", "write procedural hosts and watermarks as PNGs");
  std::string gen_out = "data";
  int gen_hosts = 8, gen_wms = 8, gen_host_size = 64, gen_wm_size = 32;
  std::uint64_t gen_seed = 1;
  gen_cmd->add_option("--out", gen_out, "output directory");
  gen_cmd->add_option("--n-hosts", gen_hosts, "host image count");
  gen_cmd->add_option("--n-watermarks", gen_wms, "watermark count");
  gen_cmd->add_option("--seed", gen_seed, "generator seed");
  gen_cmd->add_option("--host-size", gen_host_size, "host edge length");
  gen_cmd->add_option("--wm-size", gen_wm_size, "watermark edge length");

  // eval drivers ---------------------------------------------------------------
  EvalFlags eff_flags, uni_flags, tra_flags, rob_flags;
  auto* eff_cmd = app.add_subcommand("eval-effectiveness", "clean/rn/dwv/iwv arms per model");
  add_eval_flags(eff_cmd, eff_flags);
  auto* uni_cmd = app.add_subcommand("eval-universality", "pattern/location/size/transparency sweeps");
  add_eval_flags(uni_cmd, uni_flags);
  auto* tra_cmd = app.add_subcommand("eval-transfer", "cross-model matrix and stacked budget sweep");
  add_eval_flags(tra_cmd, tra_flags);
  auto* rob_cmd = app.add_subcommand("eval-robustness", "jpeg and blur resistance curves");
  add_eval_flags(rob_cmd, rob_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  }

  if (*train_cmd) {
    if (!data_seed_set) train_data_seed = train_seed;
    std::vector<wmvac::TrainLogEntry> log;
    const wmvac::RemovalModel model = wmvac::train(wmvac::variant_from_letter(train_variant[0]),
                                                   train_seed, train_data_seed, topt, &log);
    wmvac::save_checkpoint(model, train_out);
    std::printf("trained variant %c: %lld parameters, val loss %.6f -> %.6f, val PSNR %.2f dB "
                "(watermarked baseline %.2f dB)\n",
                wmvac::variant_letter(model.variant),
                static_cast<long long>(model.parameter_count()), model.meta.init_val_loss,
                model.meta.best_val_loss, model.meta.val_psnr_restored,
                model.meta.val_psnr_watermarked);
    std::printf("wrote %s\n", train_out.c_str());
    if (!train_log.empty()) {
      json j;
      j["variant"] = std::string(1, wmvac::variant_letter(model.variant));
      j["init_seed"] = train_seed;
      j["data_seed"] = train_data_seed;
      j["entries"] = json::array();
      for (const auto& e : log)
        j["entries"].push_back({{"step", e.step}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
      write_json(j, train_log);
    }
    return 0;
  }

  if (*vac_cmd) {
    const auto models = load_models(vac_models);
    const wmvac::LoadedImage host_img = wmvac::load_png(vac_in);
    wmvac::VaccineConfig vc;
    vc.kind = vac_kind == "dwv" ? wmvac::VaccineKind::Dwv : wmvac::VaccineKind::Iwv;
    vc.epsilon = vac_eps / 255.0f;
    vc.step = vac_step / 255.0f;
    vc.iterations = vac_iters;
    vc.beta = vac_beta;
    for (const auto& m : models) vc.models.push_back(&m);
    const wmvac::Vaccine v = wmvac::generate_vaccine(host_img.rgb, vc);
    const wmvac::Tensor vaccinated = wmvac::vaccinated_image(host_img.rgb, v);
    wmvac::save_png(vaccinated, vac_out);

    const std::string delta_path = vac_out + ".delta.raw";
    std::ofstream ds(delta_path, std::ios::binary);
    ds.write(reinterpret_cast<const char*>(v.delta.data()),
             static_cast<std::streamsize>(v.delta.size()) * 4);
    if (!ds) throw std::runtime_error("cannot write " + delta_path);

    json trace;
    trace["kind"] = vac_kind;
    trace["epsilon_255"] = vac_eps;
    trace["step_255"] = vac_step;
    trace["iterations"] = vac_iters;
    trace["beta"] = vac_beta;
    trace["models"] = json::array();
    for (const auto& m : models) trace["models"].push_back(m.id());
    trace["loss_trace"] = v.loss_trace;
    trace["delta_linf"] = wmvac::max_abs(v.delta);
    if (vac_quantize) {
      const wmvac::Tensor q = wmvac::quantize_to_byte_grid(vaccinated);
      trace["quantized_delta_rmse"] = wmvac::rmse(q, vaccinated);
    }
    write_json(trace, vac_out + ".trace.json");
    std::printf("wrote %s, %s and %s (final loss %.6f)\n", vac_out.c_str(), delta_path.c_str(),
                (vac_out + ".trace.json").c_str(), v.loss_trace.back());
    return 0;
  }

  if (*wm_cmd) {
    const wmvac::LoadedImage host = wmvac::load_png(wm_in);
    const wmvac::WatermarkAsset asset = wm_png.empty()
        ? [&] {
            wmvac::Rng rng(wmvac::derive_seed(wm_seed, 2));
            return wmvac::synth_watermark(rng, 32, 32);
          }()
        : wmvac::load_watermark_asset(wm_png);
    const wmvac::Shape hs = host.rgb.shape();
    wmvac::Placement p;
    if (wm_random) {
      wmvac::Rng rng(wmvac::derive_seed(wm_seed, 3));
      p = wmvac::sample_placement(rng, hs.h, hs.w, {wm_size, wm_size}, {wm_opacity, wm_opacity});
    } else {
      p.width = wm_size;
      p.height = wm_size;
      p.left = wm_left >= 0 ? wm_left : (hs.w - wm_size) / 2;
      p.top = wm_top >= 0 ? wm_top : (hs.h - wm_size) / 2;
      p.opacity = wm_opacity;
    }
    const wmvac::CompositeResult comp = wmvac::composite(host.rgb, asset, p);
    wmvac::save_png(comp.image, wm_out);
    std::printf("wrote %s\n", wm_out.c_str());
    if (!wm_mask_out.empty()) {
      wmvac::Tensor mask_rgb(wmvac::Shape{1, 3, hs.h, hs.w});
      for (int y = 0; y < hs.h; ++y)
        for (int x = 0; x < hs.w; ++x)
          for (int c = 0; c < 3; ++c) mask_rgb.at(0, c, y, x) = comp.mask.at(0, 0, y, x);
      wmvac::save_png(mask_rgb, wm_mask_out);
      std::printf("wrote %s\n", wm_mask_out.c_str());
    }
    return 0;
  }

  if (*rm_cmd) {
    const wmvac::RemovalModel model = wmvac::load_checkpoint(rm_model);
    const wmvac::LoadedImage img = wmvac::load_png(rm_in);
    const wmvac::RemovalOutput out = wmvac::forward(model, img.rgb);
    wmvac::save_png(out.restored, rm_out);
    std::printf("wrote %s\n", rm_out.c_str());
    if (!rm_mask_out.empty()) {
      const wmvac::Shape s = out.mask.shape();
      wmvac::Tensor mask_rgb(wmvac::Shape{1, 3, s.h, s.w});
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x)
          for (int c = 0; c < 3; ++c) mask_rgb.at(0, c, y, x) = out.mask.at(0, 0, y, x);
      wmvac::save_png(mask_rgb, rm_mask_out);
      std::printf("wrote %s\n", rm_mask_out.c_str());
    }
    return 0;
  }

  if (*gen_cmd) {
    fs::create_directories(gen_out);
    for (int i = 0; i < gen_hosts; ++i) {
      wmvac::Rng rng(wmvac::derive_seed(gen_seed, static_cast<std::uint64_t>(i), 1));
      const wmvac::Tensor host = wmvac::synth_host(rng, gen_host_size, gen_host_size);
      char name[64];
      std::snprintf(name, sizeof(name), "host_%04d.png", i);
      wmvac::save_png(host, (fs::path(gen_out) / name).string());
    }
    for (int i = 0; i < gen_wms; ++i) {
      wmvac::Rng rng(wmvac::derive_seed(gen_seed, static_cast<std::uint64_t>(i), 2));
      const wmvac::WatermarkAsset wm = wmvac::synth_watermark(rng, gen_wm_size, gen_wm_size);
      char name[64];
      std::snprintf(name, sizeof(name), "watermark_%04d.png", i);
      wmvac::save_png_rgba(wm.color, wm.alpha, (fs::path(gen_out) / name).string());
    }
    std::printf("wrote %d hosts and %d watermarks to %s\n", gen_hosts, gen_wms, gen_out.c_str());
    return 0;
  }

  auto run_eval = [&](const EvalFlags& flags, const char* which) {
    const auto models = load_models(flags.model_paths);
    const wmvac::ExperimentConfig cfg = resolve_config(flags);
    const fs::path dir(flags.out_dir);
    wmvac::Report report;
    if (std::string(which) == "effectiveness") report = wmvac::run_effectiveness(models, cfg).report;
    if (std::string(which) == "universality") report = wmvac::run_universality(models, cfg).report;
    if (std::string(which) == "transfer") report = wmvac::run_transferability(models, cfg).report;
    if (std::string(which) == "robustness") report = wmvac::run_robustness(models, cfg).report;
    report.write_to(dir);
    print_report_summary(report, dir);
    return 0;
  };
  if (*eff_cmd) return run_eval(eff_flags, "effectiveness");
  if (*uni_cmd) return run_eval(uni_flags, "universality");
  if (*tra_cmd) return run_eval(tra_flags, "transfer");
  if (*rob_cmd) return run_eval(rob_flags, "robustness");

  std::cerr << app.help();
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc <= 1) {
    CLI::App usage{"watermark vaccine toolkit"};
    std::cerr << "wmvac: a subcommand is required "
                 "(train, vaccinate, watermark, remove, gen-data, eval-effectiveness, "
                 "eval-universality, eval-transfer, eval-robustness)\n";
    return 2;
  }
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "wmvac: " << e.what() << "\n";
    return 1;
  }
}
