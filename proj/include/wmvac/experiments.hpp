#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "wmvac/compositor.hpp"
#include "wmvac/imaging.hpp"
#include "wmvac/metrics.hpp"
#include "wmvac/parallel.hpp"
#include "wmvac/removal_net.hpp"
#include "wmvac/report.hpp"
#include "wmvac/rng.hpp"
#include "wmvac/transforms.hpp"
#include "wmvac/vaccine.hpp"

namespace wmvac {

inline constexpr const char* kToolVersion = "wmvac 0.1.0";

// The four evaluation arms: unmodified host, uniform-noise control, and the
// two vaccines.
enum class Arm { Clean, Rn, Dwv, Iwv };

inline const char* arm_name(Arm a) {
  switch (a) {
    case Arm::Clean: return "clean";
    case Arm::Rn: return "rn";
    case Arm::Dwv: return "dwv";
    default: return "iwv";
  }
}

inline Arm arm_from_name(const std::string& s) {
  for (Arm a : {Arm::Clean, Arm::Rn, Arm::Dwv, Arm::Iwv})
    if (s == arm_name(a)) return a;
  throw std::invalid_argument("unknown arm '" + s + "'");
}

// Shared experiment settings. Perturbation budgets are expressed in 1/255
// units so config files roundtrip exactly.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  int n_hosts = 200;
  int threads = 2;
  int host_size = 64;
  int wm_size = 32;
  // effectiveness-style sampling
  std::pair<int, int> size_range{20, 20};
  std::pair<float, float> alpha_range{0.55f, 0.55f};
  // attack parameters
  float epsilon_255 = 8.0f;
  float step_255 = 2.0f;
  int iterations = 50;
  float beta = 2.0f;
  bool quantize = false;  // snap perturbed hosts to the 8-bit grid before use
  std::vector<Arm> arms{Arm::Clean, Arm::Rn, Arm::Dwv, Arm::Iwv};
  // universality sweeps (fixed center cell plus grids)
  int fixed_size = 20;
  float fixed_alpha = 0.55f;
  int patterns_per_host = 10;
  int locations_per_host = 10;
  std::vector<int> size_grid{15, 18, 20, 23, 25};
  std::vector<float> alpha_grid{0.45f, 0.5f, 0.55f, 0.6f, 0.65f};
  // transferability
  std::vector<float> budgets_255{2.0f, 4.0f, 6.0f, 8.0f};
  // robustness grids; quality 100 and radius 0 mean "no transform"
  std::vector<int> jpeg_quality_grid{100, 90, 80, 70, 60, 50, 40, 30};
  std::vector<double> blur_radius_grid{0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0};

  float epsilon() const { return epsilon_255 / 255.0f; }
  float step() const { return step_255 / 255.0f; }
};

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["n_hosts"] = c.n_hosts;
  j["threads"] = c.threads;
  j["host_size"] = c.host_size;
  j["wm_size"] = c.wm_size;
  j["size_min"] = c.size_range.first;
  j["size_max"] = c.size_range.second;
  j["alpha_min"] = c.alpha_range.first;
  j["alpha_max"] = c.alpha_range.second;
  j["epsilon_255"] = c.epsilon_255;
  j["step_255"] = c.step_255;
  j["iterations"] = c.iterations;
  j["beta"] = c.beta;
  j["quantize"] = c.quantize;
  nlohmann::json arms = nlohmann::json::array();
  for (Arm a : c.arms) arms.push_back(arm_name(a));
  j["arms"] = arms;
  j["fixed_size"] = c.fixed_size;
  j["fixed_alpha"] = c.fixed_alpha;
  j["patterns_per_host"] = c.patterns_per_host;
  j["locations_per_host"] = c.locations_per_host;
  j["size_grid"] = c.size_grid;
  j["alpha_grid"] = c.alpha_grid;
  j["budgets_255"] = c.budgets_255;
  j["jpeg_quality_grid"] = c.jpeg_quality_grid;
  j["blur_radius_grid"] = c.blur_radius_grid;
  return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  static const char* known[] = {
      "seed", "n_hosts", "threads", "host_size", "wm_size", "size_min", "size_max", "alpha_min",
      "alpha_max", "epsilon_255", "step_255", "iterations", "beta", "quantize", "arms", "fixed_size",
      "fixed_alpha", "patterns_per_host", "locations_per_host", "size_grid", "alpha_grid",
      "budgets_255", "jpeg_quality_grid", "blur_radius_grid"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || (it.key() == k);
    if (!ok) throw std::invalid_argument("config: unknown key '" + it.key() + "'");
  }
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("n_hosts")) c.n_hosts = j["n_hosts"].get<int>();
  if (j.contains("threads")) c.threads = j["threads"].get<int>();
  if (j.contains("host_size")) c.host_size = j["host_size"].get<int>();
  if (j.contains("wm_size")) c.wm_size = j["wm_size"].get<int>();
  if (j.contains("size_min")) c.size_range.first = j["size_min"].get<int>();
  if (j.contains("size_max")) c.size_range.second = j["size_max"].get<int>();
  if (j.contains("alpha_min")) c.alpha_range.first = j["alpha_min"].get<float>();
  if (j.contains("alpha_max")) c.alpha_range.second = j["alpha_max"].get<float>();
  if (j.contains("epsilon_255")) c.epsilon_255 = j["epsilon_255"].get<float>();
  if (j.contains("step_255")) c.step_255 = j["step_255"].get<float>();
  if (j.contains("iterations")) c.iterations = j["iterations"].get<int>();
  if (j.contains("beta")) c.beta = j["beta"].get<float>();
  if (j.contains("quantize")) c.quantize = j["quantize"].get<bool>();
  if (j.contains("arms")) {
    c.arms.clear();
    for (const auto& a : j["arms"]) c.arms.push_back(arm_from_name(a.get<std::string>()));
  }
  if (j.contains("fixed_size")) c.fixed_size = j["fixed_size"].get<int>();
  if (j.contains("fixed_alpha")) c.fixed_alpha = j["fixed_alpha"].get<float>();
  if (j.contains("patterns_per_host")) c.patterns_per_host = j["patterns_per_host"].get<int>();
  if (j.contains("locations_per_host")) c.locations_per_host = j["locations_per_host"].get<int>();
  if (j.contains("size_grid")) c.size_grid = j["size_grid"].get<std::vector<int>>();
  if (j.contains("alpha_grid")) c.alpha_grid = j["alpha_grid"].get<std::vector<float>>();
  if (j.contains("budgets_255")) c.budgets_255 = j["budgets_255"].get<std::vector<float>>();
  if (j.contains("jpeg_quality_grid")) c.jpeg_quality_grid = j["jpeg_quality_grid"].get<std::vector<int>>();
  if (j.contains("blur_radius_grid")) c.blur_radius_grid = j["blur_radius_grid"].get<std::vector<double>>();
  if (c.n_hosts < 1) throw std::invalid_argument("config: n_hosts must be >= 1");
  if (c.arms.empty()) throw std::invalid_argument("config: arm list is empty");
  return c;
}

inline std::string config_hash(const ExperimentConfig& c) {
  return hex64(fnv1a64(config_to_json(c).dump()));
}

namespace exp_detail {

// purpose tags for derived rng streams
inline constexpr std::uint64_t kTagHost = 1;
inline constexpr std::uint64_t kTagWatermark = 2;
inline constexpr std::uint64_t kTagPlacement = 3;
inline constexpr std::uint64_t kTagNoise = 4;
inline constexpr std::uint64_t kTagSweepWm = 5;
inline constexpr std::uint64_t kTagSweepLoc = 6;

inline constexpr const char* kMetricOrder[] = {"psnr_h", "ssim_h", "rmse_h", "rmsew_h",
                                               "psnr_w", "ssim_w", "rmse_w", "rmsew_w"};

// Everything drawn for one evaluation index. The same index yields the same
// case in every driver, which is what makes grid endpoints comparable across
// experiments.
struct CaseSample {
  Tensor host;
  WatermarkAsset wm;
  Placement placement;
};

inline CaseSample sample_case(const ExperimentConfig& cfg, std::int64_t i) {
  CaseSample cs;
  Rng host_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(i), kTagHost));
  cs.host = synth_host(host_rng, cfg.host_size, cfg.host_size);
  Rng wm_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(i), kTagWatermark));
  cs.wm = synth_watermark(wm_rng, cfg.wm_size, cfg.wm_size);
  Rng place_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(i), kTagPlacement));
  cs.placement = sample_placement(place_rng, cfg.host_size, cfg.host_size, cfg.size_range, cfg.alpha_range);
  return cs;
}

inline Placement center_placement(const ExperimentConfig& cfg, int size, float alpha) {
  Placement p;
  p.width = size;
  p.height = size;
  p.left = (cfg.host_size - size) / 2;
  p.top = (cfg.host_size - size) / 2;
  p.opacity = alpha;
  return p;
}

inline VaccineConfig make_vaccine_config(const ExperimentConfig& cfg, VaccineKind kind,
                                         std::vector<const RemovalModel*> models,
                                         std::optional<float> eps255 = std::nullopt) {
  VaccineConfig vc;
  vc.epsilon = (eps255 ? *eps255 : cfg.epsilon_255) / 255.0f;
  vc.step = cfg.step();
  vc.iterations = cfg.iterations;
  vc.beta = cfg.beta;
  vc.kind = kind;
  vc.models = std::move(models);
  return vc;
}

inline Tensor noisy_host(const ExperimentConfig& cfg, const Tensor& host, std::int64_t i, float eps255,
                         std::uint64_t extra_tag = 0) {
  const Tensor noise = uniform_noise(host.shape(), eps255 / 255.0f,
                                     derive_seed(cfg.seed, static_cast<std::uint64_t>(i), kTagNoise, extra_tag));
  Tensor out = host;
  for (std::int64_t k = 0; k < out.size(); ++k)
    out[k] = std::min(1.0f, std::max(0.0f, out[k] + noise[k]));
  return out;
}

struct EvalOutcome {
  PairMetrics vs_host;   // restored against the clean host
  PairMetrics vs_input;  // restored against the network's own watermarked input
};

using TransformFn = std::function<Tensor(const Tensor&)>;

inline EvalOutcome evaluate_arm(const RemovalModel& model, const Tensor& clean_host,
                                const Tensor& perturbed_host, const WatermarkAsset& wm,
                                const Placement& p, const TransformFn* transform = nullptr) {
  CompositeResult comp = composite(perturbed_host, wm, p);
  const Tensor input = transform ? (*transform)(comp.image) : std::move(comp.image);
  const RemovalOutput out = forward(model, input);
  EvalOutcome eo;
  eo.vs_host = compute_pair_metrics(out.restored, clean_host, &comp.mask);
  eo.vs_input = compute_pair_metrics(out.restored, input, &comp.mask);
  return eo;
}

using ArmStats = std::map<std::string, std::map<std::string, Stat>>;  // arm -> metric -> stat

inline void accumulate(ArmStats& dst, const std::string& arm, const EvalOutcome& eo) {
  auto& m = dst[arm];
  m["psnr_h"].add(eo.vs_host.psnr);
  m["ssim_h"].add(eo.vs_host.ssim);
  m["rmse_h"].add(eo.vs_host.rmse);
  if (eo.vs_host.rmse_w) m["rmsew_h"].add(*eo.vs_host.rmse_w);
  m["psnr_w"].add(eo.vs_input.psnr);
  m["ssim_w"].add(eo.vs_input.ssim);
  m["rmse_w"].add(eo.vs_input.rmse);
  if (eo.vs_input.rmse_w) m["rmsew_w"].add(*eo.vs_input.rmse_w);
}

inline void emit_arm_stats(CsvTable& table, const std::vector<std::string>& prefix,
                           const std::vector<Arm>& arm_order, const ArmStats& stats) {
  for (Arm a : arm_order) {
    const auto it = stats.find(arm_name(a));
    if (it == stats.end()) continue;
    for (const char* metric : kMetricOrder) {
      const auto mit = it->second.find(metric);
      if (mit == it->second.end()) continue;
      std::vector<std::string> row = prefix;
      row.push_back(arm_name(a));
      row.push_back(metric);
      row.push_back(fmt_double(mit->second.mean()));
      row.push_back(fmt_double(mit->second.stddev()));
      row.push_back(fmt_int(mit->second.n));
      table.add_row(std::move(row));
    }
  }
}

inline nlohmann::json provenance(const char* driver, const ExperimentConfig& cfg,
                                 const std::vector<RemovalModel>& models) {
  nlohmann::json j;
  j["tool"] = kToolVersion;
  j["driver"] = driver;
  j["config"] = config_to_json(cfg);
  j["config_hash"] = config_hash(cfg);
  nlohmann::json ms = nlohmann::json::array();
  for (const auto& m : models) {
    nlohmann::json mj;
    mj["variant"] = std::string(1, variant_letter(m.variant));
    mj["id"] = m.id();
    mj["parameters"] = m.parameter_count();
    mj["weight_hash"] = hex64(m.weight_hash());
    mj["val_psnr_restored"] = m.meta.val_psnr_restored;
    mj["val_psnr_watermarked"] = m.meta.val_psnr_watermarked;
    ms.push_back(mj);
  }
  j["models"] = ms;
  return j;
}

// Perturbed host per arm. Vaccines are generated against `vaccine_target`
// (one model, or several for a stacked arm).
inline Tensor arm_host(const ExperimentConfig& cfg, const CaseSample& cs, std::int64_t i, Arm arm,
                       const std::vector<const RemovalModel*>& vaccine_target) {
  Tensor out;
  switch (arm) {
    case Arm::Clean:
      out = cs.host;
      break;
    case Arm::Rn:
      out = noisy_host(cfg, cs.host, i, cfg.epsilon_255);
      break;
    case Arm::Dwv:
    case Arm::Iwv: {
      const VaccineKind kind = arm == Arm::Dwv ? VaccineKind::Dwv : VaccineKind::Iwv;
      const Vaccine v = generate_vaccine(cs.host, make_vaccine_config(cfg, kind, vaccine_target));
      out = vaccinated_image(cs.host, v);
      break;
    }
  }
  if (cfg.quantize) out = quantize_to_byte_grid(out);
  return out;
}

inline std::string model_label(const std::vector<RemovalModel>& models, std::size_t idx) {
  std::string letter(1, static_cast<char>(std::tolower(variant_letter(models[idx].variant))));
  int repeats = 0;
  for (std::size_t k = 0; k < idx; ++k)
    if (models[k].variant == models[idx].variant) ++repeats;
  return repeats == 0 ? letter : letter + std::to_string(repeats);
}

}  // namespace exp_detail

// ---------------------------------------------------------------------------
// Effectiveness: the four arms against every model, one row group per model.

struct EffectivenessResult {
  std::vector<exp_detail::ArmStats> per_model;  // indexed like the input models
  Report report;
};

inline EffectivenessResult run_effectiveness(const std::vector<RemovalModel>& models,
                                             const ExperimentConfig& cfg) {
  using namespace exp_detail;
  if (models.empty()) throw std::invalid_argument("run_effectiveness: no models");
  const std::int64_t n = cfg.n_hosts;

  struct PerImage {
    std::vector<std::vector<EvalOutcome>> by_model_arm;
  };
  std::vector<PerImage> per_image(static_cast<std::size_t>(n));

  parallel_for(n, cfg.threads, [&](std::int64_t i) {
    const CaseSample cs = sample_case(cfg, i);
    PerImage& pi = per_image[static_cast<std::size_t>(i)];
    pi.by_model_arm.resize(models.size());
    for (std::size_t m = 0; m < models.size(); ++m) {
      for (Arm arm : cfg.arms) {
        const Tensor host = arm_host(cfg, cs, i, arm, {&models[m]});
        pi.by_model_arm[m].push_back(evaluate_arm(models[m], cs.host, host, cs.wm, cs.placement));
      }
    }
  });

  EffectivenessResult res;
  res.per_model.resize(models.size());
  for (std::int64_t i = 0; i < n; ++i)
    for (std::size_t m = 0; m < models.size(); ++m)
      for (std::size_t a = 0; a < cfg.arms.size(); ++a)
        accumulate(res.per_model[m], arm_name(cfg.arms[a]),
                   per_image[static_cast<std::size_t>(i)].by_model_arm[m][a]);

  res.report.name = "effectiveness";
  res.report.provenance = provenance("effectiveness", cfg, models);
  for (std::size_t m = 0; m < models.size(); ++m) {
    CsvTable t;
    t.name = "effectiveness_" + model_label(models, m);
    t.columns = {"arm", "metric", "mean", "std", "n"};
    emit_arm_stats(t, {}, cfg.arms, res.per_model[m]);
    res.report.tables.push_back(std::move(t));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Universality: pattern / location / size / transparency sweeps against the
// first model. Cells aggregate over hosts; vaccines are generated once per
// host and reused across every cell.

struct SweepResult {
  std::string sweep;
  std::vector<std::string> cells;
  std::vector<exp_detail::ArmStats> cell_stats;  // parallel to cells
};

struct UniversalityResult {
  std::vector<SweepResult> sweeps;
  Report report;
};

inline UniversalityResult run_universality(const std::vector<RemovalModel>& models,
                                           const ExperimentConfig& cfg) {
  using namespace exp_detail;
  if (models.empty()) throw std::invalid_argument("run_universality: no models");
  const RemovalModel& model = models.front();
  const std::int64_t n = cfg.n_hosts;

  struct Cells {
    std::vector<std::vector<EvalOutcome>> per_cell;  // [cell][arm]
  };
  struct PerImage {
    Cells patterns, locations, sizes, alphas;
  };
  std::vector<PerImage> per_image(static_cast<std::size_t>(n));

  parallel_for(n, cfg.threads, [&](std::int64_t i) {
    const CaseSample cs = sample_case(cfg, i);
    PerImage& pi = per_image[static_cast<std::size_t>(i)];

    std::vector<Tensor> hosts;  // one perturbed host per arm, shared by all cells
    for (Arm arm : cfg.arms) hosts.push_back(arm_host(cfg, cs, i, arm, {&model}));

    auto eval_cell = [&](const WatermarkAsset& wm, const Placement& p) {
      std::vector<EvalOutcome> row;
      for (std::size_t a = 0; a < cfg.arms.size(); ++a)
        row.push_back(evaluate_arm(model, cs.host, hosts[a], wm, p));
      return row;
    };

    const Placement fixed = center_placement(cfg, cfg.fixed_size, cfg.fixed_alpha);
    for (int j = 0; j < cfg.patterns_per_host; ++j) {
      Rng wm_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(i), kTagSweepWm,
                             static_cast<std::uint64_t>(j)));
      const WatermarkAsset wm = synth_watermark(wm_rng, cfg.wm_size, cfg.wm_size);
      pi.patterns.per_cell.push_back(eval_cell(wm, fixed));
    }
    for (int j = 0; j < cfg.locations_per_host; ++j) {
      Rng loc_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(i), kTagSweepLoc,
                              static_cast<std::uint64_t>(j)));
      const Placement p = sample_placement(loc_rng, cfg.host_size, cfg.host_size,
                                           {cfg.fixed_size, cfg.fixed_size},
                                           {cfg.fixed_alpha, cfg.fixed_alpha});
      pi.locations.per_cell.push_back(eval_cell(cs.wm, p));
    }
    for (int size : cfg.size_grid)
      pi.sizes.per_cell.push_back(eval_cell(cs.wm, center_placement(cfg, size, cfg.fixed_alpha)));
    for (float alpha : cfg.alpha_grid)
      pi.alphas.per_cell.push_back(eval_cell(cs.wm, center_placement(cfg, cfg.fixed_size, alpha)));
  });

  UniversalityResult res;
  auto reduce = [&](const char* name, std::vector<std::string> labels,
                    Cells PerImage::*member) {
    SweepResult sr;
    sr.sweep = name;
    sr.cells = std::move(labels);
    sr.cell_stats.resize(sr.cells.size());
    for (std::int64_t i = 0; i < n; ++i) {
      const Cells& cells = per_image[static_cast<std::size_t>(i)].*member;
      for (std::size_t cidx = 0; cidx < sr.cells.size(); ++cidx)
        for (std::size_t a = 0; a < cfg.arms.size(); ++a)
          accumulate(sr.cell_stats[cidx], arm_name(cfg.arms[a]), cells.per_cell[cidx][a]);
    }
    res.sweeps.push_back(std::move(sr));
  };

  std::vector<std::string> pattern_labels, location_labels, size_labels, alpha_labels;
  for (int j = 0; j < cfg.patterns_per_host; ++j) pattern_labels.push_back(std::to_string(j));
  for (int j = 0; j < cfg.locations_per_host; ++j) location_labels.push_back(std::to_string(j));
  for (int s : cfg.size_grid) size_labels.push_back(std::to_string(s));
  for (float a : cfg.alpha_grid) alpha_labels.push_back(fmt_double(a));
  reduce("patterns", pattern_labels, &PerImage::patterns);
  reduce("locations", location_labels, &PerImage::locations);
  reduce("size", size_labels, &PerImage::sizes);
  reduce("alpha", alpha_labels, &PerImage::alphas);

  res.report.name = "universality";
  res.report.provenance = provenance("universality", cfg, models);
  for (const auto& sr : res.sweeps) {
    CsvTable t;
    t.name = "universality_" + sr.sweep;
    t.columns = {"cell", "arm", "metric", "mean", "std", "n"};
    for (std::size_t cidx = 0; cidx < sr.cells.size(); ++cidx)
      emit_arm_stats(t, {sr.cells[cidx]}, cfg.arms, sr.cell_stats[cidx]);
    res.report.tables.push_back(std::move(t));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Transferability: source-model vaccines evaluated on every target model over
// a perturbation-budget sweep, plus the stacked vaccine.

struct TransferResult {
  // stats[kind][source][budget_255][target][metric]; sources are model labels
  // plus "stacked", "rn" and "clean" ("clean" and "rn" appear under both
  // kinds so each table is self-contained; "clean" ignores the budget).
  std::map<std::string,
           std::map<std::string, std::map<float, std::map<std::string, std::map<std::string, Stat>>>>>
      stats;
  Report report;

  const Stat& at(const std::string& kind, const std::string& source, float eps255,
                 const std::string& target, const std::string& metric) const {
    return stats.at(kind).at(source).at(eps255).at(target).at(metric);
  }
};

inline TransferResult run_transferability(const std::vector<RemovalModel>& models,
                                          const ExperimentConfig& cfg) {
  using namespace exp_detail;
  if (models.size() < 2) throw std::invalid_argument("run_transferability: needs at least 2 models");
  const std::int64_t n = cfg.n_hosts;

  std::vector<float> budgets = cfg.budgets_255;
  if (std::find(budgets.begin(), budgets.end(), cfg.epsilon_255) == budgets.end())
    budgets.push_back(cfg.epsilon_255);

  std::vector<std::string> source_labels;
  for (std::size_t m = 0; m < models.size(); ++m) source_labels.push_back(model_label(models, m));
  std::vector<const RemovalModel*> all_models;
  for (const auto& m : models) all_models.push_back(&m);

  struct Entry {
    std::string kind, source, target;
    float eps255;
    EvalOutcome eo;
  };
  std::vector<std::vector<Entry>> per_image(static_cast<std::size_t>(n));

  parallel_for(n, cfg.threads, [&](std::int64_t i) {
    const CaseSample cs = sample_case(cfg, i);
    std::vector<Entry>& out = per_image[static_cast<std::size_t>(i)];

    auto eval_on_targets = [&](const std::string& kind, const std::string& source, float eps255,
                               const Tensor& host) {
      for (std::size_t t = 0; t < models.size(); ++t) {
        Entry e;
        e.kind = kind;
        e.source = source;
        e.target = source_labels[t];
        e.eps255 = eps255;
        e.eo = evaluate_arm(models[t], cs.host, host, cs.wm, cs.placement);
        out.push_back(std::move(e));
      }
    };

    {  // clean baseline, budget-independent
      Tensor host = cs.host;
      if (cfg.quantize) host = quantize_to_byte_grid(host);
      eval_on_targets("dwv", "clean", 0.0f, host);
      eval_on_targets("iwv", "clean", 0.0f, host);
    }
    for (std::size_t b = 0; b < budgets.size(); ++b) {
      Tensor host = noisy_host(cfg, cs.host, i, budgets[b], b);
      if (cfg.quantize) host = quantize_to_byte_grid(host);
      eval_on_targets("dwv", "rn", budgets[b], host);
      eval_on_targets("iwv", "rn", budgets[b], host);
    }
    for (VaccineKind kind : {VaccineKind::Dwv, VaccineKind::Iwv}) {
      for (float eps255 : budgets) {
        for (std::size_t s = 0; s < models.size(); ++s) {
          const Vaccine v =
              generate_vaccine(cs.host, make_vaccine_config(cfg, kind, {&models[s]}, eps255));
          Tensor host = vaccinated_image(cs.host, v);
          if (cfg.quantize) host = quantize_to_byte_grid(host);
          eval_on_targets(vaccine_kind_name(kind), source_labels[s], eps255, host);
        }
        const Vaccine v = generate_vaccine(cs.host, make_vaccine_config(cfg, kind, all_models, eps255));
        Tensor host = vaccinated_image(cs.host, v);
        if (cfg.quantize) host = quantize_to_byte_grid(host);
        eval_on_targets(vaccine_kind_name(kind), "stacked", eps255, host);
      }
    }
  });

  TransferResult res;
  for (std::int64_t i = 0; i < n; ++i)
    for (const Entry& e : per_image[static_cast<std::size_t>(i)]) {
      ArmStats tmp;
      accumulate(tmp, "x", e.eo);
      for (const auto& [metric, stat] : tmp.at("x")) {
        Stat& dst = res.stats[e.kind][e.source][e.eps255][e.target][metric];
        dst.sum += stat.sum;
        dst.sumsq += stat.sumsq;
        dst.n += stat.n;
      }
    }

  res.report.name = "transfer";
  res.report.provenance = provenance("transfer", cfg, models);
  nlohmann::json curves;
  for (const char* kind : {"dwv", "iwv"}) {
    const std::string headline = std::string(kind) == "dwv" ? "rmse_h" : "rmsew_w";
    CsvTable matrix;
    matrix.name = std::string("transfer_matrix_") + kind;
    matrix.columns = {"source", "target", "metric", "mean", "std", "n"};
    CsvTable budget_table;
    budget_table.name = std::string("transfer_budget_") + kind;
    budget_table.columns = {"source", "epsilon_255", "target", "metric", "mean", "std", "n"};
    for (const auto& [source, by_eps] : res.stats.at(kind)) {
      for (const auto& [eps255, by_target] : by_eps) {
        for (const auto& [target, by_metric] : by_target) {
          const Stat& st = by_metric.at(headline);
          if (source == "clean" || eps255 == cfg.epsilon_255)
            matrix.add_row({source, target, headline, fmt_double(st.mean()), fmt_double(st.stddev()),
                            fmt_int(st.n)});
          budget_table.add_row({source, fmt_double(eps255), target, headline, fmt_double(st.mean()),
                                fmt_double(st.stddev()), fmt_int(st.n)});
          curves[kind][source][target][fmt_double(eps255)] = st.mean();
        }
      }
    }
    res.report.tables.push_back(std::move(matrix));
    res.report.tables.push_back(std::move(budget_table));
  }
  res.report.provenance["curves"] = curves;
  return res;
}

// ---------------------------------------------------------------------------
// Robustness: lossy transforms applied to the watermarked images before
// removal. Quality 100 and radius 0 are the untransformed endpoints.

struct RobustnessResult {
  SweepResult jpeg;  // cells are quality values
  SweepResult blur;  // cells are radii
  Report report;
};

inline RobustnessResult run_robustness(const std::vector<RemovalModel>& models,
                                       const ExperimentConfig& cfg) {
  using namespace exp_detail;
  if (models.empty()) throw std::invalid_argument("run_robustness: no models");
  const RemovalModel& model = models.front();
  const std::int64_t n = cfg.n_hosts;

  struct PerImage {
    std::vector<std::vector<EvalOutcome>> jpeg, blur;  // [cell][arm]
  };
  std::vector<PerImage> per_image(static_cast<std::size_t>(n));

  parallel_for(n, cfg.threads, [&](std::int64_t i) {
    const CaseSample cs = sample_case(cfg, i);
    PerImage& pi = per_image[static_cast<std::size_t>(i)];
    std::vector<Tensor> hosts;
    for (Arm arm : cfg.arms) hosts.push_back(arm_host(cfg, cs, i, arm, {&model}));

    auto eval_with = [&](const TransformFn* tf) {
      std::vector<EvalOutcome> row;
      for (std::size_t a = 0; a < cfg.arms.size(); ++a)
        row.push_back(evaluate_arm(model, cs.host, hosts[a], cs.wm, cs.placement, tf));
      return row;
    };

    for (int q : cfg.jpeg_quality_grid) {
      if (q == 100) {
        pi.jpeg.push_back(eval_with(nullptr));
      } else {
        TransformFn tf = [q](const Tensor& img) { return jpeg_roundtrip(img, q); };
        pi.jpeg.push_back(eval_with(&tf));
      }
    }
    for (double r : cfg.blur_radius_grid) {
      if (r == 0.0) {
        pi.blur.push_back(eval_with(nullptr));
      } else {
        TransformFn tf = [r](const Tensor& img) { return gaussian_blur(img, r); };
        pi.blur.push_back(eval_with(&tf));
      }
    }
  });

  RobustnessResult res;
  auto reduce = [&](const char* name, std::vector<std::string> labels,
                    std::vector<std::vector<EvalOutcome>> PerImage::*member, SweepResult& sr) {
    sr.sweep = name;
    sr.cells = std::move(labels);
    sr.cell_stats.resize(sr.cells.size());
    for (std::int64_t i = 0; i < n; ++i) {
      const auto& cells = per_image[static_cast<std::size_t>(i)].*member;
      for (std::size_t cidx = 0; cidx < sr.cells.size(); ++cidx)
        for (std::size_t a = 0; a < cfg.arms.size(); ++a)
          accumulate(sr.cell_stats[cidx], arm_name(cfg.arms[a]), cells[cidx][a]);
    }
  };
  std::vector<std::string> qlabels, rlabels;
  for (int q : cfg.jpeg_quality_grid) qlabels.push_back(std::to_string(q));
  for (double r : cfg.blur_radius_grid) rlabels.push_back(fmt_double(r));
  reduce("jpeg_quality", qlabels, &PerImage::jpeg, res.jpeg);
  reduce("blur_radius", rlabels, &PerImage::blur, res.blur);

  res.report.name = "robustness";
  res.report.provenance = provenance("robustness", cfg, models);
  nlohmann::json curves;
  for (const SweepResult* sr : {&res.jpeg, &res.blur}) {
    CsvTable t;
    t.name = "robustness_" + std::string(sr == &res.jpeg ? "jpeg" : "blur");
    t.columns = {sr->sweep, "arm", "metric", "mean", "std", "n"};
    for (std::size_t cidx = 0; cidx < sr->cells.size(); ++cidx)
      emit_arm_stats(t, {sr->cells[cidx]}, cfg.arms, sr->cell_stats[cidx]);
    res.report.tables.push_back(std::move(t));
    for (std::size_t cidx = 0; cidx < sr->cells.size(); ++cidx)
      for (const auto& [arm, metrics] : sr->cell_stats[cidx])
        for (const auto& [metric, stat] : metrics)
          curves[sr->sweep][arm][metric].push_back(stat.mean());
    curves[sr->sweep]["grid"] = sr->cells;
  }
  res.report.provenance["curves"] = curves;
  return res;
}

}  // namespace wmvac
