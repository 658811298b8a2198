#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "wmvac/autodiff.hpp"
#include "wmvac/compositor.hpp"
#include "wmvac/hash.hpp"
#include "wmvac/metrics.hpp"
#include "wmvac/optim.hpp"
#include "wmvac/rng.hpp"
#include "wmvac/tensor.hpp"

namespace wmvac {

// Three architecture flavors of the blind removal network serving as attack
// targets. A is the base encoder/decoder, B widens every stage by 1.5x, C
// adds an extra stride-1 bottleneck convolution.
enum class NetVariant { A, B, C };

inline char variant_letter(NetVariant v) {
  switch (v) {
    case NetVariant::A: return 'A';
    case NetVariant::B: return 'B';
    default: return 'C';
  }
}

inline NetVariant variant_from_letter(char ch) {
  switch (ch) {
    case 'A': case 'a': return NetVariant::A;
    case 'B': case 'b': return NetVariant::B;
    case 'C': case 'c': return NetVariant::C;
    default: throw std::invalid_argument(std::string("unknown variant '") + ch + "'");
  }
}

// One trunk stage: optional nearest-2x upsample, then a 3x3 convolution
// followed by relu.
struct LayerSpec {
  bool upsample_before = false;
  int in_c = 0;
  int out_c = 0;
  int stride = 1;
  bool operator==(const LayerSpec& o) const {
    return upsample_before == o.upsample_before && in_c == o.in_c && out_c == o.out_c && stride == o.stride;
  }
};

struct RemovalOutput {
  Tensor restored;  // Nx3xHxW in (0,1)
  Tensor mask;      // Nx1xHxW in (0,1)
};

struct RemovalModel {
  NetVariant variant = NetVariant::A;
  std::vector<LayerSpec> trunk;  // relu after each conv
  // weights/biases: trunk convs in order, then image head, then mask head
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  struct Meta {
    std::uint64_t init_seed = 0;
    std::uint64_t data_seed = 0;
    int steps = 0;
    int batch = 0;
    float lr = 0.0f;
    double init_val_loss = -1.0;
    double best_val_loss = -1.0;
    double val_psnr_restored = 0.0;
    double val_psnr_watermarked = 0.0;
  } meta;

  int head_in_channels() const { return trunk.back().out_c; }

  std::int64_t parameter_count() const {
    std::int64_t total = 0;
    for (const auto& w : weights) total += w.size();
    for (const auto& b : biases) total += b.size();
    return total;
  }

  std::uint64_t weight_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& w : weights) h = fnv1a64(w.data(), static_cast<std::size_t>(w.size()) * 4, h);
    for (const auto& b : biases) h = fnv1a64(b.data(), static_cast<std::size_t>(b.size()) * 4, h);
    return h;
  }

  std::string id() const {
    return std::string(1, variant_letter(variant)) + "-" + std::to_string(meta.init_seed) + "-" +
           hex64(weight_hash()).substr(0, 8);
  }
};

namespace detail {

inline std::vector<LayerSpec> trunk_for(NetVariant v) {
  const int c1 = (v == NetVariant::B) ? 24 : 16;
  const int c2 = 2 * c1;
  const int c3 = 4 * c1;
  std::vector<LayerSpec> trunk = {
      {false, 3, c1, 1},
      {false, c1, c2, 2},
      {false, c2, c3, 2},
  };
  if (v == NetVariant::C) trunk.push_back({false, c3, c3, 1});
  trunk.push_back({true, c3, c2, 1});
  trunk.push_back({true, c2, c1, 1});
  return trunk;
}

inline void check_forward_input(const Shape& s) {
  if (s.c != 3 || s.h < 8 || s.w < 8 || s.h % 4 != 0 || s.w % 4 != 0)
    throw std::invalid_argument("removal forward: expected Nx3xHxW with H,W >= 8 and divisible by 4, got " +
                                s.str());
}

inline Tensor init_conv_weight(Rng& rng, int out_c, int in_c) {
  Tensor w(Shape{out_c, in_c, 3, 3});
  const float bound = std::sqrt(6.0f / (static_cast<float>(in_c) * 9.0f));
  for (std::int64_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
  return w;
}

}  // namespace detail

inline RemovalModel build_variant(NetVariant variant, std::uint64_t seed) {
  RemovalModel m;
  m.variant = variant;
  m.trunk = detail::trunk_for(variant);
  m.meta.init_seed = seed;
  Rng rng(derive_seed(seed, 0x696e6974));  // "init"
  for (const auto& l : m.trunk) {
    m.weights.push_back(detail::init_conv_weight(rng, l.out_c, l.in_c));
    m.biases.emplace_back(Shape{1, l.out_c, 1, 1});
  }
  const int hc = m.head_in_channels();
  m.weights.push_back(detail::init_conv_weight(rng, 3, hc));  // image head
  m.biases.emplace_back(Shape{1, 3, 1, 1});
  m.weights.push_back(detail::init_conv_weight(rng, 1, hc));  // mask head
  m.biases.emplace_back(Shape{1, 1, 1, 1});
  return m;
}

inline RemovalOutput forward(const RemovalModel& m, const Tensor& image) {
  detail::check_forward_input(image.shape());
  Tensor x = image;
  for (std::size_t i = 0; i < m.trunk.size(); ++i) {
    if (m.trunk[i].upsample_before) x = upsample_nearest2x(x);
    x = relu(conv2d(x, m.weights[i], m.biases[i], m.trunk[i].stride));
  }
  const std::size_t hi = m.trunk.size();
  RemovalOutput out;
  out.restored = sigmoid(conv2d(x, m.weights[hi], m.biases[hi], 1));
  out.mask = sigmoid(conv2d(x, m.weights[hi + 1], m.biases[hi + 1], 1));
  return out;
}

struct TapedForward {
  Var restored;
  Var mask;
  // populated when train_weights is set; layer order, weight then bias pairs
  std::vector<Var> weight_vars;
  std::vector<Var> bias_vars;
};

inline TapedForward forward_on_tape(Tape& tape, const RemovalModel& m, Var image,
                                    bool train_weights = false) {
  detail::check_forward_input(tape.value(image).shape());
  TapedForward out;
  std::vector<Var> wv, bv;
  for (std::size_t i = 0; i < m.weights.size(); ++i) {
    wv.push_back(tape.leaf(m.weights[i], train_weights));
    bv.push_back(tape.leaf(m.biases[i], train_weights));
  }
  Var x = image;
  for (std::size_t i = 0; i < m.trunk.size(); ++i) {
    if (m.trunk[i].upsample_before) x = tape.upsample_nearest2x(x);
    x = tape.relu(tape.conv2d(x, wv[i], bv[i], m.trunk[i].stride));
  }
  const std::size_t hi = m.trunk.size();
  out.restored = tape.sigmoid(tape.conv2d(x, wv[hi], bv[hi], 1));
  out.mask = tape.sigmoid(tape.conv2d(x, wv[hi + 1], bv[hi + 1], 1));
  if (train_weights) {
    out.weight_vars = std::move(wv);
    out.bias_vars = std::move(bv);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training on procedurally generated (host, watermark, placement) triples.

struct TrainOptions {
  int steps = 2000;
  int batch = 16;
  float lr = 1e-3f;
  int val_size = 64;
  int val_interval = 100;
  int host_size = 64;
  int wm_size = 32;
  std::pair<int, int> size_range{16, 36};
  std::pair<float, float> alpha_range{0.45f, 0.8f};
  float mask_threshold = 0.01f;   // binarization for the mask training target
  float mask_loss_weight = 1.0f;  // weight of the mask term against the image term
};

struct TrainLogEntry {
  int step = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

namespace detail {

struct TrainSample {
  Tensor host;
  Tensor watermarked;
  Tensor mask_binary;
};

inline TrainSample make_triple(std::uint64_t seed, const TrainOptions& opt) {
  Rng host_rng(derive_seed(seed, 1));
  Rng wm_rng(derive_seed(seed, 2));
  Rng place_rng(derive_seed(seed, 3));
  TrainSample s;
  s.host = synth_host(host_rng, opt.host_size, opt.host_size);
  const WatermarkAsset wm = synth_watermark(wm_rng, opt.wm_size, opt.wm_size);
  const Placement p =
      sample_placement(place_rng, opt.host_size, opt.host_size, opt.size_range, opt.alpha_range);
  CompositeResult comp = composite(s.host, wm, p);
  s.watermarked = std::move(comp.image);
  s.mask_binary = Tensor(comp.mask.shape());
  for (std::int64_t i = 0; i < comp.mask.size(); ++i)
    s.mask_binary[i] = comp.mask[i] > opt.mask_threshold ? 1.0f : 0.0f;
  return s;
}

inline void stack_into(const Tensor& src, Tensor& dst, int index) {
  const std::int64_t stride = src.size();
  std::memcpy(dst.data() + index * stride, src.data(), static_cast<std::size_t>(stride) * 4);
}

struct ValStats {
  double loss = 0.0;
  double image_loss = 0.0;
  double mask_loss = 0.0;
  double psnr_restored = 0.0;
  double psnr_watermarked = 0.0;
};

inline ValStats evaluate_validation(const RemovalModel& m, const std::vector<TrainSample>& val,
                                    float mask_weight) {
  ValStats st;
  double img_acc = 0.0, mask_acc = 0.0;
  for (const auto& s : val) {
    const RemovalOutput out = forward(m, s.watermarked);
    img_acc += mean_squared_error(out.restored, s.host);
    mask_acc += mean_squared_error(out.mask, s.mask_binary);
    st.psnr_restored += psnr(out.restored, s.host);
    st.psnr_watermarked += psnr(s.watermarked, s.host);
  }
  const double n = static_cast<double>(val.size());
  st.image_loss = img_acc / n;
  st.mask_loss = mask_acc / n;
  st.loss = st.image_loss + static_cast<double>(mask_weight) * st.mask_loss;
  st.psnr_restored /= n;
  st.psnr_watermarked /= n;
  return st;
}

}  // namespace detail

// Minimizes mse(restored, host) + mse(mask, binarized composite mask) over
// fresh procedural triples, keeping the checkpoint with the lowest loss on a
// fixed held-out set. Fully deterministic for fixed seeds and options.
inline RemovalModel train(NetVariant variant, std::uint64_t init_seed, std::uint64_t data_seed,
                          const TrainOptions& opt = {}, std::vector<TrainLogEntry>* log = nullptr) {
  if (opt.steps < 1 || opt.batch < 1) throw std::invalid_argument("train: steps and batch must be >= 1");
  RemovalModel model = build_variant(variant, init_seed);
  model.meta.data_seed = data_seed;
  model.meta.steps = opt.steps;
  model.meta.batch = opt.batch;
  model.meta.lr = opt.lr;

  std::vector<detail::TrainSample> val;
  val.reserve(static_cast<std::size_t>(opt.val_size));
  for (int j = 0; j < opt.val_size; ++j)
    val.push_back(detail::make_triple(derive_seed(data_seed, 0x76616cULL, static_cast<std::uint64_t>(j)), opt));

  detail::ValStats init_stats = detail::evaluate_validation(model, val, opt.mask_loss_weight);
  model.meta.init_val_loss = init_stats.loss;
  double best_val = init_stats.loss;
  std::vector<Tensor> best_w = model.weights;
  std::vector<Tensor> best_b = model.biases;

  AdamState adam(AdamConfig{opt.lr});
  const int hs = opt.host_size;
  Tensor hosts(Shape{opt.batch, 3, hs, hs});
  Tensor marked(Shape{opt.batch, 3, hs, hs});
  Tensor masks(Shape{opt.batch, 1, hs, hs});

  for (int step = 1; step <= opt.steps; ++step) {
    for (int j = 0; j < opt.batch; ++j) {
      detail::TrainSample s = detail::make_triple(
          derive_seed(data_seed, 0x747261696eULL, static_cast<std::uint64_t>(step),
                      static_cast<std::uint64_t>(j)),
          opt);
      detail::stack_into(s.host, hosts, j);
      detail::stack_into(s.watermarked, marked, j);
      detail::stack_into(s.mask_binary, masks, j);
    }

    Tape tape;
    Var input = tape.constant(marked);
    TapedForward f = forward_on_tape(tape, model, input, /*train_weights=*/true);
    Var l_img = tape.mse(f.restored, tape.constant(hosts));
    Var l_mask = tape.mse(f.mask, tape.constant(masks));
    Var loss = tape.scale_add(l_img, 1.0f, l_mask, opt.mask_loss_weight);
    const double loss_value = tape.scalar_value(loss);
    if (!std::isfinite(loss_value))
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(step) + " (variant " +
                               variant_letter(variant) + ", lr " + std::to_string(opt.lr) + ")");

    GradMap grads = tape.backward(loss);
    std::vector<Tensor*> params;
    std::vector<const Tensor*> gptrs;
    for (std::size_t i = 0; i < model.weights.size(); ++i) {
      params.push_back(&model.weights[i]);
      gptrs.push_back(&grads.at(f.weight_vars[i]));
      params.push_back(&model.biases[i]);
      gptrs.push_back(&grads.at(f.bias_vars[i]));
    }
    adam.update(params, gptrs);

    if (step % opt.val_interval == 0 || step == opt.steps) {
      detail::ValStats vs = detail::evaluate_validation(model, val, opt.mask_loss_weight);
      if (log) log->push_back(TrainLogEntry{step, loss_value, vs.loss});
      if (vs.loss < best_val) {
        best_val = vs.loss;
        best_w = model.weights;
        best_b = model.biases;
      }
    }
  }

  model.weights = std::move(best_w);
  model.biases = std::move(best_b);
  model.meta.best_val_loss = best_val;
  detail::ValStats final_stats = detail::evaluate_validation(model, val, opt.mask_loss_weight);
  model.meta.val_psnr_restored = final_stats.psnr_restored;
  model.meta.val_psnr_watermarked = final_stats.psnr_watermarked;
  return model;
}

// ---------------------------------------------------------------------------
// Checkpoint format: 16-byte magic+version, u32 length-prefixed JSON metadata,
// then raw little-endian float32 arrays in descriptor order.

namespace detail {

inline constexpr char kCkptMagic[12] = {'W', 'M', 'V', 'A', 'C', '-', 'C', 'K', 'P', 'T', 0, 0};
inline constexpr std::uint32_t kCkptVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace detail

inline void save_checkpoint(const RemovalModel& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot write " + path);
  os.write(detail::kCkptMagic, 12);
  detail::write_u32(os, detail::kCkptVersion);

  nlohmann::json meta;
  meta["variant"] = std::string(1, variant_letter(m.variant));
  meta["init_seed"] = m.meta.init_seed;
  meta["data_seed"] = m.meta.data_seed;
  meta["steps"] = m.meta.steps;
  meta["batch"] = m.meta.batch;
  meta["lr"] = m.meta.lr;
  meta["init_val_loss"] = m.meta.init_val_loss;
  meta["best_val_loss"] = m.meta.best_val_loss;
  meta["val_psnr_restored"] = m.meta.val_psnr_restored;
  meta["val_psnr_watermarked"] = m.meta.val_psnr_watermarked;
  nlohmann::json shapes = nlohmann::json::array();
  for (std::size_t i = 0; i < m.weights.size(); ++i) {
    const Shape& w = m.weights[i].shape();
    const Shape& b = m.biases[i].shape();
    shapes.push_back({w.n, w.c, w.h, w.w});
    shapes.push_back({b.n, b.c, b.h, b.w});
  }
  meta["shapes"] = shapes;
  const std::string meta_text = meta.dump();
  detail::write_u32(os, static_cast<std::uint32_t>(meta_text.size()));
  os.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));

  for (std::size_t i = 0; i < m.weights.size(); ++i) {
    os.write(reinterpret_cast<const char*>(m.weights[i].data()),
             static_cast<std::streamsize>(m.weights[i].size()) * 4);
    os.write(reinterpret_cast<const char*>(m.biases[i].data()),
             static_cast<std::streamsize>(m.biases[i].size()) * 4);
  }
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline RemovalModel load_checkpoint(const std::string& path,
                                    std::optional<NetVariant> expected = std::nullopt) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[12];
  if (!is.read(magic, 12) || std::memcmp(magic, detail::kCkptMagic, 12) != 0)
    throw std::runtime_error("load_checkpoint: " + path + " is not a removal-net checkpoint");
  const std::uint32_t version = detail::read_u32(is);
  if (version != detail::kCkptVersion)
    throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));

  const std::uint32_t meta_len = detail::read_u32(is);
  std::string meta_text(meta_len, '\0');
  if (!is.read(meta_text.data(), meta_len)) throw std::runtime_error("load_checkpoint: truncated metadata");
  nlohmann::json meta = nlohmann::json::parse(meta_text, nullptr, false);
  if (meta.is_discarded()) throw std::runtime_error("load_checkpoint: corrupt metadata block");

  RemovalModel m;
  const std::string vstr = meta.at("variant").get<std::string>();
  if (vstr.size() != 1) throw std::runtime_error("load_checkpoint: bad variant field");
  m.variant = variant_from_letter(vstr[0]);
  if (expected && *expected != m.variant)
    throw std::runtime_error("load_checkpoint: " + path + " holds variant " + vstr + ", expected " +
                             std::string(1, variant_letter(*expected)));
  m.trunk = detail::trunk_for(m.variant);
  m.meta.init_seed = meta.at("init_seed").get<std::uint64_t>();
  m.meta.data_seed = meta.at("data_seed").get<std::uint64_t>();
  m.meta.steps = meta.at("steps").get<int>();
  m.meta.batch = meta.at("batch").get<int>();
  m.meta.lr = meta.at("lr").get<float>();
  m.meta.init_val_loss = meta.at("init_val_loss").get<double>();
  m.meta.best_val_loss = meta.at("best_val_loss").get<double>();
  m.meta.val_psnr_restored = meta.at("val_psnr_restored").get<double>();
  m.meta.val_psnr_watermarked = meta.at("val_psnr_watermarked").get<double>();

  // expected tensor list from the variant's descriptors
  std::vector<Shape> expect;
  for (const auto& l : m.trunk) {
    expect.push_back(Shape{l.out_c, l.in_c, 3, 3});
    expect.push_back(Shape{1, l.out_c, 1, 1});
  }
  const int hc = m.trunk.back().out_c;
  expect.push_back(Shape{3, hc, 3, 3});
  expect.push_back(Shape{1, 3, 1, 1});
  expect.push_back(Shape{1, hc, 3, 3});
  expect.push_back(Shape{1, 1, 1, 1});

  const auto& shapes = meta.at("shapes");
  if (shapes.size() != expect.size())
    throw std::runtime_error("load_checkpoint: tensor count mismatch for variant " + vstr);
  for (std::size_t i = 0; i < expect.size(); ++i) {
    const Shape got{shapes[i][0].get<int>(), shapes[i][1].get<int>(), shapes[i][2].get<int>(),
                    shapes[i][3].get<int>()};
    if (got != expect[i])
      throw std::runtime_error("load_checkpoint: tensor " + std::to_string(i) + " shape " + got.str() +
                               " does not match descriptor " + expect[i].str());
  }

  for (std::size_t i = 0; i < expect.size(); i += 2) {
    Tensor w(expect[i]);
    Tensor b(expect[i + 1]);
    if (!is.read(reinterpret_cast<char*>(w.data()), static_cast<std::streamsize>(w.size()) * 4) ||
        !is.read(reinterpret_cast<char*>(b.data()), static_cast<std::streamsize>(b.size()) * 4))
      throw std::runtime_error("load_checkpoint: truncated weight data in " + path);
    if (!w.all_finite() || !b.all_finite())
      throw std::runtime_error("load_checkpoint: non-finite weights in " + path);
    m.weights.push_back(std::move(w));
    m.biases.push_back(std::move(b));
  }
  is.peek();
  if (!is.eof()) throw std::runtime_error("load_checkpoint: trailing bytes in " + path);
  return m;
}

}  // namespace wmvac
