#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "support/fixtures.hpp"
#include "support/reference_net.hpp"
#include "support/test_util.hpp"
#include "wmvac/gradcheck.hpp"
#include "wmvac/vaccine.hpp"

using namespace wmvac;
using wmvac::test::bit_equal;
using wmvac::test::random_tensor;

namespace {

VaccineConfig base_config(const RemovalModel& m, VaccineKind kind, int iterations = 50) {
  VaccineConfig c;
  c.kind = kind;
  c.iterations = iterations;
  c.models = {&m};
  return c;
}

// all-positive weights and biases make every output strictly increasing in
// every input pixel, so the loss gradient has one sign everywhere
RemovalModel monotone_model() {
  RemovalModel m = build_variant(NetVariant::A, 55);
  for (auto& w : m.weights)
    for (std::int64_t i = 0; i < w.size(); ++i) w[i] = 0.05f + 0.05f * std::fabs(w[i]);
  for (auto& b : m.biases)
    for (std::int64_t i = 0; i < b.size(); ++i) b[i] = 0.1f;
  return m;
}

}  // namespace

TEST_CASE("config validation") {
  const Tensor host = random_tensor(Shape{1, 3, 64, 64}, 1);
  VaccineConfig c;  // no models
  REQUIRE_THROWS_AS(generate_vaccine(host, c), std::invalid_argument);
  const RemovalModel m = build_variant(NetVariant::A, 2);
  c.models = {&m};
  c.epsilon = 0.0f;
  REQUIRE_THROWS_AS(generate_vaccine(host, c), std::invalid_argument);
  c.epsilon = 8.0f / 255.0f;
  c.iterations = 0;
  REQUIRE_THROWS_AS(generate_vaccine(host, c), std::invalid_argument);
  c.iterations = 1;
  c.beta = 0.0f;
  REQUIRE_THROWS_AS(generate_vaccine(host, c), std::invalid_argument);
  c.beta = 2.0f;
  Tensor bad_host = host;
  bad_host[0] = 1.5f;
  REQUIRE_THROWS_AS(generate_vaccine(bad_host, c), std::invalid_argument);
}

TEST_CASE("single signed step against a monotone model") {
  const RemovalModel m = monotone_model();
  const Tensor host(Shape{1, 3, 64, 64}, 0.2f);

  VaccineConfig c = base_config(m, VaccineKind::Dwv, 1);
  const Vaccine dwv = generate_vaccine(host, c);
  for (std::int64_t i = 0; i < dwv.delta.size(); ++i) REQUIRE(dwv.delta[i] == c.step);

  c.kind = VaccineKind::Iwv;
  const Vaccine iwv = generate_vaccine(host, c);
  for (std::int64_t i = 0; i < iwv.delta.size(); ++i) REQUIRE(iwv.delta[i] == -c.step);
}

TEST_CASE("projection invariants hold exactly after generation") {
  const RemovalModel& m = wmvac::test::lightly_trained_a();
  Rng rng(7);
  const Tensor host = synth_host(rng, 64, 64);
  VaccineConfig c = base_config(m, VaccineKind::Dwv, 8);
  c.check_projection = true;  // the generator verifies every iteration
  const Vaccine v = generate_vaccine(host, c);
  REQUIRE(v.loss_trace.size() == 9);
  REQUIRE(max_abs(v.delta) <= c.epsilon);
  for (std::int64_t i = 0; i < host.size(); ++i) {
    const float s = host[i] + v.delta[i];
    REQUIRE(s >= 0.0f);
    REQUIRE(s <= 1.0f);
  }
}

TEST_CASE("loss traces move in the intended direction") {
  const RemovalModel& m = wmvac::test::lightly_trained_a();
  Rng rng(8);
  const Tensor host = synth_host(rng, 64, 64);

  const Vaccine dwv = generate_vaccine(host, base_config(m, VaccineKind::Dwv));
  REQUIRE(dwv.loss_trace.back() >= dwv.loss_trace.front());
  REQUIRE(dwv.loss_trace.back() > dwv.loss_trace.front());  // strict between first and last

  const Vaccine iwv = generate_vaccine(host, base_config(m, VaccineKind::Iwv));
  REQUIRE(iwv.loss_trace.back() <= iwv.loss_trace.front());
  REQUIRE(iwv.loss_trace.back() < iwv.loss_trace.front());
}

TEST_CASE("losses are small positive at delta zero for a trained model") {
  const RemovalModel& m = wmvac::test::lightly_trained_a();
  Rng rng(9);
  const Tensor host = synth_host(rng, 64, 64);
  const Tensor zero(host.shape());
  const double dwv = loss_dwv(m, host, zero);
  REQUIRE(dwv > 0.0);
  REQUIRE(dwv < 0.05);  // remover approximately reproduces clean hosts
  const double iwv = loss_iwv(m, host, zero, 2.0f);
  REQUIRE(iwv > 0.0);
}

TEST_CASE("iwv loss decomposes into its two terms") {
  const RemovalModel& m = wmvac::test::lightly_trained_a();
  Rng rng(10);
  const Tensor host = synth_host(rng, 64, 64);
  const Tensor delta = uniform_noise(host.shape(), 4.0f / 255.0f, 11);
  Tensor vaccinated = host;
  for (std::int64_t i = 0; i < vaccinated.size(); ++i)
    vaccinated[i] = std::min(1.0f, std::max(0.0f, vaccinated[i] + delta[i]));
  Tensor clipped_delta = vaccinated;
  for (std::int64_t i = 0; i < clipped_delta.size(); ++i) clipped_delta[i] -= host[i];

  const RemovalOutput out = forward(m, vaccinated);
  const double img_term = mean_squared_error(out.restored, host);
  const double mask_term = mean_squared_error(out.mask, Tensor(out.mask.shape()));
  const float beta = 3.0f;
  REQUIRE_THAT(loss_iwv(m, host, clipped_delta, beta),
               Catch::Matchers::WithinRel(0.5 * (beta * img_term + mask_term), 1e-6));
}

TEST_CASE("loss gradients match finite differences") {
  const RemovalModel& m = wmvac::test::lightly_trained_a();
  const Tensor host = random_tensor(Shape{1, 3, 32, 32}, 12);
  const Tensor delta = uniform_noise(host.shape(), 2.0f / 255.0f, 13);

  Tape tape;
  Var d = tape.leaf(delta, true);
  Var x = tape.add(tape.constant(host), d);
  Var loss = build_vaccine_loss(tape, m, host, x, VaccineKind::Dwv, 2.0f);
  const Tensor ad = tape.backward(loss).at(d);

  auto f = [&](const Tensor& probe) { return loss_dwv(m, host, probe); };
  const GradCheckReport first = gradcheck_against(f, delta, ad, 1e-3, 1e-3, 2);
  auto ref = [&](const Tensor& probe) {
    return wmvac::test::reference_vaccine_loss(m, host, probe, VaccineKind::Dwv, 2.0);
  };
  const wmvac::test::EscalatedGradCheck report =
      wmvac::test::escalate_gradcheck(first, ref, delta, ad, 1e-3, 1e-3);
  REQUIRE(report.max_rel_error < 1e-3);
  // relu kinks invalidate the oracle on at most a small fraction of entries
  REQUIRE(report.excluded < report.checked / 10);
}

TEST_CASE("generation is deterministic") {
  const RemovalModel& m = wmvac::test::lightly_trained_a();
  Rng rng(14);
  const Tensor host = synth_host(rng, 64, 64);
  const Vaccine v1 = generate_vaccine(host, base_config(m, VaccineKind::Iwv, 6));
  const Vaccine v2 = generate_vaccine(host, base_config(m, VaccineKind::Iwv, 6));
  REQUIRE(bit_equal(v1.delta, v2.delta));
  REQUIRE(v1.loss_trace == v2.loss_trace);
}

TEST_CASE("stacking one model degenerates to the single-model vaccine") {
  const RemovalModel& m = wmvac::test::lightly_trained_a();
  Rng rng(15);
  const Tensor host = synth_host(rng, 64, 64);
  VaccineConfig c = base_config(m, VaccineKind::Dwv, 5);
  const Vaccine single = generate_vaccine(host, c);
  const Vaccine stacked = stack({&m}, host, c);
  REQUIRE(bit_equal(single.delta, stacked.delta));
}

TEST_CASE("stacked vaccines obey the same projection invariants") {
  const RemovalModel& m1 = wmvac::test::lightly_trained_a();
  const RemovalModel m2 = build_variant(NetVariant::C, 31);
  Rng rng(16);
  const Tensor host = synth_host(rng, 64, 64);
  VaccineConfig c;
  c.kind = VaccineKind::Dwv;
  c.iterations = 6;
  c.check_projection = true;
  const Vaccine v = stack({&m1, &m2}, host, c);
  REQUIRE(max_abs(v.delta) <= c.epsilon);
  for (std::int64_t i = 0; i < host.size(); ++i) {
    const float s = host[i] + v.delta[i];
    REQUIRE(s >= 0.0f);
    REQUIRE(s <= 1.0f);
  }
}

TEST_CASE("vaccinated image is host plus delta") {
  const RemovalModel& m = wmvac::test::lightly_trained_a();
  Rng rng(17);
  const Tensor host = synth_host(rng, 64, 64);
  const Vaccine v = generate_vaccine(host, base_config(m, VaccineKind::Dwv, 3));
  const Tensor img = vaccinated_image(host, v);
  for (std::int64_t i = 0; i < img.size(); ++i) REQUIRE(img[i] == host[i] + v.delta[i]);
}
