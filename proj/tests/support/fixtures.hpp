#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

#include "wmvac/removal_net.hpp"

namespace wmvac::test {

// A lightly trained variant-A model shared by test binaries. Training is
// deterministic, so the on-disk cache is interchangeable with retraining;
// writers go through a temp file + rename so concurrent test binaries can
// race safely.
inline const RemovalModel& lightly_trained_a() {
  static const RemovalModel model = [] {
    namespace fs = std::filesystem;
    const char* env = std::getenv("WMVAC_TEST_CACHE_DIR");
    const fs::path dir = env ? fs::path(env) : fs::path("wmvac_test_cache");
    const fs::path path = dir / "fixture_a_300.ckpt";
    if (fs::exists(path)) {
      try {
        return load_checkpoint(path.string(), NetVariant::A);
      } catch (const std::exception&) {
        // stale or corrupt cache; retrain below
      }
    }
    TrainOptions opt;
    opt.steps = 300;
    opt.batch = 8;
    opt.val_size = 32;
    opt.val_interval = 50;
    RemovalModel m = train(NetVariant::A, 4242, 2424, opt);
    fs::create_directories(dir);
    const fs::path tmp = path.string() + "." + std::to_string(::getpid()) + ".tmp";
    save_checkpoint(m, tmp.string());
    fs::rename(tmp, path);
    return m;
  }();
  return model;
}

}  // namespace wmvac::test
