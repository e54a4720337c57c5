#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "emir/harness.hpp"
#include "test_common.hpp"

using namespace emir;

namespace {
namespace fs = std::filesystem;

RunConfig tiny_run() {
  RunConfig cfg;
  cfg.model.levels = 1;
  cfg.model.widths = {4};
  cfg.model.heads = {2};
  cfg.model.ks = {2};
  cfg.model.state_size = 2;
  cfg.model.bins = 2;
  cfg.crop = 16;
  cfg.pairs = 2;
  cfg.frames = 3;
  cfg.steps = 4;
  cfg.log_every = 1;
  cfg.seed = 11;
  return cfg;
}

std::string scratch(const std::string& leaf) {
  const auto dir = fs::temp_directory_path() / "emir_harness_test";
  fs::create_directories(dir);
  return (dir / leaf).string();
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  return std::string((std::istreambuf_iterator<char>(is)), {});
}
}  // namespace

TEST_CASE("synthetic pairs: deterministic, shaped, in range") {
  RunConfig cfg = tiny_run();
  SamplePair a = make_synthetic_pair(cfg, 99);
  SamplePair b = make_synthetic_pair(cfg, 99);
  CHECK(a.blurry.data() == b.blurry.data());
  CHECK(a.sharp.data() == b.sharp.data());
  CHECK(a.stream == b.stream);
  CHECK(a.blurry.shape() == Shape{1, 16, 16});
  CHECK(a.sharp.shape() == Shape{1, 16, 16});
  CHECK(a.voxel.data.shape() == Shape{2, 16, 16});
  for (double v : a.sharp.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  SamplePair c = make_synthetic_pair(cfg, 100);
  CHECK(c.blurry.data() != a.blurry.data());
}

TEST_CASE("synthetic pairs: static scene means sharp==blurry, no events") {
  RunConfig cfg = tiny_run();
  cfg.motion = 0.0;
  SamplePair sp = make_synthetic_pair(cfg, 5);
  CHECK(sp.stream.events.empty());
  for (std::int64_t i = 0; i < sp.sharp.numel(); ++i)
    CHECK(sp.blurry.data()[i] ==
          doctest::Approx(sp.sharp.data()[i]).epsilon(1e-12));
}

TEST_CASE("synthetic pairs: motion produces events and blur") {
  RunConfig cfg = tiny_run();
  cfg.crop = 16;
  cfg.motion = 2.0;
  SamplePair sp = make_synthetic_pair(cfg, 5);
  CHECK(!sp.stream.events.empty());
  double diff = 0.0;
  for (std::int64_t i = 0; i < sp.sharp.numel(); ++i)
    diff += std::fabs(sp.blurry.data()[i] - sp.sharp.data()[i]);
  CHECK(diff > 0.0);
}

TEST_CASE("dataset io round trip") {
  RunConfig cfg = tiny_run();
  auto ds = make_dataset(cfg);
  REQUIRE(ds.size() == 2);
  const std::string dir = scratch("ds");
  write_dataset(ds, dir);
  auto back = load_dataset(dir, cfg.model.bins);
  REQUIRE(back.size() == ds.size());
  for (size_t i = 0; i < ds.size(); ++i) {
    // images ride through a 32-bit container
    for (std::int64_t j = 0; j < ds[i].blurry.numel(); ++j) {
      CHECK(back[i].blurry.data()[j] ==
            doctest::Approx(ds[i].blurry.data()[j]).epsilon(1e-6));
      CHECK(back[i].sharp.data()[j] ==
            doctest::Approx(ds[i].sharp.data()[j]).epsilon(1e-6));
    }
    // events are lossless, so the rebuilt voxel matches bitwise
    CHECK(back[i].stream == ds[i].stream);
    CHECK(back[i].voxel.data.data() == ds[i].voxel.data.data());
  }
  CHECK_THROWS(load_dataset(scratch("missing"), 2));
}

TEST_CASE("run config file: parsing, defaults, errors") {
  const std::string path = scratch("run.cfg");
  {
    std::ofstream os(path);
    os << "# toy settings\n"
       << "levels = 2\n"
       << "k = 3          # applies to every level\n"
       << "steps = 12\n"
       << "crop = 16\n"
       << "seed = 123\n"
       << "lr_init = 1e-3\n"
       << "noise_rate = 0.25\n";
  }
  RunConfig cfg = load_run_config(path);
  CHECK(cfg.model.levels == 2);
  CHECK(cfg.model.widths == std::vector<int>{16, 32});  // defaulted
  CHECK(cfg.model.heads == std::vector<int>{2, 2});
  CHECK(cfg.model.ks == std::vector<std::int64_t>{3, 3});
  CHECK(cfg.steps == 12);
  CHECK(cfg.seed == 123);
  CHECK(cfg.opt.lr_init == 1e-3);
  CHECK(cfg.noise_rate == 0.25);

  {
    std::ofstream os(scratch("bad.cfg"));
    os << "steps = 5\nwat = 1\n";
  }
  try {
    load_run_config(scratch("bad.cfg"));
    CHECK(false);
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS(load_run_config(scratch("nope.cfg")));
}

TEST_CASE("EMIR_SEED overrides the configured seed") {
  RunConfig cfg = tiny_run();
  unsetenv("EMIR_SEED");
  apply_env_seed(cfg);
  CHECK(cfg.seed == 11);
  setenv("EMIR_SEED", "777", 1);
  apply_env_seed(cfg);
  CHECK(cfg.seed == 777);
  unsetenv("EMIR_SEED");
}

TEST_CASE("train: smoke run updates params and writes a checkpoint") {
  RunConfig cfg = tiny_run();
  ParamStore store;
  OptimizerState opt;
  TrainResult res = train(cfg, store, opt, scratch("t1"));
  CHECK(std::isfinite(res.initial_loss));
  CHECK(std::isfinite(res.final_loss));
  CHECK(res.loss_curve.size() == 4);
  CHECK(opt.step == 4);
  CHECK(fs::exists(scratch("t1") + "/checkpoint.ckpt"));
  // parameters moved away from the seed-initialization
  ParamStore fresh;
  Rng rng(cfg.seed);
  unet_init(fresh, cfg.model, rng);
  CHECK(store.at("head.w").data() != fresh.at("head.w").data());
}

TEST_CASE("train: zero steps checkpoints the untouched initialization") {
  RunConfig cfg = tiny_run();
  cfg.steps = 0;
  ParamStore store;
  OptimizerState opt;
  train(cfg, store, opt, scratch("t0"));
  ParamStore fresh;
  Rng rng(cfg.seed);
  unet_init(fresh, cfg.model, rng);
  for (const auto& [k, v] : fresh.params)
    CHECK(store.at(k).data() == v.data());
}

TEST_CASE("train: identical config and seed give identical checkpoints") {
  RunConfig cfg = tiny_run();
  ParamStore s1, s2;
  OptimizerState o1, o2;
  train(cfg, s1, o1, scratch("d1"));
  train(cfg, s2, o2, scratch("d2"));
  CHECK(slurp(scratch("d1") + "/checkpoint.ckpt") ==
        slurp(scratch("d2") + "/checkpoint.ckpt"));
}

TEST_CASE("train: interrupted + resumed equals uninterrupted, bitwise") {
  RunConfig cfg = tiny_run();
  cfg.steps = 6;
  ParamStore full;
  OptimizerState of;
  train(cfg, full, of, scratch("full"));

  RunConfig half = cfg;
  half.steps = 3;
  ParamStore part;
  OptimizerState op;
  train(half, part, op, scratch("half"));
  ParamStore resumed;
  OptimizerState orr;
  train(cfg, resumed, orr, scratch("resumed"),
        scratch("half") + "/checkpoint.ckpt");
  CHECK(slurp(scratch("full") + "/checkpoint.ckpt") ==
        slurp(scratch("resumed") + "/checkpoint.ckpt"));
}

TEST_CASE("evaluate: fresh model is the identity, report written") {
  RunConfig cfg = tiny_run();
  ParamStore store;
  Rng rng(cfg.seed);
  unet_init(store, cfg.model, rng);
  auto data = make_dataset(cfg);
  MetricsReport rep = evaluate(cfg.model, store, data, scratch("ev"));
  REQUIRE(rep.psnr_restored.size() == data.size());
  for (size_t i = 0; i < data.size(); ++i)
    CHECK(rep.psnr_restored[i] == rep.psnr_baseline[i]);
  CHECK(fs::exists(scratch("ev") + "/report.txt"));
  CHECK(fs::exists(scratch("ev") + "/restored000.etsr"));
  Tensor r0 = read_etsr(scratch("ev") + "/restored000.etsr");
  CHECK(r0.shape() == data[0].blurry.shape());
}

TEST_CASE("ablate_k: rows, table, constant parameter count") {
  RunConfig cfg = tiny_run();
  cfg.steps = 2;
  auto rows = ablate_k(cfg, {1, 2}, scratch("ab"));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].k == 1);
  CHECK(rows[1].k == 2);
  CHECK(rows[0].param_count == rows[1].param_count);
  CHECK(fs::exists(scratch("ab") + "/ablation.txt"));
  const std::string table = slurp(scratch("ab") + "/ablation.txt");
  CHECK(table.find("param_count") != std::string::npos);
}

TEST_CASE("cli: simulate, train, eval round trip") {
  const std::string cfg_path = scratch("cli.cfg");
  {
    std::ofstream os(cfg_path);
    os << "levels = 1\nwidths = 4\nheads = 2\nk = 2\nstate_size = 2\n"
       << "bins = 2\ncrop = 16\npairs = 2\nframes = 3\nsteps = 2\nseed = 3\n";
  }
  const std::string cli = EMIR_CLI_PATH;
  auto run = [&](const std::string& args) {
    return std::system((cli + " " + args + " > /dev/null 2>&1").c_str());
  };
  CHECK(run("simulate --config " + cfg_path + " --out " + scratch("cli_ds")) ==
        0);
  CHECK(fs::exists(scratch("cli_ds") + "/pair000_blurry.etsr"));
  CHECK(fs::exists(scratch("cli_ds") + "/pair001_events.csv"));
  CHECK(run("train --config " + cfg_path + " --data " + scratch("cli_ds") +
            " --out " + scratch("cli_tr")) == 0);
  CHECK(fs::exists(scratch("cli_tr") + "/checkpoint.ckpt"));
  CHECK(run("eval --config " + cfg_path + " --ckpt " + scratch("cli_tr") +
            "/checkpoint.ckpt --data " + scratch("cli_ds") + " --out " +
            scratch("cli_ev")) == 0);
  CHECK(fs::exists(scratch("cli_ev") + "/report.txt"));
  CHECK(run("train --config " + scratch("nope.cfg") + " --out " +
            scratch("cli_x")) != 0);  // clean error path
}
