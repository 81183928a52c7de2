#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sdr/io.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "sdr_cli_test";

struct Run {
  int code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Run sdr_cli(const std::string& args, const std::string& env = "") {
  const auto out = kRoot / "stdout.txt", err = kRoot / "stderr.txt";
  const std::string cmd = env + " \"" SDR_CLI_PATH "\" " + args + " > \"" + out.string() + "\" 2> \"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

std::string p(const fs::path& x) { return "\"" + x.string() + "\""; }

struct Fixture {
  Fixture() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
  }
};

}  // namespace

TEST_CASE_FIXTURE(Fixture, "usage errors exit 2, help exits 0") {
  CHECK(sdr_cli("").code == 2);
  CHECK(sdr_cli("frobnicate").code == 2);
  CHECK(sdr_cli("gen --n 16").code == 2);
  CHECK(sdr_cli("gen --n abc --out " + p(kRoot / "x")).code == 2);
  CHECK(sdr_cli("gen --n 10 --out " + p(kRoot / "x")).code == 2);
  CHECK(sdr_cli("verify --case nothing").code == 2);
  const auto help = sdr_cli("--help");
  CHECK(help.code == 0);
  for (const char* cmd : {"gen", "train", "eval", "verify", "check-equivariance", "sweep", "gradcheck"}) {
    CHECK(help.out.find(cmd) != std::string::npos);
  }
}

TEST_CASE_FIXTURE(Fixture, "gen writes a reproducible dataset") {
  const auto a = kRoot / "a", b = kRoot / "b";
  REQUIRE(sdr_cli("gen --seed 5 --train 4 --val 2 --test 2 --out " + p(a)).code == 0);
  REQUIRE(sdr_cli("gen --seed 5 --train 4 --val 2 --test 2 --out " + p(b)).code == 0);
  const auto rows = sdr::read_manifest(a / "manifest.csv");
  CHECK(rows.size() == 8);
  for (const auto& r : rows) CHECK(slurp(a / r.filename) == slurp(b / r.filename));
  CHECK(slurp(a / "manifest.csv") == slurp(b / "manifest.csv"));
  CHECK(sdr::read_sdi(a / rows[0].filename).n() == 16);
  CHECK(slurp(a / "gen_config.txt").find("seed = 5") != std::string::npos);
  CHECK_FALSE(fs::exists(a / ".lock"));
}

TEST_CASE_FIXTURE(Fixture, "train, eval and their error paths") {
  const auto data = kRoot / "data", run = kRoot / "run", pw = kRoot / "pw", ev = kRoot / "eval";
  REQUIRE(sdr_cli("gen --seed 1 --train 8 --val 2 --test 3 --out " + p(data)).code == 0);

  const auto cfg = kRoot / "cfg.txt";
  std::ofstream(cfg) << "# small run\nbase_channels = 2\nepochs = 5\n";
  const auto t = sdr_cli("train --data " + p(data) + " --out " + p(run) + " --config " + p(cfg) + " --epochs 1");
  INFO(t.err);
  REQUIRE(t.code == 0);
  for (const char* f : {"checkpoint.sdck", "history.csv", "config.txt", "train.log"}) CHECK(fs::exists(run / f));
  const auto resolved = slurp(run / "config.txt");
  CHECK(resolved.find("epochs = 1\n") != std::string::npos);
  CHECK(resolved.find("base_channels = 2\n") != std::string::npos);
  CHECK(resolved.find("lr = 0.0004\n") != std::string::npos);
  CHECK(sdr::read_checkpoint(run / "checkpoint.sdck").config_text == resolved);

  const auto bad_cfg = kRoot / "bad.txt";
  std::ofstream(bad_cfg) << "learning_rate = 1\n";
  CHECK(sdr_cli("train --data " + p(data) + " --out " + p(kRoot / "r2") + " --config " + p(bad_cfg)).code == 2);

  const auto patch2 = sdr_cli("train --data " + p(data) + " --out " + p(kRoot / "r3") + " --mode patch --patch 2");
  CHECK(patch2.code == 2);
  CHECK(patch2.err.find("three stride-2 downsamplings") != std::string::npos);

  REQUIRE(sdr_cli("train --data " + p(data) + " --out " + p(pw) +
                  " --mode patch --patch 8 --epochs 1 --base-channels 2")
              .code == 0);

  const auto e = sdr_cli("eval --data " + p(data) + " --model " + p(run / "checkpoint.sdck") + " --patch-model " +
                         p(pw / "checkpoint.sdck") + " --out " + p(ev));
  INFO(e.err);
  REQUIRE(e.code == 0);
  const auto metrics = slurp(ev / "metrics.csv");
  CHECK(metrics.rfind("label,mse_mean,mse_std,ssim_mean,ssim_std,psnr_mean,psnr_std\n", 0) == 0);
  CHECK(metrics.find("\nbilinear,") != std::string::npos);
  CHECK(metrics.find("\npatch-wise,") != std::string::npos);
  CHECK(metrics.find("\nsparse-dense,") != std::string::npos);
  CHECK(fs::exists(ev / "panel_0002.pgm"));
  CHECK(slurp(ev / "panel_0000.pgm").rfind("P5\n67 16\n255\n", 0) == 0);

  const auto ev2 = kRoot / "eval2";
  REQUIRE(sdr_cli("eval --data " + p(data) + " --model " + p(run / "checkpoint.sdck") + " --patch-model " +
                  p(pw / "checkpoint.sdck") + " --out " + p(ev2))
              .code == 0);
  CHECK(slurp(ev / "metrics.csv") == slurp(ev2 / "metrics.csv"));
  CHECK(slurp(ev / "panel_0001.pgm") == slurp(ev2 / "panel_0001.pgm"));

  CHECK(sdr_cli("eval --data " + p(data) + " --model " + p(kRoot / "nope.sdck") + " --out " + p(ev)).code == 1);

  fs::create_directories(kRoot / "locked");
  std::ofstream(kRoot / "locked" / ".lock") << "";
  const auto locked = sdr_cli("train --data " + p(data) + " --out " + p(kRoot / "locked") + " --epochs 1 --base-channels 2");
  CHECK(locked.code == 1);
  CHECK(locked.err.find("locked") != std::string::npos);
}

TEST_CASE_FIXTURE(Fixture, "verify runs the suites and enforces the cap") {
  const auto q = sdr_cli("verify --case quadrant --csv " + p(kRoot / "q.csv"));
  CHECK(q.code == 0);
  CHECK(slurp(kRoot / "q.csv").rfind("case_id,check,max_abs_error,holds\n", 0) == 0);
  const auto capped = sdr_cli("verify --case ssdu-2x2 --cap 10");
  CHECK(capped.code == 3);
  CHECK(capped.err.find("cap 10") != std::string::npos);
}

TEST_CASE_FIXTURE(Fixture, "check-equivariance reports guaranteed and measured shifts") {
  const auto r = sdr_cli("check-equivariance --n 16 --trials 1 --shifts 2 --base-channels 2");
  CHECK(r.code == 0);
  CHECK(r.out.find("shift (1,0)") != std::string::npos);
  CHECK(r.out.find("measured") != std::string::npos);
  CHECK(r.out.find("FAIL") == std::string::npos);
  CHECK(sdr_cli("check-equivariance --n 12").code == 2);
}

TEST_CASE_FIXTURE(Fixture, "sweep emits one CSV row per configuration") {
  const auto csv = kRoot / "sweep.csv";
  const auto r = sdr_cli("sweep --epochs 1 --base-channels 2 --train 8 --val 2 --test 5 --out " + p(csv),
                         "SD_DETERMINISTIC=1");
  INFO(r.err);
  REQUIRE(r.code == 0);
  std::istringstream in(slurp(csv));
  std::string line;
  std::getline(in, line);
  CHECK(line == "mode,patch,train_images,test_images,test_mse_mean,test_mse_std,best_val_loss");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 4);
}

TEST_CASE_FIXTURE(Fixture, "gradcheck passes") {
  const auto r = sdr_cli("gradcheck --base-channels 2 --coords 5");
  CHECK(r.code == 0);
  CHECK(r.out.find("PASS") != std::string::npos);
}
