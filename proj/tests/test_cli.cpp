#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "idnf/math.hpp"

#ifndef IDNF_BIN
#error "IDNF_BIN must point at the idnf executable"
#endif

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;
};

CliResult run_cli(const std::string& args) {
  const std::string out_file = "cli_stdout.txt";
  const std::string cmd = std::string(IDNF_BIN) + " " + args + " > " + out_file + " 2>&1";
  const int raw = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WEXITSTATUS(raw);
  std::ifstream in(out_file);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::path("cli_tmp") / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& rel) const { return (path / rel).string(); }
};

const char* kTinyConfig =
    "dataset = two_moons\n"
    "iterations = 30\n"
    "batch_size = 16\n"
    "blocks = 2\n"
    "depth = 2\n"
    "growth = 6\n"
    "eval_every = 15\n"
    "test_points = 100\n"
    "seed = 3\n";

const char* kIdentityConfig =
    "dataset = gaussian\n"
    "iterations = 0\n"
    "batch_size = 16\n"
    "blocks = 0\n"
    "depth = 1\n"
    "growth = 1\n"
    "test_points = 100\n"
    "seed = 3\n";

}  // namespace

TEST_CASE("train: zero iterations still writes a checkpoint") {
  TempDir dir("train0");
  write_file(dir / "cfg", std::string(kIdentityConfig));
  CliResult r = run_cli("train --config " + (dir / "cfg") + " --out " + (dir / "out"));
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(dir / "out/model.ckpt"));
  CHECK(fs::exists(dir / "out/model.eval.csv"));
}

TEST_CASE("train: config errors exit 2 naming the offending line") {
  TempDir dir("badcfg");

  SUBCASE("missing dataset") {
    write_file(dir / "cfg", "iterations = 5\n");
    CliResult r = run_cli("train --config " + (dir / "cfg"));
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("dataset") != std::string::npos);
  }
  SUBCASE("unknown key") {
    write_file(dir / "cfg", "dataset = two_moons\nlearning_rte = 0.01\n");
    CliResult r = run_cli("train --config " + (dir / "cfg"));
    CHECK(r.exit_code == 2);
    CHECK(r.output.find(":2") != std::string::npos);
    CHECK(r.output.find("learning_rte") != std::string::npos);
  }
  SUBCASE("malformed line") {
    write_file(dir / "cfg", "dataset = two_moons\njust words\n");
    CliResult r = run_cli("train --config " + (dir / "cfg"));
    CHECK(r.exit_code == 2);
    CHECK(r.output.find(":2") != std::string::npos);
  }
  SUBCASE("missing file") {
    CliResult r = run_cli("train --config " + (dir / "nope.cfg"));
    CHECK(r.exit_code == 2);
  }
}

TEST_CASE("train: smoke run produces checkpoint and eval log") {
  TempDir dir("smoke");
  write_file(dir / "cfg", std::string(kTinyConfig));
  CliResult r = run_cli("train --config " + (dir / "cfg") + " --out " + (dir / "out"));
  REQUIRE(r.exit_code == 0);

  std::ifstream log(dir / "out/model.eval.csv");
  std::string header, row, last;
  std::getline(log, header);
  CHECK(header == "iter,train_nll,test_nll,seconds");
  int rows = 0;
  while (std::getline(log, row)) {
    ++rows;
    last = row;
  }
  CHECK(rows == 2);  // evals at 15 and 30
  CHECK(last.substr(0, 3) == "30,");
}

TEST_CASE("train: repeated runs are byte-identical") {
  TempDir dir("det");
  write_file(dir / "cfg", std::string(kTinyConfig));
  CliResult a = run_cli("train --config " + (dir / "cfg") + " --out " + (dir / "a"));
  CliResult b = run_cli("train --config " + (dir / "cfg") + " --out " + (dir / "b"));
  REQUIRE(a.exit_code == 0);
  REQUIRE(b.exit_code == 0);
  CHECK(slurp(dir / "a/model.ckpt") == slurp(dir / "b/model.ckpt"));

  // a different seed must change the parameters
  CliResult c = run_cli("train --config " + (dir / "cfg") + " --seed 77 --out " + (dir / "c"));
  REQUIRE(c.exit_code == 0);
  CHECK(slurp(dir / "a/model.ckpt") != slurp(dir / "c/model.ckpt"));
}

TEST_CASE("eval: identity checkpoint on the Gaussian baseline") {
  TempDir dir("eval");
  write_file(dir / "cfg", std::string(kIdentityConfig));
  REQUIRE(run_cli("train --config " + (dir / "cfg") + " --out " + (dir / "out")).exit_code == 0);

  CliResult r = run_cli("eval --checkpoint " + (dir / "out/model.ckpt") + " --data gaussian" +
                        " --n 20000 --out " + (dir / "out"));
  REQUIRE(r.exit_code == 0);
  std::ifstream csv(dir / "out/eval.csv");
  std::string header, row;
  std::getline(csv, header);
  std::getline(csv, row);
  CHECK(header == "dataset,n,nll_nats");
  const double nll = std::strtod(row.substr(row.rfind(',') + 1).c_str(), nullptr);
  CHECK(std::fabs(nll - (1.0 + idnf::kLn2Pi)) < 0.03);  // 2.8379 nats
}

TEST_CASE("eval: missing checkpoint exits 2") {
  CliResult r = run_cli("eval --checkpoint no_such.ckpt");
  CHECK(r.exit_code == 2);
}

TEST_CASE("sample: n = 0 writes only the header") {
  TempDir dir("sample0");
  write_file(dir / "cfg", std::string(kIdentityConfig));
  REQUIRE(run_cli("train --config " + (dir / "cfg") + " --out " + (dir / "out")).exit_code == 0);

  CliResult r = run_cli("sample --checkpoint " + (dir / "out/model.ckpt") + " --n 0 --out " +
                        (dir / "out"));
  CHECK(r.exit_code == 0);
  CHECK(slurp(dir / "out/samples.csv") == "x1,x2\n");

  // fixed seed, identical bytes
  REQUIRE(run_cli("sample --checkpoint " + (dir / "out/model.ckpt") + " --n 64 --seed 9 --out " +
                  (dir / "a")).exit_code == 0);
  REQUIRE(run_cli("sample --checkpoint " + (dir / "out/model.ckpt") + " --n 64 --seed 9 --out " +
                  (dir / "b")).exit_code == 0);
  CHECK(slurp(dir / "a/samples.csv") == slurp(dir / "b/samples.csv"));
}

TEST_CASE("density: identity model peaks at the origin with the Gaussian mode value") {
  TempDir dir("density");
  write_file(dir / "cfg", std::string(kIdentityConfig));
  REQUIRE(run_cli("train --config " + (dir / "cfg") + " --out " + (dir / "out")).exit_code == 0);

  // odd resolution on symmetric bounds puts a grid point exactly at (0,0)
  CliResult r = run_cli("density --checkpoint " + (dir / "out/model.ckpt") +
                        " --resolution 41 --out " + (dir / "out"));
  REQUIRE(r.exit_code == 0);

  std::ifstream csv(dir / "out/density.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "x1,x2,density");
  double best = -1.0, best_x1 = 99, best_x2 = 99;
  while (std::getline(csv, line)) {
    const auto c1 = line.find(','), c2 = line.rfind(',');
    const double x1 = std::strtod(line.substr(0, c1).c_str(), nullptr);
    const double x2 = std::strtod(line.substr(c1 + 1, c2 - c1 - 1).c_str(), nullptr);
    const double d = std::strtod(line.substr(c2 + 1).c_str(), nullptr);
    if (d > best) {
      best = d;
      best_x1 = x1;
      best_x2 = x2;
    }
  }
  CHECK(std::fabs(best_x1) < 1e-12);  // grid point nearest the origin
  CHECK(std::fabs(best_x2) < 1e-12);
  CHECK(best == doctest::Approx(1.0 / (2.0 * idnf::kPi)).epsilon(1e-12));  // (2 pi)^-1
}

TEST_CASE("density: Riemann sum of the CSV integrates to one") {
  TempDir dir("integ");
  write_file(dir / "cfg", std::string(kIdentityConfig));
  REQUIRE(run_cli("train --config " + (dir / "cfg") + " --out " + (dir / "out")).exit_code == 0);
  REQUIRE(run_cli("density --checkpoint " + (dir / "out/model.ckpt") +
                  " --resolution 121 --out " + (dir / "out")).exit_code == 0);

  std::ifstream csv(dir / "out/density.csv");
  std::string line;
  std::getline(csv, line);
  double sum = 0.0;
  while (std::getline(csv, line)) sum += std::strtod(line.substr(line.rfind(',') + 1).c_str(), nullptr);
  const double cell = 12.0 / 120.0;  // [-6,6]^2 at resolution 121
  CHECK(std::fabs(sum * cell * cell - 1.0) < 0.02);
}

TEST_CASE("density: PGM header is bit-exact") {
  TempDir dir("pgm");
  write_file(dir / "cfg", std::string(kIdentityConfig));
  REQUIRE(run_cli("train --config " + (dir / "cfg") + " --out " + (dir / "out")).exit_code == 0);
  REQUIRE(run_cli("density --checkpoint " + (dir / "out/model.ckpt") +
                  " --resolution 300 --out " + (dir / "out")).exit_code == 0);

  std::string pgm = slurp(dir / "out/density.pgm");
  const std::string header = "P5\n300 300\n255\n";
  REQUIRE(pgm.size() == header.size() + 300 * 300);
  CHECK(pgm.substr(0, header.size()) == header);
}

TEST_CASE("invert-check: identity model has zero error") {
  TempDir dir("invert");
  write_file(dir / "cfg", std::string(kIdentityConfig));
  REQUIRE(run_cli("train --config " + (dir / "cfg") + " --out " + (dir / "out")).exit_code == 0);

  CliResult r = run_cli("invert-check --checkpoint " + (dir / "out/model.ckpt") +
                        " --n 100 --tol 1e-5 --out " + (dir / "out"));
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("max_roundtrip_error 0") != std::string::npos);
  CHECK(r.output.find("PASS") != std::string::npos);
}

TEST_CASE("invert-check: corrupted checkpoint is rejected") {
  TempDir dir("corrupt");
  write_file(dir / "cfg", std::string(kTinyConfig));
  REQUIRE(run_cli("train --config " + (dir / "cfg") + " --out " + (dir / "out")).exit_code == 0);

  // flip the embedded coeff echo to an out-of-range value (same byte length)
  std::string bytes = slurp(dir / "out/model.ckpt");
  const std::string needle = "\ncoeff=0.9";
  auto pos = bytes.find(needle);
  REQUIRE(pos != std::string::npos);
  bytes[pos + 7] = '1';  // coeff=1.9...
  std::ofstream out(dir / "out/bad.ckpt", std::ios::binary);
  out << bytes;
  out.close();

  CliResult r = run_cli("invert-check --checkpoint " + (dir / "out/bad.ckpt") + " --n 10");
  CHECK(r.exit_code != 0);
}

TEST_CASE("eta-report: one row per block and layer") {
  TempDir dir("eta");
  write_file(dir / "cfg", std::string(kTinyConfig));
  REQUIRE(run_cli("train --config " + (dir / "cfg") + " --out " + (dir / "out")).exit_code == 0);

  CliResult r = run_cli("eta-report --checkpoint " + (dir / "out/model.ckpt") + " --out " +
                        (dir / "out"));
  REQUIRE(r.exit_code == 0);
  std::ifstream csv(dir / "out/eta_report.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "block,layer,eta1_hat,eta2_hat,dominant");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 2 * 2);  // blocks x depth

  // fixed-mode checkpoints carry the notice
  write_file(dir / "cfg2", std::string(kTinyConfig) + "mode = fixed\n");
  REQUIRE(run_cli("train --config " + (dir / "cfg2") + " --out " + (dir / "fixed")).exit_code ==
          0);
  CliResult fixed = run_cli("eta-report --checkpoint " + (dir / "fixed/model.ckpt") + " --out " +
                            (dir / "fixed"));
  CHECK(fixed.exit_code == 0);
  CHECK(fixed.output.find("notice") != std::string::npos);
}

TEST_CASE("artifact paths are confined to the output directory") {
  TempDir dir("confine");
  write_file(dir / "cfg", std::string(kIdentityConfig) + "checkpoint_path = ../escape.ckpt\n");
  CliResult r = run_cli("train --config " + (dir / "cfg") + " --out " + (dir / "out"));
  CHECK(r.exit_code == 2);
  CHECK_FALSE(fs::exists(dir / "escape.ckpt"));
}
