#include "idnf/toydata.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "idnf/errors.hpp"
#include "idnf/math.hpp"

namespace idnf {

namespace {

// Two concentric circles (radius 1 and `factor`), jittered and scaled.
Matrix gen_circles(int n, RandomSource& rng, const ToyParams& p) {
  Matrix pts(n, 2);
  for (int i = 0; i < n; ++i) {
    const bool outer = (i % 2) == 0;  // even split, order then shuffled by angle draw
    const double r = outer ? 1.0 : p.circles_factor;
    const double theta = rng.uniform(0.0, 2.0 * kPi);
    const double x = r * std::cos(theta) + p.circles_noise * rng.normal();
    const double y = r * std::sin(theta) + p.circles_noise * rng.normal();
    pts(i, 0) = p.circles_scale * x;
    pts(i, 1) = p.circles_scale * y;
  }
  return pts;
}

// Two interleaved half-circles, scaled then centered.
Matrix gen_moons(int n, RandomSource& rng, const ToyParams& p) {
  Matrix pts(n, 2);
  for (int i = 0; i < n; ++i) {
    const bool upper = (i % 2) == 0;
    const double t = rng.uniform(0.0, kPi);
    double x, y;
    if (upper) {
      x = std::cos(t);
      y = std::sin(t);
    } else {
      x = 1.0 - std::cos(t);
      y = 0.5 - std::sin(t);
    }
    x += p.moons_noise * rng.normal();
    y += p.moons_noise * rng.normal();
    pts(i, 0) = p.moons_scale * x + p.moons_shift_x;
    pts(i, 1) = p.moons_scale * y + p.moons_shift_y;
  }
  return pts;
}

// 4x4 board over [-scale*2, scale*2]^2 with only even-parity cells occupied.
Matrix gen_checkerboard(int n, RandomSource& rng, const ToyParams& p) {
  Matrix pts(n, 2);
  for (int i = 0; i < n; ++i) {
    const double x1 = rng.uniform(-2.0, 2.0);
    const double low = rng.uniform() - 2.0 * static_cast<double>(rng.below(2));
    const double offset = static_cast<double>(static_cast<long long>(std::floor(x1)) & 1);
    pts(i, 0) = p.checker_scale * x1;
    pts(i, 1) = p.checker_scale * (low + offset);
  }
  return pts;
}

Matrix gen_gaussian(int n, RandomSource& rng) {
  Matrix pts(n, 2);
  for (int i = 0; i < n; ++i) {
    pts(i, 0) = rng.normal();
    pts(i, 1) = rng.normal();
  }
  return pts;
}

constexpr int kEvalChunk = 256;

}  // namespace

ToyDataset generate(const std::string& name, int n, RandomSource& rng, const ToyParams& params) {
  if (n < 1) throw ConfigError("generate: n must be >= 1");
  ToyDataset out;
  out.name = name;
  out.seed = rng.seed();
  if (name == "two_circles")
    out.points = gen_circles(n, rng, params);
  else if (name == "two_moons")
    out.points = gen_moons(n, rng, params);
  else if (name == "checkerboard")
    out.points = gen_checkerboard(n, rng, params);
  else if (name == "gaussian")
    out.points = gen_gaussian(n, rng);
  else
    throw ConfigError("generate: unknown dataset '" + name + "'");
  return out;
}

double nll_nats(FlowModel& model, const ToyDataset& data) {
  const int n = data.size();
  if (n == 0) throw ConfigError("nll_nats: empty dataset");
  double sum = 0.0;
  for (int i0 = 0; i0 < n; i0 += kEvalChunk) {
    const int cols = std::min(kEvalChunk, n - i0);
    Matrix x = data.points.middleRows(i0, cols).transpose();
    Eigen::RowVectorXd ll = log_likelihood_batch(x, model);
    for (int j = 0; j < cols; ++j) sum += -ll(j);
  }
  return sum / static_cast<double>(n);
}

void write_csv(const ToyDataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("write_csv: cannot open " + path);
  out << "x1,x2\n";
  char buf[80];
  for (int i = 0; i < data.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", data.points(i, 0), data.points(i, 1));
    out << buf;
  }
  if (!out) throw IoError("write_csv: write failed for " + path);
}

}  // namespace idnf
