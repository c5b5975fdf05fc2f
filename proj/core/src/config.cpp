#include "idnf/config.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "idnf/errors.hpp"

namespace idnf {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& v, const std::string& where) {
  errno = 0;
  char* end = nullptr;
  double x = std::strtod(v.c_str(), &end);
  if (errno != 0 || end == v.c_str() || *end != '\0')
    throw ConfigError(where + ": invalid number '" + v + "'");
  return x;
}

long long parse_int(const std::string& v, const std::string& where) {
  errno = 0;
  char* end = nullptr;
  long long x = std::strtoll(v.c_str(), &end, 10);
  if (errno != 0 || end == v.c_str() || *end != '\0')
    throw ConfigError(where + ": invalid integer '" + v + "'");
  return x;
}

std::uint64_t parse_uint(const std::string& v, const std::string& where) {
  errno = 0;
  char* end = nullptr;
  unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (errno != 0 || end == v.c_str() || *end != '\0' || v.find('-') != std::string::npos)
    throw ConfigError(where + ": invalid unsigned integer '" + v + "'");
  return x;
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& train_setters() {
  static const std::map<std::string, Setter> table = {
      {"dataset", [](RunConfig& c, const std::string& v, const std::string&) { c.train.dataset = v; }},
      {"iterations", [](RunConfig& c, const std::string& v, const std::string& w) { c.train.iterations = parse_int(v, w); }},
      {"batch_size", [](RunConfig& c, const std::string& v, const std::string& w) { c.train.batch_size = static_cast<int>(parse_int(v, w)); }},
      {"learning_rate", [](RunConfig& c, const std::string& v, const std::string& w) { c.train.learning_rate = parse_double(v, w); }},
      {"adam_beta1", [](RunConfig& c, const std::string& v, const std::string& w) { c.train.adam_beta1 = parse_double(v, w); }},
      {"adam_beta2", [](RunConfig& c, const std::string& v, const std::string& w) { c.train.adam_beta2 = parse_double(v, w); }},
      {"adam_eps", [](RunConfig& c, const std::string& v, const std::string& w) { c.train.adam_eps = parse_double(v, w); }},
      {"coeff", [](RunConfig& c, const std::string& v, const std::string& w) { c.train.coeff = parse_double(v, w); }},
      {"depth", [](RunConfig& c, const std::string& v, const std::string& w) { c.train.depth = static_cast<int>(parse_int(v, w)); }},
      {"growth", [](RunConfig& c, const std::string& v, const std::string& w) { c.train.growth = static_cast<int>(parse_int(v, w)); }},
      {"blocks", [](RunConfig& c, const std::string& v, const std::string& w) { c.train.blocks = static_cast<int>(parse_int(v, w)); }},
      {"mode", [](RunConfig& c, const std::string& v, const std::string& w) {
         try {
           c.train.mode = mode_from_name(v);
         } catch (const ConfigError&) {
           throw ConfigError(w + ": mode must be 'fixed' or 'learnable', got '" + v + "'");
         }
       }},
      {"seed", [](RunConfig& c, const std::string& v, const std::string& w) { c.train.seed = parse_uint(v, w); }},
      {"eval_every", [](RunConfig& c, const std::string& v, const std::string& w) { c.train.eval_every = parse_int(v, w); }},
      {"test_points", [](RunConfig& c, const std::string& v, const std::string& w) { c.train.test_points = static_cast<int>(parse_int(v, w)); }},
      {"concat_multiplier", [](RunConfig& c, const std::string& v, const std::string& w) { c.train.concat_multiplier = parse_double(v, w); }},
      {"grad_clip", [](RunConfig& c, const std::string& v, const std::string& w) { c.train.grad_clip = parse_double(v, w); }},
      {"checkpoint_path", [](RunConfig& c, const std::string& v, const std::string&) { c.train.checkpoint_path = v; }},
      {"circles_factor", [](RunConfig& c, const std::string& v, const std::string& w) { c.train.toy.circles_factor = parse_double(v, w); }},
      {"circles_noise", [](RunConfig& c, const std::string& v, const std::string& w) { c.train.toy.circles_noise = parse_double(v, w); }},
      {"circles_scale", [](RunConfig& c, const std::string& v, const std::string& w) { c.train.toy.circles_scale = parse_double(v, w); }},
      {"moons_noise", [](RunConfig& c, const std::string& v, const std::string& w) { c.train.toy.moons_noise = parse_double(v, w); }},
      {"moons_scale", [](RunConfig& c, const std::string& v, const std::string& w) { c.train.toy.moons_scale = parse_double(v, w); }},
      {"moons_shift_x", [](RunConfig& c, const std::string& v, const std::string& w) { c.train.toy.moons_shift_x = parse_double(v, w); }},
      {"moons_shift_y", [](RunConfig& c, const std::string& v, const std::string& w) { c.train.toy.moons_shift_y = parse_double(v, w); }},
      {"checker_scale", [](RunConfig& c, const std::string& v, const std::string& w) { c.train.toy.checker_scale = parse_double(v, w); }},
  };
  return table;
}

const std::map<std::string, Setter>& run_setters() {
  static const std::map<std::string, Setter> table = {
      {"out_dir", [](RunConfig& c, const std::string& v, const std::string&) { c.out_dir = v; }},
      {"density_x1_min", [](RunConfig& c, const std::string& v, const std::string& w) { c.density_x1_min = parse_double(v, w); }},
      {"density_x1_max", [](RunConfig& c, const std::string& v, const std::string& w) { c.density_x1_max = parse_double(v, w); }},
      {"density_x2_min", [](RunConfig& c, const std::string& v, const std::string& w) { c.density_x2_min = parse_double(v, w); }},
      {"density_x2_max", [](RunConfig& c, const std::string& v, const std::string& w) { c.density_x2_max = parse_double(v, w); }},
      {"density_resolution", [](RunConfig& c, const std::string& v, const std::string& w) { c.density_resolution = static_cast<int>(parse_int(v, w)); }},
      {"sample_count", [](RunConfig& c, const std::string& v, const std::string& w) { c.sample_count = static_cast<int>(parse_int(v, w)); }},
  };
  return table;
}

RunConfig parse(const std::string& text, const std::string& origin, bool allow_run_keys,
                bool require_dataset) {
  RunConfig out;
  bool saw_dataset = false;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    if (auto hash = line.find('#'); hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(where + ": expected key=value, got '" + trim(raw) + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");

    const auto& train_table = train_setters();
    if (auto it = train_table.find(key); it != train_table.end()) {
      it->second(out, value, where);
      if (key == "dataset") saw_dataset = true;
      continue;
    }
    if (allow_run_keys) {
      const auto& run_table = run_setters();
      if (auto it = run_table.find(key); it != run_table.end()) {
        it->second(out, value, where);
        continue;
      }
    }
    throw ConfigError(where + ": unknown key '" + key + "'");
  }
  if (require_dataset && !saw_dataset)
    throw ConfigError(origin + ": missing required key 'dataset'");
  return out;
}

}  // namespace

const char* mode_name(ConcatMode mode) {
  return mode == ConcatMode::kFixed ? "fixed" : "learnable";
}

ConcatMode mode_from_name(const std::string& name) {
  if (name == "fixed") return ConcatMode::kFixed;
  if (name == "learnable") return ConcatMode::kLearnable;
  throw ConfigError("unknown concatenation mode '" + name + "'");
}

void TrainConfig::validate() const {
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("adam_beta1 must be in [0,1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("adam_beta2 must be in [0,1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (!(coeff > 0.0 && coeff < 1.0)) throw ConfigError("coeff must be in (0,1)");
  if (depth < 1) throw ConfigError("depth must be >= 1");
  if (growth < 1) throw ConfigError("growth must be >= 1");
  if (blocks < 0) throw ConfigError("blocks must be >= 0");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (test_points < 1) throw ConfigError("test_points must be >= 1");
  if (!(concat_multiplier > 0.0 && concat_multiplier <= 1.0))
    throw ConfigError("concat_multiplier must be in (0,1]");
  if (grad_clip < 0.0) throw ConfigError("grad_clip must be >= 0");
  if (dataset != "two_moons" && dataset != "two_circles" && dataset != "checkerboard" &&
      dataset != "gaussian")
    throw ConfigError("unknown dataset '" + dataset + "'");
}

void RunConfig::validate() const {
  train.validate();
  if (density_resolution < 2) throw ConfigError("density_resolution must be >= 2");
  if (!(density_x1_min < density_x1_max) || !(density_x2_min < density_x2_max))
    throw ConfigError("density bounds must satisfy min < max");
  if (sample_count < 0) throw ConfigError("sample_count must be >= 0");
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
}

std::string to_key_values(const TrainConfig& c) {
  std::ostringstream out;
  out << "dataset=" << c.dataset << '\n'
      << "iterations=" << c.iterations << '\n'
      << "batch_size=" << c.batch_size << '\n'
      << "learning_rate=" << fmt(c.learning_rate) << '\n'
      << "adam_beta1=" << fmt(c.adam_beta1) << '\n'
      << "adam_beta2=" << fmt(c.adam_beta2) << '\n'
      << "adam_eps=" << fmt(c.adam_eps) << '\n'
      << "coeff=" << fmt(c.coeff) << '\n'
      << "depth=" << c.depth << '\n'
      << "growth=" << c.growth << '\n'
      << "blocks=" << c.blocks << '\n'
      << "mode=" << mode_name(c.mode) << '\n'
      << "seed=" << c.seed << '\n'
      << "eval_every=" << c.eval_every << '\n'
      << "test_points=" << c.test_points << '\n'
      << "concat_multiplier=" << fmt(c.concat_multiplier) << '\n'
      << "grad_clip=" << fmt(c.grad_clip) << '\n'
      << "checkpoint_path=" << c.checkpoint_path << '\n'
      << "circles_factor=" << fmt(c.toy.circles_factor) << '\n'
      << "circles_noise=" << fmt(c.toy.circles_noise) << '\n'
      << "circles_scale=" << fmt(c.toy.circles_scale) << '\n'
      << "moons_noise=" << fmt(c.toy.moons_noise) << '\n'
      << "moons_scale=" << fmt(c.toy.moons_scale) << '\n'
      << "moons_shift_x=" << fmt(c.toy.moons_shift_x) << '\n'
      << "moons_shift_y=" << fmt(c.toy.moons_shift_y) << '\n'
      << "checker_scale=" << fmt(c.toy.checker_scale) << '\n';
  return out.str();
}

TrainConfig train_config_from_string(const std::string& text, const std::string& origin,
                                     bool require_dataset) {
  return parse(text, origin, /*allow_run_keys=*/false, require_dataset).train;
}

RunConfig run_config_from_string(const std::string& text, const std::string& origin,
                                 bool require_dataset) {
  return parse(text, origin, /*allow_run_keys=*/true, require_dataset);
}

RunConfig run_config_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return run_config_from_string(ss.str(), path, /*require_dataset=*/true);
}

}  // namespace idnf
