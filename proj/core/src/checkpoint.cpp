#include "idnf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "idnf/errors.hpp"

namespace idnf {

namespace {

constexpr char kMagic[5] = {'I', 'D', 'N', 'F', '1'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::string& out, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t x) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xFF));
}

void put_i64(std::string& out, std::int64_t x) { put_u64(out, static_cast<std::uint64_t>(x)); }

void put_f64(std::string& out, double x) { put_u64(out, std::bit_cast<std::uint64_t>(x)); }

void put_str(std::string& out, const std::string& s) {
  put_u64(out, s.size());
  out += s;
}

void put_matrix(std::string& out, const std::string& name, const Matrix& m) {
  put_str(out, name);
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) put_f64(out, m(i, j));
}

struct Reader {
  const std::string& data;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > data.size()) throw IoError("checkpoint: truncated file");
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t x = 0;
    for (int i = 0; i < 4; ++i)
      x |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    pos += 4;
    return x;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t x = 0;
    for (int i = 0; i < 8; ++i)
      x |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    pos += 8;
    return x;
  }

  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }

  std::string str() {
    std::uint64_t n = u64();
    if (n > data.size()) throw IoError("checkpoint: corrupt string length");
    need(n);
    std::string s = data.substr(pos, n);
    pos += n;
    return s;
  }

  std::pair<std::string, Matrix> matrix() {
    std::string name = str();
    std::uint32_t rows = u32();
    std::uint32_t cols = u32();
    if (static_cast<std::uint64_t>(rows) * cols > (1ull << 28))
      throw IoError("checkpoint: implausible matrix size for '" + name + "'");
    Matrix m(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i)
      for (std::uint32_t j = 0; j < cols; ++j) m(i, j) = f64();
    return {std::move(name), std::move(m)};
  }
};

void put_matrix_list(std::string& out, const std::vector<std::pair<std::string, Matrix>>& xs) {
  put_u32(out, static_cast<std::uint32_t>(xs.size()));
  for (const auto& [name, m] : xs) put_matrix(out, name, m);
}

std::vector<std::pair<std::string, Matrix>> read_matrix_list(Reader& r) {
  std::uint32_t n = r.u32();
  std::vector<std::pair<std::string, Matrix>> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) out.push_back(r.matrix());
  return out;
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
  std::string out;
  out.append(kMagic, sizeof kMagic);
  put_u32(out, kFormatVersion);
  put_str(out, config_echo);
  put_i64(out, iteration);
  put_matrix_list(out, params);
  put_matrix_list(out, buffers);
  put_i64(out, opt_step);
  put_matrix_list(out, opt_m);
  put_matrix_list(out, opt_v);
  put_str(out, rng_state);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("checkpoint: cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("checkpoint: write failed for '" + path + "'");
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open '" + path + "'");
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader r{data};
  r.need(sizeof kMagic);
  if (std::memcmp(data.data(), kMagic, sizeof kMagic) != 0)
    throw IoError("checkpoint: bad magic in '" + path + "'");
  r.pos = sizeof kMagic;
  std::uint32_t version = r.u32();
  if (version != kFormatVersion)
    throw IoError("checkpoint: unsupported format version " + std::to_string(version));

  Checkpoint c;
  c.config_echo = r.str();
  c.iteration = r.i64();
  c.params = read_matrix_list(r);
  c.buffers = read_matrix_list(r);
  c.opt_step = r.i64();
  c.opt_m = read_matrix_list(r);
  c.opt_v = read_matrix_list(r);
  c.rng_state = r.str();
  if (r.pos != data.size()) throw IoError("checkpoint: trailing bytes in '" + path + "'");
  return c;
}

FlowModel model_from_config(const TrainConfig& config) {
  config.validate();
  RandomSource root(config.seed);
  RandomSource init = root.fork(kStreamInit);
  FlowModel model = FlowModel::create(2, config.blocks, config.depth, config.growth, config.mode,
                                      config.coeff, config.concat_multiplier, init);
  model.refresh_spectral_state();
  return model;
}

namespace {

std::vector<std::pair<std::string, Matrix>> buffer_list(const FlowModel& model) {
  std::vector<std::pair<std::string, Matrix>> out;
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    const DenseBlock& blk = model.blocks[b];
    const std::string bp = "block" + std::to_string(b);
    for (std::size_t i = 0; i < blk.layers.size(); ++i)
      out.emplace_back(bp + ".layer" + std::to_string(i) + ".u", blk.layers[i].u);
    out.emplace_back(bp + ".proj.u", blk.proj_u);
  }
  return out;
}

}  // namespace

Checkpoint make_checkpoint(FlowModel& model, const TrainConfig& config, const OptimState& opt,
                           const std::string& rng_state, std::int64_t iteration) {
  Checkpoint c;
  c.config_echo = to_key_values(config);
  c.iteration = iteration;
  std::vector<ParamView> views = parameter_views(model);
  if (opt.m.size() != views.size() || opt.v.size() != views.size())
    throw ShapeError("make_checkpoint: optimizer state does not match parameter count");
  for (std::size_t i = 0; i < views.size(); ++i) {
    c.params.emplace_back(views[i].name, views[i].get());
    c.opt_m.emplace_back(views[i].name, opt.m[i]);
    c.opt_v.emplace_back(views[i].name, opt.v[i]);
  }
  c.buffers = buffer_list(model);
  c.opt_step = opt.step;
  c.rng_state = rng_state;
  return c;
}

RestoredRun restore(const Checkpoint& ckpt) {
  RestoredRun run;
  run.config = train_config_from_string(ckpt.config_echo, "checkpoint config echo");
  run.model = model_from_config(run.config);
  run.iteration = ckpt.iteration;
  run.rng_state = ckpt.rng_state;

  std::map<std::string, const Matrix*> by_name;
  for (const auto& [name, m] : ckpt.params) by_name[name] = &m;

  std::vector<ParamView> views = parameter_views(run.model);
  if (by_name.size() != views.size())
    throw IoError("checkpoint: expected " + std::to_string(views.size()) + " parameters, found " +
                  std::to_string(by_name.size()));
  for (const ParamView& view : views) {
    auto it = by_name.find(view.name);
    if (it == by_name.end()) throw IoError("checkpoint: missing parameter '" + view.name + "'");
    view.set(*it->second);
  }

  std::map<std::string, const Matrix*> buf_by_name;
  for (const auto& [name, m] : ckpt.buffers) buf_by_name[name] = &m;
  for (std::size_t b = 0; b < run.model.blocks.size(); ++b) {
    DenseBlock& blk = run.model.blocks[b];
    const std::string bp = "block" + std::to_string(b);
    auto assign_u = [&](const std::string& name, Vector& u) {
      auto it = buf_by_name.find(name);
      if (it == buf_by_name.end()) throw IoError("checkpoint: missing buffer '" + name + "'");
      if (it->second->cols() != 1 || it->second->rows() != u.size())
        throw IoError("checkpoint: buffer '" + name + "' has wrong shape");
      u = it->second->col(0);
    };
    for (std::size_t i = 0; i < blk.layers.size(); ++i)
      assign_u(bp + ".layer" + std::to_string(i) + ".u", blk.layers[i].u);
    assign_u(bp + ".proj.u", blk.proj_u);
  }

  run.opt = OptimState::zeros_like(views);
  run.opt.step = ckpt.opt_step;
  std::map<std::string, const Matrix*> m_by_name, v_by_name;
  for (const auto& [name, m] : ckpt.opt_m) m_by_name[name] = &m;
  for (const auto& [name, m] : ckpt.opt_v) v_by_name[name] = &m;
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (auto it = m_by_name.find(views[i].name); it != m_by_name.end()) run.opt.m[i] = *it->second;
    if (auto it = v_by_name.find(views[i].name); it != v_by_name.end()) run.opt.v[i] = *it->second;
  }
  return run;
}

}  // namespace idnf
