#include "padet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace padet {

namespace {

constexpr char kMagic[8] = {'P', 'A', 'D', 'E', 'T', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_raw(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

void write_string(std::ofstream& f, const std::string& s) {
  write_raw<std::uint32_t>(f, static_cast<std::uint32_t>(s.size()));
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& f) {
  const auto len = read_raw<std::uint32_t>(f);
  std::string s(len, '\0');
  f.read(s.data(), len);
  return s;
}

void write_doubles(std::ofstream& f, const std::vector<double>& v) {
  write_raw<std::uint64_t>(f, static_cast<std::uint64_t>(v.size()));
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(std::ifstream& f) {
  const auto len = read_raw<std::uint64_t>(f);
  std::vector<double> v(len);
  f.read(reinterpret_cast<char*>(v.data()),
         static_cast<std::streamsize>(len * sizeof(double)));
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model,
                     const TrainState& state) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f.write(kMagic, 8);
  write_raw<std::uint32_t>(f, kVersion);
  const std::string cfg_text = canonical_config_text(model.cfg);
  write_raw<std::uint64_t>(f, config_digest(model.cfg));
  write_string(f, cfg_text);
  write_raw<std::int64_t>(f, state.epoch);
  write_raw<std::int64_t>(f, state.step);
  for (int i = 0; i < 4; ++i) write_raw<std::uint64_t>(f, state.data_rng.s[i]);

  const auto& params = model.params();
  write_raw<std::uint32_t>(f, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    write_string(f, p->name);
    const Shape4 s = p->tensor->shape;
    write_raw<std::int32_t>(f, s.n);
    write_raw<std::int32_t>(f, s.c);
    write_raw<std::int32_t>(f, s.h);
    write_raw<std::int32_t>(f, s.w);
    write_doubles(f, p->tensor->v);
    write_doubles(f, p->momentum);
  }

  auto buffers = const_cast<Model&>(model).named_buffers();
  write_raw<std::uint32_t>(f, static_cast<std::uint32_t>(buffers.size()));
  for (const auto& [name, vec] : buffers) {
    write_string(f, name);
    write_doubles(f, *vec);
  }
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("load_checkpoint: " + path + " is not a checkpoint file");
  }
  const auto version = read_raw<std::uint32_t>(f);
  if (version != kVersion) {
    throw std::runtime_error("load_checkpoint: version " + std::to_string(version) +
                             " unsupported (expected " + std::to_string(kVersion) + ")");
  }
  const auto stored_digest = read_raw<std::uint64_t>(f);
  const std::string cfg_text = read_string(f);

  LoadedCheckpoint out;
  out.cfg = parse_config_text(cfg_text);
  const std::uint64_t actual = config_digest(out.cfg);
  if (actual != stored_digest) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "stored %016llx vs computed %016llx",
                  static_cast<unsigned long long>(stored_digest),
                  static_cast<unsigned long long>(actual));
    throw std::runtime_error("load_checkpoint: config digest mismatch (" +
                             std::string(buf) + ")");
  }

  out.state.epoch = static_cast<int>(read_raw<std::int64_t>(f));
  out.state.step = read_raw<std::int64_t>(f);
  for (int i = 0; i < 4; ++i) out.state.data_rng.s[i] = read_raw<std::uint64_t>(f);

  out.model = std::make_unique<Model>(out.cfg);
  const auto n_params = read_raw<std::uint32_t>(f);
  if (n_params != out.model->params().size()) {
    throw std::runtime_error("load_checkpoint: parameter count " +
                             std::to_string(n_params) + " does not match config-built " +
                             std::to_string(out.model->params().size()));
  }
  for (std::uint32_t i = 0; i < n_params; ++i) {
    const std::string name = read_string(f);
    Shape4 s;
    s.n = read_raw<std::int32_t>(f);
    s.c = read_raw<std::int32_t>(f);
    s.h = read_raw<std::int32_t>(f);
    s.w = read_raw<std::int32_t>(f);
    ParamRef p = out.model->param(name);
    if (!(p->tensor->shape == s)) {
      throw std::runtime_error("load_checkpoint: shape of '" + name + "' is " + s.str() +
                               " but config builds " + p->tensor->shape.str());
    }
    p->tensor->v = read_doubles(f);
    p->momentum = read_doubles(f);
    if (p->tensor->v.size() != static_cast<size_t>(s.numel()) ||
        p->momentum.size() != static_cast<size_t>(s.numel())) {
      throw std::runtime_error("load_checkpoint: truncated blob for '" + name + "'");
    }
  }

  const auto n_buffers = read_raw<std::uint32_t>(f);
  auto buffers = out.model->named_buffers();
  if (n_buffers != buffers.size()) {
    throw std::runtime_error("load_checkpoint: buffer count mismatch");
  }
  for (std::uint32_t i = 0; i < n_buffers; ++i) {
    const std::string name = read_string(f);
    bool found = false;
    for (auto& [bname, vec] : buffers) {
      if (bname == name) {
        *vec = read_doubles(f);
        found = true;
        break;
      }
    }
    if (!found) throw std::runtime_error("load_checkpoint: unknown buffer '" + name + "'");
  }
  if (!f) throw std::runtime_error("load_checkpoint: truncated file " + path);
  return out;
}

}  // namespace padet
