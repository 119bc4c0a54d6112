#include "advdiff/nn/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "advdiff/error.hpp"

namespace advdiff::nn {

namespace {

constexpr std::array<char, 8> kMagic = {'A', 'D', 'V', 'D', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError("checkpoint truncated");
  return v;
}

std::string get_string(std::istream& in) {
  const auto n = get<std::uint32_t>(in);
  if (n > (1u << 20)) throw FormatError("checkpoint string length implausible");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw FormatError("checkpoint truncated");
  return s;
}

}  // namespace

Checkpoint snapshot(std::span<Parameter* const> params, std::map<std::string, std::string> meta) {
  Checkpoint c;
  c.meta = std::move(meta);
  for (const Parameter* p : params) c.tensors.push_back({p->name, p->value});
  return c;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.meta.size()));
  for (const auto& [k, v] : ckpt.meta) {
    put_string(out, k);
    put_string(out, v);
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const NamedTensor& t : ckpt.tensors) {
    put_string(out, t.name);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.cols()));
    out.write(reinterpret_cast<const char*>(t.value.data()),
              static_cast<std::streamsize>(t.value.size() * sizeof(double)));
  }
  if (!out) throw ArtifactError("checkpoint write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw FormatError("not an advdiff checkpoint");
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  const auto n_meta = get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = get_string(in);
    c.meta[k] = get_string(in);
  }
  const auto n = get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedTensor t;
    t.name = get_string(in);
    const auto rows = get<std::uint64_t>(in);
    const auto cols = get<std::uint64_t>(in);
    if (rows * cols > (1ull << 32)) throw FormatError("checkpoint tensor too large");
    t.value.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    in.read(reinterpret_cast<char*>(t.value.data()),
            static_cast<std::streamsize>(rows * cols * sizeof(double)));
    if (!in) throw FormatError("checkpoint truncated");
    c.tensors.push_back(std::move(t));
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArtifactError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("missing checkpoint " + path.string());
  return read_checkpoint(in);
}

void restore(const Checkpoint& ckpt, std::span<Parameter* const> params) {
  if (ckpt.tensors.size() != params.size())
    throw ShapeError("checkpoint has " + std::to_string(ckpt.tensors.size()) +
                     " tensors, model expects " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const NamedTensor& t = ckpt.tensors[i];
    Parameter& p = *params[i];
    if (t.name != p.name) throw ShapeError("checkpoint tensor '" + t.name + "' where '" + p.name + "' expected");
    if (t.value.rows() != p.value.rows() || t.value.cols() != p.value.cols())
      throw ShapeError("checkpoint tensor '" + t.name + "' has the wrong shape");
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = ckpt.tensors[i].value;
}

}  // namespace advdiff::nn
