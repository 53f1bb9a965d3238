#pragma once

#include <cstring>
#include <fstream>
#include <string>

#include "metacritic/classifiers.hpp"
#include "metacritic/params.hpp"

namespace metacritic {

// ---------------------------------------------------------------------------
// Checkpoint container (little-endian throughout):
//
//   magic     8 bytes  "MCCKPT01"
//   version   u32      1
//   meta_len  u64, metadata bytes (JSON: architecture spec, run info)
//   n_params  u64
//   per parameter:
//     name_len u32, name bytes
//     partition u8 (0 adapted, 1 shared)
//     ndim u32, dims u64[ndim]
//     values f64[prod(dims)]
//   decay     f64      running-statistics decay
//   n_stats   u64
//   per normalization layer:
//     name_len u32, name bytes
//     channels u64
//     mean f64[channels], var f64[channels]
// ---------------------------------------------------------------------------

struct Checkpoint {
  ParamSet params;
  RunningStats stats{0.99};
  std::string meta_json;
};

namespace checkpoint_detail {

constexpr char kMagic[8] = {'M', 'C', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw OpError(std::string("checkpoint: truncated while reading ") + what);
  }
  return v;
}

inline void write_name(std::ostream& os, const std::string& name) {
  write_pod(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
}

inline std::string read_name(std::istream& is, const char* what) {
  const auto len = read_pod<std::uint32_t>(is, what);
  if (len > 65536) throw OpError("checkpoint: implausible name length");
  std::string name(len, '\0');
  if (!is.read(name.data(), len)) {
    throw OpError(std::string("checkpoint: truncated while reading ") + what);
  }
  return name;
}

}  // namespace checkpoint_detail

inline void save_checkpoint(const std::string& path, const ParamSet& params,
                            const RunningStats& stats,
                            const std::string& meta_json) {
  namespace d = checkpoint_detail;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw OpError("checkpoint: cannot open '" + path + "' for writing");
  os.write(d::kMagic, sizeof(d::kMagic));
  d::write_pod(os, d::kVersion);
  d::write_pod(os, static_cast<std::uint64_t>(meta_json.size()));
  os.write(meta_json.data(), static_cast<std::streamsize>(meta_json.size()));
  d::write_pod(os, static_cast<std::uint64_t>(params.size()));
  for (const ParamSet::Entry& e : params.entries()) {
    d::write_name(os, e.name);
    d::write_pod(os, static_cast<std::uint8_t>(
                         e.partition == Partition::Adapted ? 0 : 1));
    d::write_pod(os, static_cast<std::uint32_t>(e.tensor.ndim()));
    for (const std::size_t dim : e.tensor.shape()) {
      d::write_pod(os, static_cast<std::uint64_t>(dim));
    }
    os.write(reinterpret_cast<const char*>(e.tensor.values().data()),
             static_cast<std::streamsize>(e.tensor.numel() * sizeof(double)));
  }
  d::write_pod(os, stats.decay());
  d::write_pod(os, static_cast<std::uint64_t>(stats.entries().size()));
  for (const RunningStats::Entry& e : stats.entries()) {
    d::write_name(os, e.name);
    d::write_pod(os, static_cast<std::uint64_t>(e.mean.size()));
    os.write(reinterpret_cast<const char*>(e.mean.data()),
             static_cast<std::streamsize>(e.mean.size() * sizeof(double)));
    os.write(reinterpret_cast<const char*>(e.var.data()),
             static_cast<std::streamsize>(e.var.size() * sizeof(double)));
  }
  if (!os) throw OpError("checkpoint: write to '" + path + "' failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  namespace d = checkpoint_detail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw OpError("checkpoint: cannot open '" + path + "'");
  char magic[8];
  if (!is.read(magic, sizeof(magic)) ||
      std::memcmp(magic, d::kMagic, sizeof(magic)) != 0) {
    throw OpError("checkpoint: '" + path + "' is not a checkpoint file");
  }
  const auto version = d::read_pod<std::uint32_t>(is, "version");
  if (version != d::kVersion) {
    throw OpError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto meta_len = d::read_pod<std::uint64_t>(is, "metadata length");
  ckpt.meta_json.resize(meta_len);
  if (!is.read(ckpt.meta_json.data(),
               static_cast<std::streamsize>(meta_len))) {
    throw OpError("checkpoint: truncated metadata");
  }
  const auto n_params = d::read_pod<std::uint64_t>(is, "parameter count");
  for (std::uint64_t i = 0; i < n_params; ++i) {
    const std::string name = d::read_name(is, "parameter name");
    const auto partition = d::read_pod<std::uint8_t>(is, "partition");
    const auto ndim = d::read_pod<std::uint32_t>(is, "rank");
    Shape shape;
    for (std::uint32_t k = 0; k < ndim; ++k) {
      shape.push_back(static_cast<std::size_t>(
          d::read_pod<std::uint64_t>(is, "dimension")));
    }
    std::vector<double> values(numel_of(shape));
    if (!is.read(reinterpret_cast<char*>(values.data()),
                 static_cast<std::streamsize>(values.size() * sizeof(double)))) {
      throw OpError("checkpoint: truncated values for '" + name + "'");
    }
    ckpt.params.add(name, Tensor::leaf(shape, std::move(values)),
                    partition == 0 ? Partition::Adapted : Partition::Shared);
  }
  const double decay = d::read_pod<double>(is, "statistics decay");
  ckpt.stats = RunningStats(decay);
  const auto n_stats = d::read_pod<std::uint64_t>(is, "statistics count");
  for (std::uint64_t i = 0; i < n_stats; ++i) {
    const std::string name = d::read_name(is, "statistics name");
    const auto channels = d::read_pod<std::uint64_t>(is, "channel count");
    ckpt.stats.add_layer(name, channels);
    std::vector<double> mean(channels), var(channels);
    if (!is.read(reinterpret_cast<char*>(mean.data()),
                 static_cast<std::streamsize>(channels * sizeof(double))) ||
        !is.read(reinterpret_cast<char*>(var.data()),
                 static_cast<std::streamsize>(channels * sizeof(double)))) {
      throw OpError("checkpoint: truncated statistics for '" + name + "'");
    }
    ckpt.stats.update(name, mean, var);
    // update blends with the initial state; overwrite exactly instead
    for (auto& e : ckpt.stats.mutable_entries()) {
      if (e.name == name) {
        e.mean = mean;
        e.var = var;
      }
    }
  }
  return ckpt;
}

}  // namespace metacritic
