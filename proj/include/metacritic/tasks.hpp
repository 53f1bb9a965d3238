#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "metacritic/rng.hpp"
#include "metacritic/tensor.hpp"

namespace metacritic {

enum class MetaSplit : std::uint8_t { Train = 0, Val = 1, Test = 2 };

inline const char* to_string(MetaSplit s) {
  switch (s) {
    case MetaSplit::Train: return "train";
    case MetaSplit::Val: return "val";
    case MetaSplit::Test: return "test";
  }
  return "?";
}

/// One few-shot task: a small labeled support set for adaptation and a
/// target set for evaluation. Labels are episode-local, 0..way-1.
struct Episode {
  std::uint64_t task_id = 0;
  Tensor x_support;
  std::vector<std::int64_t> y_support;
  Tensor x_target;
  std::vector<std::int64_t> y_target;
  std::size_t way = 0;
  std::size_t shot = 0;
  std::size_t query = 0;
};

struct SplitSizes {
  std::size_t train = 12;
  std::size_t val = 4;
  std::size_t test = 4;

  std::size_t total() const { return train + val + test; }
};

struct GaussianBlobsConfig {
  std::size_t dimension = 16;
  double prototype_spread = 1.0;
  double noise_scale = 0.25;
};

struct PatternGlyphsConfig {
  std::size_t height = 14;
  std::size_t width = 14;
  std::size_t strokes = 3;
  double jitter = 1.0;       // endpoint displacement scale, in pixels
  double pixel_noise = 0.01; // probability of flipping a pixel
};

enum class FamilyKind { GaussianBlobs, PatternGlyphs, FileCorpus };

inline const char* to_string(FamilyKind k) {
  switch (k) {
    case FamilyKind::GaussianBlobs: return "gaussian_blobs";
    case FamilyKind::PatternGlyphs: return "pattern_glyphs";
    case FamilyKind::FileCorpus: return "file_corpus";
  }
  return "?";
}

/// Stored per-class sample pools, either loaded from a corpus file or
/// materialized from a generative family.
struct Corpus {
  struct Class {
    std::string name;
    MetaSplit split = MetaSplit::Train;
    std::size_t n_samples = 0;
    std::vector<double> data;  // n_samples x prod(sample_shape)
  };
  std::uint64_t seed = 0;
  Shape sample_shape;
  std::vector<Class> classes;
};

/// A distribution over few-shot episodes with disjoint class pools per
/// meta-split. Immutable after construction; episode sampling is a pure
/// function of (family seed, split, index).
class TaskFamily {
 public:
  static TaskFamily gaussian_blobs(const GaussianBlobsConfig& cfg,
                                   const SplitSizes& sizes, std::uint64_t seed) {
    TaskFamily fam;
    fam.kind_ = FamilyKind::GaussianBlobs;
    fam.blobs_ = cfg;
    fam.seed_ = seed;
    fam.sample_shape_ = {cfg.dimension};
    fam.build_pools(sizes);
    return fam;
  }

  static TaskFamily pattern_glyphs(const PatternGlyphsConfig& cfg,
                                   const SplitSizes& sizes, std::uint64_t seed) {
    TaskFamily fam;
    fam.kind_ = FamilyKind::PatternGlyphs;
    fam.glyphs_ = cfg;
    fam.seed_ = seed;
    fam.sample_shape_ = {1, cfg.height, cfg.width};
    fam.build_pools(sizes);
    return fam;
  }

  static TaskFamily from_corpus(Corpus corpus) {
    TaskFamily fam;
    fam.kind_ = FamilyKind::FileCorpus;
    fam.seed_ = corpus.seed;
    fam.sample_shape_ = corpus.sample_shape;
    fam.corpus_ = std::move(corpus);
    for (std::size_t i = 0; i < fam.corpus_.classes.size(); ++i) {
      fam.pools_[static_cast<std::size_t>(fam.corpus_.classes[i].split)]
          .push_back(i);
    }
    return fam;
  }

  FamilyKind kind() const { return kind_; }
  std::uint64_t seed() const { return seed_; }
  const Shape& sample_shape() const { return sample_shape_; }
  std::size_t sample_numel() const { return numel_of(sample_shape_); }

  const std::vector<std::size_t>& class_pool(MetaSplit split) const {
    return pools_[static_cast<std::size_t>(split)];
  }

  /// Number of stored samples per class (file corpus only; generative
  /// families synthesize unlimited samples).
  std::size_t stored_samples(std::size_t class_id) const {
    return kind_ == FamilyKind::FileCorpus ? corpus_.classes[class_id].n_samples
                                           : 0;
  }

  Episode sample_episode(MetaSplit split, std::uint64_t index, std::size_t way,
                         std::size_t shot, std::size_t query) const {
    const auto& pool = class_pool(split);
    if (way == 0 || way > pool.size()) {
      throw OpError("sample_episode: way " + std::to_string(way) +
                    " exceeds the " + std::to_string(pool.size()) +
                    "-class pool of split " + to_string(split));
    }
    if (shot == 0 || query == 0) {
      throw OpError("sample_episode: shot and query must be positive");
    }
    RandomStream rng = derive_stream(seed_, "episode",
                                     static_cast<int>(split), index);
    const std::vector<std::size_t> classes =
        rng.sample_without_replacement(pool, way);

    const std::size_t d = sample_numel();
    Episode ep;
    ep.task_id = index;
    ep.way = way;
    ep.shot = shot;
    ep.query = query;
    std::vector<double> xs(way * shot * d), xt(way * query * d);
    ep.y_support.resize(way * shot);
    ep.y_target.resize(way * query);
    for (std::size_t label = 0; label < way; ++label) {
      std::vector<double> block((shot + query) * d);
      draw_class_samples(classes[label], shot + query, rng, block);
      for (std::size_t s = 0; s < shot; ++s) {
        std::copy(block.begin() + s * d, block.begin() + (s + 1) * d,
                  xs.begin() + (label * shot + s) * d);
        ep.y_support[label * shot + s] = static_cast<std::int64_t>(label);
      }
      for (std::size_t q = 0; q < query; ++q) {
        std::copy(block.begin() + (shot + q) * d,
                  block.begin() + (shot + q + 1) * d,
                  xt.begin() + (label * query + q) * d);
        ep.y_target[label * query + q] = static_cast<std::int64_t>(label);
      }
    }
    Shape supp_shape{way * shot};
    Shape targ_shape{way * query};
    for (const std::size_t dim : sample_shape_) {
      supp_shape.push_back(dim);
      targ_shape.push_back(dim);
    }
    ep.x_support = Tensor::from_values(std::move(supp_shape), std::move(xs));
    ep.x_target = Tensor::from_values(std::move(targ_shape), std::move(xt));
    return ep;
  }

  /// Freeze a generative family into per-class sample pools.
  Corpus materialize(std::size_t samples_per_class) const {
    Corpus corpus;
    corpus.seed = seed_;
    corpus.sample_shape = sample_shape_;
    const std::size_t d = sample_numel();
    for (std::size_t split = 0; split < 3; ++split) {
      for (const std::size_t cls : pools_[split]) {
        Corpus::Class record;
        record.name = class_name(cls);
        record.split = static_cast<MetaSplit>(split);
        record.n_samples = samples_per_class;
        record.data.resize(samples_per_class * d);
        RandomStream rng = derive_stream(seed_, "materialize", cls);
        draw_class_samples(cls, samples_per_class, rng, record.data);
        corpus.classes.push_back(std::move(record));
      }
    }
    return corpus;
  }

  /// The analytic nearest-prototype classifier for blob families:
  /// assigns each target sample the label of the closest class prototype
  /// among the episode's classes. Test oracle and sanity diagnostic.
  double nearest_prototype_accuracy(const Episode& ep) const {
    const std::size_t d = sample_numel();
    const std::size_t n_support = ep.y_support.size();
    std::size_t correct = 0;
    for (std::size_t t = 0; t < ep.y_target.size(); ++t) {
      const double* x = ep.x_target.values().data() + t * d;
      double best = 0.0;
      std::int64_t best_label = 0;
      bool first = true;
      for (std::size_t s = 0; s < n_support; ++s) {
        const double* proto = ep.x_support.values().data() + s * d;
        double dist = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          const double diff = x[i] - proto[i];
          dist += diff * diff;
        }
        if (first || dist < best) {
          best = dist;
          best_label = ep.y_support[s];
          first = false;
        }
      }
      if (best_label == ep.y_target[t]) ++correct;
    }
    return static_cast<double>(correct) /
           static_cast<double>(ep.y_target.size());
  }

  std::string class_name(std::size_t cls) const {
    if (kind_ == FamilyKind::FileCorpus) return corpus_.classes[cls].name;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "class_%03zu", cls);
    return buf;
  }

 private:
  void build_pools(const SplitSizes& sizes) {
    std::size_t next = 0;
    for (std::size_t i = 0; i < sizes.train; ++i) pools_[0].push_back(next++);
    for (std::size_t i = 0; i < sizes.val; ++i) pools_[1].push_back(next++);
    for (std::size_t i = 0; i < sizes.test; ++i) pools_[2].push_back(next++);
    if (pools_[0].empty() || pools_[1].empty() || pools_[2].empty()) {
      throw OpError("task family: every meta-split needs at least one class");
    }
  }

  void draw_class_samples(std::size_t cls, std::size_t count, RandomStream& rng,
                          std::vector<double>& out) const {
    const std::size_t d = sample_numel();
    if (out.size() < count * d) out.resize(count * d);
    switch (kind_) {
      case FamilyKind::GaussianBlobs: {
        RandomStream proto_rng = derive_stream(seed_, "prototype", cls);
        std::vector<double> proto(d);
        for (double& v : proto) {
          v = blobs_.prototype_spread * proto_rng.normal();
        }
        for (std::size_t s = 0; s < count; ++s)
          for (std::size_t i = 0; i < d; ++i)
            out[s * d + i] = proto[i] + blobs_.noise_scale * rng.normal();
        return;
      }
      case FamilyKind::PatternGlyphs: {
        draw_glyph_samples(cls, count, rng, out);
        return;
      }
      case FamilyKind::FileCorpus: {
        const Corpus::Class& record = corpus_.classes[cls];
        if (record.n_samples < count) {
          throw OpError("sample_episode: class '" + record.name + "' has " +
                        std::to_string(record.n_samples) +
                        " stored samples, need " + std::to_string(count));
        }
        std::vector<std::size_t> all(record.n_samples);
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        const std::vector<std::size_t> chosen =
            rng.sample_without_replacement(std::move(all), count);
        for (std::size_t s = 0; s < count; ++s) {
          std::copy(record.data.begin() + chosen[s] * d,
                    record.data.begin() + (chosen[s] + 1) * d,
                    out.begin() + s * d);
        }
        return;
      }
    }
  }

  void draw_glyph_samples(std::size_t cls, std::size_t count, RandomStream& rng,
                          std::vector<double>& out) const {
    const std::size_t h = glyphs_.height, w = glyphs_.width;
    // class identity: a fixed set of stroke endpoints
    RandomStream shape_rng = derive_stream(seed_, "glyph", cls);
    std::vector<std::array<double, 4>> strokes(glyphs_.strokes);
    for (auto& s : strokes) {
      s = {shape_rng.uniform(1.0, static_cast<double>(h - 2)),
           shape_rng.uniform(1.0, static_cast<double>(w - 2)),
           shape_rng.uniform(1.0, static_cast<double>(h - 2)),
           shape_rng.uniform(1.0, static_cast<double>(w - 2))};
    }
    for (std::size_t n = 0; n < count; ++n) {
      double* img = out.data() + n * h * w;
      std::fill(img, img + h * w, 0.0);
      for (const auto& s : strokes) {
        const double r0 = s[0] + glyphs_.jitter * rng.normal();
        const double c0 = s[1] + glyphs_.jitter * rng.normal();
        const double r1 = s[2] + glyphs_.jitter * rng.normal();
        const double c1 = s[3] + glyphs_.jitter * rng.normal();
        const int steps =
            static_cast<int>(std::max(std::fabs(r1 - r0), std::fabs(c1 - c0))) +
            1;
        for (int t = 0; t <= steps; ++t) {
          const double f = static_cast<double>(t) / static_cast<double>(steps);
          const long r = std::lround(r0 + f * (r1 - r0));
          const long c = std::lround(c0 + f * (c1 - c0));
          if (r >= 0 && c >= 0 && r < static_cast<long>(h) &&
              c < static_cast<long>(w)) {
            img[r * w + c] = 1.0;
          }
        }
      }
      if (glyphs_.pixel_noise > 0.0) {
        for (std::size_t i = 0; i < h * w; ++i) {
          if (rng.uniform() < glyphs_.pixel_noise) img[i] = 1.0 - img[i];
        }
      }
    }
  }

  FamilyKind kind_ = FamilyKind::GaussianBlobs;
  std::uint64_t seed_ = 0;
  Shape sample_shape_;
  GaussianBlobsConfig blobs_;
  PatternGlyphsConfig glyphs_;
  Corpus corpus_;
  std::vector<std::size_t> pools_[3];
};

// ---------------------------------------------------------------------------
// Episode-corpus file format (little-endian throughout):
//
//   magic     8 bytes  "MCORPUS1"
//   version   u32      1
//   seed      u64      family seed for episode sampling
//   n_classes u32
//   manifest, n_classes records:
//     name_len u32, name bytes, split u8 (0 train / 1 val / 2 test)
//   ndim      u32, dims u64[ndim]      per-sample shape
//   data, n_classes records, same order as the manifest:
//     name_len u32, name bytes (must match the manifest)
//     n_samples u64
//     values f64[n_samples * prod(dims)]
// ---------------------------------------------------------------------------

namespace corpus_io {

constexpr char kMagic[8] = {'M', 'C', 'O', 'R', 'P', 'U', 'S', '1'};
constexpr std::uint32_t kVersion = 1;

namespace detail {

template <typename T>
void write_pod(std::ostream& os, const T& value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& what) {
  T value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw OpError("corpus: truncated while reading " + what);
  }
  return value;
}

inline std::string read_name(std::istream& is, const std::string& what) {
  const std::uint32_t len = read_pod<std::uint32_t>(is, what + " length");
  if (len > 4096) throw OpError("corpus: implausible name length in " + what);
  std::string name(len, '\0');
  if (!is.read(name.data(), len)) {
    throw OpError("corpus: truncated while reading " + what);
  }
  return name;
}

}  // namespace detail

inline void write_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw OpError("corpus: cannot open '" + path + "' for writing");
  os.write(kMagic, sizeof(kMagic));
  detail::write_pod(os, kVersion);
  detail::write_pod(os, corpus.seed);
  detail::write_pod(os, static_cast<std::uint32_t>(corpus.classes.size()));
  for (const Corpus::Class& c : corpus.classes) {
    detail::write_pod(os, static_cast<std::uint32_t>(c.name.size()));
    os.write(c.name.data(), static_cast<std::streamsize>(c.name.size()));
    detail::write_pod(os, static_cast<std::uint8_t>(c.split));
  }
  detail::write_pod(os, static_cast<std::uint32_t>(corpus.sample_shape.size()));
  for (const std::size_t d : corpus.sample_shape) {
    detail::write_pod(os, static_cast<std::uint64_t>(d));
  }
  for (const Corpus::Class& c : corpus.classes) {
    detail::write_pod(os, static_cast<std::uint32_t>(c.name.size()));
    os.write(c.name.data(), static_cast<std::streamsize>(c.name.size()));
    detail::write_pod(os, static_cast<std::uint64_t>(c.n_samples));
    os.write(reinterpret_cast<const char*>(c.data.data()),
             static_cast<std::streamsize>(c.data.size() * sizeof(double)));
  }
  if (!os) throw OpError("corpus: write to '" + path + "' failed");
}

inline Corpus read_corpus(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw OpError("corpus: cannot open '" + path + "'");
  char magic[8];
  if (!is.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw OpError("corpus: '" + path + "' is not an episode corpus file");
  }
  const auto version = detail::read_pod<std::uint32_t>(is, "version");
  if (version != kVersion) {
    throw OpError("corpus: unsupported version " + std::to_string(version));
  }
  Corpus corpus;
  corpus.seed = detail::read_pod<std::uint64_t>(is, "seed");
  const auto n_classes = detail::read_pod<std::uint32_t>(is, "class count");
  corpus.classes.resize(n_classes);
  for (std::uint32_t i = 0; i < n_classes; ++i) {
    corpus.classes[i].name =
        detail::read_name(is, "manifest entry " + std::to_string(i));
    const auto split = detail::read_pod<std::uint8_t>(
        is, "split of manifest entry " + std::to_string(i));
    if (split > 2) {
      throw OpError("corpus: manifest entry '" + corpus.classes[i].name +
                    "' has invalid split id " + std::to_string(split));
    }
    corpus.classes[i].split = static_cast<MetaSplit>(split);
  }
  const auto ndim = detail::read_pod<std::uint32_t>(is, "sample rank");
  if (ndim == 0 || ndim > 8) {
    throw OpError("corpus: implausible per-sample rank " + std::to_string(ndim));
  }
  for (std::uint32_t d = 0; d < ndim; ++d) {
    corpus.sample_shape.push_back(static_cast<std::size_t>(
        detail::read_pod<std::uint64_t>(is, "sample dimension")));
  }
  const std::size_t d = numel_of(corpus.sample_shape);
  for (std::uint32_t i = 0; i < n_classes; ++i) {
    Corpus::Class& c = corpus.classes[i];
    std::string name;
    try {
      name = detail::read_name(is, "data record " + std::to_string(i));
    } catch (const OpError&) {
      throw OpError("corpus: missing sample data for class '" + c.name + "'");
    }
    if (name != c.name) {
      throw OpError("corpus: data record " + std::to_string(i) + " is for '" +
                    name + "', manifest declares '" + c.name + "'");
    }
    c.n_samples = static_cast<std::size_t>(detail::read_pod<std::uint64_t>(
        is, "sample count of class '" + c.name + "'"));
    c.data.resize(c.n_samples * d);
    if (!is.read(reinterpret_cast<char*>(c.data.data()),
                 static_cast<std::streamsize>(c.data.size() * sizeof(double)))) {
      throw OpError("corpus: truncated sample data for class '" + c.name + "'");
    }
  }
  return corpus;
}

}  // namespace corpus_io

/// Load an episode corpus file into a sampleable family.
inline TaskFamily load_episode_file(const std::string& path) {
  return TaskFamily::from_corpus(corpus_io::read_corpus(path));
}

}  // namespace metacritic
