#pragma once

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "metacritic/checkpoint.hpp"
#include "metacritic/classifiers.hpp"
#include "metacritic/metalearn.hpp"
#include "metacritic/tasks.hpp"

namespace metacritic {

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// 1.96 x standard error with the n-1 sample variance.
inline double ci95(const std::vector<double>& values) {
  if (values.size() < 2) throw OpError("ci95: need at least two values");
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (const double v : values) mean += v;
  mean /= n;
  double var = 0.0;
  for (const double v : values) var += (v - mean) * (v - mean);
  var /= (n - 1.0);
  return 1.96 * std::sqrt(var / n);
}

inline double mean_of(const std::vector<double>& values) {
  double total = 0.0;
  for (const double v : values) total += v;
  return values.empty() ? 0.0 : total / static_cast<double>(values.size());
}

inline double sample_std(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  const double mean = mean_of(values);
  double var = 0.0;
  for (const double v : values) var += (v - mean) * (v - mean);
  return std::sqrt(var / (static_cast<double>(values.size()) - 1.0));
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  MetaConfig meta;
  std::size_t meta_batch_override = 0;  // 0: 2 for 1-shot, 1 otherwise

  std::string preset = "mlp";  // mlp | lowend | highend
  MlpSpec mlp;
  LowEndSpec lowend;
  HighEndSpec highend;
  InitScheme init_scheme = InitScheme::Xavier;
  double bn_decay = 0.99;

  std::string family = "gaussian_blobs";  // gaussian_blobs|pattern_glyphs|corpus
  std::string corpus_path;
  std::uint64_t family_seed = 1234;
  GaussianBlobsConfig blobs;
  PatternGlyphsConfig glyphs;
  SplitSizes splits;

  std::size_t way = 5;
  std::size_t shot = 1;
  std::size_t query = 15;

  std::string name = "experiment";
  std::size_t epochs = 20;
  std::size_t train_episodes = 100;
  std::size_t val_episodes = 40;
  std::size_t test_episodes = 200;
  std::size_t patience = 10;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::string out_dir = "runs";
  bool parallel_seeds = false;
  bool write_checkpoints = true;

  /// Resolve derived values; idempotent.
  void finalize() {
    if (patience < 1) throw OpError("config: patience must be at least 1");
    if (seeds.empty()) throw OpError("config: need at least one seed");
    meta.meta_batch = meta_batch_override ? meta_batch_override
                                          : (shot == 1 ? 2 : 1);
    meta.finalize();
    meta.validate();
    if (const char* env = std::getenv("METACRITIC_OUT")) {
      if (*env) out_dir = env;
    }
  }
};

namespace harness_detail {

inline bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw OpError("config: cannot parse '" + v + "' as a boolean");
}

inline std::vector<std::uint64_t> parse_id_list(const std::string& v) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoull(item));
  }
  return out;
}

inline std::vector<std::size_t> parse_size_list(const std::string& v) {
  std::vector<std::size_t> out;
  for (const std::uint64_t x : parse_id_list(v)) {
    out.push_back(static_cast<std::size_t>(x));
  }
  return out;
}

}  // namespace harness_detail

/// Preset-dependent defaults, applied when the preset is chosen (later
/// keys still override them).
inline void apply_preset_defaults(ExperimentConfig& cfg,
                                  const std::string& preset) {
  cfg.preset = preset;
  if (preset == "mlp" || preset == "lowend") {
    cfg.init_scheme = InitScheme::Xavier;
    cfg.meta.outer_optimizer = OuterOptimizer::Adam;
    cfg.meta.outer_step = 1e-3;
  } else if (preset == "highend") {
    cfg.init_scheme = InitScheme::XavierExceptLast;
    cfg.meta.outer_optimizer = OuterOptimizer::Sgd;
    cfg.meta.outer_step = 1e-4;
  } else {
    throw OpError("config: unknown model preset '" + preset + "'");
  }
}

/// Apply one `section.key = value` setting.
inline void apply_config_key(ExperimentConfig& cfg, const std::string& key,
                             const std::string& value) {
  namespace d = harness_detail;
  const auto to_size = [&] { return static_cast<std::size_t>(std::stoull(value)); };
  const auto to_double = [&] { return std::stod(value); };

  if (key == "meta.variant") cfg.meta.variant = parse_variant(value);
  else if (key == "meta.support_steps") cfg.meta.support_steps = to_size();
  else if (key == "meta.target_steps") cfg.meta.target_steps = to_size();
  else if (key == "meta.meta_batch") cfg.meta_batch_override = to_size();
  else if (key == "meta.outer_step") cfg.meta.outer_step = to_double();
  else if (key == "meta.outer_optimizer")
    cfg.meta.outer_optimizer =
        value == "sgd" ? OuterOptimizer::Sgd
                       : (value == "adam" ? OuterOptimizer::Adam
                                          : throw OpError(
                                                "config: unknown optimizer '" +
                                                value + "'"));
  else if (key == "meta.critic_outer_step") cfg.meta.critic_outer_step = to_double();
  else if (key == "meta.learned_critic_step")
    cfg.meta.learned_critic_step = d::parse_bool(value);
  else if (key == "meta.fixed_critic_step") cfg.meta.fixed_critic_step = to_double();
  else if (key == "meta.lslr_init") cfg.meta.lslr_init = to_double();
  else if (key == "meta.first_order_epochs") cfg.meta.first_order_epochs = to_size();
  else if (key == "meta.multi_step_critic_loss")
    cfg.meta.multi_step_critic_loss = d::parse_bool(value);
  else if (key == "meta.anneal_end_epoch") cfg.meta.anneal.end_epoch = to_size();
  else if (key == "model.preset") apply_preset_defaults(cfg, value);
  else if (key == "model.init_scheme") cfg.init_scheme = parse_init_scheme(value);
  else if (key == "model.hidden") cfg.mlp.hidden = d::parse_size_list(value);
  else if (key == "model.with_norm") cfg.mlp.with_norm = d::parse_bool(value);
  else if (key == "model.filters") cfg.lowend.filters = to_size();
  else if (key == "model.blocks") cfg.lowend.blocks = to_size();
  else if (key == "model.growth_rate") cfg.highend.growth_rate = to_size();
  else if (key == "model.se_reduction") cfg.highend.se_reduction = to_size();
  else if (key == "model.transition_compression")
    cfg.highend.transition_compression = to_double();
  else if (key == "model.bn_decay") cfg.bn_decay = to_double();
  else if (key == "tasks.family") cfg.family = value;
  else if (key == "tasks.corpus_path") cfg.corpus_path = value;
  else if (key == "tasks.family_seed") cfg.family_seed = std::stoull(value);
  else if (key == "tasks.dimension") cfg.blobs.dimension = to_size();
  else if (key == "tasks.noise_scale") cfg.blobs.noise_scale = to_double();
  else if (key == "tasks.prototype_spread")
    cfg.blobs.prototype_spread = to_double();
  else if (key == "tasks.glyph_jitter") cfg.glyphs.jitter = to_double();
  else if (key == "tasks.glyph_pixel_noise") cfg.glyphs.pixel_noise = to_double();
  else if (key == "tasks.train_classes") cfg.splits.train = to_size();
  else if (key == "tasks.val_classes") cfg.splits.val = to_size();
  else if (key == "tasks.test_classes") cfg.splits.test = to_size();
  else if (key == "run.name") cfg.name = value;
  else if (key == "run.way") cfg.way = to_size();
  else if (key == "run.shot") cfg.shot = to_size();
  else if (key == "run.query") cfg.query = to_size();
  else if (key == "run.epochs") cfg.epochs = to_size();
  else if (key == "run.train_episodes") cfg.train_episodes = to_size();
  else if (key == "run.val_episodes") cfg.val_episodes = to_size();
  else if (key == "run.test_episodes") cfg.test_episodes = to_size();
  else if (key == "run.patience") cfg.patience = to_size();
  else if (key == "run.seeds") cfg.seeds = d::parse_id_list(value);
  else if (key == "run.out_dir") cfg.out_dir = value;
  else if (key == "run.parallel_seeds") cfg.parallel_seeds = d::parse_bool(value);
  else if (key == "run.write_checkpoints")
    cfg.write_checkpoints = d::parse_bool(value);
  else throw OpError("config: unknown key '" + key + "'");
}

/// Flat key-value config file: one `section.key = value` per line,
/// '#' starts a comment. Later lines override earlier ones.
inline void apply_config_file(ExperimentConfig& cfg, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw OpError("config: cannot open '" + path + "'");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto trim = [](std::string s) {
      const auto notspace = [](unsigned char c) { return !std::isspace(c); };
      s.erase(s.begin(), std::find_if(s.begin(), s.end(), notspace));
      s.erase(std::find_if(s.rbegin(), s.rend(), notspace).base(), s.end());
      return s;
    };
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw OpError("config: line " + std::to_string(line_no) + " of '" +
                    path + "' has no '='");
    }
    try {
      apply_config_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::exception& e) {
      throw OpError("config: line " + std::to_string(line_no) + " of '" +
                    path + "': " + e.what());
    }
  }
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

struct SeedResult {
  std::uint64_t seed = 0;
  double test_accuracy = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  double wall_seconds = 0.0;
  double ci95_per_episode = 0.0;
  double min_critic_grad_norm = 0.0;
};

struct RunResult {
  std::string name;
  std::string variant;
  std::size_t way = 0;
  std::size_t shot = 0;
  std::vector<SeedResult> per_seed;
  double mean_accuracy = 0.0;
  double ci95_seed = 0.0;
  double wall_mean_seconds = 0.0;
  double wall_std_seconds = 0.0;

  void aggregate() {
    std::vector<double> accs, walls;
    for (const SeedResult& s : per_seed) {
      accs.push_back(s.test_accuracy);
      walls.push_back(s.wall_seconds);
    }
    mean_accuracy = mean_of(accs);
    ci95_seed = accs.size() >= 2 ? ci95(accs) : 0.0;
    wall_mean_seconds = mean_of(walls);
    wall_std_seconds = sample_std(walls);
  }
};

enum class ReportFormat { Table, Csv, Json };

inline std::string emit_report(const std::vector<RunResult>& results,
                               ReportFormat format);
inline void write_result_files(const RunResult& r, const std::string& dir);

// ---------------------------------------------------------------------------
// The runner
// ---------------------------------------------------------------------------

class ExperimentRunner {
 public:
  explicit ExperimentRunner(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.finalize();
    family_ = build_family();
    model_ = build_model_spec();
    validate();
  }

  const ExperimentConfig& config() const { return cfg_; }
  const TaskFamily& family() const { return family_; }
  const ModelSpec& model() const { return model_; }

  /// Critic feature length for the configured episode geometry.
  std::size_t critic_length() const {
    const std::size_t preds = cfg_.way * cfg_.query * cfg_.way;
    if (cfg_.meta.variant == MetaVariant::ScaPredParams) {
      return preds + init_params(model_param_specs(model_), cfg_.init_scheme, 0)
                         .total_numel();
    }
    return preds;
  }

  RunResult run() {
    RunResult result;
    result.name = cfg_.name;
    result.variant = to_string(cfg_.meta.variant);
    result.way = cfg_.way;
    result.shot = cfg_.shot;
    result.per_seed.resize(cfg_.seeds.size());
    if (cfg_.parallel_seeds && cfg_.seeds.size() > 1) {
      std::vector<std::thread> workers;
      for (std::size_t i = 0; i < cfg_.seeds.size(); ++i) {
        workers.emplace_back([this, i, &result] {
          result.per_seed[i] = run_seed(cfg_.seeds[i]);
        });
      }
      for (auto& w : workers) w.join();
    } else {
      for (std::size_t i = 0; i < cfg_.seeds.size(); ++i) {
        result.per_seed[i] = run_seed(cfg_.seeds[i]);
      }
    }
    result.aggregate();
    write_result_files(result, run_dir());
    return result;
  }

  SeedResult run_seed(std::uint64_t seed) const {
    const auto t0 = std::chrono::steady_clock::now();
    ParamSet theta =
        init_params(model_param_specs(model_), cfg_.init_scheme, seed);
    RunningStats bn = init_running_stats(model_, cfg_.bn_decay);
    CriticSpec cspec;
    cspec.input_length = std::max<std::size_t>(critic_length(), 2);
    const bool with_critic = cfg_.meta.variant != MetaVariant::MamlPP;
    MetaState state = make_meta_state(std::move(theta), cfg_.meta,
                                      with_critic ? &cspec : nullptr,
                                      derive_stream(seed, "critic-init").next_u64());

    const auto fwd = [&](const ParamSet& p, const Tensor& x) {
      return forward_model(model_, p, x, bn);
    };

    SeedResult out;
    out.seed = seed;
    out.min_critic_grad_norm = with_critic
                                   ? std::numeric_limits<double>::infinity()
                                   : 0.0;
    struct Snapshot {
      ParamSet theta, critic;
      LslrTable lslr;
      RunningStats bn{0.99};
    } best;
    double best_acc = -1.0;
    std::size_t best_epoch = 0;

    const std::size_t batches_per_epoch =
        std::max<std::size_t>(1, cfg_.train_episodes / cfg_.meta.meta_batch);
    for (std::size_t epoch = 1; epoch <= cfg_.epochs; ++epoch) {
      state.epoch = epoch - 1;
      for (std::size_t b = 0; b < batches_per_epoch; ++b) {
        std::vector<Episode> batch;
        for (std::size_t k = 0; k < cfg_.meta.meta_batch; ++k) {
          const std::uint64_t index =
              derive_stream(seed, "train-episode", epoch, b, k).next_u64();
          batch.push_back(family_.sample_episode(MetaSplit::Train, index,
                                                 cfg_.way, cfg_.shot,
                                                 cfg_.query));
        }
        // single-writer update of the running statistics, from the
        // current initialization's view of the support sets
        {
          GradMode no_graph(false);
          BatchStats collect;
          for (const Episode& ep : batch) {
            forward_model(model_, state.theta, ep.x_support, bn, &collect);
          }
          collect.fold_into(bn);
        }
        MetaStepResult step = meta_step(fwd, state, &cspec, batch, cfg_.meta);
        if (with_critic) {
          out.min_critic_grad_norm =
              std::min(out.min_critic_grad_norm, step.critic_grad_norm);
        }
      }
      // validation pass
      std::vector<double> val_accs;
      for (std::size_t i = 0; i < cfg_.val_episodes; ++i) {
        const Episode ep = family_.sample_episode(
            MetaSplit::Val, 1000000000ull + i, cfg_.way, cfg_.shot, cfg_.query);
        val_accs.push_back(evaluate_episode(fwd, state, cfg_.meta, &cspec, ep));
      }
      const double val_acc = mean_of(val_accs);
      if (val_acc > best_acc) {
        best_acc = val_acc;
        best_epoch = epoch;
        best = {state.theta, state.critic, state.lslr, bn};
      }
      out.epochs_run = epoch;
      if (epoch - best_epoch >= cfg_.patience) break;
    }
    out.best_epoch = best_epoch;

    // test with the best-validation snapshot
    MetaState test_state = state;
    test_state.theta = best.theta;
    test_state.critic = best.critic;
    test_state.lslr = best.lslr;
    RunningStats test_bn = best.bn;
    const auto test_fwd = [&](const ParamSet& p, const Tensor& x) {
      return forward_model(model_, p, x, test_bn);
    };
    std::vector<double> test_accs;
    for (std::size_t i = 0; i < cfg_.test_episodes; ++i) {
      const Episode ep = family_.sample_episode(
          MetaSplit::Test, 2000000000ull + i, cfg_.way, cfg_.shot, cfg_.query);
      test_accs.push_back(
          evaluate_episode(test_fwd, test_state, cfg_.meta, &cspec, ep));
    }
    out.test_accuracy = mean_of(test_accs);
    out.ci95_per_episode = test_accs.size() >= 2 ? ci95(test_accs) : 0.0;
    out.wall_seconds = std::chrono::duration<double>(
                           std::chrono::steady_clock::now() - t0)
                           .count();

    if (cfg_.write_checkpoints) {
      std::filesystem::create_directories(run_dir());
      save_checkpoint(checkpoint_path(seed), pack_state(best.theta, best.critic,
                                                        best.lslr),
                      best.bn, checkpoint_meta(seed, out));
    }
    return out;
  }

  std::string run_dir() const {
    return cfg_.out_dir + "/" + cfg_.name;
  }
  std::string checkpoint_path(std::uint64_t seed) const {
    return run_dir() + "/seed_" + std::to_string(seed) + ".ckpt";
  }

  /// Reload a checkpoint and rerun the test protocol; used by tests and
  /// for post-hoc evaluation.
  double evaluate_checkpoint(const std::string& path) const {
    Checkpoint ckpt = load_checkpoint(path);
    ParamSet theta, critic;
    std::size_t lslr_steps = 0;
    for (const auto& e : ckpt.params.entries()) {
      if (e.name.rfind("lslr/", 0) == 0) {
        const std::size_t step_sep = e.name.rfind("/step");
        lslr_steps = std::max(
            lslr_steps,
            static_cast<std::size_t>(std::stoull(e.name.substr(step_sep + 5))) +
                1);
      }
    }
    for (const auto& e : ckpt.params.entries()) {
      if (e.name.rfind("theta/", 0) == 0) {
        theta.add(e.name.substr(6), e.tensor, e.partition);
      } else if (e.name.rfind("critic/", 0) == 0) {
        critic.add(e.name.substr(7), e.tensor, e.partition);
      }
    }
    LslrTable lslr = LslrTable::init(theta.names_in(Partition::Adapted),
                                     lslr_steps, 0.0);
    for (const auto& e : ckpt.params.entries()) {
      if (e.name.rfind("lslr/", 0) != 0) continue;
      const std::size_t step_sep = e.name.rfind("/step");
      const std::string row = e.name.substr(5, step_sep - 5);
      const std::size_t step = std::stoull(e.name.substr(step_sep + 5));
      lslr.set(row, step, e.tensor);
    }
    MetaState state;
    state.theta = std::move(theta);
    state.critic = std::move(critic);
    state.lslr = std::move(lslr);
    RunningStats bn = ckpt.stats;
    CriticSpec cspec;
    cspec.input_length = std::max<std::size_t>(critic_length(), 2);
    const auto fwd = [&](const ParamSet& p, const Tensor& x) {
      return forward_model(model_, p, x, bn);
    };
    std::vector<double> accs;
    for (std::size_t i = 0; i < cfg_.test_episodes; ++i) {
      const Episode ep = family_.sample_episode(
          MetaSplit::Test, 2000000000ull + i, cfg_.way, cfg_.shot, cfg_.query);
      accs.push_back(evaluate_episode(fwd, state, cfg_.meta, &cspec, ep));
    }
    return mean_of(accs);
  }

 private:
  TaskFamily build_family() const {
    if (cfg_.family == "gaussian_blobs") {
      return TaskFamily::gaussian_blobs(cfg_.blobs, cfg_.splits,
                                        cfg_.family_seed);
    }
    if (cfg_.family == "pattern_glyphs") {
      return TaskFamily::pattern_glyphs(cfg_.glyphs, cfg_.splits,
                                        cfg_.family_seed);
    }
    if (cfg_.family == "corpus") {
      if (cfg_.corpus_path.empty()) {
        throw OpError("config: tasks.family=corpus needs tasks.corpus_path");
      }
      return load_episode_file(cfg_.corpus_path);
    }
    throw OpError("config: unknown task family '" + cfg_.family + "'");
  }

  ModelSpec build_model_spec() const {
    const Shape& sample = family_.sample_shape();
    if (cfg_.preset == "mlp") {
      if (sample.size() != 1) {
        throw OpError("config: the mlp preset needs vector samples, family "
                      "provides " +
                      shape_str(sample));
      }
      MlpSpec spec = cfg_.mlp;
      spec.input_dim = sample[0];
      spec.num_classes = cfg_.way;
      return spec;
    }
    if (sample.size() != 3) {
      throw OpError("config: the " + cfg_.preset +
                    " preset needs (channels,h,w) samples, family provides " +
                    shape_str(sample));
    }
    if (cfg_.preset == "lowend") {
      LowEndSpec spec = cfg_.lowend;
      spec.in_channels = sample[0];
      spec.height = sample[1];
      spec.width = sample[2];
      spec.num_classes = cfg_.way;
      return spec;
    }
    if (cfg_.preset == "highend") {
      HighEndSpec spec = cfg_.highend;
      spec.in_channels = sample[0];
      spec.height = sample[1];
      spec.width = sample[2];
      spec.num_classes = cfg_.way;
      return spec;
    }
    throw OpError("config: unknown model preset '" + cfg_.preset + "'");
  }

  void validate() const {
    for (const MetaSplit split :
         {MetaSplit::Train, MetaSplit::Val, MetaSplit::Test}) {
      if (cfg_.way > family_.class_pool(split).size()) {
        throw OpError("config: way " + std::to_string(cfg_.way) +
                      " exceeds the " +
                      std::to_string(family_.class_pool(split).size()) +
                      "-class pool of split " + to_string(split));
      }
    }
    if (family_.kind() == FamilyKind::FileCorpus) {
      for (const MetaSplit split :
           {MetaSplit::Train, MetaSplit::Val, MetaSplit::Test}) {
        for (const std::size_t cls : family_.class_pool(split)) {
          if (family_.stored_samples(cls) < cfg_.shot + cfg_.query) {
            throw OpError("config: class '" + family_.class_name(cls) +
                          "' stores too few samples for shot+query");
          }
        }
      }
    }
    // instantiating the parameter specs validates the architecture
    (void)model_param_specs(model_);
  }

  ParamSet pack_state(const ParamSet& theta, const ParamSet& critic,
                      const LslrTable& lslr) const {
    ParamSet flat;
    for (const auto& e : theta.entries()) {
      flat.add("theta/" + e.name, e.tensor, e.partition);
    }
    for (const auto& e : critic.entries()) {
      flat.add("critic/" + e.name, e.tensor, e.partition);
    }
    for (const std::string& row : lslr.names()) {
      for (std::size_t s = 0; s < lslr.steps(); ++s) {
        flat.add("lslr/" + row + "/step" + std::to_string(s), lslr.at(row, s),
                 Partition::Shared);
      }
    }
    return flat;
  }

  nlohmann::json architecture_json() const {
    nlohmann::json arch;
    arch["preset"] = cfg_.preset;
    if (const auto* m = std::get_if<MlpSpec>(&model_)) {
      arch["input_dim"] = m->input_dim;
      arch["hidden"] = m->hidden;
      arch["num_classes"] = m->num_classes;
      arch["with_norm"] = m->with_norm;
    } else if (const auto* l = std::get_if<LowEndSpec>(&model_)) {
      arch["in_channels"] = l->in_channels;
      arch["height"] = l->height;
      arch["width"] = l->width;
      arch["filters"] = l->filters;
      arch["blocks"] = l->blocks;
      arch["num_classes"] = l->num_classes;
    } else if (const auto* h = std::get_if<HighEndSpec>(&model_)) {
      arch["in_channels"] = h->in_channels;
      arch["height"] = h->height;
      arch["width"] = h->width;
      arch["num_dense_stages"] = h->num_dense_stages;
      arch["units_per_stage"] = h->units_per_stage;
      arch["growth_rate"] = h->growth_rate;
      arch["transition_compression"] = h->transition_compression;
      arch["se_reduction"] = h->se_reduction;
      arch["bottleneck_mult"] = h->bottleneck_mult;
      arch["num_classes"] = h->num_classes;
    }
    return arch;
  }

  std::string checkpoint_meta(std::uint64_t seed, const SeedResult& r) const {
    nlohmann::json meta;
    meta["kind"] = "metacritic-checkpoint";
    meta["schema_version"] = 1;
    meta["seed"] = seed;
    meta["variant"] = to_string(cfg_.meta.variant);
    meta["architecture"] = architecture_json();
    meta["way"] = cfg_.way;
    meta["shot"] = cfg_.shot;
    meta["query"] = cfg_.query;
    meta["best_epoch"] = r.best_epoch;
    meta["bn_decay"] = cfg_.bn_decay;
    return meta.dump();
  }

  ExperimentConfig cfg_;
  TaskFamily family_;
  ModelSpec model_;
};

inline RunResult run_experiment(ExperimentConfig cfg) {
  return ExperimentRunner(std::move(cfg)).run();
}

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

inline ReportFormat parse_report_format(const std::string& s) {
  if (s == "table") return ReportFormat::Table;
  if (s == "csv") return ReportFormat::Csv;
  if (s == "json") return ReportFormat::Json;
  throw OpError("report: unknown format '" + s + "'");
}

/// "55.38 ± 0.39%" accuracy cells; wall clock as hours above one hour,
/// minutes otherwise.
inline std::string format_accuracy_cell(double mean, double ci) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f ± %.2f%%", 100.0 * mean,
                100.0 * ci);
  return buf;
}

inline std::string format_wall_cell(double mean_seconds, double std_seconds) {
  char buf[64];
  if (mean_seconds >= 3600.0) {
    std::snprintf(buf, sizeof(buf), "%.1f ± %.1fh", mean_seconds / 3600.0,
                  std_seconds / 3600.0);
  } else {
    std::snprintf(buf, sizeof(buf), "%.1f ± %.1fmin", mean_seconds / 60.0,
                  std_seconds / 60.0);
  }
  return buf;
}

inline nlohmann::json result_to_json(const RunResult& r) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["name"] = r.name;
  j["variant"] = r.variant;
  j["way"] = r.way;
  j["shot"] = r.shot;
  j["mean_accuracy"] = r.mean_accuracy;
  j["ci95_over_seeds"] = r.ci95_seed;
  j["wall_mean_seconds"] = r.wall_mean_seconds;
  j["wall_std_seconds"] = r.wall_std_seconds;
  j["per_seed"] = nlohmann::json::array();
  for (const SeedResult& s : r.per_seed) {
    nlohmann::json js;
    js["seed"] = s.seed;
    js["test_accuracy"] = s.test_accuracy;
    js["best_epoch"] = s.best_epoch;
    js["epochs_run"] = s.epochs_run;
    js["wall_seconds"] = s.wall_seconds;
    // CI over this seed's test episodes, NOT the headline per-seed CI
    js["ci95_per_episode"] = s.ci95_per_episode;
    js["min_critic_grad_norm"] = s.min_critic_grad_norm;
    j["per_seed"].push_back(js);
  }
  return j;
}

inline RunResult result_from_json(const nlohmann::json& j) {
  RunResult r;
  r.name = j.at("name");
  r.variant = j.at("variant");
  r.way = j.at("way");
  r.shot = j.at("shot");
  for (const auto& js : j.at("per_seed")) {
    SeedResult s;
    s.seed = js.at("seed");
    s.test_accuracy = js.at("test_accuracy");
    s.best_epoch = js.at("best_epoch");
    s.epochs_run = js.at("epochs_run");
    s.wall_seconds = js.at("wall_seconds");
    s.ci95_per_episode = js.at("ci95_per_episode");
    s.min_critic_grad_norm = js.value("min_critic_grad_norm", 0.0);
    r.per_seed.push_back(s);
  }
  r.aggregate();
  return r;
}

inline std::string emit_report(const std::vector<RunResult>& results,
                               ReportFormat format) {
  if (results.empty()) throw OpError("report: no results to render");
  std::ostringstream os;
  switch (format) {
    case ReportFormat::Table: {
      os << "experiment            variant          task      accuracy"
            "          wall clock\n";
      for (const RunResult& r : results) {
        char task[32];
        std::snprintf(task, sizeof(task), "%zu-way %zu-shot", r.way, r.shot);
        char line[256];
        std::snprintf(line, sizeof(line), "%-21s %-16s %-9s %-17s %s\n",
                      r.name.c_str(), r.variant.c_str(), task,
                      format_accuracy_cell(r.mean_accuracy, r.ci95_seed).c_str(),
                      format_wall_cell(r.wall_mean_seconds, r.wall_std_seconds)
                          .c_str());
        os << line;
      }
      return os.str();
    }
    case ReportFormat::Csv: {
      os << "name,variant,way,shot,seed,test_accuracy,best_epoch,epochs_run,"
            "wall_seconds,ci95_per_episode,mean_accuracy,ci95_over_seeds\n";
      char buf[64];
      const auto num = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
      };
      for (const RunResult& r : results) {
        for (const SeedResult& s : r.per_seed) {
          os << r.name << ',' << r.variant << ',' << r.way << ',' << r.shot
             << ',' << s.seed << ',' << num(s.test_accuracy) << ','
             << s.best_epoch << ',' << s.epochs_run << ','
             << num(s.wall_seconds) << ',' << num(s.ci95_per_episode) << ','
             << num(r.mean_accuracy) << ',' << num(r.ci95_seed) << '\n';
        }
      }
      return os.str();
    }
    case ReportFormat::Json: {
      nlohmann::json j = nlohmann::json::array();
      for (const RunResult& r : results) j.push_back(result_to_json(r));
      return j.dump(2) + "\n";
    }
  }
  throw OpError("report: unknown format");
}

inline void write_result_files(const RunResult& r, const std::string& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir + "/result.json");
    os << result_to_json(r).dump(2) << "\n";
  }
  {
    std::ofstream os(dir + "/result.csv");
    os << emit_report({r}, ReportFormat::Csv);
  }
}

}  // namespace metacritic
