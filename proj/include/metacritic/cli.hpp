#pragma once

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "metacritic/gradcheck.hpp"
#include "metacritic/harness.hpp"

namespace metacritic {

namespace cli_detail {

inline void apply_overrides(ExperimentConfig& cfg,
                            const std::vector<std::string>& sets) {
  for (const std::string& kv : sets) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos) {
      throw OpError("--set expects key=value, got '" + kv + "'");
    }
    apply_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
}

inline int run_command(const std::string& config_path,
                       const std::vector<std::string>& sets,
                       const std::vector<std::uint64_t>& seeds,
                       const std::string& out_dir, bool parallel) {
  ExperimentConfig cfg;
  if (!config_path.empty()) apply_config_file(cfg, config_path);
  apply_overrides(cfg, sets);
  if (!seeds.empty()) cfg.seeds = seeds;
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  if (parallel) cfg.parallel_seeds = true;

  ExperimentRunner runner(std::move(cfg));
  const RunResult result = runner.run();
  std::cout << emit_report({result}, ReportFormat::Table);
  std::cout << "results written to " << runner.run_dir() << "\n";
  return 0;
}

inline int gradcheck_command() {
  const std::vector<GradCheckRow> rows = run_gradcheck_suite();
  bool all_ok = true;
  for (const GradCheckRow& row : rows) {
    const bool ok = row.passed();
    all_ok = all_ok && ok;
    std::printf("%-28s max rel err %.3e  (tolerance %.0e)  %s\n",
                row.name.c_str(), row.max_rel_err, row.tolerance,
                ok ? "ok" : "FAIL");
  }
  std::printf("%s\n", all_ok ? "gradcheck passed" : "gradcheck FAILED");
  return all_ok ? 0 : 1;
}

inline int estimate_memory_command(std::int64_t params, std::int64_t bytes) {
  const double total = estimate_critic_memory(params, bytes);
  std::printf("feature length      %lld x 41 = %.0f\n",
              static_cast<long long>(params), 41.0 * static_cast<double>(params));
  std::printf("square weight cells %.6e\n",
              41.0 * static_cast<double>(params) * 41.0 *
                  static_cast<double>(params));
  std::printf("memory              %.6e bytes (%.2f TB)\n", total,
              total / 1e12);
  return 0;
}

inline int gen_corpus_command(const std::string& out_path,
                              std::size_t samples_per_class,
                              const std::vector<std::string>& sets) {
  ExperimentConfig cfg;
  apply_overrides(cfg, sets);
  TaskFamily fam =
      cfg.family == "pattern_glyphs"
          ? TaskFamily::pattern_glyphs(cfg.glyphs, cfg.splits, cfg.family_seed)
          : TaskFamily::gaussian_blobs(cfg.blobs, cfg.splits, cfg.family_seed);
  const Corpus corpus = fam.materialize(samples_per_class);
  corpus_io::write_corpus(corpus, out_path);
  std::cout << "wrote " << corpus.classes.size() << " classes x "
            << samples_per_class << " samples to " << out_path << "\n";
  return 0;
}

inline int report_command(const std::vector<std::string>& inputs,
                          const std::string& format) {
  std::vector<RunResult> results;
  for (const std::string& path : inputs) {
    std::ifstream is(path);
    if (!is) throw OpError("report: cannot open '" + path + "'");
    nlohmann::json j = nlohmann::json::parse(is);
    if (j.is_array()) {
      for (const auto& item : j) results.push_back(result_from_json(item));
    } else {
      results.push_back(result_from_json(j));
    }
  }
  std::cout << emit_report(results, parse_report_format(format));
  return 0;
}

}  // namespace cli_detail

inline int cli_main(int argc, char** argv) {
  CLI::App app{"desk-scale few-shot meta-learning with a learned label-free "
               "critic loss"};
  app.require_subcommand(1);

  std::string config_path, out_dir, format = "table", corpus_out;
  std::vector<std::string> sets, report_inputs;
  std::vector<std::uint64_t> seeds;
  bool parallel = false;
  std::int64_t est_params = 0, est_bytes = 4;
  std::size_t samples_per_class = 64;

  CLI::App* run = app.add_subcommand("run", "train and evaluate an experiment");
  run->add_option("--config", config_path, "flat key=value config file");
  run->add_option("--set", sets, "override one config key (section.key=value)")
      ->take_all();
  run->add_option("--seed", seeds, "replace the seed list")->take_all();
  run->add_option("--out", out_dir, "output directory (or METACRITIC_OUT)");
  run->add_flag("--parallel-seeds", parallel, "run seeds on worker threads");

  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference gradient audit");

  CLI::App* estimate = app.add_subcommand(
      "estimate-memory",
      "first fully-connected weight size if parameters join the features");
  estimate->add_option("--params", est_params, "base model parameter count")
      ->required();
  estimate->add_option("--bytes", est_bytes, "bytes per value (4 or 8)");

  CLI::App* gen =
      app.add_subcommand("gen-corpus", "write a synthetic episode corpus");
  gen->add_option("--out", corpus_out, "output corpus path")->required();
  gen->add_option("--samples-per-class", samples_per_class,
                  "stored samples per class");
  gen->add_option("--set", sets, "family configuration overrides")->take_all();

  CLI::App* report =
      app.add_subcommand("report", "re-render stored result records");
  report->add_option("--input", report_inputs, "result.json files")
      ->required()
      ->take_all();
  report->add_option("--format", format, "table, csv or json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (run->parsed()) {
      return cli_detail::run_command(config_path, sets, seeds, out_dir,
                                     parallel);
    }
    if (gradcheck->parsed()) return cli_detail::gradcheck_command();
    if (estimate->parsed()) {
      return cli_detail::estimate_memory_command(est_params, est_bytes);
    }
    if (gen->parsed()) {
      return cli_detail::gen_corpus_command(corpus_out, samples_per_class, sets);
    }
    if (report->parsed()) {
      return cli_detail::report_command(report_inputs, format);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace metacritic
