// pwa: command-line driver for part-based weighting aggregation.
//
// Every subcommand reads a flat key=value config (--config), applies flag
// overrides on top, prints the effective configuration to stderr, and then
// reads/writes only the PWAT/PWAD/PWAS/PWAW files and text reports.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "pwa/pwa.hpp"

namespace fs = std::filesystem;

namespace {

enum ExitCode : int {
  kOk = 0,
  kIoError = 1,
  kUsage = 2,
  kDataFormat = 3,
  kNumeric = 4,
};

int exit_code_for(const pwa::Error& e) {
  switch (e.category()) {
    case pwa::ErrorCategory::Io: return kIoError;
    case pwa::ErrorCategory::Usage: return kUsage;
    case pwa::ErrorCategory::DataFormat: return kDataFormat;
    case pwa::ErrorCategory::Numeric: return kNumeric;
  }
  return kIoError;
}

struct Command {
  std::string name;
  CLI::App* app = nullptr;
  std::map<std::string, std::string> overrides;
};

const std::string& require(const std::string& value, const char* key) {
  if (value.empty()) throw pwa::Error(pwa::ErrorKind::InvalidArgument, std::string("missing required key '") + key + "'");
  return value;
}

std::vector<std::string> provenance(const std::string& command, const pwa::PipelineConfig& config) {
  std::vector<std::string> lines{"pwa " + command};
  for (auto& l : pwa::config_lines(config)) lines.push_back(std::move(l));
  return lines;
}

// Text outputs go to `out`, or stdout when it is empty or "-".
template <typename Fn>
void write_text(const std::string& out, Fn&& fn) {
  if (out.empty() || out == "-") {
    fn(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream os(out, std::ios::binary | std::ios::trunc);
  if (!os) throw pwa::Error(pwa::ErrorKind::Io, "cannot open '" + out + "' for writing");
  fn(os);
  os.flush();
  if (!os) throw pwa::Error(pwa::ErrorKind::Io, "write failed on '" + out + "'");
}

void cmd_fit_detectors(const pwa::PipelineConfig& c) {
  const auto database = pwa::tensor_directory(require(c.tensors, "tensors"));
  std::vector<const pwa::TensorCorpus*> corpora{&database};
  pwa::TensorCorpus queries;
  if (c.fit_include_queries) {
    queries = pwa::tensor_directory(require(c.query_tensors, "query_tensors"));
    corpora.push_back(&queries);
  }
  const auto stats = pwa::fit_corpus_stats(corpora);
  const auto detectors = pwa::select_detectors(stats, c.n_detectors);
  pwa::save_detector_set(require(c.out, "out"), detectors);
  std::cerr << "selected " << detectors.size() << " of " << detectors.source_channels() << " channels from "
            << stats.sample_count << " tensors\n";
}

void cmd_aggregate(const pwa::PipelineConfig& c) {
  const auto corpus = pwa::tensor_directory(require(c.tensors, "tensors"));
  const auto detectors = pwa::load_detector_set(require(c.detectors, "detectors"));
  const auto records = pwa::aggregate_corpus(corpus, detectors, c.alpha, c.beta, c.threads);
  pwa::write_descriptors(require(c.out, "out"), records);
  std::cerr << "aggregated " << records.size() << " tensors into " << detectors.size() * detectors.source_channels()
            << "-dim descriptors\n";
}

void cmd_fit_whitening(const pwa::PipelineConfig& c) {
  const auto training = pwa::read_descriptors(require(c.descriptors, "descriptors"));
  const auto model = pwa::fit_whitening_records(training, c.target_dim, c.whiten_epsilon);
  pwa::save_whitening(require(c.out, "out"), model);
  if (model.output_dim() < c.target_dim)
    std::cerr << "target_dim reduced from " << c.target_dim << " to " << model.output_dim() << '\n';
  std::cerr << "whitening " << model.input_dim() << " -> " << model.output_dim() << " from " << training.size()
            << " descriptors\n";
}

void cmd_postprocess(const pwa::PipelineConfig& c) {
  const auto raw = pwa::read_descriptors(require(c.descriptors, "descriptors"));
  const auto model = pwa::load_whitening(require(c.model, "model"));
  const auto out = pwa::postprocess_records(raw, model, {c.final_l2}, c.threads);
  pwa::write_descriptors(require(c.out, "out"), out);
  std::cerr << "post-processed " << out.size() << " descriptors to dim " << model.output_dim() << '\n';
}

void cmd_index(const pwa::PipelineConfig& c) {
  const auto records = pwa::read_descriptors(require(c.descriptors, "descriptors"));
  const auto index = pwa::build_index(records);
  pwa::write_descriptors(require(c.out, "out"), records);
  std::cerr << "indexed " << index.size() << " descriptors of dim " << index.dim() << '\n';
}

void cmd_search(const std::string& name, const pwa::PipelineConfig& c) {
  const auto db = pwa::read_descriptors(require(c.index, "index"));
  const auto index = pwa::build_index(db);
  const auto queries = pwa::read_descriptors(require(c.queries, "queries"));
  const auto rankings = pwa::run_queries(index, queries, {c.qe_k, c.qe_include_query, c.top_k, c.threads});
  const auto header = provenance(name, c);
  write_text(c.out, [&](std::ostream& os) { pwa::write_rankings(os, rankings, header); });
}

void cmd_eval(const std::string& name, const pwa::PipelineConfig& c) {
  std::ifstream in(require(c.rankings, "rankings"));
  if (!in) throw pwa::Error(pwa::ErrorKind::Io, "cannot open rankings '" + c.rankings + "'");
  const auto rankings = pwa::read_rankings(in);
  const auto gt = pwa::parse_ground_truth(require(c.gt, "gt"));
  const auto report = pwa::mean_average_precision(rankings, gt, {c.ap_variant, c.exclude_query_image});
  const auto header = provenance(name, c);
  write_text(c.out, [&](std::ostream& os) { pwa::write_report(os, report, header); });
}

void cmd_ablate(const std::string& name, const pwa::PipelineConfig& c) {
  pwa::RetrievalBenchmark bench;
  bench.database = pwa::tensor_directory(require(c.tensors, "tensors"));
  bench.queries = pwa::tensor_directory(require(c.query_tensors, "query_tensors"));
  if (!c.whiten_tensors.empty()) bench.whitening = pwa::tensor_directory(c.whiten_tensors);
  bench.ground_truth = pwa::parse_ground_truth(require(c.gt, "gt"));
  if (c.grid_n.empty() == c.grid_m.empty())
    throw pwa::Error(pwa::ErrorKind::InvalidArgument, "set exactly one of grid_n or grid_m");
  if (bench.database.empty()) throw pwa::Error(pwa::ErrorKind::InvalidArgument, "no database tensors");

  const std::size_t channels = bench.database.load(0).channels();
  std::vector<pwa::AblationPoint> rows;
  if (!c.grid_n.empty()) {
    const auto grid = pwa::parse_grid(c.grid_n, "C", channels);
    rows = pwa::ablate(bench, c, pwa::AblationAxis::Detectors, grid);
  } else {
    const auto grid = pwa::parse_grid(c.grid_m, "full", c.n_detectors * channels);
    rows = pwa::ablate(bench, c, pwa::AblationAxis::Dimensions, grid);
  }
  const auto header = provenance(name, c);
  write_text(c.out, [&](std::ostream& os) { pwa::write_ablation_table(os, rows, header); });
}

void cmd_dump_weights(const pwa::PipelineConfig& c) {
  const fs::path tensor_path = require(c.tensor, "tensor");
  const auto tensor = pwa::read_tensor(tensor_path);
  std::vector<std::uint32_t> channels;
  if (!c.channel.empty()) {
    channels.push_back(static_cast<std::uint32_t>(pwa::detail::parse_count("channel", c.channel)));
  } else {
    const auto detectors = pwa::load_detector_set(require(c.detectors, "detectors (or channel)"));
    channels.assign(detectors.selected().begin(), detectors.selected().end());
  }
  const fs::path out_dir = require(c.out, "out");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw pwa::Error(pwa::ErrorKind::Io, "cannot create '" + out_dir.string() + "': " + ec.message());
  for (auto ch : channels) {
    const auto map = pwa::compute_weights(tensor, ch, c.alpha, c.beta);
    pwa::write_pgm(out_dir / (tensor_path.stem().string() + "_ch" + std::to_string(ch) + ".pgm"), map);
  }
  std::cerr << "wrote " << channels.size() << " weight maps to " << out_dir.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Part-based weighting aggregation: detector fitting, aggregation, whitening, retrieval, evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  app.add_option("--config", config_path, "flat key=value config file; flags override it");

  const std::vector<std::pair<std::string, std::vector<std::string>>> specs = {
      {"fit-detectors", {"tensors", "n_detectors", "fit_include_queries", "query_tensors", "out"}},
      {"aggregate", {"tensors", "detectors", "alpha", "beta", "threads", "out"}},
      {"fit-whitening", {"descriptors", "target_dim", "whiten_epsilon", "out"}},
      {"postprocess", {"descriptors", "model", "final_l2", "threads", "out"}},
      {"index", {"descriptors", "out"}},
      {"search", {"index", "queries", "qe_k", "qe_include_query", "top_k", "threads", "out"}},
      {"eval", {"rankings", "gt", "ap_variant", "exclude_query_image", "out"}},
      {"ablate",
       {"tensors", "query_tensors", "whiten_tensors", "gt", "grid_n", "grid_m", "n_detectors", "target_dim", "alpha",
        "beta", "qe_k", "qe_include_query", "ap_variant", "exclude_query_image", "final_l2", "whiten_epsilon",
        "fit_include_queries", "threads", "out"}},
      {"dump-weights", {"tensor", "detectors", "channel", "alpha", "beta", "out"}},
  };
  const std::map<std::string, std::string> descriptions = {
      {"fit-detectors", "fit channel variances over a tensor directory and write the top-N detector set (PWAS)"},
      {"aggregate", "aggregate every tensor in a directory into raw descriptors (PWAD)"},
      {"fit-whitening", "fit PCA-whitening on raw descriptors (PWAW)"},
      {"postprocess", "normalize, whiten and re-normalize raw descriptors (PWAD)"},
      {"index", "validate final descriptors as a search index and write it (PWAD)"},
      {"search", "rank the index for every query descriptor, optionally with query expansion"},
      {"eval", "score rankings against Oxford-style ground truth"},
      {"ablate", "run the whole pipeline over a grid of N (grid_n) or M (grid_m)"},
      {"dump-weights", "export spatial weight maps of a tensor as PGM images"},
  };

  std::vector<Command> commands(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    auto& cmd = commands[i];
    cmd.name = specs[i].first;
    cmd.app = app.add_subcommand(cmd.name, descriptions.at(cmd.name));
    for (const auto& key : specs[i].second) {
      auto* overrides = &cmd.overrides;
      cmd.app->add_option_function<std::string>(
          "--" + key, [overrides, key](const std::string& v) { (*overrides)[key] = v; }, "config key '" + key + "'");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  for (auto& cmd : commands) {
    if (!cmd.app->parsed()) continue;
    try {
      pwa::PipelineConfig config;
      if (!config_path.empty()) pwa::apply_config_file(config, config_path);
      for (const auto& [key, value] : cmd.overrides) pwa::set_config_value(config, key, value);

      std::cerr << "# pwa " << cmd.name << '\n';
      for (const auto& line : pwa::config_lines(config)) std::cerr << "#   " << line << '\n';

      if (cmd.name == "fit-detectors") cmd_fit_detectors(config);
      else if (cmd.name == "aggregate") cmd_aggregate(config);
      else if (cmd.name == "fit-whitening") cmd_fit_whitening(config);
      else if (cmd.name == "postprocess") cmd_postprocess(config);
      else if (cmd.name == "index") cmd_index(config);
      else if (cmd.name == "search") cmd_search(cmd.name, config);
      else if (cmd.name == "eval") cmd_eval(cmd.name, config);
      else if (cmd.name == "ablate") cmd_ablate(cmd.name, config);
      else if (cmd.name == "dump-weights") cmd_dump_weights(config);
      return kOk;
    } catch (const pwa::Error& e) {
      std::cerr << "pwa " << cmd.name << ": " << e.what() << '\n';
      return exit_code_for(e);
    } catch (const std::exception& e) {
      std::cerr << "pwa " << cmd.name << ": " << e.what() << '\n';
      return kIoError;
    }
  }
  return kUsage;
}
