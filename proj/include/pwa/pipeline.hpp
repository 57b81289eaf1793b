#pragma once

// In-process composition of the pipeline stages plus the flat key=value
// configuration used by the command-line tool. The CLI does nothing that
// is not expressed here.

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pwa/aggregation.hpp"
#include "pwa/detector_selection.hpp"
#include "pwa/evaluation.hpp"
#include "pwa/postprocess.hpp"
#include "pwa/retrieval.hpp"
#include "pwa/tensor_store.hpp"

namespace pwa {

struct PipelineConfig {
  double alpha = kDefaultAlpha;
  double beta = kDefaultBeta;
  std::size_t n_detectors = 25;
  std::size_t target_dim = 4096;
  std::size_t qe_k = 10;  // 0 disables query expansion
  bool qe_include_query = true;
  ApVariant ap_variant = ApVariant::Trapezoidal;
  bool exclude_query_image = true;
  bool final_l2 = true;
  double whiten_epsilon = kDefaultWhiteningEpsilon;
  bool fit_include_queries = false;
  std::size_t top_k = 0;  // 0 = full ranking
  std::size_t threads = 0;
  std::string grid_n;  // comma list; "C" stands for all channels
  std::string grid_m;  // comma list; "full" stands for the largest feasible M

  std::string tensors;
  std::string query_tensors;
  std::string whiten_tensors;
  std::string detectors;
  std::string model;
  std::string descriptors;
  std::string queries;
  std::string index;
  std::string rankings;
  std::string gt;
  std::string tensor;
  std::string channel;  // empty = every detector in `detectors`
  std::string out;
};

namespace detail {

inline std::size_t parse_count(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw Error(ErrorKind::InvalidArgument, key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  double out = 0.0;
  std::string rest;
  if (!(is >> out) || (is >> rest))
    throw Error(ErrorKind::InvalidArgument, key + ": expected a number, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw Error(ErrorKind::InvalidArgument, key + ": expected true/false, got '" + v + "'");
}

inline std::string fmt_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct ConfigKey {
  const char* name;
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

template <typename T>
ConfigKey string_key(const char* name, T PipelineConfig::*field) {
  return {name, [field](PipelineConfig& c, const std::string& v) { c.*field = v; },
          [field](const PipelineConfig& c) { return c.*field; }};
}

inline ConfigKey count_key(const char* name, std::size_t PipelineConfig::*field) {
  return {name, [name, field](PipelineConfig& c, const std::string& v) { c.*field = parse_count(name, v); },
          [field](const PipelineConfig& c) { return std::to_string(c.*field); }};
}

inline ConfigKey real_key(const char* name, double PipelineConfig::*field) {
  return {name, [name, field](PipelineConfig& c, const std::string& v) { c.*field = parse_real(name, v); },
          [field](const PipelineConfig& c) { return fmt_real(c.*field); }};
}

inline ConfigKey bool_key(const char* name, bool PipelineConfig::*field) {
  return {name, [name, field](PipelineConfig& c, const std::string& v) { c.*field = parse_bool(name, v); },
          [field](const PipelineConfig& c) { return std::string(c.*field ? "true" : "false"); }};
}

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      real_key("alpha", &PipelineConfig::alpha),
      real_key("beta", &PipelineConfig::beta),
      count_key("n_detectors", &PipelineConfig::n_detectors),
      count_key("target_dim", &PipelineConfig::target_dim),
      count_key("qe_k", &PipelineConfig::qe_k),
      bool_key("qe_include_query", &PipelineConfig::qe_include_query),
      {"ap_variant", [](PipelineConfig& c, const std::string& v) { c.ap_variant = parse_ap_variant(v); },
       [](const PipelineConfig& c) { return std::string(to_string(c.ap_variant)); }},
      bool_key("exclude_query_image", &PipelineConfig::exclude_query_image),
      bool_key("final_l2", &PipelineConfig::final_l2),
      real_key("whiten_epsilon", &PipelineConfig::whiten_epsilon),
      bool_key("fit_include_queries", &PipelineConfig::fit_include_queries),
      count_key("top_k", &PipelineConfig::top_k),
      count_key("threads", &PipelineConfig::threads),
      string_key("grid_n", &PipelineConfig::grid_n),
      string_key("grid_m", &PipelineConfig::grid_m),
      string_key("tensors", &PipelineConfig::tensors),
      string_key("query_tensors", &PipelineConfig::query_tensors),
      string_key("whiten_tensors", &PipelineConfig::whiten_tensors),
      string_key("detectors", &PipelineConfig::detectors),
      string_key("model", &PipelineConfig::model),
      string_key("descriptors", &PipelineConfig::descriptors),
      string_key("queries", &PipelineConfig::queries),
      string_key("index", &PipelineConfig::index),
      string_key("rankings", &PipelineConfig::rankings),
      string_key("gt", &PipelineConfig::gt),
      string_key("tensor", &PipelineConfig::tensor),
      string_key("channel", &PipelineConfig::channel),
      string_key("out", &PipelineConfig::out),
  };
  return keys;
}

inline std::string trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

inline void set_config_value(PipelineConfig& config, const std::string& key, const std::string& value) {
  for (const auto& k : detail::config_keys()) {
    if (key == k.name) {
      k.set(config, value);
      return;
    }
  }
  throw Error(ErrorKind::InvalidArgument, "unknown config key '" + key + "'");
}

/// Flat "key = value" text; '#' starts a comment line.
inline void apply_config_text(PipelineConfig& config, std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::InvalidArgument, "config line " + std::to_string(line_no) + ": expected key=value");
    set_config_value(config, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
  }
}

inline void apply_config_file(PipelineConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_config_text(config, ss.str());
}

/// Every key in a fixed order, as "key=value" lines.
inline std::vector<std::string> config_lines(const PipelineConfig& config) {
  std::vector<std::string> out;
  for (const auto& k : detail::config_keys()) out.push_back(std::string(k.name) + "=" + k.get(config));
  return out;
}

// --- tensor corpora --------------------------------------------------------

/// A named, lazily loaded set of tensors. Loading one tensor at a time keeps
/// memory bounded for real datasets.
struct TensorCorpus {
  std::vector<std::string> ids;
  std::function<FeatureMapTensor(std::size_t)> load;

  std::size_t size() const noexcept { return ids.size(); }
  bool empty() const noexcept { return ids.empty(); }
};

/// All `*.pwat` files in `dir`, id = file stem, ordered by id.
inline TensorCorpus tensor_directory(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw Error(ErrorKind::Io, "tensor directory '" + dir.string() + "' not found");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".pwat") files.push_back(e.path());
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.stem().string() < b.stem().string(); });
  TensorCorpus corpus;
  for (const auto& f : files) corpus.ids.push_back(f.stem().string());
  corpus.load = [files](std::size_t i) { return read_tensor(files.at(i)); };
  return corpus;
}

inline TensorCorpus in_memory_corpus(std::vector<std::string> ids, std::vector<FeatureMapTensor> tensors) {
  if (ids.size() != tensors.size()) throw Error(ErrorKind::DimMismatch, "one id per tensor required");
  auto shared = std::make_shared<const std::vector<FeatureMapTensor>>(std::move(tensors));
  return {std::move(ids), [shared](std::size_t i) { return shared->at(i); }};
}

// --- stages ----------------------------------------------------------------

inline ChannelStats fit_corpus_stats(std::span<const TensorCorpus* const> corpora) {
  ChannelStatsAccumulator acc;
  for (const auto* corpus : corpora)
    for (std::size_t i = 0; i < corpus->size(); ++i) acc.add(corpus->load(i));
  return acc.finish();
}

/// Raw descriptors as stored on disk: float32, not normalized.
inline DescriptorRecord to_record(const RawDescriptor& raw) {
  DescriptorRecord rec{raw.image_id, std::vector<float>(raw.values.size()), false};
  for (std::size_t i = 0; i < raw.values.size(); ++i) rec.values[i] = static_cast<float>(raw.values[i]);
  return rec;
}

/// Widens a stored record back to a RawDescriptor. The block structure is not
/// recorded on disk, so detector and channel counts are left at zero.
inline RawDescriptor to_raw(const DescriptorRecord& rec) {
  RawDescriptor raw;
  raw.image_id = rec.image_id;
  raw.values.assign(rec.values.begin(), rec.values.end());
  return raw;
}

inline std::vector<RawDescriptor> to_raw(std::span<const DescriptorRecord> recs) {
  std::vector<RawDescriptor> out;
  out.reserve(recs.size());
  for (const auto& r : recs) out.push_back(to_raw(r));
  return out;
}

inline std::vector<DescriptorRecord> aggregate_corpus(const TensorCorpus& corpus, const DetectorSet& detectors,
                                                      double alpha, double beta, std::size_t threads = 1) {
  std::vector<DescriptorRecord> out(corpus.size());
  detail::parallel_for(corpus.size(), threads, [&](std::size_t i) {
    out[i] = to_record(aggregate_pwa(corpus.load(i), detectors, alpha, beta, corpus.ids[i]));
  });
  return out;
}

inline std::size_t feasible_dim(std::size_t requested, std::size_t dim, std::size_t count) {
  return std::max<std::size_t>(1, std::min({requested, dim, count == 0 ? 0 : count - 1}));
}

/// Fits whitening on stored raw records, capping the target dim at what the
/// training set supports.
inline WhiteningModel fit_whitening_records(std::span<const DescriptorRecord> training, std::size_t target_dim,
                                            double epsilon = kDefaultWhiteningEpsilon) {
  if (training.size() < 2)
    throw Error(ErrorKind::InvalidArgument, "whitening needs at least 2 training descriptors");
  const auto raw = to_raw(training);
  return fit_whitening(raw, feasible_dim(target_dim, training.front().dim(), training.size()), epsilon);
}

inline std::vector<DescriptorRecord> postprocess_records(std::span<const DescriptorRecord> raw,
                                                         const WhiteningModel& model,
                                                         PostprocessOptions options = {},
                                                         std::size_t threads = 1) {
  std::vector<DescriptorRecord> out(raw.size());
  detail::parallel_for(raw.size(), threads,
                       [&](std::size_t i) { out[i] = apply_postprocess(to_raw(raw[i]), model, options); });
  return out;
}

struct QueryOptions {
  std::size_t qe_k = 10;
  bool qe_include_query = true;
  std::size_t top_k = 0;
  std::size_t threads = 1;
};

inline std::vector<RankedList> run_queries(const DescriptorIndex& index, std::span<const DescriptorRecord> queries,
                                           QueryOptions options = {}) {
  std::vector<RankedList> out(queries.size());
  detail::parallel_for(queries.size(), options.threads, [&](std::size_t i) {
    const auto& q = queries[i];
    if (options.qe_k > 0 && !index.empty()) {
      const auto expanded =
          average_query_expansion(q.values, index, {options.qe_k, options.qe_include_query, 1});
      out[i] = search(index, expanded, {options.top_k, 1}, q.image_id);
    } else {
      out[i] = search(index, q.values, {options.top_k, 1}, q.image_id);
    }
  });
  return out;
}

// --- whole-pipeline evaluation ---------------------------------------------

struct RetrievalBenchmark {
  TensorCorpus database;
  TensorCorpus queries;    // ids are ground-truth query ids
  TensorCorpus whitening;  // empty: fit whitening on the database
  std::vector<GroundTruthEntry> ground_truth;
};

struct AblationPoint {
  std::size_t n_detectors = 0;
  std::size_t requested_dim = 0;
  std::size_t output_dim = 0;
  double mean_ap = 0.0;
};

namespace detail {

struct AggregatedBenchmark {
  std::vector<DescriptorRecord> database;
  std::vector<DescriptorRecord> queries;
  std::vector<DescriptorRecord> whitening;  // empty: use database
};

inline AggregatedBenchmark aggregate_benchmark(const RetrievalBenchmark& bench, const DetectorSet& detectors,
                                               const PipelineConfig& config) {
  AggregatedBenchmark out;
  out.database = aggregate_corpus(bench.database, detectors, config.alpha, config.beta, config.threads);
  out.queries = aggregate_corpus(bench.queries, detectors, config.alpha, config.beta, config.threads);
  if (!bench.whitening.empty())
    out.whitening = aggregate_corpus(bench.whitening, detectors, config.alpha, config.beta, config.threads);
  return out;
}

inline AblationPoint evaluate_aggregated(const AggregatedBenchmark& agg,
                                         std::span<const GroundTruthEntry> ground_truth, std::size_t n_detectors,
                                         std::size_t target_dim, const PipelineConfig& config) {
  const auto& training = agg.whitening.empty() ? agg.database : agg.whitening;
  const auto model = fit_whitening_records(training, target_dim, config.whiten_epsilon);
  const PostprocessOptions post{config.final_l2};
  const auto db = postprocess_records(agg.database, model, post, config.threads);
  const auto queries = postprocess_records(agg.queries, model, post, config.threads);
  const auto index = build_index(db);
  const auto rankings =
      run_queries(index, queries, {config.qe_k, config.qe_include_query, config.top_k, config.threads});
  const auto report =
      mean_average_precision(rankings, ground_truth, {config.ap_variant, config.exclude_query_image});
  return {n_detectors, target_dim, model.output_dim(), report.mean_ap};
}

}  // namespace detail

/// Aggregate, whiten, index, search and score with a given detector set.
inline AblationPoint evaluate_detectors(const RetrievalBenchmark& bench, const DetectorSet& detectors,
                                        std::size_t target_dim, const PipelineConfig& config) {
  const auto agg = detail::aggregate_benchmark(bench, detectors, config);
  return detail::evaluate_aggregated(agg, bench.ground_truth, detectors.size(), target_dim, config);
}

inline ChannelStats fit_benchmark_stats(const RetrievalBenchmark& bench, bool include_queries) {
  std::vector<const TensorCorpus*> corpora{&bench.database};
  if (include_queries) corpora.push_back(&bench.queries);
  return fit_corpus_stats(corpora);
}

enum class AblationAxis { Detectors, Dimensions };

/// Parses a comma list; `symbolic` (e.g. "C" or "full") maps to `symbolic_value`.
inline std::vector<std::size_t> parse_grid(const std::string& text, std::string_view symbolic,
                                           std::size_t symbolic_value) {
  std::vector<std::size_t> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = detail::trim(item);
    if (item.empty()) continue;
    out.push_back(item == symbolic ? symbolic_value : detail::parse_count("grid", item));
  }
  if (out.empty()) throw Error(ErrorKind::InvalidArgument, "empty ablation grid");
  return out;
}

/// One mAP per grid point. Over N, each point selects the top-N variance
/// channels and whitens to config.target_dim; over M, detectors are fixed to
/// config.n_detectors and each point whitens to M.
inline std::vector<AblationPoint> ablate(const RetrievalBenchmark& bench, const PipelineConfig& config,
                                         AblationAxis axis, std::span<const std::size_t> grid) {
  const auto stats = fit_benchmark_stats(bench, config.fit_include_queries);
  std::vector<AblationPoint> rows;
  if (axis == AblationAxis::Detectors) {
    for (auto n : grid) {
      const auto detectors = select_detectors(stats, n);
      rows.push_back(evaluate_detectors(bench, detectors, config.target_dim, config));
    }
  } else {
    const auto detectors = select_detectors(stats, config.n_detectors);
    const auto agg = detail::aggregate_benchmark(bench, detectors, config);
    for (auto m : grid)
      rows.push_back(detail::evaluate_aggregated(agg, bench.ground_truth, detectors.size(), m, config));
  }
  return rows;
}

inline void write_ablation_table(std::ostream& os, std::span<const AblationPoint> rows,
                                 std::span<const std::string> header = {}) {
  for (const auto& line : header) os << "# " << line << '\n';
  os << "N\tM_requested\tM\tmAP\n";
  for (const auto& r : rows)
    os << r.n_detectors << '\t' << r.requested_dim << '\t' << r.output_dim << '\t' << format_fixed6(r.mean_ap)
       << '\n';
}

}  // namespace pwa
