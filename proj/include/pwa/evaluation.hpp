#pragma once

// Oxford/Paris ground truth and average precision.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pwa/retrieval.hpp"

namespace pwa {

struct CropBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  friend bool operator==(const CropBox&, const CropBox&) = default;
};

struct GroundTruthEntry {
  std::string query_id;
  std::string query_image_id;
  CropBox crop;
  std::set<std::string> good;
  std::set<std::string> ok;
  std::set<std::string> junk;

  friend bool operator==(const GroundTruthEntry&, const GroundTruthEntry&) = default;
};

inline void validate(const GroundTruthEntry& e) {
  if (!(e.crop.x1 < e.crop.x2 && e.crop.y1 < e.crop.y2))
    throw Error(ErrorKind::InvalidGroundTruth, "query '" + e.query_id + "' has a malformed crop box");
  const auto overlap = [&](const std::set<std::string>& a, const std::set<std::string>& b,
                           const char* na, const char* nb) {
    for (const auto& id : a)
      if (b.count(id))
        throw Error(ErrorKind::InvalidGroundTruth, "query '" + e.query_id + "': '" + id +
                                                       "' is in both " + na + " and " + nb);
  };
  overlap(e.good, e.ok, "good", "ok");
  overlap(e.good, e.junk, "good", "junk");
  overlap(e.ok, e.junk, "ok", "junk");
}

namespace detail {

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "missing ground-truth file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::set<std::string> read_id_list(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string id, extra;
    if (!(ls >> id)) continue;
    if (ls >> extra)
      throw Error(ErrorKind::Parse, path.string() + ":" + std::to_string(line_no) +
                                        ": expected one image name per line");
    ids.insert(id);
  }
  return ids;
}

}  // namespace detail

/// Parses `<q>_query.txt` ("name x1 y1 x2 y2") plus `<q>_good.txt`,
/// `<q>_ok.txt` and `<q>_junk.txt` for every query in `dir`, ordered by
/// query id. The Oxford "oxc1_" prefix on query image names is stripped.
inline std::vector<GroundTruthEntry> parse_ground_truth(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir))
    throw Error(ErrorKind::Io, "ground-truth directory '" + dir.string() + "' not found");
  constexpr std::string_view suffix = "_query.txt";
  std::vector<std::string> queries;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.size() > suffix.size() && name.ends_with(suffix))
      queries.push_back(name.substr(0, name.size() - suffix.size()));
  }
  std::sort(queries.begin(), queries.end());

  std::vector<GroundTruthEntry> out;
  for (const auto& q : queries) {
    GroundTruthEntry e;
    e.query_id = q;
    const auto query_path = dir / (q + "_query.txt");
    std::istringstream in(detail::read_text(query_path));
    std::string extra;
    if (!(in >> e.query_image_id >> e.crop.x1 >> e.crop.y1 >> e.crop.x2 >> e.crop.y2) || (in >> extra))
      throw Error(ErrorKind::Parse, query_path.string() + ": expected 'name x1 y1 x2 y2'");
    if (e.query_image_id.starts_with("oxc1_")) e.query_image_id.erase(0, 5);
    e.good = detail::read_id_list(dir / (q + "_good.txt"));
    e.ok = detail::read_id_list(dir / (q + "_ok.txt"));
    e.junk = detail::read_id_list(dir / (q + "_junk.txt"));
    validate(e);
    out.push_back(std::move(e));
  }
  return out;
}

enum class ApVariant {
  Trapezoidal,  // original Oxford compute_ap
  Rectangular,  // sum of precision at each positive over #positives
};

inline std::string_view to_string(ApVariant v) {
  return v == ApVariant::Trapezoidal ? "trapezoidal" : "rectangular";
}

inline ApVariant parse_ap_variant(std::string_view s) {
  if (s == "trapezoidal") return ApVariant::Trapezoidal;
  if (s == "rectangular") return ApVariant::Rectangular;
  throw Error(ErrorKind::InvalidArgument, "unknown AP variant '" + std::string(s) + "'");
}

struct EvaluationOptions {
  ApVariant variant = ApVariant::Trapezoidal;
  // Drop the query's own database image from its ranking (and from positives).
  bool exclude_query_image = true;
};

/// Positives are good ∪ ok; junk entries are removed from the ranking first.
inline double average_precision(const RankedList& ranked, const GroundTruthEntry& entry,
                                EvaluationOptions options = {}) {
  const auto excluded = [&](const std::string& id) {
    return entry.junk.count(id) > 0 || (options.exclude_query_image && id == entry.query_image_id);
  };
  std::size_t positives = 0;
  for (const auto* set : {&entry.good, &entry.ok})
    for (const auto& id : *set)
      if (!excluded(id)) ++positives;
  if (positives == 0)
    throw Error(ErrorKind::InvalidGroundTruth, "query '" + entry.query_id + "' has no positives");

  double ap = 0.0;
  double old_recall = 0.0;
  double old_precision = 1.0;
  std::size_t found = 0;
  std::size_t rank = 0;
  for (const auto& hit : ranked.hits) {
    if (excluded(hit.image_id)) continue;
    const bool positive = entry.good.count(hit.image_id) > 0 || entry.ok.count(hit.image_id) > 0;
    if (positive) ++found;
    const double recall = double(found) / double(positives);
    const double precision = double(found) / double(rank + 1);
    if (options.variant == ApVariant::Trapezoidal)
      ap += (recall - old_recall) * (old_precision + precision) / 2.0;
    else
      ap += (recall - old_recall) * precision;
    old_recall = recall;
    old_precision = precision;
    ++rank;
  }
  return ap;
}

struct EvaluationReport {
  ApVariant variant = ApVariant::Trapezoidal;
  std::vector<std::pair<std::string, double>> per_query;  // ground-truth order
  double mean_ap = 0.0;
};

/// Unweighted mean over the ground-truth queries. Rankings for queries not in
/// the ground truth are ignored.
inline EvaluationReport mean_average_precision(std::span<const RankedList> rankings,
                                               std::span<const GroundTruthEntry> ground_truth,
                                               EvaluationOptions options = {}) {
  std::map<std::string, const RankedList*> by_query;
  for (const auto& r : rankings) by_query.emplace(r.query_id, &r);
  EvaluationReport report;
  report.variant = options.variant;
  if (ground_truth.empty()) throw Error(ErrorKind::InvalidArgument, "no ground-truth queries");
  double sum = 0.0;
  for (const auto& gt : ground_truth) {
    const auto it = by_query.find(gt.query_id);
    if (it == by_query.end())
      throw Error(ErrorKind::MissingQuery, "no ranking for query '" + gt.query_id + "'");
    const double ap = average_precision(*it->second, gt, options);
    report.per_query.emplace_back(gt.query_id, ap);
    sum += ap;
  }
  report.mean_ap = sum / double(ground_truth.size());
  return report;
}

inline std::string format_fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline void write_report(std::ostream& os, const EvaluationReport& report,
                         std::span<const std::string> header = {}) {
  for (const auto& line : header) os << "# " << line << '\n';
  os << "# ap_variant=" << to_string(report.variant) << '\n';
  for (const auto& [query, ap] : report.per_query) os << query << '\t' << format_fixed6(ap) << '\n';
  os << "mAP " << format_fixed6(report.mean_ap) << '\n';
}

}  // namespace pwa
