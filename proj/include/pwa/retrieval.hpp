#pragma once

// Exhaustive cosine ranking over unit descriptors and average query expansion.

#include <algorithm>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "pwa/detail/parallel.hpp"
#include "pwa/tensor.hpp"

namespace pwa {

class DescriptorIndex {
 public:
  DescriptorIndex() = default;

  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }
  std::size_t dim() const noexcept { return dim_; }
  const std::string& id(std::size_t i) const { return ids_.at(i); }
  std::span<const float> vector(std::size_t i) const {
    return std::span<const float>(data_).subspan(i * dim_, dim_);
  }

  friend DescriptorIndex build_index(std::span<const DescriptorRecord> records);

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<float> data_;
};

/// Insertion order is preserved. Records must share a dim, be unit-norm
/// (within 1e-4) and have unique ids.
inline DescriptorIndex build_index(std::span<const DescriptorRecord> records) {
  DescriptorIndex index;
  if (records.empty()) return index;
  index.dim_ = records.front().dim();
  std::unordered_set<std::string> seen;
  index.ids_.reserve(records.size());
  index.data_.reserve(records.size() * index.dim_);
  for (const auto& r : records) {
    if (r.dim() != index.dim_)
      throw Error(ErrorKind::DimMismatch, "record '" + r.image_id + "' has dim " +
                                              std::to_string(r.dim()) + ", index dim is " +
                                              std::to_string(index.dim_));
    if (!r.normalized || !is_unit(r.values))
      throw Error(ErrorKind::NotNormalized, "record '" + r.image_id + "' is not unit-norm");
    if (!seen.insert(r.image_id).second)
      throw Error(ErrorKind::DuplicateId, "duplicate image id '" + r.image_id + "'");
    index.ids_.push_back(r.image_id);
    index.data_.insert(index.data_.end(), r.values.begin(), r.values.end());
  }
  return index;
}

struct Hit {
  std::string image_id;
  double score = 0.0;

  friend bool operator==(const Hit&, const Hit&) = default;
};

struct RankedList {
  std::string query_id;
  std::vector<Hit> hits;

  friend bool operator==(const RankedList&, const RankedList&) = default;
};

namespace detail {

inline double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(b[i]);
  return s;
}

}  // namespace detail

struct SearchOptions {
  std::size_t k = 0;        // 0 = rank the whole index
  std::size_t threads = 1;  // 0 = hardware concurrency
};

/// Scores are dot products (cosines for unit vectors) clamped to [-1, 1];
/// ties are broken by ascending image id.
inline RankedList search(const DescriptorIndex& index, std::span<const float> query,
                         SearchOptions options = {}, std::string query_id = {}) {
  RankedList out{std::move(query_id), {}};
  if (index.empty()) return out;
  if (query.size() != index.dim())
    throw Error(ErrorKind::DimMismatch, "query dim " + std::to_string(query.size()) +
                                            " vs index dim " + std::to_string(index.dim()));
  std::vector<double> scores(index.size());
  detail::parallel_for(index.size(), options.threads, [&](std::size_t i) {
    scores[i] = std::clamp(detail::dot(query, index.vector(i)), -1.0, 1.0);
  });

  std::vector<std::size_t> order(index.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto before = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return index.id(a) < index.id(b);
  };
  const std::size_t k = options.k == 0 ? order.size() : std::min(options.k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), before);

  out.hits.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.hits.push_back({index.id(order[i]), scores[order[i]]});
  return out;
}

struct QueryExpansionOptions {
  std::size_t k = 10;
  bool include_query = true;
  std::size_t threads = 1;
};

/// l2-normalized mean of the query (optionally) and its top-k neighbours.
/// k larger than the index uses every entry. The caller re-runs search with
/// the result.
inline std::vector<float> average_query_expansion(std::span<const float> query,
                                                  const DescriptorIndex& index,
                                                  QueryExpansionOptions options = {}) {
  if (index.empty()) throw Error(ErrorKind::InvalidArgument, "query expansion on an empty index");
  const auto top = search(index, query, {std::min(options.k, index.size()), options.threads});

  std::map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < index.size(); ++i) position.emplace(index.id(i), i);

  std::vector<double> sum(index.dim(), 0.0);
  if (options.include_query)
    for (std::size_t d = 0; d < sum.size(); ++d) sum[d] += query[d];
  for (const auto& hit : top.hits) {
    const auto v = index.vector(position.at(hit.image_id));
    for (std::size_t d = 0; d < sum.size(); ++d) sum[d] += v[d];
  }
  const double norm = l2_norm(std::span<const double>(sum));
  if (!(norm > 1e-12))
    throw Error(ErrorKind::Degenerate, "expanded query averages to zero");
  std::vector<float> out(sum.size());
  for (std::size_t d = 0; d < sum.size(); ++d) out[d] = static_cast<float>(sum[d] / norm);
  return out;
}

/// One line per hit: "query_id<TAB>image_id<TAB>rank<TAB>score" with 1-based
/// rank and six-decimal score. Lines starting with '#' are comments.
inline void write_rankings(std::ostream& os, std::span<const RankedList> lists,
                           std::span<const std::string> header = {}) {
  for (const auto& line : header) os << "# " << line << '\n';
  char buf[64];
  for (const auto& list : lists) {
    for (std::size_t r = 0; r < list.hits.size(); ++r) {
      std::snprintf(buf, sizeof buf, "%.6f", list.hits[r].score);
      os << list.query_id << '\t' << list.hits[r].image_id << '\t' << (r + 1) << '\t' << buf << '\n';
    }
  }
}

/// Groups lines by query id (first-appearance order) and orders hits by rank.
inline std::vector<RankedList> read_rankings(std::istream& is) {
  struct Row {
    std::size_t rank;
    Hit hit;
  };
  std::vector<std::string> order;
  std::map<std::string, std::vector<Row>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::istringstream ls(line);
    std::string query, image, extra;
    long long rank = 0;
    double score = 0.0;
    if (!(ls >> query >> image >> rank >> score) || (ls >> extra) || rank < 1)
      throw Error(ErrorKind::Parse, "malformed ranking line " + std::to_string(line_no) + ": '" + line + "'");
    auto [it, inserted] = rows.try_emplace(query);
    if (inserted) order.push_back(query);
    it->second.push_back({static_cast<std::size_t>(rank), {image, score}});
  }
  std::vector<RankedList> out;
  out.reserve(order.size());
  for (const auto& q : order) {
    auto& r = rows[q];
    std::sort(r.begin(), r.end(), [](const Row& a, const Row& b) { return a.rank < b.rank; });
    RankedList list{q, {}};
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (r[i].rank != i + 1)
        throw Error(ErrorKind::Parse, "ranks for query '" + q + "' are not 1..n");
      list.hits.push_back(std::move(r[i].hit));
    }
    out.push_back(std::move(list));
  }
  return out;
}

}  // namespace pwa
