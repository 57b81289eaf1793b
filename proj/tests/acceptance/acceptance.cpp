// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Trial counts, seeds and tolerances are pinned here.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "support/fixtures.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace pwa;
using namespace pwa::test;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Relative error with both-zero treated as exact.
double rel_err(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

double max_rel(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return 1e300;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i]));
  return m;
}

// --- 1 ---------------------------------------------------------------------

Outcome equation_oracles() {
  constexpr int kInputs = 200;
  constexpr double kTol = 1e-9;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> exps(0.5, 4.0);
  double e_pool = 0, e_stats = 0, e_w = 0, e_region = 0, e_pwa = 0;
  for (int i = 0; i < kInputs; ++i) {
    const auto t = random_tensor(rng);
    e_pool = std::max(e_pool, max_rel(sum_pool(t), oracle_sum_pool(t)));

    std::vector<FeatureMapTensor> set{t};
    std::vector<std::vector<double>> pooled{oracle_sum_pool(t)};
    const std::size_t d = 2 + rng() % 9;
    while (set.size() < d) {
      set.push_back(random_tensor(rng, t.channels(), t.height(), t.width()));
      pooled.push_back(oracle_sum_pool(set.back()));
    }
    const auto stats = fit_channel_stats(set);
    const auto want = oracle_channel_stats(pooled);
    e_stats = std::max({e_stats, max_rel(stats.mean, want.mean), max_rel(stats.variance, want.variance)});

    const auto ch = std::uint32_t(rng() % t.channels());
    const double alpha = i % 2 ? exps(rng) : 2.0, beta = i % 2 ? exps(rng) : 2.0;
    const auto w = compute_weights(t, ch, alpha, beta);
    e_w = std::max(e_w, max_rel(w.weights, oracle_weights(t, ch, alpha, beta)));

    WeightMap arbitrary{t.height(), t.width(), 0, std::vector<double>(t.plane_size())};
    for (auto& x : arbitrary.weights) x = std::uniform_real_distribution<double>(0, 2)(rng);
    e_region = std::max(e_region, max_rel(aggregate_region(t, arbitrary), oracle_region(t, arbitrary.weights)));

    std::vector<std::uint32_t> all(t.channels());
    std::iota(all.begin(), all.end(), 0u);
    std::shuffle(all.begin(), all.end(), rng);
    const std::size_t n = 1 + rng() % t.channels();
    const auto det = make_detector_set(stats, {all.begin(), all.begin() + std::ptrdiff_t(n)});
    const std::vector<std::uint32_t> order(det.selected().begin(), det.selected().end());
    e_pwa = std::max(e_pwa, max_rel(aggregate_pwa(t, det, alpha, beta).values, oracle_pwa(t, order, alpha, beta)));
  }
  const double secs = seconds_since(t0);
  const double worst = std::max({e_pool, e_stats, e_w, e_region, e_pwa});
  std::ostringstream os;
  os << kInputs << " inputs each; max rel err sum_pool " << fmt("%.1e", e_pool) << ", fit_channel_stats "
     << fmt("%.1e", e_stats) << ", compute_weights " << fmt("%.1e", e_w) << ", aggregate_region "
     << fmt("%.1e", e_region) << ", aggregate_pwa " << fmt("%.1e", e_pwa) << " (tol 1e-9); " << fmt("%.2f", secs)
     << " s (limit 10 s)";
  return {worst <= kTol && secs < 10.0, os.str()};
}

// --- 2 and 5 share the planted trials ----------------------------------------

struct PlantedTrial {
  double top = 0, random = 0, m4 = 0;
  std::size_t full_dim = 0;
};

constexpr int kPlantedTrials = 20;
constexpr std::uint64_t kPlantedSeed = 1000;

PipelineConfig planted_config() {
  PipelineConfig c;
  c.qe_k = 0;
  c.threads = 1;
  c.target_dim = 100000;  // capped to the largest feasible M
  return c;
}

std::vector<PlantedTrial> planted_trials(bool with_random, bool with_m4) {
  const PlantedSpec spec;
  const auto cfg = planted_config();
  std::vector<PlantedTrial> out;
  for (int t = 0; t < kPlantedTrials; ++t) {
    const auto planted = make_planted_benchmark(spec, kPlantedSeed + t);
    const auto stats = fit_benchmark_stats(planted.bench, false);
    const auto top = select_detectors(stats, spec.planted);
    PlantedTrial r;
    const auto full = evaluate_detectors(planted.bench, top, cfg.target_dim, cfg);
    r.top = full.mean_ap;
    r.full_dim = full.output_dim;
    if (with_random) {
      std::mt19937_64 rng(kPlantedSeed * 7 + t);
      std::vector<std::uint32_t> all(spec.channels);
      std::iota(all.begin(), all.end(), 0u);
      std::shuffle(all.begin(), all.end(), rng);
      const auto rnd = make_detector_set(stats, {all.begin(), all.begin() + spec.planted});
      r.random = evaluate_detectors(planted.bench, rnd, cfg.target_dim, cfg).mean_ap;
    }
    if (with_m4) r.m4 = evaluate_detectors(planted.bench, top, 4, cfg).mean_ap;
    out.push_back(r);
  }
  return out;
}

Outcome variance_selection() {
  const auto t0 = Clock::now();
  const auto trials = planted_trials(true, false);
  const double secs = seconds_since(t0);
  int geq = 0, strict = 0;
  double top = 0, rnd = 0;
  for (const auto& r : trials) {
    geq += r.top >= r.random;
    strict += r.top > r.random;
    top += r.top / trials.size();
    rnd += r.random / trials.size();
  }
  const int n = int(trials.size());
  std::ostringstream os;
  os << "top-variance N=4 >= random N=4 in " << geq << "/" << n << ", strictly better in " << strict << "/" << n
     << " (need all >= and >= 80% strict); mean mAP " << fmt("%.3f", top) << " vs " << fmt("%.3f", rnd) << "; "
     << fmt("%.1f", secs) << " s (limit 60 s)";
  return {geq == n && strict * 10 >= n * 8 && secs < 60.0, os.str()};
}

Outcome dimensionality() {
  const auto trials = planted_trials(false, true);
  int ok = 0;
  double full = 0, m4 = 0;
  for (const auto& r : trials) {
    ok += r.top >= r.m4;
    full += r.top / trials.size();
    m4 += r.m4 / trials.size();
  }
  const int n = int(trials.size());
  std::ostringstream os;
  os << "mAP(M=full, " << trials.front().full_dim << ") >= mAP(M=4) in " << ok << "/" << n
     << " (need >= 90%); mean " << fmt("%.3f", full) << " vs " << fmt("%.3f", m4);
  return {ok * 10 >= n * 9, os.str()};
}

// --- 3 ---------------------------------------------------------------------

Outcome baseline_equivalence() {
  std::mt19937_64 rng(3);
  int exact = 0;
  constexpr int kTensors = 100;
  for (int i = 0; i < kTensors; ++i) {
    const std::uint32_t c = 1 + std::uint32_t(rng() % 16);
    const std::uint32_t h = 1 + std::uint32_t(rng() % 8), w = 1 + std::uint32_t(rng() % 8);
    std::vector<FeatureMapTensor> set;
    for (int k = 0; k < 4; ++k) set.push_back(random_tensor(rng, c, h, w));
    const auto det = select_detectors(fit_channel_stats(set), c);
    const auto raw = aggregate_pwa(set[0], det);
    std::vector<double> manual;
    for (auto ch : det.selected()) {
      const auto block = aggregate_region(set[0], compute_weights(set[0], ch));
      manual.insert(manual.end(), block.begin(), block.end());
    }
    exact += raw.values == manual;
  }

  int ablation_exact = 0;
  constexpr int kBenchmarks = 3;
  PlantedSpec spec;
  spec.classes = 15;
  std::string last;
  for (int b = 0; b < kBenchmarks; ++b) {
    const auto planted = make_planted_benchmark(spec, 300 + b);
    const auto cfg = planted_config();
    const std::vector<std::size_t> grid{spec.channels};
    const auto row = ablate(planted.bench, cfg, AblationAxis::Detectors, grid).at(0);

    std::vector<FeatureMapTensor> db;
    for (std::size_t i = 0; i < planted.bench.database.size(); ++i) db.push_back(planted.bench.database.load(i));
    ChannelStatsAccumulator acc;
    for (const auto& t : db) acc.add(t);
    const auto det = select_detectors(acc.finish(), spec.channels);
    const auto agg = [&](const TensorCorpus& corpus) {
      std::vector<DescriptorRecord> out;
      for (std::size_t i = 0; i < corpus.size(); ++i)
        out.push_back(to_record(aggregate_pwa(corpus.load(i), det, kDefaultAlpha, kDefaultBeta, corpus.ids[i])));
      return out;
    };
    const auto ww = agg(planted.bench.whitening);
    const auto model = fit_whitening(to_raw(ww), std::min<std::size_t>(ww.front().dim(), ww.size() - 1));
    std::vector<DescriptorRecord> pdb, pq;
    for (const auto& r : agg(planted.bench.database)) pdb.push_back(apply_postprocess(to_raw(r), model));
    for (const auto& r : agg(planted.bench.queries)) pq.push_back(apply_postprocess(to_raw(r), model));
    const auto index = build_index(pdb);
    std::vector<RankedList> lists;
    for (const auto& q : pq) lists.push_back(search(index, q.values, {}, q.image_id));
    const double want = mean_average_precision(lists, planted.bench.ground_truth).mean_ap;
    ablation_exact += row.mean_ap == want;
    last = fmt("%.17g", row.mean_ap) + " vs " + fmt("%.17g", want);
  }
  std::ostringstream os;
  os << "N=C composition bit-exact on " << exact << "/" << kTensors << " tensors; ablation mAP at N=C bit-exact on "
     << ablation_exact << "/" << kBenchmarks << " benchmarks (last " << last << ")";
  return {exact == kTensors && ablation_exact == kBenchmarks, os.str()};
}

// --- 4 ---------------------------------------------------------------------

Outcome whitening() {
  constexpr int kSets = 10;
  constexpr double kTol = 1e-6;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  double cov_err = 0;
  for (int s = 0; s < kSets; ++s) {
    std::vector<double> scale(128);
    for (auto& x : scale) x = std::exp(2.0 * n(rng));
    std::vector<RawDescriptor> set(200);
    for (std::size_t i = 0; i < set.size(); ++i) {
      set[i].image_id = std::to_string(i);
      set[i].values.resize(128);
      for (std::size_t d = 0; d < 128; ++d) set[i].values[d] = 1.0 + scale[d] * n(rng);
    }
    const auto model = fit_whitening(set, 128);
    Eigen::MatrixXd y(200, Eigen::Index(model.output_dim()));
    for (std::size_t i = 0; i < set.size(); ++i) {
      Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(set[i].values.data(), 128);
      y.row(Eigen::Index(i)) = model.whiten(x / x.norm()).transpose();
    }
    const Eigen::MatrixXd c = y.rowwise() - y.colwise().mean();
    const Eigen::MatrixXd cov = c.transpose() * c / 200.0;
    cov_err = std::max(cov_err, (cov - Eigen::MatrixXd::Identity(cov.rows(), cov.cols())).cwiseAbs().maxCoeff());
  }

  // Scale invariance through aggregation and post-processing.
  PlantedSpec spec;
  spec.classes = 10;
  const auto planted = make_planted_benchmark(spec, 44);
  std::vector<FeatureMapTensor> db;
  for (std::size_t i = 0; i < planted.bench.database.size(); ++i) db.push_back(planted.bench.database.load(i));
  const auto det = select_detectors(fit_channel_stats(db), 6);
  std::vector<RawDescriptor> raws;
  for (const auto& t : db) raws.push_back(aggregate_pwa(t, det));
  const auto model = fit_whitening(raws, std::min<std::size_t>(raws.front().values.size(), raws.size() - 1));
  double scale_err = 0;
  for (std::size_t i = 0; i < db.size(); ++i) {
    const auto base = apply_postprocess(raws[i], model);
    for (double k : {1e-3, 0.37, 3.0, 1e4}) {
      auto scaled = raws[i];
      for (auto& v : scaled.values) v *= k;
      const auto a = apply_postprocess(scaled, model);
      std::vector<float> tv(db[i].values().begin(), db[i].values().end());
      for (auto& v : tv) v = static_cast<float>(v * k);
      const FeatureMapTensor kt(db[i].channels(), db[i].height(), db[i].width(), std::move(tv));
      const auto b = apply_postprocess(aggregate_pwa(kt, det), model);
      for (std::size_t j = 0; j < base.values.size(); ++j)
        scale_err = std::max({scale_err, double(std::abs(a.values[j] - base.values[j])),
                              double(std::abs(b.values[j] - base.values[j]))});
    }
  }
  std::ostringstream os;
  os << kSets << " random 200x128 sets: max |cov - I| " << fmt("%.1e", cov_err) << " (tol 1e-6); k*psi and k*tensor "
     << "outputs differ by at most " << fmt("%.1e", scale_err) << " (tol 1e-6)";
  return {cov_err <= kTol && scale_err <= kTol, os.str()};
}

// --- 6 ---------------------------------------------------------------------

Outcome evaluation() {
  constexpr int kRankings = 1000;
  std::mt19937_64 rng(6);
  double err = 0;
  int junk_ok = 0;
  for (int trial = 0; trial < kRankings; ++trial) {
    const std::size_t n = 1 + rng() % 80;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back("img" + std::to_string(i));
    std::shuffle(ids.begin(), ids.end(), rng);
    GroundTruthEntry gt;
    gt.query_id = "q";
    gt.query_image_id = "not_in_db";
    gt.crop = {0, 0, 1, 1};
    for (const auto& id : ids) {
      const auto u = rng() % 10;
      if (u < 2) gt.good.insert(id);
      else if (u < 3) gt.ok.insert(id);
      else if (u < 5) gt.junk.insert(id);
    }
    if (gt.good.empty() && gt.ok.empty()) gt.good.insert("unretrieved");
    std::set<std::string> positives(gt.good);
    positives.insert(gt.ok.begin(), gt.ok.end());
    RankedList full{"q", {}}, cleaned{"q", {}};
    double s = 1.0;
    for (const auto& id : ids) {
      full.hits.push_back({id, s -= 1e-3});
      if (!gt.junk.count(id)) cleaned.hits.push_back(full.hits.back());
    }
    const double got = average_precision(full, gt);
    err = std::max(err, std::abs(got - oracle_ap(ids, positives, gt.junk, true)));
    auto no_junk = gt;
    no_junk.junk.clear();
    junk_ok += got == average_precision(cleaned, gt) && got == average_precision(cleaned, no_junk);
  }
  std::ostringstream os;
  os << kRankings << " random rankings: max |AP - reference| " << fmt("%.1e", err)
     << " (tol 1e-9); junk-removal invariant held in " << junk_ok << "/" << kRankings;
  return {err <= 1e-9 && junk_ok == kRankings, os.str()};
}

// --- 7 ---------------------------------------------------------------------

Outcome query_expansion() {
  constexpr int kTrials = 20;
  int ok = 0;
  double first = 0, second = 0;
  for (int t = 0; t < kTrials; ++t) {
    std::mt19937_64 rng(7000 + t);
    const auto ci = make_two_cluster_index(rng, 32, 40, 5, 2.0);
    const auto index = build_index(ci.database);
    const double a = mean_average_precision(run_queries(index, ci.queries, {.qe_k = 0}), ci.ground_truth).mean_ap;
    const double b = mean_average_precision(run_queries(index, ci.queries, {.qe_k = 10}), ci.ground_truth).mean_ap;
    ok += b >= a;
    first += a / kTrials;
    second += b / kTrials;
  }
  std::ostringstream os;
  os << "QE (k=10) mAP >= first pass in " << ok << "/" << kTrials << " (need >= 90%); mean " << fmt("%.3f", first)
     << " -> " << fmt("%.3f", second);
  return {ok * 10 >= kTrials * 9, os.str()};
}

// --- 8 ---------------------------------------------------------------------

Outcome determinism() {
  TempDir dir("accept");
  PlantedSpec spec;
  spec.classes = 10;
  const auto disk = write_benchmark(make_planted_benchmark(spec, 8).bench, dir / "data");
  std::filesystem::create_directories(dir / "work");
  auto steps = pipeline_steps(disk, dir / "work", 4, 32, 3);
  steps.push_back({"search (stdout)", "search --index " + q(dir / "work" / "index.pwad") + " --queries " +
                                          q(dir / "work" / "q.pwad") + " --qe_k 3 --threads 3",
                   {dir / "work" / "search_stdout.tsv"}});

  const auto run_all = [&]() -> std::string {
    for (const auto& s : steps) {
      const bool to_stdout = s.args.find("--out") == std::string::npos;
      const int code = run_cli(s.args, to_stdout ? s.outputs.front() : std::filesystem::path("/dev/null"));
      if (code != 0) return s.name + " exited " + std::to_string(code);
    }
    return {};
  };
  if (auto e = run_all(); !e.empty()) return {false, "first run: " + e};
  std::vector<std::map<std::string, std::string>> first;
  for (const auto& s : steps) first.push_back(snapshot(s.outputs.front()));
  if (auto e = run_all(); !e.empty()) return {false, "second run: " + e};
  std::set<std::string> commands;
  std::string mismatched;
  std::size_t files = 0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto again = snapshot(steps[i].outputs.front());
    files += again.size();
    commands.insert(steps[i].args.substr(0, steps[i].args.find(' ')));
    if (again != first[i] || again.empty()) mismatched += " " + steps[i].name;
  }
  std::ostringstream os;
  os << commands.size() << " subcommands, " << steps.size() << " invocations, " << files
     << " output files compared byte-for-byte";
  if (!mismatched.empty()) os << "; differing:" << mismatched;
  return {mismatched.empty() && commands.size() == 9, os.str()};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"1 equation oracles", equation_oracles},
      {"2 variance-selection efficacy", variance_selection},
      {"3 baseline equivalence", baseline_equivalence},
      {"4 whitening", whitening},
      {"5 dimensionality", dimensionality},
      {"6 evaluation", evaluation},
      {"7 query expansion", query_expansion},
      {"8 determinism", determinism},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
