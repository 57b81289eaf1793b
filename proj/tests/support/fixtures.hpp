#pragma once

// Writes synthetic benchmarks to disk in the layout the CLI consumes, and
// runs the CLI binary.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "support/synthetic.hpp"

namespace pwa::test {

struct DiskBenchmark {
  std::filesystem::path db, queries, whitening, gt;
};

inline void write_corpus(const TensorCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < corpus.size(); ++i) write_tensor(dir / (corpus.ids[i] + ".pwat"), corpus.load(i));
}

inline void write_ground_truth(std::span<const GroundTruthEntry> gt, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto list = [&](const std::string& name, const std::set<std::string>& ids) {
    std::ofstream os(dir / name, std::ios::binary);
    for (const auto& id : ids) os << id << '\n';
  };
  for (const auto& e : gt) {
    std::ofstream(dir / (e.query_id + "_query.txt"), std::ios::binary)
        << e.query_image_id << ' ' << e.crop.x1 << ' ' << e.crop.y1 << ' ' << e.crop.x2 << ' ' << e.crop.y2 << '\n';
    list(e.query_id + "_good.txt", e.good);
    list(e.query_id + "_ok.txt", e.ok);
    list(e.query_id + "_junk.txt", e.junk);
  }
}

inline DiskBenchmark write_benchmark(const RetrievalBenchmark& bench, const std::filesystem::path& root) {
  DiskBenchmark d{root / "db", root / "queries", root / "whitening", root / "gt"};
  write_corpus(bench.database, d.db);
  write_corpus(bench.queries, d.queries);
  write_corpus(bench.whitening, d.whitening);
  write_ground_truth(bench.ground_truth, d.gt);
  return d;
}

inline std::string slurp_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs `pwa <args>` with stdout and stderr captured to files; returns the exit code.
inline int run_cli(const std::string& args, const std::filesystem::path& stdout_file = "/dev/null",
                   const std::filesystem::path& stderr_file = "/dev/null") {
  const std::string cmd = std::string("'") + PWA_CLI_PATH + "' " + args + " >'" + stdout_file.string() + "' 2>'" +
                          stderr_file.string() + "'";
  const int status = std::system(cmd.c_str());
  if (status == -1 || !WIFEXITED(status)) return -1;
  return WEXITSTATUS(status);
}

inline std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

struct CliStep {
  std::string name;
  std::string args;
  std::vector<std::filesystem::path> outputs;
};

// Every subcommand in order over a disk benchmark; artifacts land in `w`.
inline std::string first_db_tensor(const DiskBenchmark& d) { return tensor_directory(d.db).ids.at(0); }

inline std::vector<CliStep> pipeline_steps(const DiskBenchmark& d, const std::filesystem::path& w,
                                           std::size_t n_detectors, std::size_t target_dim, std::size_t qe_k) {
  const auto n = std::to_string(n_detectors);
  return {
      {"fit-detectors", "fit-detectors --tensors " + q(d.db) + " --n_detectors " + n + " --out " + q(w / "det.pwas"),
       {w / "det.pwas"}},
      {"aggregate db", "aggregate --tensors " + q(d.db) + " --detectors " + q(w / "det.pwas") + " --out " +
                           q(w / "db_raw.pwad"),
       {w / "db_raw.pwad"}},
      {"aggregate queries", "aggregate --tensors " + q(d.queries) + " --detectors " + q(w / "det.pwas") +
                                " --threads 2 --out " + q(w / "q_raw.pwad"),
       {w / "q_raw.pwad"}},
      {"aggregate whitening", "aggregate --tensors " + q(d.whitening) + " --detectors " + q(w / "det.pwas") +
                                  " --out " + q(w / "w_raw.pwad"),
       {w / "w_raw.pwad"}},
      {"fit-whitening", "fit-whitening --descriptors " + q(w / "w_raw.pwad") + " --target_dim " +
                            std::to_string(target_dim) + " --out " + q(w / "white.pwaw"),
       {w / "white.pwaw"}},
      {"postprocess db", "postprocess --descriptors " + q(w / "db_raw.pwad") + " --model " + q(w / "white.pwaw") +
                             " --out " + q(w / "db.pwad"),
       {w / "db.pwad"}},
      {"postprocess queries", "postprocess --descriptors " + q(w / "q_raw.pwad") + " --model " +
                                  q(w / "white.pwaw") + " --out " + q(w / "q.pwad"),
       {w / "q.pwad"}},
      {"index", "index --descriptors " + q(w / "db.pwad") + " --out " + q(w / "index.pwad"), {w / "index.pwad"}},
      {"search", "search --index " + q(w / "index.pwad") + " --queries " + q(w / "q.pwad") + " --qe_k " +
                     std::to_string(qe_k) + " --out " + q(w / "rankings.tsv"),
       {w / "rankings.tsv"}},
      {"eval", "eval --rankings " + q(w / "rankings.tsv") + " --gt " + q(d.gt) + " --out " + q(w / "report.txt"),
       {w / "report.txt"}},
      {"ablate", "ablate --tensors " + q(d.db) + " --query_tensors " + q(d.queries) + " --whiten_tensors " +
                     q(d.whitening) + " --gt " + q(d.gt) + " --grid_n 1,C --target_dim " +
                     std::to_string(target_dim) + " --qe_k " + std::to_string(qe_k) + " --out " +
                     q(w / "ablation.tsv"),
       {w / "ablation.tsv"}},
      {"dump-weights", "dump-weights --tensor " + q(d.db / (first_db_tensor(d) + ".pwat")) + " --detectors " +
                           q(w / "det.pwas") + " --out " + q(w / "weights"),
       {w / "weights"}},
  };
}

// "" on success, else the failing step and its exit code.
inline std::string run_steps(const std::vector<CliStep>& steps, const std::filesystem::path& log_dir) {
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const int code = run_cli(steps[i].args, "/dev/null", log_dir / ("step" + std::to_string(i) + ".log"));
    if (code != 0) return steps[i].name + " exited " + std::to_string(code);
  }
  return {};
}

// File path -> bytes for a file or every file under a directory.
inline std::map<std::string, std::string> snapshot(const std::filesystem::path& p) {
  std::map<std::string, std::string> out;
  if (std::filesystem::is_directory(p)) {
    for (const auto& e : std::filesystem::recursive_directory_iterator(p))
      if (e.is_regular_file()) out[e.path().string()] = slurp_text(e.path());
  } else {
    out[p.string()] = std::filesystem::exists(p) ? slurp_text(p) : std::string("<missing>");
  }
  return out;
}

// Parses the "mAP x" line of an eval report.
inline double report_map(const std::string& text) {
  const auto pos = text.rfind("mAP ");
  return pos == std::string::npos ? -1.0 : std::stod(text.substr(pos + 4));
}

}  // namespace pwa::test
