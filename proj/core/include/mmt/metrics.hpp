#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace mmt {

// One JSONL object per training step.
struct MetricsRow {
  std::int64_t step = 0;
  std::string task;       // dataset id
  std::string variant;    // input-variant name
  std::string objective;  // canonical objective string
  double loss = 0.0;
  double lr = 0.0;
  std::int64_t tokens_per_batch = 0;
  std::uint64_t plan_builds_total = 0;
  double wall_ms = 0.0;
};

std::string metrics_to_json(const MetricsRow& row);
MetricsRow metrics_from_json(const std::string& line);

class MetricsWriter {
 public:
  MetricsWriter() = default;
  explicit MetricsWriter(const std::string& path);
  void write(const MetricsRow& row);
  bool open() const { return out_.is_open(); }

 private:
  std::ofstream out_;
};

std::vector<MetricsRow> read_metrics(const std::string& path);

// Plan-cache audit reconstructed from the metrics stream. A build event is a
// step where plan_builds_total increments; its signature proxy is
// (objective, variant, tokens_per_batch, dataset-for-classifier-heads),
// mirroring the cache key's structure. Any proxy built twice is a violation.
struct CacheReport {
  struct SignatureInfo {
    std::string key;
    std::int64_t builds = 0;
    std::int64_t first_build_step = -1;
  };
  std::vector<SignatureInfo> signatures;
  std::uint64_t total_builds = 0;
  std::vector<std::string> violations;
};

CacheReport inspect_cache(const std::vector<MetricsRow>& rows);

// Exponential moving average, ema[0] = x[0].
std::vector<double> ema(const std::vector<double>& xs, double decay);

// Per-task loss series plus the lr curve as CSV files and a single SVG
// overview under `out_dir`. Returns the written file names.
std::vector<std::string> write_plots(const std::vector<MetricsRow>& rows,
                                     const std::string& out_dir,
                                     double ema_decay = 0.99);

}  // namespace mmt
