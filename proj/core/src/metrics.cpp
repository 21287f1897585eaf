#include "mmt/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

namespace mmt {

using nlohmann::json;

std::string metrics_to_json(const MetricsRow& r) {
  json j;
  j["step"] = r.step;
  j["task"] = r.task;
  j["variant"] = r.variant;
  j["objective"] = r.objective;
  j["loss"] = r.loss;
  j["lr"] = r.lr;
  j["tokens_per_batch"] = r.tokens_per_batch;
  j["plan_builds_total"] = r.plan_builds_total;
  j["wall_ms"] = r.wall_ms;
  return j.dump();
}

MetricsRow metrics_from_json(const std::string& line) {
  const json j = json::parse(line);
  MetricsRow r;
  r.step = j.at("step").get<std::int64_t>();
  r.task = j.at("task").get<std::string>();
  r.variant = j.at("variant").get<std::string>();
  r.objective = j.at("objective").get<std::string>();
  r.loss = j.at("loss").get<double>();
  r.lr = j.at("lr").get<double>();
  r.tokens_per_batch = j.at("tokens_per_batch").get<std::int64_t>();
  r.plan_builds_total = j.at("plan_builds_total").get<std::uint64_t>();
  r.wall_ms = j.at("wall_ms").get<double>();
  return r;
}

MetricsWriter::MetricsWriter(const std::string& path) {
  const auto dir = std::filesystem::path(path).parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  out_.open(path, std::ios::trunc);
  if (!out_) throw std::runtime_error("cannot open metrics file: " + path);
}

void MetricsWriter::write(const MetricsRow& row) {
  out_ << metrics_to_json(row) << "\n";
  out_.flush();
}

std::vector<MetricsRow> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics file: " + path);
  std::vector<MetricsRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.push_back(metrics_from_json(line));
  }
  return rows;
}

namespace {

std::string signature_proxy(const MetricsRow& r) {
  std::string key = r.objective + "|" + r.variant + "|tok" +
                    std::to_string(r.tokens_per_batch);
  // classifier heads are dataset-specific, so those plans cannot be shared
  // across datasets; contrastive heads are per-modality and can
  if (r.objective.rfind("sce:", 0) == 0 || r.objective.rfind("bce:", 0) == 0)
    key += "|ds=" + r.task;
  return key;
}

}  // namespace

CacheReport inspect_cache(const std::vector<MetricsRow>& rows) {
  CacheReport rep;
  if (rows.empty()) return rep;
  std::map<std::string, CacheReport::SignatureInfo> seen;
  std::uint64_t prev_builds = 0;
  for (const auto& r : rows) {
    const auto key = signature_proxy(r);
    auto& info = seen[key];
    info.key = key;
    if (r.plan_builds_total > prev_builds) {
      const auto delta = r.plan_builds_total - prev_builds;
      info.builds += static_cast<std::int64_t>(delta);
      if (info.first_build_step < 0) info.first_build_step = r.step;
      if (info.builds > 1)
        rep.violations.push_back("signature rebuilt at step " +
                                 std::to_string(r.step) + ": " + key);
    }
    prev_builds = r.plan_builds_total;
  }
  rep.total_builds = prev_builds;
  for (auto& [k, info] : seen) rep.signatures.push_back(info);
  return rep;
}

std::vector<double> ema(const std::vector<double>& xs, double decay) {
  std::vector<double> out;
  out.reserve(xs.size());
  double acc = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    acc = i == 0 ? xs[0] : decay * acc + (1.0 - decay) * xs[i];
    out.push_back(acc);
  }
  return out;
}

namespace {

void write_svg(const std::string& path,
               const std::map<std::string, std::vector<std::pair<double, double>>>&
                   series) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  const int W = 900, H = 480, margin = 50;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& [name, pts] : series)
    for (const auto& [x, y] : pts) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) ymax = ymin + 1;
  auto sx = [&](double x) {
    return margin + (x - xmin) / (xmax - xmin) * (W - 2 * margin);
  };
  auto sy = [&](double y) {
    return H - margin - (y - ymin) / (ymax - ymin) * (H - 2 * margin);
  };
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                 "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W
      << "' height='" << H << "'>\n";
  out << "<rect width='100%' height='100%' fill='white'/>\n";
  int idx = 0, label_y = 20;
  for (const auto& [name, pts] : series) {
    const char* color = colors[idx % 8];
    out << "<polyline fill='none' stroke='" << color
        << "' stroke-width='1.5' points='";
    for (const auto& [x, y] : pts) out << sx(x) << "," << sy(y) << " ";
    out << "'/>\n";
    out << "<text x='" << W - margin - 240 << "' y='" << label_y
        << "' fill='" << color << "' font-size='12'>" << name << "</text>\n";
    label_y += 16;
    ++idx;
  }
  out << "</svg>\n";
}

}  // namespace

std::vector<std::string> write_plots(const std::vector<MetricsRow>& rows,
                                     const std::string& out_dir,
                                     double ema_decay) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> written;

  std::map<std::string, std::vector<const MetricsRow*>> by_task;
  for (const auto& r : rows) by_task[r.task + "/" + r.objective].push_back(&r);

  std::map<std::string, std::vector<std::pair<double, double>>> svg_series;
  for (const auto& [name, task_rows] : by_task) {
    std::vector<double> losses;
    losses.reserve(task_rows.size());
    for (const auto* r : task_rows) losses.push_back(r->loss);
    const auto smooth = ema(losses, ema_decay);
    std::string fname = name;
    std::replace(fname.begin(), fname.end(), '/', '_');
    std::replace(fname.begin(), fname.end(), ':', '-');
    const std::string path = out_dir + "/loss_" + fname + ".csv";
    std::ofstream out(path, std::ios::trunc);
    out << "step,loss,loss_ema\n";
    for (std::size_t i = 0; i < task_rows.size(); ++i) {
      out << task_rows[i]->step << "," << losses[i] << "," << smooth[i]
          << "\n";
      svg_series[name].push_back({double(task_rows[i]->step), smooth[i]});
    }
    written.push_back(path);
  }

  const std::string lr_path = out_dir + "/lr.csv";
  std::ofstream lr_out(lr_path, std::ios::trunc);
  lr_out << "step,lr\n";
  for (const auto& r : rows) lr_out << r.step << "," << r.lr << "\n";
  written.push_back(lr_path);

  const std::string svg_path = out_dir + "/loss_curves.svg";
  write_svg(svg_path, svg_series);
  written.push_back(svg_path);
  return written;
}

}  // namespace mmt
