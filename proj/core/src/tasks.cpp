#include "mmt/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mmt {

TokenGrid vision_grid(Modality m, const DatasetGeometry& g, std::int64_t kf,
                      std::int64_t kh, std::int64_t kw) {
  auto div = [](std::int64_t extent, std::int64_t k, const char* axis) {
    if (extent % k != 0)
      throw std::runtime_error(std::string(axis) + " extent " +
                               std::to_string(extent) +
                               " not divisible by patch extent " +
                               std::to_string(k));
    return extent / k;
  };
  TokenGrid t;
  switch (m) {
    case Modality::kVideo:
      t.t_f = div(g.video_f, kf, "frame");
      t.t_h = div(g.video_h, kh, "height");
      t.t_w = div(g.video_w, kw, "width");
      break;
    case Modality::kImage:
      t.t_f = 1;
      t.t_h = div(g.image_h, kh, "height");
      t.t_w = div(g.image_w, kw, "width");
      break;
    case Modality::kSpectrogram:
      t.t_h = div(g.spec_rows, 16, "spectrogram row");
      t.t_w = div(g.spec_cols, 16, "spectrogram column");
      break;
    case Modality::kWaveform:
      t.t_w = std::min<std::int64_t>(g.wave_len, 256 * 256) / 256;
      break;
    case Modality::kText:
      t.t_w = 1;  // resolved by the text pipeline, not the grid
      break;
  }
  return t;
}

std::vector<InputVariant> make_variants(const SynthConfig& dataset,
                                        Modality family,
                                        std::int64_t base_batch,
                                        std::int64_t kf, std::int64_t kh,
                                        std::int64_t kw) {
  std::vector<InputVariant> out;
  InputVariant base;
  base.name = "base";
  base.batch = base_batch;
  base.geometry = dataset.geometry;
  out.push_back(base);

  if (family == Modality::kVideo) {
    const auto grid = vision_grid(family, dataset.geometry, kf, kh, kw);
    InputVariant half = base;
    half.name = "half_res";
    if (dataset.geometry.video_h % (2 * kh) != 0 ||
        dataset.geometry.video_w % (2 * kw) != 0)
      throw std::runtime_error(
          "half-resolution variant: spatial extents not divisible after "
          "halving");
    half.geometry.video_h /= 2;
    half.geometry.video_w /= 2;
    out.push_back(half);

    if (base_batch % 4 != 0)
      throw std::runtime_error("quarter-batch variant needs batch % 4 == 0");
    InputVariant quarter = base;
    quarter.name = "quarter_batch";
    quarter.batch = base_batch / 4;
    out.push_back(quarter);

    InputVariant drop = base;
    drop.name = "droptoken";
    drop.drop_ratio = 1.0 - 1.0 / double(grid.t_f);
    out.push_back(drop);
  } else if (family == Modality::kImage) {
    if (base_batch % 4 != 0)
      throw std::runtime_error("quarter-batch variant needs batch % 4 == 0");
    InputVariant dbl = base;
    dbl.name = "quarter_batch_double_res";
    dbl.batch = base_batch / 4;
    dbl.geometry.image_h *= 2;
    dbl.geometry.image_w *= 2;
    out.push_back(dbl);

    // budget-neutral DropToken: keep 1/4 of the tokens at 4x the batch
    InputVariant drop = base;
    drop.name = "droptoken";
    drop.batch = base_batch * 4;
    drop.drop_ratio = 0.75;
    out.push_back(drop);
  }
  return out;
}

void normalize_weights(std::vector<TaskSpec>& tasks) {
  double total = 0;
  for (const auto& t : tasks) {
    if (t.example_count <= 0)
      throw std::runtime_error("task " + t.id() + " has no examples");
    total += double(t.example_count);
  }
  for (auto& t : tasks) t.weight = double(t.example_count) / total;
}

TaskDraw sample_task(const std::vector<TaskSpec>& tasks, RngStream& rng,
                     const SamplerSignal& signal) {
  (void)signal;  // default policy is size-proportional, state-free
  if (tasks.empty()) throw std::runtime_error("task registry is empty");
  TaskDraw d;
  const double u = rng.uniform();
  double acc = 0;
  d.task = static_cast<int>(tasks.size()) - 1;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    acc += tasks[i].weight;
    if (u < acc) {
      d.task = static_cast<int>(i);
      break;
    }
  }
  const auto& variants = tasks[d.task].variants;
  if (variants.empty())
    throw std::runtime_error("task " + tasks[d.task].id() + " has no variants");
  d.variant = static_cast<int>(rng.uniform_int(variants.size()));
  return d;
}

std::string task_signature(
    const std::vector<std::pair<Modality, std::int64_t>>& modality_tokens,
    std::int64_t batch, const ObjectiveKind& objective,
    const std::vector<std::string>& head_paths) {
  auto sorted = modality_tokens;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return std::string(modality_name(a.first)) < modality_name(b.first);
  });
  std::string sig = "B" + std::to_string(batch);
  for (const auto& [m, s] : sorted)
    sig += std::string("|") + modality_name(m) + ":S" + std::to_string(s);
  sig += "|obj=" + objective.str();
  auto heads = head_paths;
  std::sort(heads.begin(), heads.end());
  sig += "|heads=";
  for (std::size_t i = 0; i < heads.size(); ++i) {
    if (i) sig += ",";
    sig += heads[i];
  }
  return sig;
}

std::vector<std::string> objective_head_paths(const ObjectiveKind& objective,
                                              const std::string& dataset) {
  switch (objective.type) {
    case ObjectiveType::kSce:
    case ObjectiveType::kBce:
      return {"head/cls/" + dataset};
    case ObjectiveType::kNcePair:
      return {std::string("head/proj/") + modality_name(objective.a),
              std::string("head/proj/") + modality_name(objective.b)};
    case ObjectiveType::kNceTriplet:
      return {std::string("head/proj/") + modality_name(objective.a),
              std::string("head/proj/") + modality_name(objective.b),
              std::string("head/proj/") + modality_name(objective.c)};
  }
  return {};
}

}  // namespace mmt
