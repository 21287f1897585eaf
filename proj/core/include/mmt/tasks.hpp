#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mmt/objective.hpp"
#include "mmt/rng.hpp"
#include "mmt/synth.hpp"

// Task registry for alternating training: one TaskSpec per
// (dataset, objective) pair, each carrying its input variants. Sampling is a
// single-trial multinomial over example-count weights; a dataset's variants
// share its weight and are drawn uniformly.

namespace mmt {

struct InputVariant {
  std::string name = "base";
  std::int64_t batch = 0;
  DatasetGeometry geometry;
  double drop_ratio = 0.0;

  // DropToken thins the vision leg only.
  bool drops(Modality m) const {
    return drop_ratio > 0.0 &&
           (m == Modality::kVideo || m == Modality::kImage);
  }
};

struct TaskSpec {
  std::string dataset;
  ObjectiveKind objective;
  std::vector<InputVariant> variants;
  std::int64_t example_count = 0;
  double weight = 0.0;  // filled by normalize_weights

  std::string id() const { return dataset + "/" + objective.str(); }
};

struct TaskDraw {
  int task = -1;
  int variant = -1;
};

// Optimization-process state surfaced to the sampling policy; the default
// policy ignores it, but the hook is part of the sampling contract.
struct SamplerSignal {
  std::int64_t step = 0;
  double last_loss = 0.0;
};

// Vision tokens per example for a variant under a patch kernel.
struct TokenGrid {
  std::int64_t t_f = 1, t_h = 1, t_w = 1;
  std::int64_t total() const { return t_f * t_h * t_w; }
};
TokenGrid vision_grid(Modality m, const DatasetGeometry& g,
                      std::int64_t kf, std::int64_t kh, std::int64_t kw);

// The §-style multi-resolution variant sets. Video: base (4x the image
// budget) plus three trade-offs that each land exactly on the image-
// equivalent budget: half spatial resolution, quarter batch, and
// DropToken d = 1 - 1/T_F. Images: base plus quarter-batch/double-
// resolution and DropToken 0.75 at 4x batch, both budget-neutral. Other
// modalities train at the base variant only.
std::vector<InputVariant> make_variants(const SynthConfig& dataset,
                                        Modality family,
                                        std::int64_t base_batch,
                                        std::int64_t kf, std::int64_t kh,
                                        std::int64_t kw);

// Sets weight = example_count normalized over all tasks.
void normalize_weights(std::vector<TaskSpec>& tasks);

// Dataset by size-proportional multinomial, then a uniform variant.
TaskDraw sample_task(const std::vector<TaskSpec>& tasks, RngStream& rng,
                     const SamplerSignal& signal);

// Canonical execution-structure identity: modality token counts, batch
// size, objective, and resolved head ids. Two steps share a cached plan iff
// their signatures are equal.
std::string task_signature(
    const std::vector<std::pair<Modality, std::int64_t>>& modality_tokens,
    std::int64_t batch, const ObjectiveKind& objective,
    const std::vector<std::string>& head_paths);

// Head paths a (dataset, objective) pair resolves to.
std::vector<std::string> objective_head_paths(const ObjectiveKind& objective,
                                              const std::string& dataset);

}  // namespace mmt
