#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "mmt/objective.hpp"
#include "mmt/rng.hpp"
#include "mmt/sample.hpp"

// Synthetic multimodal datasets with planted cross-modal correspondences:
// every modality of an example derives from the same (class, latent) pair,
// and generation is a pure function of (seed, dataset, index).

namespace mmt {

struct DatasetGeometry {
  std::int64_t image_h = 64, image_w = 64;
  std::int64_t video_f = 16, video_h = 64, video_w = 64;
  std::int64_t spec_rows = 32, spec_cols = 32;
  std::int64_t wave_len = 4096;
};

struct SynthConfig {
  std::string name;
  std::vector<Modality> modalities;
  std::int32_t num_classes = 16;
  std::int64_t train_count = 4096;
  std::int64_t eval_count = 256;
  DatasetGeometry geometry;
  double sigma = 0.1;
  std::uint64_t seed = 0;  // derived from (master seed, dataset name)

  bool has_modality(Modality m) const;
};

// Per-example latent drawn once and shared by every modality.
struct Latent {
  double jitter_y = 0, jitter_x = 0;  // in [-1, 1]
  double amp = 1.0;                   // in [0.8, 1.2]
};

Latent draw_latent(std::uint64_t dataset_seed, std::int64_t index);

// class-pattern geometry helpers (shared with the test oracles)
std::array<double, 3> class_channel_signature(std::int32_t cls);
std::pair<double, double> class_velocity(std::int32_t cls);  // px/frame (y, x)
std::pair<double, double> pattern_center(std::int32_t cls, const Latent& l,
                                         std::int64_t H, std::int64_t W,
                                         std::int64_t frame);
std::int64_t spectrogram_band(std::int32_t cls, std::int64_t rows);
std::int64_t waveform_bin(std::int32_t cls);

RawSample gen_image(std::int32_t cls, const Latent& latent,
                    const SynthConfig& cfg, RngStream noise);
RawSample gen_video(std::int32_t cls, const Latent& latent,
                    const SynthConfig& cfg, RngStream noise);
RawSample gen_spectrogram(std::int32_t cls, const Latent& latent,
                          const SynthConfig& cfg, RngStream noise);
RawSample gen_waveform(std::int32_t cls, const Latent& latent,
                       const SynthConfig& cfg, RngStream noise);
std::vector<std::int32_t> gen_caption(std::int32_t cls);

// Pure function of (cfg.seed, index): class = index mod C, latent and noise
// streams keyed by index. Train indices are [0, train_count), eval indices
// [train_count, train_count + eval_count) -- disjoint by construction.
Example gen_example(const SynthConfig& cfg, std::int64_t index);
std::vector<Example> gen_split(const SynthConfig& cfg, bool eval_split);

// Spatial resampling for resolution variants: box average for integer
// downscales, pixel repetition for integer upscales. Image and video only.
RawSample resample_vision(const RawSample& s, std::int64_t new_h,
                          std::int64_t new_w);

// ---------------------------------------------------------------------------
// registry

struct DatasetHandle {
  SynthConfig spec;
  std::vector<Example> train;
  std::vector<Example> eval;

  std::int64_t example_count() const {
    return static_cast<std::int64_t>(train.size());
  }
  bool supports(const ObjectiveKind& k) const;
  std::vector<ObjectiveKind> supported_objectives() const;
};

class DataRegistry {
 public:
  // Generates both splits in memory.
  void add_generated(const SynthConfig& cfg);
  // Reads previously written shards (gen-data output) from `dir`.
  void add_from_shards(const SynthConfig& cfg, const std::string& dir);

  const DatasetHandle& lookup(const std::string& name) const;
  bool contains(const std::string& name) const { return sets_.count(name); }
  std::vector<std::string> names() const;

  static std::string train_shard_path(const std::string& dir,
                                      const std::string& name);
  static std::string eval_shard_path(const std::string& dir,
                                     const std::string& name);

 private:
  std::map<std::string, DatasetHandle> sets_;
};

}  // namespace mmt
