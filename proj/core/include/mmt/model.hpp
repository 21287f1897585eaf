#pragma once

#include <map>
#include <vector>

#include "mmt/embed.hpp"
#include "mmt/encoder.hpp"
#include "mmt/heads.hpp"
#include "mmt/synth.hpp"
#include "mmt/tasks.hpp"
#include "mmt/vocab.hpp"

// Model assembly: one shared encoder, per-modality embedders, per-modality
// projection heads and per-dataset classifiers, all housed in a single
// ParamTree. Each objective runs every modality it needs through the same
// encoder separately and combines the pooled outputs in its loss.

namespace mmt {

struct ModelConfig {
  EncoderConfig encoder;
  PatchKernel vision_kernel{4, 16, 16};
  std::int64_t spec_patch = 16;
  std::int64_t wave_kernel = 256;
  std::int64_t text_max_len = 16;
  PositionalConfig positions;
  double init_stddev = 0.02;
};

template <typename Real>
void init_model_params(
    ParamTree<Real>& params, const ModelConfig& cfg,
    const std::vector<Modality>& modalities,
    const std::vector<std::pair<std::string, std::int64_t>>& classifier_datasets,
    std::uint64_t seed) {
  const std::int64_t D = cfg.encoder.hidden;
  const Real sd = static_cast<Real>(cfg.init_stddev);
  RngStream root(mix_key(seed, hash_tag("params")));
  auto weight = [&](const std::string& path, Shape shape) {
    auto stream = root.fork(path);
    params.insert(path, Tensor<Real>::randn(std::move(shape), stream, sd));
  };
  auto zero = [&](const std::string& path, Shape shape) {
    params.insert(path, Tensor<Real>(std::move(shape)));
  };

  bool vision = false, spect = false, wave = false, text = false;
  for (auto m : modalities) {
    vision |= m == Modality::kVideo || m == Modality::kImage;
    spect |= m == Modality::kSpectrogram;
    wave |= m == Modality::kWaveform;
    text |= m == Modality::kText;
  }
  const auto& k = cfg.vision_kernel;
  if (vision) {
    weight("embed/video/w", {k.f * k.h * k.w * 3, D});
    zero("embed/video/b", {D});
    weight("pos/temporal", {cfg.positions.temporal_buckets, D});
    weight("pos/height", {cfg.positions.height_buckets, D});
    weight("pos/width", {cfg.positions.width_buckets, D});
  }
  if (spect) {
    weight("embed/spectrogram/w", {cfg.spec_patch * cfg.spec_patch, D});
    zero("embed/spectrogram/b", {D});
    weight("pos/spec_h", {cfg.positions.spec_h_buckets, D});
    weight("pos/spec_w", {cfg.positions.spec_w_buckets, D});
  }
  if (wave) {
    weight("embed/waveform/w", {cfg.wave_kernel, D});
    zero("embed/waveform/b", {D});
    weight("pos/waveform", {cfg.positions.waveform_positions, D});
  }
  if (text) {
    weight("embed/text/table", {kVocabSize, D});
    weight("pos/text", {cfg.positions.text_positions, D});
  }

  init_encoder_params(params, cfg.encoder, root.fork("encoder"), sd);

  std::vector<Modality> proj;
  for (auto m : modalities) proj.push_back(m);
  init_head_params(params, proj, classifier_datasets, D, root.fork("heads"),
                   sd);
}

// Embeds one modality of a batch at the variant's geometry: patchify or
// lookup, positions, then DropToken on the vision leg when the variant
// carries a ratio.
template <typename Real>
TokenBatch<Real> embed_modality(Tape<Real>& tp,
                                const std::vector<const Example*>& batch,
                                Modality m, const InputVariant& variant,
                                const ModelConfig& cfg,
                                const ParamTree<Real>& params,
                                RngStream drop_rng) {
  std::vector<RawSample> raws;
  raws.reserve(batch.size());
  for (const auto* ex : batch) {
    const auto& s = ex->get(m);
    if (m == Modality::kImage)
      raws.push_back(resample_vision(s, variant.geometry.image_h,
                                     variant.geometry.image_w));
    else if (m == Modality::kVideo)
      raws.push_back(resample_vision(s, variant.geometry.video_h,
                                     variant.geometry.video_w));
    else
      raws.push_back(s);
  }
  std::span<const RawSample> view(raws);
  TokenBatch<Real> tokens;
  switch (m) {
    case Modality::kVideo:
      tokens = patchify_video(tp, view, cfg.vision_kernel, params);
      break;
    case Modality::kImage:
      tokens = patchify_image(tp, view, cfg.vision_kernel, params);
      break;
    case Modality::kSpectrogram:
      tokens = patchify_spectrogram(tp, view, cfg.spec_patch, cfg.spec_patch,
                                    params);
      break;
    case Modality::kWaveform:
      tokens = embed_waveform(tp, view, params, cfg.wave_kernel);
      break;
    case Modality::kText:
      tokens = embed_text(tp, view, params, cfg.text_max_len);
      break;
  }
  tokens = apply_positions(tp, tokens, params);
  if (variant.drops(m)) {
    auto rng = drop_rng;
    tokens = drop_token(tp, tokens, variant.drop_ratio, rng);
  }
  return tokens;
}

// Embed + encode one modality; returns the encoder output [B, S, D].
template <typename Real>
Tensor<Real> encode_modality(Tape<Real>& tp,
                             const std::vector<const Example*>& batch,
                             Modality m, const InputVariant& variant,
                             const ModelConfig& cfg,
                             const ParamTree<Real>& params, RngStream drop_rng,
                             EncoderTrace* trace = nullptr,
                             std::int64_t* tokens_out = nullptr) {
  auto tokens = embed_modality(tp, batch, m, variant, cfg, params, drop_rng);
  if (tokens_out) *tokens_out = tokens.seq_len();
  return encoder_forward(tp, tokens, params, cfg.encoder, trace);
}

// One objective on one batch. Returns the scalar loss; `tokens_out`, when
// given, receives the per-example token count of every modality leg.
template <typename Real>
Tensor<Real> objective_loss(
    Tape<Real>& tp, const std::vector<const Example*>& batch,
    const std::string& dataset, const ObjectiveKind& objective,
    const InputVariant& variant, const ModelConfig& cfg,
    const ParamTree<Real>& params, RngStream drop_rng,
    EncoderTrace* trace = nullptr,
    std::vector<std::pair<Modality, std::int64_t>>* tokens_out = nullptr) {
  auto encode = [&](Modality m) {
    std::int64_t s = 0;
    auto enc = encode_modality(tp, batch, m, variant, cfg, params,
                               drop_rng.fork(modality_name(m)), trace, &s);
    if (tokens_out) tokens_out->push_back({m, s});
    return enc;
  };
  switch (objective.type) {
    case ObjectiveType::kSce: {
      auto logits = classifier_logits(tp, encode(objective.a), params, dataset);
      std::vector<std::int64_t> labels;
      labels.reserve(batch.size());
      for (const auto* ex : batch) labels.push_back(ex->class_id);
      return sce_loss(tp, logits, labels);
    }
    case ObjectiveType::kBce: {
      auto logits = classifier_logits(tp, encode(objective.a), params, dataset);
      std::vector<std::int64_t> labels;
      for (const auto* ex : batch) labels.push_back(ex->class_id);
      auto hot = one_hot<Real>(labels, logits.dim(1));
      return bce_loss(tp, logits, hot);
    }
    case ObjectiveType::kNcePair: {
      auto za = pool_and_project(tp, encode(objective.a), params, objective.a);
      auto zb = pool_and_project(tp, encode(objective.b), params, objective.b);
      return nce_pair_loss(tp, za, zb, params.at("head/logit_scale"));
    }
    case ObjectiveType::kNceTriplet: {
      auto zv = pool_and_project(tp, encode(objective.a), params, objective.a);
      auto za = pool_and_project(tp, encode(objective.b), params, objective.b);
      auto zt = pool_and_project(tp, encode(objective.c), params, objective.c);
      return nce_triplet_loss(tp, zv, za, zt, params.at("head/logit_scale"));
    }
  }
  throw std::runtime_error("unreachable objective type");
}

}  // namespace mmt
