#pragma once

#include <string>
#include <vector>

#include "mmt/objective.hpp"
#include "mmt/ops.hpp"
#include "mmt/param_tree.hpp"
#include "mmt/rng.hpp"
#include "mmt/sample.hpp"

// Heads and objectives: global-average-pooled encoder outputs feed either a
// dataset-specific linear classifier or a per-modality two-layer GeLU
// projection onto the shared contrastive sphere.

namespace mmt {

// The learnable contrastive scale. Following the CLIP convention the
// parameter is log(1/temperature), initialized to log(1/0.07); similarities
// are multiplied by exp(log_scale), i.e. divided by tau = exp(-log_scale).
// tau is clamped at >= 0.01 by capping the parameter after each update.
constexpr double kLogScaleInit = 2.6592600369327783;  // log(1/0.07)
constexpr double kLogScaleMax = 4.605170185988091;    // log(1/0.01)

template <typename Real>
void clamp_logit_scale(Tensor<Real>& log_scale) {
  if (log_scale[0] > static_cast<Real>(kLogScaleMax))
    log_scale[0] = static_cast<Real>(kLogScaleMax);
}

template <typename Real>
void init_head_params(ParamTree<Real>& params,
                      const std::vector<Modality>& projection_modalities,
                      const std::vector<std::pair<std::string, std::int64_t>>&
                          classifier_datasets,
                      std::int64_t hidden, RngStream rng,
                      Real stddev = Real(0.02)) {
  auto weight = [&](const std::string& path, Shape shape) {
    auto stream = rng.fork(path);
    params.insert(path, Tensor<Real>::randn(std::move(shape), stream, stddev));
  };
  for (auto m : projection_modalities) {
    const std::string p = std::string("head/proj/") + modality_name(m);
    weight(p + "/w1", {hidden, hidden});
    params.insert(p + "/b1", Tensor<Real>({hidden}));
    weight(p + "/w2", {hidden, hidden});
    params.insert(p + "/b2", Tensor<Real>({hidden}));
  }
  for (const auto& [dataset, classes] : classifier_datasets) {
    const std::string p = "head/cls/" + dataset;
    weight(p + "/w", {hidden, classes});
    params.insert(p + "/b", Tensor<Real>({classes}));
  }
  params.insert("head/logit_scale",
                Tensor<Real>::scalar(static_cast<Real>(kLogScaleInit)));
}

// Mean over the sequence, two-layer GeLU projection, then L2 normalization
// onto the unit sphere.
template <typename Real>
Tensor<Real> pool_and_project(Tape<Real>& tp, const Tensor<Real>& encoded,
                              const ParamTree<Real>& params,
                              Modality modality) {
  const std::string p = std::string("head/proj/") + modality_name(modality);
  auto pooled = mean_pool(tp, encoded, 1);  // [B, D]
  auto h = gelu(tp, add(tp, matmul(tp, pooled, params.at(p + "/w1")),
                        params.at(p + "/b1")));
  auto z = add(tp, matmul(tp, h, params.at(p + "/w2")), params.at(p + "/b2"));
  return l2_normalize(tp, z);
}

template <typename Real>
Tensor<Real> classifier_logits(Tape<Real>& tp, const Tensor<Real>& encoded,
                               const ParamTree<Real>& params,
                               const std::string& dataset) {
  const std::string p = "head/cls/" + dataset;
  auto pooled = mean_pool(tp, encoded, 1);
  return add(tp, matmul(tp, pooled, params.at(p + "/w")),
             params.at(p + "/b"));
}

// mean over the batch of -log softmax(logits)[label]
template <typename Real>
Tensor<Real> sce_loss(Tape<Real>& tp, const Tensor<Real>& logits,
                      const std::vector<std::int64_t>& labels) {
  const std::int64_t B = logits.dim(0), C = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != B)
    throw shape_error("sce_loss: expected " + std::to_string(B) + " labels");
  auto hot = one_hot<Real>(labels, C);
  auto ls = log_softmax(tp, logits, -1);
  auto picked = sum_axis(tp, mul(tp, ls, hot), 1);  // [B]
  return scale(tp, mean_all(tp, picked), Real(-1));
}

// mean over B*C of stable per-entry sigmoid cross-entropy:
// softplus(z) - z*y
template <typename Real>
Tensor<Real> bce_loss(Tape<Real>& tp, const Tensor<Real>& logits,
                      const Tensor<Real>& multi_labels) {
  if (logits.shape() != multi_labels.shape())
    throw shape_error("bce_loss: logits and labels must share shape");
  for (std::int64_t i = 0; i < multi_labels.size(); ++i)
    if (multi_labels[i] != Real(0) && multi_labels[i] != Real(1))
      throw std::runtime_error("bce_loss: labels must be 0/1");
  auto per_entry = sub(tp, softplus(tp, logits), mul(tp, logits, multi_labels));
  return mean_all(tp, per_entry);
}

// Symmetric InfoNCE over matched pairs: logits = za zb^T * exp(log_scale),
// loss = 0.5 * (SCE(logits, diag) + SCE(logits^T, diag)).
template <typename Real>
Tensor<Real> nce_pair_loss(Tape<Real>& tp, const Tensor<Real>& za,
                           const Tensor<Real>& zb,
                           const Tensor<Real>& log_scale) {
  if (za.dim(0) != zb.dim(0) || za.dim(1) != zb.dim(1))
    throw shape_error("nce_pair_loss: embedding shapes differ");
  const std::int64_t B = za.dim(0);
  auto sim = matmul(tp, za, transpose_last2(tp, zb));  // [B, B]
  auto logits = mul(tp, sim, exp(tp, log_scale));
  std::vector<std::int64_t> diag(B);
  std::iota(diag.begin(), diag.end(), 0);
  auto fwd = sce_loss(tp, logits, diag);
  auto bwd = sce_loss(tp, transpose_last2(tp, logits), diag);
  return scale(tp, add(tp, fwd, bwd), Real(0.5));
}

// Convenience form with a fixed temperature tau (similarities / tau).
template <typename Real>
Tensor<Real> nce_pair_loss(Tape<Real>& tp, const Tensor<Real>& za,
                           const Tensor<Real>& zb, double tau) {
  return nce_pair_loss(tp, za, zb,
                       Tensor<Real>::scalar(static_cast<Real>(
                           std::log(1.0 / tau))));
}

// Video-pivoted triplet: (video,audio) + (video,text), unweighted sum.
template <typename Real>
Tensor<Real> nce_triplet_loss(Tape<Real>& tp, const Tensor<Real>& zv,
                              const Tensor<Real>& za, const Tensor<Real>& zt,
                              const Tensor<Real>& log_scale) {
  return add(tp, nce_pair_loss(tp, zv, za, log_scale),
             nce_pair_loss(tp, zv, zt, log_scale));
}

template <typename Real>
Tensor<Real> nce_triplet_loss(Tape<Real>& tp, const Tensor<Real>& zv,
                              const Tensor<Real>& za, const Tensor<Real>& zt,
                              double tau) {
  return nce_triplet_loss(tp, zv, za, zt,
                          Tensor<Real>::scalar(static_cast<Real>(
                              std::log(1.0 / tau))));
}

}  // namespace mmt
