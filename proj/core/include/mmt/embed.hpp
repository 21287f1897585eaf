#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "mmt/ops.hpp"
#include "mmt/param_tree.hpp"
#include "mmt/rng.hpp"
#include "mmt/sample.hpp"
#include "mmt/vocab.hpp"

// Embedder: raw modality payloads -> positional-encoded token sequences of a
// shared width D. Vision follows the voxel-patchify scheme (images are
// single-frame videos tiled to one patch depth); spectrograms are 2D
// patchified; waveforms and text are 1D sequences. Token order is row-major
// temporal -> height -> width throughout.

namespace mmt {

struct PatchKernel {
  std::int64_t f = 4, h = 16, w = 16;
};

struct PositionalConfig {
  std::int64_t temporal_buckets = 8;
  std::int64_t height_buckets = 16;
  std::int64_t width_buckets = 16;
  std::int64_t spec_h_buckets = 8;
  std::int64_t spec_w_buckets = 8;
  std::int64_t waveform_positions = 256;
  std::int64_t text_positions = 16;
};

// Embedded tokens plus the (B, T_F, T_H, T_W) budget factorization. The
// factorization describes the pre-DropToken grid; `kept` lists the retained
// token indices per example once DropToken has been applied.
template <typename Real>
struct TokenBatch {
  Tensor<Real> tokens;  // [B, S, D]
  Modality modality = Modality::kImage;
  std::int64_t batch = 0, t_f = 1, t_h = 1, t_w = 1;
  std::vector<std::vector<std::int64_t>> kept;  // empty until DropToken

  std::int64_t seq_len() const { return tokens.dim(1); }
  std::int64_t grid_size() const { return t_f * t_h * t_w; }
  bool dropped() const { return !kept.empty(); }
};

namespace detail {

inline void check_divisible(std::int64_t extent, std::int64_t patch,
                            const char* axis) {
  if (patch <= 0 || extent % patch != 0)
    throw shape_error(std::string(axis) + " extent " + std::to_string(extent) +
                      " is not divisible by patch extent " +
                      std::to_string(patch));
}

}  // namespace detail

// F x H x W x 3 voxels, flattened row-major (frame, row, col, channel) and
// linearly projected to D.
template <typename Real>
TokenBatch<Real> patchify_video(Tape<Real>& tp,
                                std::span<const RawSample> samples,
                                const PatchKernel& k,
                                const ParamTree<Real>& params) {
  if (samples.empty()) throw shape_error("patchify_video: empty batch");
  const auto& dims = samples[0].dims;
  if (samples[0].modality != Modality::kVideo || dims.size() != 4)
    throw shape_error("patchify_video expects video payloads F x H x W x 3");
  const std::int64_t F = dims[0], H = dims[1], W = dims[2];
  detail::check_divisible(F, k.f, "frame");
  detail::check_divisible(H, k.h, "height");
  detail::check_divisible(W, k.w, "width");
  const std::int64_t tf = F / k.f, th = H / k.h, tw = W / k.w;
  const std::int64_t patches = tf * th * tw;
  const std::int64_t volume = k.f * k.h * k.w * 3;
  const std::int64_t B = static_cast<std::int64_t>(samples.size());

  Tensor<Real> voxels({B * patches, volume});
  Real* pv = voxels.data();
  for (std::int64_t b = 0; b < B; ++b) {
    const auto& s = samples[b];
    if (s.dims != dims)
      throw shape_error("patchify_video: mixed payload shapes in batch");
    const float* px = s.payload.data();
    std::int64_t p = 0;
    for (std::int64_t ti = 0; ti < tf; ++ti)
      for (std::int64_t hi = 0; hi < th; ++hi)
        for (std::int64_t wi = 0; wi < tw; ++wi, ++p) {
          Real* dst = pv + (b * patches + p) * volume;
          for (std::int64_t df = 0; df < k.f; ++df)
            for (std::int64_t dy = 0; dy < k.h; ++dy) {
              const float* row =
                  px + (((ti * k.f + df) * H + hi * k.h + dy) * W +
                        wi * k.w) * 3;
              for (std::int64_t i = 0; i < k.w * 3; ++i)
                dst[(df * k.h + dy) * k.w * 3 + i] = static_cast<Real>(row[i]);
            }
        }
  }

  const auto& proj = params.at("embed/video/w");
  if (proj.dim(0) != volume)
    throw shape_error("video projection expects voxel volume " +
                      std::to_string(proj.dim(0)) + ", got " +
                      std::to_string(volume));
  auto projected = add(tp, matmul(tp, voxels, proj), params.at("embed/video/b"));
  TokenBatch<Real> out;
  out.tokens = reshape(tp, projected, {B, patches, proj.dim(1)});
  out.modality = Modality::kVideo;
  out.batch = B;
  out.t_f = tf;
  out.t_h = th;
  out.t_w = tw;
  return out;
}

// An image is an f x H x W video with the frame tiled f times, so it lands
// in a single patch depth (T_F = 1).
template <typename Real>
TokenBatch<Real> patchify_image(Tape<Real>& tp,
                                std::span<const RawSample> samples,
                                const PatchKernel& k,
                                const ParamTree<Real>& params) {
  if (samples.empty()) throw shape_error("patchify_image: empty batch");
  std::vector<RawSample> tiled(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.modality != Modality::kImage || s.dims.size() != 3)
      throw shape_error("patchify_image expects image payloads H x W x 3");
    RawSample v;
    v.modality = Modality::kVideo;
    v.dims = {k.f, s.dims[0], s.dims[1], 3};
    v.payload.reserve(s.payload.size() * k.f);
    for (std::int64_t r = 0; r < k.f; ++r)
      v.payload.insert(v.payload.end(), s.payload.begin(), s.payload.end());
    tiled[i] = std::move(v);
  }
  auto out = patchify_video(tp, std::span<const RawSample>(tiled), k, params);
  out.modality = Modality::kImage;
  return out;
}

// Spectrograms are patchified as 2D single-channel images.
template <typename Real>
TokenBatch<Real> patchify_spectrogram(Tape<Real>& tp,
                                      std::span<const RawSample> samples,
                                      std::int64_t ph, std::int64_t pw,
                                      const ParamTree<Real>& params) {
  if (samples.empty()) throw shape_error("patchify_spectrogram: empty batch");
  const auto& dims = samples[0].dims;
  if (samples[0].modality != Modality::kSpectrogram || dims.size() != 2)
    throw shape_error("patchify_spectrogram expects M x M' grids");
  const std::int64_t M = dims[0], N = dims[1];
  detail::check_divisible(M, ph, "spectrogram row");
  detail::check_divisible(N, pw, "spectrogram column");
  const std::int64_t th = M / ph, tw = N / pw;
  const std::int64_t patches = th * tw;
  const std::int64_t volume = ph * pw;
  const std::int64_t B = static_cast<std::int64_t>(samples.size());

  Tensor<Real> cells({B * patches, volume});
  Real* pv = cells.data();
  for (std::int64_t b = 0; b < B; ++b) {
    const auto& s = samples[b];
    if (s.dims != dims)
      throw shape_error("patchify_spectrogram: mixed grid shapes in batch");
    std::int64_t p = 0;
    for (std::int64_t hi = 0; hi < th; ++hi)
      for (std::int64_t wi = 0; wi < tw; ++wi, ++p) {
        Real* dst = pv + (b * patches + p) * volume;
        for (std::int64_t dy = 0; dy < ph; ++dy)
          for (std::int64_t dx = 0; dx < pw; ++dx)
            dst[dy * pw + dx] =
                static_cast<Real>(s.payload[(hi * ph + dy) * N + wi * pw + dx]);
      }
  }
  auto projected = add(tp, matmul(tp, cells, params.at("embed/spectrogram/w")),
                       params.at("embed/spectrogram/b"));
  TokenBatch<Real> out;
  out.tokens =
      reshape(tp, projected, {B, patches, params.at("embed/spectrogram/w").dim(1)});
  out.modality = Modality::kSpectrogram;
  out.batch = B;
  out.t_h = th;
  out.t_w = tw;
  return out;
}

// Non-overlapping windows of `kernel` samples, truncated to at most
// kernel*kernel samples (256 tokens at the default kernel of 256).
template <typename Real>
TokenBatch<Real> embed_waveform(Tape<Real>& tp,
                                std::span<const RawSample> samples,
                                const ParamTree<Real>& params,
                                std::int64_t kernel = 256) {
  if (samples.empty()) throw shape_error("embed_waveform: empty batch");
  const auto& dims = samples[0].dims;
  if (samples[0].modality != Modality::kWaveform || dims.size() != 1)
    throw shape_error("embed_waveform expects 1D sample vectors");
  if (dims[0] <= 0) throw shape_error("embed_waveform: empty waveform");
  const std::int64_t cap = kernel * kernel;
  const std::int64_t len = std::min<std::int64_t>(dims[0], cap);
  detail::check_divisible(len, kernel, "waveform");
  const std::int64_t n_tok = len / kernel;
  const std::int64_t B = static_cast<std::int64_t>(samples.size());

  Tensor<Real> windows({B * n_tok, kernel});
  Real* pv = windows.data();
  for (std::int64_t b = 0; b < B; ++b) {
    const auto& s = samples[b];
    if (s.dims != dims)
      throw shape_error("embed_waveform: mixed lengths in batch");
    for (std::int64_t i = 0; i < len; ++i)
      pv[b * n_tok * kernel + i] = static_cast<Real>(s.payload[i]);
  }
  auto projected = add(tp, matmul(tp, windows, params.at("embed/waveform/w")),
                       params.at("embed/waveform/b"));
  TokenBatch<Real> out;
  out.tokens =
      reshape(tp, projected, {B, n_tok, params.at("embed/waveform/w").dim(1)});
  out.modality = Modality::kWaveform;
  out.batch = B;
  out.t_w = n_tok;
  return out;
}

// Vocabulary-table lookups, truncated to max_len. Positions are added by
// apply_positions like every other modality.
template <typename Real>
TokenBatch<Real> embed_text(Tape<Real>& tp, std::span<const RawSample> samples,
                            const ParamTree<Real>& params,
                            std::int64_t max_len) {
  if (samples.empty()) throw shape_error("embed_text: empty batch");
  const auto& table = params.at("embed/text/table");
  const std::int64_t vocab = table.dim(0);
  const std::int64_t B = static_cast<std::int64_t>(samples.size());
  const std::int64_t full_len =
      static_cast<std::int64_t>(samples[0].tokens.size());
  if (full_len == 0) throw shape_error("embed_text: empty token sequence");
  const std::int64_t L = std::min(full_len, max_len);

  std::vector<std::int64_t> ids;
  ids.reserve(B * L);
  for (const auto& s : samples) {
    if (s.modality != Modality::kText)
      throw shape_error("embed_text expects text samples");
    if (static_cast<std::int64_t>(s.tokens.size()) != full_len)
      throw shape_error("embed_text: mixed sequence lengths in batch");
    for (std::int64_t i = 0; i < L; ++i) {
      const std::int64_t id = s.tokens[i];
      if (id < 0 || id >= vocab)
        throw std::out_of_range("token id " + std::to_string(id) +
                                " outside vocabulary of " +
                                std::to_string(vocab));
      ids.push_back(id);
    }
  }
  auto rows = gather_rows(tp, table, ids);
  TokenBatch<Real> out;
  out.tokens = reshape(tp, rows, {B, L, table.dim(1)});
  out.modality = Modality::kText;
  out.batch = B;
  out.t_w = L;
  return out;
}

// Stride-B/P index dilation: a half-resolution grid occupies every other
// bucket of the full-resolution encoding.
inline std::vector<std::int64_t> dilated_positions(std::int64_t buckets,
                                                   std::int64_t patches) {
  if (patches <= 0 || patches > buckets)
    throw shape_error("positional dilation: " + std::to_string(patches) +
                      " patches exceed " + std::to_string(buckets) +
                      " buckets");
  if (buckets % patches != 0)
    throw shape_error("positional dilation: " + std::to_string(buckets) +
                      " buckets not divisible by " + std::to_string(patches) +
                      " patches");
  const std::int64_t stride = buckets / patches;
  std::vector<std::int64_t> idx(patches);
  for (std::int64_t i = 0; i < patches; ++i) idx[i] = i * stride;
  return idx;
}

// Adds learned positions: vision tokens get temporal[i] + height[j] +
// width[k] with dilated spatial axes and a truncated temporal axis;
// spectrograms get two dilated axes; waveform and text get truncated 1D
// positions.
template <typename Real>
TokenBatch<Real> apply_positions(Tape<Real>& tp, const TokenBatch<Real>& batch,
                                 const ParamTree<Real>& params) {
  if (batch.dropped())
    throw shape_error("apply_positions must run before DropToken");
  const std::int64_t S = batch.seq_len();
  Tensor<Real> pos;  // [S, D]
  switch (batch.modality) {
    case Modality::kVideo:
    case Modality::kImage: {
      const auto& tt = params.at("pos/temporal");
      if (batch.t_f > tt.dim(0))
        throw shape_error("temporal patch count " + std::to_string(batch.t_f) +
                          " exceeds " + std::to_string(tt.dim(0)) + " buckets");
      const auto hi = dilated_positions(params.at("pos/height").dim(0), batch.t_h);
      const auto wi = dilated_positions(params.at("pos/width").dim(0), batch.t_w);
      std::vector<std::int64_t> it, ih, iw;
      it.reserve(S);
      ih.reserve(S);
      iw.reserve(S);
      for (std::int64_t t = 0; t < batch.t_f; ++t)
        for (std::int64_t h = 0; h < batch.t_h; ++h)
          for (std::int64_t w = 0; w < batch.t_w; ++w) {
            it.push_back(t);  // truncation, not dilation
            ih.push_back(hi[h]);
            iw.push_back(wi[w]);
          }
      pos = add(tp, gather_rows(tp, tt, it),
                add(tp, gather_rows(tp, params.at("pos/height"), ih),
                    gather_rows(tp, params.at("pos/width"), iw)));
      break;
    }
    case Modality::kSpectrogram: {
      const auto hi = dilated_positions(params.at("pos/spec_h").dim(0), batch.t_h);
      const auto wi = dilated_positions(params.at("pos/spec_w").dim(0), batch.t_w);
      std::vector<std::int64_t> ih, iw;
      for (std::int64_t h = 0; h < batch.t_h; ++h)
        for (std::int64_t w = 0; w < batch.t_w; ++w) {
          ih.push_back(hi[h]);
          iw.push_back(wi[w]);
        }
      pos = add(tp, gather_rows(tp, params.at("pos/spec_h"), ih),
                gather_rows(tp, params.at("pos/spec_w"), iw));
      break;
    }
    case Modality::kWaveform:
    case Modality::kText: {
      const auto& table = params.at(
          batch.modality == Modality::kText ? "pos/text" : "pos/waveform");
      if (S > table.dim(0))
        throw shape_error("sequence length " + std::to_string(S) +
                          " exceeds " + std::to_string(table.dim(0)) +
                          " positions");
      std::vector<std::int64_t> idx(S);
      std::iota(idx.begin(), idx.end(), 0);
      pos = gather_rows(tp, table, idx);
      break;
    }
  }
  TokenBatch<Real> out = batch;
  out.tokens = add(tp, batch.tokens, pos);
  return out;
}

// Keeps exactly ceil((1-d) * S) uniformly chosen tokens per example in their
// original order, so batch tensors stay rectangular.
template <typename Real>
TokenBatch<Real> drop_token(Tape<Real>& tp, const TokenBatch<Real>& batch,
                            double d, RngStream& rng) {
  if (d < 0.0 || d >= 1.0)
    throw std::out_of_range("DropToken ratio must lie in [0,1), got " +
                            std::to_string(d));
  const std::int64_t S = batch.seq_len();
  const std::int64_t keep =
      static_cast<std::int64_t>(std::ceil((1.0 - d) * static_cast<double>(S)));
  TokenBatch<Real> out = batch;
  out.kept.resize(batch.batch);
  if (keep == S) {
    for (auto& k : out.kept) {
      k.resize(S);
      std::iota(k.begin(), k.end(), 0);
    }
    return out;
  }
  std::vector<std::int64_t> flat;
  flat.reserve(batch.batch * keep);
  std::vector<std::int64_t> pool(S);
  for (std::int64_t b = 0; b < batch.batch; ++b) {
    std::iota(pool.begin(), pool.end(), 0);
    // partial Fisher-Yates, then restore original order
    for (std::int64_t i = 0; i < keep; ++i) {
      const std::int64_t j =
          i + static_cast<std::int64_t>(rng.uniform_int(S - i));
      std::swap(pool[i], pool[j]);
    }
    auto& kept = out.kept[b];
    kept.assign(pool.begin(), pool.begin() + keep);
    std::sort(kept.begin(), kept.end());
    for (auto idx : kept) flat.push_back(b * S + idx);
  }
  const std::int64_t D = batch.tokens.dim(2);
  auto rows = gather_rows(tp, reshape(tp, batch.tokens, {batch.batch * S, D}),
                          flat);
  out.tokens = reshape(tp, rows, {batch.batch, keep, D});
  return out;
}

}  // namespace mmt
