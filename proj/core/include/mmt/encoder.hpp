#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mmt/embed.hpp"
#include "mmt/ops.hpp"
#include "mmt/param_tree.hpp"

// Modality-agnostic Transformer encoder: pre-LayerNorm blocks with
// QK-LayerNorm attention, dense FFN in the first half of the stack and
// expert-choice (or tokens-choose) MoE FFN in the last half, final LayerNorm.

namespace mmt {

enum class RouterKind { kExpertChoice, kTokensChoose, kDense };

inline const char* router_name(RouterKind k) {
  switch (k) {
    case RouterKind::kExpertChoice: return "expert_choice";
    case RouterKind::kTokensChoose: return "tokens_choose";
    case RouterKind::kDense: return "dense";
  }
  return "?";
}

inline RouterKind router_from_name(const std::string& s) {
  if (s == "expert_choice") return RouterKind::kExpertChoice;
  if (s == "tokens_choose") return RouterKind::kTokensChoose;
  if (s == "dense") return RouterKind::kDense;
  throw std::runtime_error("unknown router kind: " + s);
}

struct EncoderConfig {
  int num_layers = 12;
  std::int64_t hidden = 384;
  std::int64_t ffn = 1536;
  int heads = 0;  // 0 resolves to hidden/64 (at least 1)
  int num_experts = 4;
  double capacity_factor = 1.0;
  RouterKind router = RouterKind::kExpertChoice;
  double moe_layer_fraction = 0.5;
  double tokens_choose_capacity = 1.05;
  bool qk_layernorm = true;

  int resolved_heads() const {
    if (heads > 0) return heads;
    return std::max<int>(1, static_cast<int>(hidden / 64));
  }
  int num_moe_layers() const {
    return router == RouterKind::kDense
               ? 0
               : static_cast<int>(moe_layer_fraction * num_layers);
  }
  // MoE occupies the last num_moe_layers() of the stack.
  bool is_moe_layer(int layer) const {
    return layer >= num_layers - num_moe_layers();
  }
  void validate() const {
    if (num_layers < 1) throw std::runtime_error("encoder needs >= 1 layer");
    if (hidden % resolved_heads() != 0)
      throw std::runtime_error("hidden size " + std::to_string(hidden) +
                               " not divisible by " +
                               std::to_string(resolved_heads()) + " heads");
    if (num_experts < 1) throw std::runtime_error("need >= 1 expert");
    if (capacity_factor <= 0) throw std::runtime_error("capacity factor <= 0");
  }
};

// Per-expert token selections plus taped combine weights. Under
// expert-choice every expert holds exactly `quota` tokens; under
// tokens-choose experts hold at most `quota` and overflow tokens are
// dropped (they pass through on the residual only).
template <typename Real>
struct RouterDecision {
  RouterKind kind = RouterKind::kExpertChoice;
  std::int64_t quota = 0;
  std::vector<std::vector<std::int64_t>> expert_tokens;  // [E][<=quota]
  std::vector<Tensor<Real>> combine;                     // [E] tensors [n_e, 1]
  std::vector<std::int64_t> dropped;                     // tokens-choose only
};

namespace detail {

// taped column extraction: probs[idx, e] as an [n, 1] tensor
template <typename Real>
Tensor<Real> take_column(Tape<Real>& tp, const Tensor<Real>& probs,
                         const std::vector<std::int64_t>& idx,
                         std::int64_t column) {
  const std::int64_t E = probs.dim(1);
  Tensor<Real> mask({E});
  mask[column] = Real(1);
  auto rows = gather_rows(tp, probs, idx);            // [n, E]
  auto picked = sum_axis(tp, mul(tp, rows, mask), 1); // [n]
  return reshape(tp, picked, {static_cast<std::int64_t>(idx.size()), 1});
}

}  // namespace detail

// Expert-choice (top-c) routing over the pooled batch: router logits are
// softmax-normalized over experts per token, then every expert takes its
// top-k tokens by its own probability column, k = floor(c * S_total / E).
// Perfect load balance by construction.
template <typename Real>
RouterDecision<Real> route_expert_choice(Tape<Real>& tp,
                                         const Tensor<Real>& token_states,
                                         const Tensor<Real>& router,
                                         double capacity_factor) {
  const std::int64_t n = token_states.dim(0);
  const std::int64_t E = router.dim(1);
  if (n < E)
    throw std::runtime_error("expert-choice routing needs at least " +
                             std::to_string(E) + " tokens, got " +
                             std::to_string(n));
  const std::int64_t k = static_cast<std::int64_t>(
      capacity_factor * static_cast<double>(n) / static_cast<double>(E));
  if (k < 1)
    throw std::runtime_error(
        "expert quota is zero: batch of " + std::to_string(n) +
        " tokens is too small for " + std::to_string(E) + " experts");
  auto probs = softmax(tp, matmul(tp, token_states, router), -1);  // [n, E]
  auto sel = top_k(probs, k, /*axis=*/0);  // per-expert column top-k
  RouterDecision<Real> d;
  d.kind = RouterKind::kExpertChoice;
  d.quota = k;
  d.expert_tokens.resize(E);
  d.combine.resize(E);
  for (std::int64_t e = 0; e < E; ++e) {
    auto& toks = d.expert_tokens[e];
    toks.resize(k);
    for (std::int64_t j = 0; j < k; ++j) toks[j] = sel.indices[j * E + e];
    d.combine[e] = detail::take_column(tp, probs, toks, e);
  }
  return d;
}

// Tokens-choose (top-1) routing: each token picks its argmax expert; experts
// accept in descending router-probability order up to
// ceil(capacity * S_total / E); the overflow is dropped.
template <typename Real>
RouterDecision<Real> route_tokens_choose(Tape<Real>& tp,
                                         const Tensor<Real>& token_states,
                                         const Tensor<Real>& router,
                                         double capacity) {
  const std::int64_t n = token_states.dim(0);
  const std::int64_t E = router.dim(1);
  auto probs = softmax(tp, matmul(tp, token_states, router), -1);
  const std::int64_t cap = static_cast<std::int64_t>(
      std::ceil(capacity * static_cast<double>(n) / static_cast<double>(E)));
  struct Pick {
    std::int64_t token, expert;
    Real prob;
  };
  std::vector<Pick> picks(n);
  for (std::int64_t t = 0; t < n; ++t) {
    std::int64_t best = 0;
    for (std::int64_t e = 1; e < E; ++e)
      if (probs[t * E + e] > probs[t * E + best]) best = e;
    picks[t] = {t, best, probs[t * E + best]};
  }
  std::sort(picks.begin(), picks.end(), [](const Pick& a, const Pick& b) {
    return a.prob > b.prob || (a.prob == b.prob && a.token < b.token);
  });
  RouterDecision<Real> d;
  d.kind = RouterKind::kTokensChoose;
  d.quota = cap;
  d.expert_tokens.resize(E);
  for (const auto& p : picks) {
    auto& toks = d.expert_tokens[p.expert];
    if (static_cast<std::int64_t>(toks.size()) < cap)
      toks.push_back(p.token);
    else
      d.dropped.push_back(p.token);
  }
  std::sort(d.dropped.begin(), d.dropped.end());
  d.combine.resize(E);
  for (std::int64_t e = 0; e < E; ++e)
    d.combine[e] = d.expert_tokens[e].empty()
                       ? Tensor<Real>()
                       : detail::take_column(tp, probs, d.expert_tokens[e], e);
  return d;
}

namespace detail {

template <typename Real>
Tensor<Real> ffn_forward(Tape<Real>& tp, const Tensor<Real>& x,
                         const ParamTree<Real>& params,
                         const std::string& prefix) {
  auto h = gelu(tp, add(tp, matmul(tp, x, params.at(prefix + "/w1")),
                        params.at(prefix + "/b1")));
  return add(tp, matmul(tp, h, params.at(prefix + "/w2")),
             params.at(prefix + "/b2"));
}

}  // namespace detail

// Dispatch/combine for one MoE layer. `residual_src` is the block input,
// `states` the pre-FFN-normalized tokens, both flattened to [N, D]. Tokens
// selected by zero experts contribute the residual only.
template <typename Real>
Tensor<Real> moe_ffn(Tape<Real>& tp, const Tensor<Real>& residual_src,
                     const Tensor<Real>& states, const ParamTree<Real>& params,
                     const std::string& layer_prefix,
                     const RouterDecision<Real>& decision) {
  const std::int64_t n = states.dim(0);
  if (residual_src.shape() != states.shape())
    throw shape_error("moe_ffn: residual/state shape mismatch");
  Tensor<Real> out = residual_src;
  const std::int64_t E =
      static_cast<std::int64_t>(decision.expert_tokens.size());
  for (std::int64_t e = 0; e < E; ++e) {
    const auto& toks = decision.expert_tokens[e];
    if (toks.empty()) continue;
    for (auto t : toks)
      if (t < 0 || t >= n)
        throw std::runtime_error("router decision indexes token " +
                                 std::to_string(t) + " outside batch of " +
                                 std::to_string(n));
    auto xe = gather_rows(tp, states, toks);
    auto ye = detail::ffn_forward(tp, xe, params,
                                  layer_prefix + "/moe/expert" +
                                      std::to_string(e));
    auto weighted = mul(tp, ye, decision.combine[e]);
    out = add(tp, out, scatter_add_rows(tp, weighted, toks, n));
  }
  return out;
}

// Full pre-LN attention block with QK LayerNorm and residual.
// `probs_out`, when set, receives the attention probability tensor
// [B, heads, S, S].
template <typename Real>
Tensor<Real> attention(Tape<Real>& tp, const Tensor<Real>& x,
                       const ParamTree<Real>& params,
                       const std::string& prefix, const EncoderConfig& cfg,
                       Tensor<Real>* probs_out = nullptr) {
  const std::int64_t B = x.dim(0), S = x.dim(1), D = x.dim(2);
  const int H = cfg.resolved_heads();
  const std::int64_t dh = D / H;

  auto xn = layer_norm(tp, x, params.at(prefix + "/ln1/gain"),
                       params.at(prefix + "/ln1/bias"));
  auto q = add(tp, matmul(tp, xn, params.at(prefix + "/attn/wq")),
               params.at(prefix + "/attn/bq"));
  auto k = add(tp, matmul(tp, xn, params.at(prefix + "/attn/wk")),
               params.at(prefix + "/attn/bk"));
  auto v = add(tp, matmul(tp, xn, params.at(prefix + "/attn/wv")),
               params.at(prefix + "/attn/bv"));
  if (cfg.qk_layernorm) {
    q = layer_norm(tp, q, params.at(prefix + "/qkln/q_gain"),
                   params.at(prefix + "/qkln/q_bias"));
    k = layer_norm(tp, k, params.at(prefix + "/qkln/k_gain"),
                   params.at(prefix + "/qkln/k_bias"));
  }
  auto split = [&](const Tensor<Real>& t) {
    return permute(tp, reshape(tp, t, {B, S, H, dh}), {0, 2, 1, 3});
  };
  auto qh = split(q), kh = split(k), vh = split(v);
  auto scores = scale(tp, matmul(tp, qh, transpose_last2(tp, kh)),
                      static_cast<Real>(1.0 / std::sqrt(double(dh))));
  auto probs = softmax(tp, scores, -1);
  if (probs_out) *probs_out = probs;
  auto ctx = permute(tp, matmul(tp, probs, vh), {0, 2, 1, 3});
  auto merged = reshape(tp, ctx, {B, S, D});
  auto out = add(tp, matmul(tp, merged, params.at(prefix + "/attn/wo")),
                 params.at(prefix + "/attn/bo"));
  return add(tp, x, out);
}

// Per-forward routing telemetry for load-balance auditing.
struct EncoderTrace {
  struct LayerStats {
    int layer;
    std::int64_t quota;
    std::vector<std::int64_t> tokens_per_expert;
    std::int64_t dropped;
  };
  std::vector<LayerStats> moe_layers;
};

template <typename Real>
Tensor<Real> encoder_forward(Tape<Real>& tp, const TokenBatch<Real>& batch,
                             const ParamTree<Real>& params,
                             const EncoderConfig& cfg,
                             EncoderTrace* trace = nullptr) {
  const std::int64_t B = batch.tokens.dim(0), S = batch.tokens.dim(1),
                     D = batch.tokens.dim(2);
  if (D != cfg.hidden)
    throw shape_error("token width " + std::to_string(D) +
                      " does not match encoder hidden size " +
                      std::to_string(cfg.hidden));
  Tensor<Real> x = batch.tokens;
  for (int layer = 0; layer < cfg.num_layers; ++layer) {
    const std::string prefix = "enc/layer" + std::to_string(layer);
    x = attention(tp, x, params, prefix, cfg);
    auto xn = layer_norm(tp, x, params.at(prefix + "/ln2/gain"),
                         params.at(prefix + "/ln2/bias"));
    if (cfg.is_moe_layer(layer)) {
      auto flat_x = reshape(tp, x, {B * S, D});
      auto flat_n = reshape(tp, xn, {B * S, D});
      const auto& router = params.at(prefix + "/moe/router");
      auto decision =
          cfg.router == RouterKind::kExpertChoice
              ? route_expert_choice(tp, flat_n, router, cfg.capacity_factor)
              : route_tokens_choose(tp, flat_n, router,
                                    cfg.tokens_choose_capacity);
      if (trace) {
        EncoderTrace::LayerStats st;
        st.layer = layer;
        st.quota = decision.quota;
        for (const auto& toks : decision.expert_tokens)
          st.tokens_per_expert.push_back(
              static_cast<std::int64_t>(toks.size()));
        st.dropped = static_cast<std::int64_t>(decision.dropped.size());
        trace->moe_layers.push_back(std::move(st));
      }
      if (cfg.router == RouterKind::kExpertChoice)
        for (const auto& toks : decision.expert_tokens)
          if (static_cast<std::int64_t>(toks.size()) != decision.quota)
            throw std::runtime_error(
                "expert-choice load balance violated: expert holds " +
                std::to_string(toks.size()) + " tokens, quota " +
                std::to_string(decision.quota));
      auto y = moe_ffn(tp, flat_x, flat_n, params, prefix, decision);
      x = reshape(tp, y, {B, S, D});
    } else {
      x = add(tp, x, detail::ffn_forward(tp, xn, params, prefix + "/ffn"));
    }
  }
  return layer_norm(tp, x, params.at("enc/final_ln/gain"),
                    params.at("enc/final_ln/bias"));
}

// ---------------------------------------------------------------------------
// parameter construction and counting

template <typename Real>
void init_encoder_params(ParamTree<Real>& params, const EncoderConfig& cfg,
                         RngStream rng, Real stddev = Real(0.02)) {
  cfg.validate();
  const std::int64_t D = cfg.hidden, F = cfg.ffn;
  auto weight = [&](const std::string& path, Shape shape) {
    auto stream = rng.fork(path);
    params.insert(path, Tensor<Real>::randn(std::move(shape), stream, stddev));
  };
  auto zero = [&](const std::string& path, Shape shape) {
    params.insert(path, Tensor<Real>(std::move(shape)));
  };
  auto one = [&](const std::string& path, Shape shape) {
    params.insert(path, Tensor<Real>::full(std::move(shape), Real(1)));
  };
  auto ffn_block = [&](const std::string& prefix) {
    weight(prefix + "/w1", {D, F});
    zero(prefix + "/b1", {F});
    weight(prefix + "/w2", {F, D});
    zero(prefix + "/b2", {D});
  };
  for (int layer = 0; layer < cfg.num_layers; ++layer) {
    const std::string p = "enc/layer" + std::to_string(layer);
    for (const char* m : {"/attn/wq", "/attn/wk", "/attn/wv", "/attn/wo"})
      weight(p + m, {D, D});
    for (const char* m : {"/attn/bq", "/attn/bk", "/attn/bv", "/attn/bo"})
      zero(p + m, {D});
    if (cfg.qk_layernorm) {
      one(p + "/qkln/q_gain", {D});
      zero(p + "/qkln/q_bias", {D});
      one(p + "/qkln/k_gain", {D});
      zero(p + "/qkln/k_bias", {D});
    }
    one(p + "/ln1/gain", {D});
    zero(p + "/ln1/bias", {D});
    one(p + "/ln2/gain", {D});
    zero(p + "/ln2/bias", {D});
    if (cfg.is_moe_layer(layer)) {
      weight(p + "/moe/router", {D, cfg.num_experts});
      for (int e = 0; e < cfg.num_experts; ++e)
        ffn_block(p + "/moe/expert" + std::to_string(e));
    } else {
      ffn_block(p + "/ffn");
    }
  }
  one("enc/final_ln/gain", {D});
  zero("enc/final_ln/bias", {D});
}

struct ParamCounts {
  std::int64_t dense = 0;
  std::int64_t sparse = 0;
};

// Analytic encoder-only totals (embeddings and heads excluded). `dense` is
// the equivalent all-dense stack; `sparse` adds (E-1) extra FFNs plus a
// router matrix per MoE layer.
inline ParamCounts count_params(const EncoderConfig& cfg) {
  const std::int64_t D = cfg.hidden, F = cfg.ffn;
  const std::int64_t attn = 4 * (D * D + D);
  const std::int64_t qkln = cfg.qk_layernorm ? 4 * D : 0;
  const std::int64_t lns = 4 * D;
  const std::int64_t ffn = 2 * D * F + F + D;
  const std::int64_t per_layer = attn + qkln + lns + ffn;
  ParamCounts c;
  c.dense = cfg.num_layers * per_layer + 2 * D;
  c.sparse = c.dense;
  for (int layer = 0; layer < cfg.num_layers; ++layer)
    if (cfg.is_moe_layer(layer))
      c.sparse += (cfg.num_experts - 1) * ffn + D * cfg.num_experts;
  return c;
}

}  // namespace mmt
