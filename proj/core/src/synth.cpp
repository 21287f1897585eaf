#include "mmt/synth.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "mmt/shard.hpp"
#include "mmt/vocab.hpp"

namespace mmt {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

bool SynthConfig::has_modality(Modality m) const {
  for (auto x : modalities)
    if (x == m) return true;
  return false;
}

Latent draw_latent(std::uint64_t dataset_seed, std::int64_t index) {
  auto rng = derive_stream(dataset_seed, "latent",
                           static_cast<std::uint64_t>(index));
  Latent l;
  l.jitter_y = 2.0 * rng.uniform() - 1.0;
  l.jitter_x = 2.0 * rng.uniform() - 1.0;
  l.amp = 0.8 + 0.4 * rng.uniform();
  return l;
}

std::array<double, 3> class_channel_signature(std::int32_t cls) {
  const double t = kTwoPi * double(cls) / 16.0;
  return {0.55 + 0.45 * std::cos(t), 0.55 + 0.45 * std::sin(t),
          0.55 + 0.45 * std::cos(t + 2.1)};
}

std::pair<double, double> class_velocity(std::int32_t cls) {
  return {double(cls % 3) - 1.0, double((cls / 3) % 3) - 1.0};
}

std::pair<double, double> pattern_center(std::int32_t cls, const Latent& l,
                                         std::int64_t H, std::int64_t W,
                                         std::int64_t frame) {
  const std::int64_t row = cls % 4, col = (cls / 4) % 4;
  const auto [vy, vx] = class_velocity(cls);
  const double cy =
      (double(row) + 0.5) * double(H) / 4.0 + l.jitter_y * double(H) / 16.0;
  const double cx =
      (double(col) + 0.5) * double(W) / 4.0 + l.jitter_x * double(W) / 16.0;
  return {cy + double(frame) * vy, cx + double(frame) * vx};
}

std::int64_t spectrogram_band(std::int32_t cls, std::int64_t rows) {
  return 2 + (std::int64_t(cls) * 7) % (rows - 4);
}

std::int64_t waveform_bin(std::int32_t cls) { return 3 + 2 * std::int64_t(cls); }

namespace {

void render_frame(float* dst, std::int64_t H, std::int64_t W, double cy,
                  double cx, double amp, const std::array<double, 3>& sig,
                  double sigma, RngStream& noise) {
  const double denom = 2.0 * std::pow(double(std::min(H, W)) / 10.0, 2.0);
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) {
      const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
      const double bump = amp * std::exp(-d2 / denom);
      for (int ch = 0; ch < 3; ++ch) {
        double v = bump * sig[ch];
        if (sigma > 0) v += sigma * noise.normal();
        dst[(y * W + x) * 3 + ch] = static_cast<float>(v);
      }
    }
}

}  // namespace

RawSample gen_image(std::int32_t cls, const Latent& latent,
                    const SynthConfig& cfg, RngStream noise) {
  const auto& g = cfg.geometry;
  RawSample s;
  s.modality = Modality::kImage;
  s.dims = {g.image_h, g.image_w, 3};
  s.payload.resize(g.image_h * g.image_w * 3);
  const auto [cy, cx] = pattern_center(cls, latent, g.image_h, g.image_w, 0);
  render_frame(s.payload.data(), g.image_h, g.image_w, cy, cx, latent.amp,
               class_channel_signature(cls), cfg.sigma, noise);
  return s;
}

RawSample gen_video(std::int32_t cls, const Latent& latent,
                    const SynthConfig& cfg, RngStream noise) {
  const auto& g = cfg.geometry;
  RawSample s;
  s.modality = Modality::kVideo;
  s.dims = {g.video_f, g.video_h, g.video_w, 3};
  s.payload.resize(g.video_f * g.video_h * g.video_w * 3);
  const auto sig = class_channel_signature(cls);
  for (std::int64_t f = 0; f < g.video_f; ++f) {
    const auto [cy, cx] = pattern_center(cls, latent, g.video_h, g.video_w, f);
    render_frame(s.payload.data() + f * g.video_h * g.video_w * 3, g.video_h,
                 g.video_w, cy, cx, latent.amp, sig, cfg.sigma, noise);
  }
  return s;
}

RawSample gen_spectrogram(std::int32_t cls, const Latent& latent,
                          const SynthConfig& cfg, RngStream noise) {
  const auto& g = cfg.geometry;
  RawSample s;
  s.modality = Modality::kSpectrogram;
  s.dims = {g.spec_rows, g.spec_cols};
  s.payload.resize(g.spec_rows * g.spec_cols);
  const std::int64_t band = spectrogram_band(cls, g.spec_rows);
  for (std::int64_t r = 0; r < g.spec_rows; ++r)
    for (std::int64_t c = 0; c < g.spec_cols; ++c) {
      const double fall = double(r - band) * double(r - band) / 4.5;
      const double texture =
          1.0 + 0.2 * std::sin(kTwoPi * double(c) / double(g.spec_cols) +
                               double(cls));
      double v = latent.amp * std::exp(-fall) * texture;
      if (cfg.sigma > 0) v += cfg.sigma * noise.normal();
      s.payload[r * g.spec_cols + c] = static_cast<float>(v);
    }
  return s;
}

RawSample gen_waveform(std::int32_t cls, const Latent& latent,
                       const SynthConfig& cfg, RngStream noise) {
  const auto& g = cfg.geometry;
  RawSample s;
  s.modality = Modality::kWaveform;
  s.dims = {g.wave_len};
  s.payload.resize(g.wave_len);
  const double bin = double(waveform_bin(cls));
  const double phase = latent.jitter_x * 0.5;
  for (std::int64_t t = 0; t < g.wave_len; ++t) {
    const double u = double(t) / double(g.wave_len);
    double v = latent.amp * (std::sin(kTwoPi * bin * u + phase) +
                             0.3 * std::sin(kTwoPi * bin * 3.0 * u));
    if (cfg.sigma > 0) v += cfg.sigma * noise.normal();
    s.payload[t] = static_cast<float>(v);
  }
  return s;
}

std::vector<std::int32_t> gen_caption(std::int32_t cls) {
  return label_text_encode(cls);
}

Example gen_example(const SynthConfig& cfg, std::int64_t index) {
  if (cfg.num_classes < 1 || cfg.num_classes > kMaxClasses)
    throw std::runtime_error("class count out of vocabulary range");
  Example ex;
  ex.index = index;
  ex.class_id = static_cast<std::int32_t>(index % cfg.num_classes);
  const Latent latent = draw_latent(cfg.seed, index);
  ex.caption = gen_caption(ex.class_id);
  for (auto m : cfg.modalities) {
    auto noise = derive_stream(cfg.seed, modality_name(m),
                               static_cast<std::uint64_t>(index));
    switch (m) {
      case Modality::kImage:
        ex.modalities.push_back(gen_image(ex.class_id, latent, cfg, noise));
        break;
      case Modality::kVideo:
        ex.modalities.push_back(gen_video(ex.class_id, latent, cfg, noise));
        break;
      case Modality::kSpectrogram:
        ex.modalities.push_back(
            gen_spectrogram(ex.class_id, latent, cfg, noise));
        break;
      case Modality::kWaveform:
        ex.modalities.push_back(gen_waveform(ex.class_id, latent, cfg, noise));
        break;
      case Modality::kText: {
        RawSample t;
        t.modality = Modality::kText;
        t.tokens = ex.caption;
        t.dims = {static_cast<std::int64_t>(t.tokens.size())};
        ex.modalities.push_back(std::move(t));
        break;
      }
    }
  }
  return ex;
}

std::vector<Example> gen_split(const SynthConfig& cfg, bool eval_split) {
  const std::int64_t begin = eval_split ? cfg.train_count : 0;
  const std::int64_t count = eval_split ? cfg.eval_count : cfg.train_count;
  std::vector<Example> out;
  out.reserve(count);
  for (std::int64_t i = 0; i < count; ++i)
    out.push_back(gen_example(cfg, begin + i));
  return out;
}

RawSample resample_vision(const RawSample& s, std::int64_t new_h,
                          std::int64_t new_w) {
  if (s.modality != Modality::kImage && s.modality != Modality::kVideo)
    throw std::runtime_error("resample_vision expects image or video");
  const bool video = s.modality == Modality::kVideo;
  const std::int64_t F = video ? s.dims[0] : 1;
  const std::int64_t H = video ? s.dims[1] : s.dims[0];
  const std::int64_t W = video ? s.dims[2] : s.dims[1];
  if (H == new_h && W == new_w) return s;

  RawSample out;
  out.modality = s.modality;
  out.dims = video ? std::vector<std::int64_t>{F, new_h, new_w, 3}
                   : std::vector<std::int64_t>{new_h, new_w, 3};
  out.payload.resize(F * new_h * new_w * 3);
  if (new_h <= H) {
    if (H % new_h != 0 || W % new_w != 0)
      throw std::runtime_error("downscale must divide the source resolution");
    const std::int64_t ry = H / new_h, rx = W / new_w;
    const float inv = 1.0f / float(ry * rx);
    for (std::int64_t f = 0; f < F; ++f)
      for (std::int64_t y = 0; y < new_h; ++y)
        for (std::int64_t x = 0; x < new_w; ++x)
          for (int ch = 0; ch < 3; ++ch) {
            float acc = 0;
            for (std::int64_t dy = 0; dy < ry; ++dy)
              for (std::int64_t dx = 0; dx < rx; ++dx)
                acc += s.payload[((f * H + y * ry + dy) * W + x * rx + dx) * 3 +
                                 ch];
            out.payload[((f * new_h + y) * new_w + x) * 3 + ch] = acc * inv;
          }
  } else {
    if (new_h % H != 0 || new_w % W != 0)
      throw std::runtime_error("upscale must be an integer multiple");
    const std::int64_t ry = new_h / H, rx = new_w / W;
    for (std::int64_t f = 0; f < F; ++f)
      for (std::int64_t y = 0; y < new_h; ++y)
        for (std::int64_t x = 0; x < new_w; ++x)
          for (int ch = 0; ch < 3; ++ch)
            out.payload[((f * new_h + y) * new_w + x) * 3 + ch] =
                s.payload[((f * H + y / ry) * W + x / rx) * 3 + ch];
  }
  return out;
}

bool DatasetHandle::supports(const ObjectiveKind& k) const {
  for (auto m : k.required_modalities())
    if (!spec.has_modality(m)) return false;
  return true;
}

std::vector<ObjectiveKind> DatasetHandle::supported_objectives() const {
  std::vector<ObjectiveKind> out;
  auto try_add = [&](const std::string& s) {
    auto k = ObjectiveKind::parse(s);
    if (supports(k)) out.push_back(k);
  };
  for (auto m : spec.modalities) {
    if (m == Modality::kText) continue;
    try_add(std::string("sce:") + modality_name(m));
    try_add(std::string("bce:") + modality_name(m));
    if (spec.has_modality(Modality::kText))
      try_add(std::string("nce_pair:") + modality_name(m) + ":text");
  }
  if (spec.has_modality(Modality::kVideo) &&
      spec.has_modality(Modality::kText)) {
    if (spec.has_modality(Modality::kSpectrogram))
      try_add("nce_triplet:video:spectrogram:text");
    if (spec.has_modality(Modality::kWaveform))
      try_add("nce_triplet:video:waveform:text");
  }
  return out;
}

void DataRegistry::add_generated(const SynthConfig& cfg) {
  DatasetHandle h;
  h.spec = cfg;
  h.train = gen_split(cfg, false);
  h.eval = gen_split(cfg, true);
  sets_[cfg.name] = std::move(h);
}

std::string DataRegistry::train_shard_path(const std::string& dir,
                                           const std::string& name) {
  return dir + "/" + name + ".train.mmts";
}
std::string DataRegistry::eval_shard_path(const std::string& dir,
                                          const std::string& name) {
  return dir + "/" + name + ".eval.mmts";
}

void DataRegistry::add_from_shards(const SynthConfig& cfg,
                                   const std::string& dir) {
  DatasetHandle h;
  h.spec = cfg;
  h.train = read_shard(train_shard_path(dir, cfg.name));
  h.eval = read_shard(eval_shard_path(dir, cfg.name));
  sets_[cfg.name] = std::move(h);
}

const DatasetHandle& DataRegistry::lookup(const std::string& name) const {
  auto it = sets_.find(name);
  if (it == sets_.end()) {
    std::string msg = "unknown dataset '" + name + "'; registered:";
    for (const auto& [n, h] : sets_) msg += " " + n;
    if (sets_.empty()) msg += " (none)";
    throw std::runtime_error(msg);
  }
  return it->second;
}

std::vector<std::string> DataRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [n, h] : sets_) out.push_back(n);
  return out;
}

}  // namespace mmt
