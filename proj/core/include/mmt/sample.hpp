#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmt {

enum class Modality : std::uint8_t {
  kVideo = 0,       // F x H x W x 3
  kImage = 1,       // H x W x 3
  kSpectrogram = 2, // M x M'
  kWaveform = 3,    // N
  kText = 4,        // token ids
};

inline const char* modality_name(Modality m) {
  switch (m) {
    case Modality::kVideo: return "video";
    case Modality::kImage: return "image";
    case Modality::kSpectrogram: return "spectrogram";
    case Modality::kWaveform: return "waveform";
    case Modality::kText: return "text";
  }
  return "?";
}

inline Modality modality_from_name(const std::string& s) {
  if (s == "video") return Modality::kVideo;
  if (s == "image") return Modality::kImage;
  if (s == "spectrogram") return Modality::kSpectrogram;
  if (s == "waveform") return Modality::kWaveform;
  if (s == "text") return Modality::kText;
  throw std::runtime_error("unknown modality: " + s);
}

// One modality's raw payload. Dense values are float32 regardless of the
// run's compute precision; text carries token ids instead.
struct RawSample {
  Modality modality = Modality::kImage;
  std::vector<std::int64_t> dims;   // per-modality layout, see Modality
  std::vector<float> payload;       // empty for text
  std::vector<std::int32_t> tokens; // text only

  std::int64_t payload_size() const {
    std::int64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

// One dataset example: the modalities present, a class id, and the caption.
struct Example {
  std::int64_t index = 0;
  std::int32_t class_id = 0;
  std::vector<RawSample> modalities;
  std::vector<std::int32_t> caption;

  const RawSample& get(Modality m) const {
    for (const auto& s : modalities)
      if (s.modality == m) return s;
    throw std::runtime_error(std::string("example has no ") +
                             modality_name(m) + " payload");
  }
  bool has(Modality m) const {
    for (const auto& s : modalities)
      if (s.modality == m) return true;
    return false;
  }
};

}  // namespace mmt
