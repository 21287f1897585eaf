#pragma once

#include <string>
#include <vector>

#include "mmt/sample.hpp"

namespace mmt {

enum class ObjectiveType {
  kSce,        // softmax cross-entropy on a labeled modality
  kBce,        // multi-label binary cross-entropy
  kNcePair,    // symmetric cross-modal InfoNCE
  kNceTriplet, // video-pivoted pair sum: (video,audio) + (video,text)
};

// A loss family bound to the modalities it consumes. Canonical string forms:
// "sce:image", "bce:image", "nce_pair:image:text",
// "nce_triplet:video:spectrogram:text".
struct ObjectiveKind {
  ObjectiveType type = ObjectiveType::kSce;
  Modality a = Modality::kImage;
  Modality b = Modality::kText;
  Modality c = Modality::kText;  // triplet text leg

  std::string str() const;
  static ObjectiveKind parse(const std::string& s);

  std::vector<Modality> required_modalities() const;
  bool is_contrastive() const {
    return type == ObjectiveType::kNcePair || type == ObjectiveType::kNceTriplet;
  }
};

bool operator==(const ObjectiveKind& x, const ObjectiveKind& y);

}  // namespace mmt
