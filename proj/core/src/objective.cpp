#include "mmt/objective.hpp"

#include <sstream>
#include <stdexcept>

namespace mmt {

std::string ObjectiveKind::str() const {
  switch (type) {
    case ObjectiveType::kSce:
      return std::string("sce:") + modality_name(a);
    case ObjectiveType::kBce:
      return std::string("bce:") + modality_name(a);
    case ObjectiveType::kNcePair:
      return std::string("nce_pair:") + modality_name(a) + ":" +
             modality_name(b);
    case ObjectiveType::kNceTriplet:
      return std::string("nce_triplet:") + modality_name(a) + ":" +
             modality_name(b) + ":" + modality_name(c);
  }
  return "?";
}

ObjectiveKind ObjectiveKind::parse(const std::string& s) {
  std::stringstream ss(s);
  std::string head;
  std::vector<std::string> parts;
  while (std::getline(ss, head, ':')) parts.push_back(head);
  if (parts.empty()) throw std::runtime_error("empty objective spec");
  ObjectiveKind k;
  if (parts[0] == "sce" || parts[0] == "bce") {
    if (parts.size() != 2)
      throw std::runtime_error("expected " + parts[0] + ":<modality>");
    k.type = parts[0] == "sce" ? ObjectiveType::kSce : ObjectiveType::kBce;
    k.a = modality_from_name(parts[1]);
  } else if (parts[0] == "nce_pair") {
    if (parts.size() != 3)
      throw std::runtime_error("expected nce_pair:<modality>:<modality>");
    k.type = ObjectiveType::kNcePair;
    k.a = modality_from_name(parts[1]);
    k.b = modality_from_name(parts[2]);
  } else if (parts[0] == "nce_triplet") {
    if (parts.size() != 4)
      throw std::runtime_error(
          "expected nce_triplet:<video>:<audio>:<text>");
    k.type = ObjectiveType::kNceTriplet;
    k.a = modality_from_name(parts[1]);
    k.b = modality_from_name(parts[2]);
    k.c = modality_from_name(parts[3]);
  } else {
    throw std::runtime_error("unknown objective: " + parts[0]);
  }
  return k;
}

std::vector<Modality> ObjectiveKind::required_modalities() const {
  switch (type) {
    case ObjectiveType::kSce:
    case ObjectiveType::kBce:
      return {a};
    case ObjectiveType::kNcePair:
      return {a, b};
    case ObjectiveType::kNceTriplet:
      return {a, b, c};
  }
  return {};
}

bool operator==(const ObjectiveKind& x, const ObjectiveKind& y) {
  return x.str() == y.str();
}

}  // namespace mmt
