#include "mmt/vocab.hpp"

#include <stdexcept>
#include <string>

namespace mmt {

namespace {
// "a picture of <class>" in synthetic ids
constexpr std::int32_t kTplA = 3;
constexpr std::int32_t kTplB = 7;
constexpr std::int32_t kTplEnd = 11;
}  // namespace

std::vector<std::int32_t> label_text_encode(std::int32_t class_id) {
  if (class_id < 0 || class_id >= kMaxClasses)
    throw std::out_of_range("class id " + std::to_string(class_id) +
                            " exceeds vocabulary capacity");
  return {kTplA, kTplB, kClassTokenBase + class_id, kTplEnd};
}

std::int32_t class_from_caption(const std::vector<std::int32_t>& tokens) {
  for (auto t : tokens)
    if (t >= kClassTokenBase && t < kVocabSize) return t - kClassTokenBase;
  return -1;
}

}  // namespace mmt
