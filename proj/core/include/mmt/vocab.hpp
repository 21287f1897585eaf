#pragma once

#include <cstdint>
#include <vector>

namespace mmt {

// Fixed synthetic vocabulary. Ids 0..31 are reserved template tokens;
// 32.. are class-name tokens, one per class.
constexpr std::int32_t kVocabSize = 512;
constexpr std::int32_t kClassTokenBase = 32;
constexpr std::int32_t kMaxClasses = kVocabSize - kClassTokenBase;
constexpr int kCaptionLength = 4;

// Deterministic caption for a class label: a fixed template around the
// class token. Injective over classes.
std::vector<std::int32_t> label_text_encode(std::int32_t class_id);

// Inverse of label_text_encode; -1 when the tokens are not a class caption.
std::int32_t class_from_caption(const std::vector<std::int32_t>& tokens);

}  // namespace mmt
