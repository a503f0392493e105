#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "omreid/common.hpp"

namespace omreid {

// The five input modalities. The enumerator order R < I < C < S < T is the
// canonical order used everywhere ordering matters.
enum class ModalityId : std::uint8_t { R = 0, I = 1, C = 2, S = 3, T = 4 };

inline constexpr std::array<ModalityId, 5> kAllModalities = {
    ModalityId::R, ModalityId::I, ModalityId::C, ModalityId::S, ModalityId::T};

// Query-side modalities (everything except the RGB gallery modality).
inline constexpr std::array<ModalityId, 4> kQueryModalities = {
    ModalityId::I, ModalityId::C, ModalityId::S, ModalityId::T};

inline char modality_letter(ModalityId m) {
  switch (m) {
    case ModalityId::R: return 'R';
    case ModalityId::I: return 'I';
    case ModalityId::C: return 'C';
    case ModalityId::S: return 'S';
    case ModalityId::T: return 'T';
  }
  throw data_error("unknown modality id " + std::to_string(static_cast<int>(m)));
}

inline std::string modality_name(ModalityId m) {
  switch (m) {
    case ModalityId::R: return "rgb";
    case ModalityId::I: return "ir";
    case ModalityId::C: return "cp";
    case ModalityId::S: return "sk";
    case ModalityId::T: return "text";
  }
  throw data_error("unknown modality id " + std::to_string(static_cast<int>(m)));
}

inline ModalityId parse_modality(const std::string& s) {
  if (s == "R" || s == "r" || s == "rgb") return ModalityId::R;
  if (s == "I" || s == "i" || s == "ir") return ModalityId::I;
  if (s == "C" || s == "c" || s == "cp") return ModalityId::C;
  if (s == "S" || s == "s" || s == "sk") return ModalityId::S;
  if (s == "T" || s == "t" || s == "text") return ModalityId::T;
  throw data_error("unknown modality '" + s + "'");
}

// channel count of the raw input grid; text has none
inline std::size_t modality_channels(ModalityId m) {
  switch (m) {
    case ModalityId::R:
    case ModalityId::C: return 3;
    case ModalityId::I:
    case ModalityId::S: return 1;
    case ModalityId::T: throw data_error("text modality has no pixel channels");
  }
  throw data_error("unknown modality");
}

inline bool is_visual(ModalityId m) { return m != ModalityId::T; }

}  // namespace omreid
