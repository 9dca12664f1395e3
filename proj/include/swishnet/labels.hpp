// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <swishnet/error.hpp>

#include <array>
#include <string>

namespace swishnet {

inline constexpr int kNoise = 0;
inline constexpr int kMusic = 1;
inline constexpr int kSpeech = 2;
inline constexpr int kSilence = 3;  // timelines only; never a classifier output
inline constexpr int kNumClasses = 3;

inline constexpr std::array<const char*, 4> kClassNames = {"noise", "music", "speech", "silence"};

inline const char* class_name(int label) {
  if (label < 0 || label > kSilence) throw DataError("label " + std::to_string(label) + " out of range");
  return kClassNames[static_cast<std::size_t>(label)];
}

inline int parse_class(const std::string& s) {
  for (int i = 0; i <= kSilence; ++i) {
    if (s == kClassNames[static_cast<std::size_t>(i)]) return i;
  }
  throw DataError("unknown class '" + s + "'");
}

}  // namespace swishnet
